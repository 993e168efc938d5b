//! Model persistence: a small binary container (magic, version,
//! length-prefixed architecture descriptor, little-endian f64 payload,
//! trailing length checksum) plus the codebook CSV round trip.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{AeKind, AeModel, Codebook, CodebookMode};
use crate::nn::{Activation, LayerSpec, Network, NetworkParams};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 7] = b"OWCAE1\n";
pub const MODEL_VERSION: u32 = 1;

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::Integrity(format!("bad shape `{s}`"))))
        .collect()
}

fn layer_line(layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::Dense { fan_in, fan_out } => format!("dense,{fan_in},{fan_out}"),
        LayerSpec::Conv2d { in_ch, out_ch, ksize } => format!("conv2d,{in_ch},{out_ch},{ksize}"),
        LayerSpec::MaxPool2d { pool } => format!("maxpool2d,{pool}"),
        LayerSpec::BatchNorm { features } => format!("batchnorm,{features}"),
        LayerSpec::Reshape { to } => format!("reshape,{}", shape_str(to)),
        LayerSpec::Activation { act } => match act {
            Activation::Relu => "activation,relu".into(),
            Activation::Sigmoid => "activation,sigmoid".into(),
            Activation::Softmax => "activation,softmax".into(),
            Activation::ParamSigmoid { delta } => format!("activation,param_sigmoid,{delta}"),
        },
    }
}

fn parse_layer(line: &str) -> Result<LayerSpec> {
    let bad = || Error::Integrity(format!("bad layer record `{line}`"));
    let parts: Vec<&str> = line.split(',').collect();
    let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad()) };
    match parts.as_slice() {
        ["dense", a, b] => Ok(LayerSpec::Dense { fan_in: num(a)?, fan_out: num(b)? }),
        ["conv2d", a, b, k] => {
            Ok(LayerSpec::Conv2d { in_ch: num(a)?, out_ch: num(b)?, ksize: num(k)? })
        }
        ["maxpool2d", p] => Ok(LayerSpec::MaxPool2d { pool: num(p)? }),
        ["batchnorm", f] => Ok(LayerSpec::BatchNorm { features: num(f)? }),
        ["reshape", s] => Ok(LayerSpec::Reshape { to: parse_shape(s)? }),
        ["activation", "relu"] => Ok(LayerSpec::Activation { act: Activation::Relu }),
        ["activation", "sigmoid"] => Ok(LayerSpec::Activation { act: Activation::Sigmoid }),
        ["activation", "softmax"] => Ok(LayerSpec::Activation { act: Activation::Softmax }),
        ["activation", "param_sigmoid", d] => Ok(LayerSpec::Activation {
            act: Activation::ParamSigmoid { delta: d.parse().map_err(|_| bad())? },
        }),
        _ => Err(bad()),
    }
}

fn descriptor(model: &AeModel) -> String {
    let mut text = String::new();
    text.push_str(&format!("kind={}\n", model.kind.as_str()));
    text.push_str(&format!("m={}\n", model.m));
    text.push_str(&format!("code_dim={}\n", model.code_dim));
    text.push_str(&format!("delta={}\n", model.delta));
    text.push_str(&format!("encoder_input={}\n", shape_str(&model.encoder.input_shape)));
    for layer in &model.encoder.layers {
        text.push_str(&format!("encoder_layer={}\n", layer_line(layer)));
    }
    text.push_str(&format!("decoder_input={}\n", shape_str(&model.decoder.input_shape)));
    for layer in &model.decoder.layers {
        text.push_str(&format!("decoder_layer={}\n", layer_line(layer)));
    }
    text
}

struct Descriptor {
    kind: AeKind,
    m: usize,
    code_dim: usize,
    delta: f64,
    encoder: Network,
    decoder: Network,
}

fn parse_descriptor(text: &str) -> Result<Descriptor> {
    let mut kind = None;
    let mut m = None;
    let mut code_dim = None;
    let mut delta = None;
    let mut enc_input = None;
    let mut dec_input = None;
    let mut enc_layers = Vec::new();
    let mut dec_layers = Vec::new();
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Integrity(format!("bad descriptor line `{line}`")));
        };
        match key {
            "kind" => {
                kind = Some(match value {
                    "cae" => AeKind::Cae,
                    "fae" => AeKind::Fae,
                    "ook" => AeKind::Ook,
                    _ => return Err(Error::Integrity(format!("unknown model kind `{value}`"))),
                })
            }
            "m" => m = Some(value.parse().map_err(|_| Error::Integrity("bad m".into()))?),
            "code_dim" => {
                code_dim = Some(value.parse().map_err(|_| Error::Integrity("bad code_dim".into()))?)
            }
            "delta" => {
                delta = Some(value.parse().map_err(|_| Error::Integrity("bad delta".into()))?)
            }
            "encoder_input" => enc_input = Some(parse_shape(value)?),
            "decoder_input" => dec_input = Some(parse_shape(value)?),
            "encoder_layer" => enc_layers.push(parse_layer(value)?),
            "decoder_layer" => dec_layers.push(parse_layer(value)?),
            _ => return Err(Error::Integrity(format!("unknown descriptor key `{key}`"))),
        }
    }
    let missing = |what: &str| Error::Integrity(format!("descriptor missing {what}"));
    let encoder = Network::new(enc_input.ok_or_else(|| missing("encoder input"))?, enc_layers)?;
    let decoder = Network::new(dec_input.ok_or_else(|| missing("decoder input"))?, dec_layers)?;
    Ok(Descriptor {
        kind: kind.ok_or_else(|| missing("kind"))?,
        m: m.ok_or_else(|| missing("m"))?,
        code_dim: code_dim.ok_or_else(|| missing("code_dim"))?,
        delta: delta.ok_or_else(|| missing("delta"))?,
        encoder,
        decoder,
    })
}

fn write_params(out: &mut Vec<u8>, params: &NetworkParams) {
    for group in params {
        for t in &group.tensors {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn read_params(bytes: &[u8], pos: &mut usize, template: &mut NetworkParams) -> Result<()> {
    for group in template.iter_mut() {
        for t in group.tensors.iter_mut() {
            for v in t.data_mut() {
                let end = *pos + 8;
                if end > bytes.len() {
                    return Err(Error::Integrity("model file truncated in payload".into()));
                }
                *v = f64::from_le_bytes(bytes[*pos..end].try_into().unwrap());
                *pos = end;
            }
        }
    }
    Ok(())
}

/// Serialize the model to its container bytes.
pub fn model_to_bytes(model: &AeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let desc = descriptor(model);
    out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    write_params(&mut out, &model.encoder_params);
    write_params(&mut out, &model.decoder_params);
    let body_len = out.len() as u64;
    out.extend_from_slice(&body_len.to_le_bytes());
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<AeModel> {
    let fail = |what: &str| Error::Integrity(format!("model file {what}"));
    if bytes.len() < MODEL_MAGIC.len() + 4 + 8 + 8 {
        return Err(fail("too short"));
    }
    if &bytes[..7] != MODEL_MAGIC {
        return Err(fail("has wrong magic"));
    }
    let version = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Version(format!(
            "model format version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let body_len = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if body_len != (bytes.len() - 8) as u64 {
        return Err(fail(&format!(
            "length checksum {body_len} does not match {} body bytes",
            bytes.len() - 8
        )));
    }
    let desc_len = u64::from_le_bytes(bytes[11..19].try_into().unwrap()) as usize;
    let desc_end = 19 + desc_len;
    if desc_end > bytes.len() - 8 {
        return Err(fail("truncated in descriptor"));
    }
    let desc_text = std::str::from_utf8(&bytes[19..desc_end])
        .map_err(|_| fail("descriptor is not UTF-8"))?;
    let desc = parse_descriptor(desc_text)?;

    // Shape templates from the architecture, then overwrite with payload.
    let mut dummy = crate::rng::stream(0, crate::rng::Domain::Init, 0);
    let mut encoder_params = desc.encoder.init_params(&mut dummy);
    let mut decoder_params = desc.decoder.init_params(&mut dummy);
    let mut pos = desc_end;
    let payload = &bytes[..bytes.len() - 8];
    read_params(payload, &mut pos, &mut encoder_params)?;
    read_params(payload, &mut pos, &mut decoder_params)?;
    if pos != payload.len() {
        return Err(fail("has trailing payload bytes"));
    }
    Ok(AeModel {
        kind: desc.kind,
        m: desc.m,
        code_dim: desc.code_dim,
        encoder: desc.encoder,
        encoder_params,
        decoder: desc.decoder,
        decoder_params,
        delta: desc.delta,
    })
}

pub fn save_model(path: &Path, model: &AeModel) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AeModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}

/// Codebook CSV: one `message,row,col,intensity` line per entry value.
/// OOK codebooks serialize as row 0, col = slot index.
pub fn codebook_to_csv(cb: &Codebook) -> String {
    let mut out = String::from("message,row,col,intensity\n");
    for (b, e) in cb.entries.iter().enumerate() {
        let (rows, cols) = match e.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s.iter().product::<usize>(), 1),
        };
        for r in 0..rows {
            for c in 0..cols {
                out.push_str(&format!("{},{},{},{}\n", b, r, c, e.data()[r * cols + c]));
            }
        }
    }
    out
}

pub fn codebook_from_csv(text: &str) -> Result<Codebook> {
    let mut lines = text.lines();
    match lines.next() {
        Some("message,row,col,intensity") => {}
        other => {
            return Err(Error::Integrity(format!("bad codebook CSV header {other:?}")));
        }
    }
    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::Integrity(format!("codebook CSV line {}: `{line}`", idx + 2));
        let [b, r, c, v] = parts.as_slice() else { return Err(bad()) };
        cells.push((
            b.parse().map_err(|_| bad())?,
            r.parse().map_err(|_| bad())?,
            c.parse().map_err(|_| bad())?,
            v.parse().map_err(|_| bad())?,
        ));
    }
    if cells.is_empty() {
        return Err(Error::Integrity("empty codebook CSV".into()));
    }
    let m = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let rows = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let cols = cells.iter().map(|c| c.2).max().unwrap() + 1;
    let shape = if rows == 1 { vec![cols] } else { vec![rows, cols] };
    let mut entries = vec![Tensor::full(shape, f64::NAN); m];
    for (b, r, c, v) in cells {
        entries[b].data_mut()[r * cols + c] = v;
    }
    let mut gap = 0.0f64;
    for e in &entries {
        for &v in e.data() {
            if !v.is_finite() {
                return Err(Error::Integrity("codebook CSV is missing cells".into()));
            }
            gap = gap.max(v.min(1.0 - v).abs());
        }
    }
    let mode = if gap == 0.0 { CodebookMode::Binary } else { CodebookMode::Relaxed };
    Ok(Codebook { entries, mode, hardness_gap: gap, delta_at_export: f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cae, build_ook_ae, OokAeSpec};
    use crate::rng::{stream, Domain};

    fn sample_model() -> AeModel {
        let mut rng = stream(3, Domain::Init, 0);
        build_cae(16, 4, 8, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = sample_model();
        let bytes = model_to_bytes(&model);
        let loaded = model_from_bytes(&bytes).unwrap();
        assert_eq!(loaded.kind, model.kind);
        assert_eq!(loaded.m, model.m);
        assert_eq!(loaded.code_dim, model.code_dim);
        assert_eq!(loaded.delta, model.delta);
        for (a, b) in model.encoder_params.iter().zip(&loaded.encoder_params) {
            for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
                assert_eq!(ta.shape(), tb.shape());
                assert_eq!(ta.data(), tb.data());
            }
        }
        // saving the loaded model reproduces the bytes exactly
        assert_eq!(model_to_bytes(&loaded), bytes);
    }

    #[test]
    fn file_round_trip_for_ook() {
        let mut rng = stream(4, Domain::Init, 0);
        let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![32] };
        let model = build_ook_ae(&spec, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.owc");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model_to_bytes(&loaded), model_to_bytes(&model));
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let bytes = model_to_bytes(&sample_model());
        for cut in [5, 15, bytes.len() / 2, bytes.len() - 1] {
            let err = model_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corrupt_magic_and_version() {
        let mut bytes = model_to_bytes(&sample_model());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(model_from_bytes(&wrong).unwrap_err(), Error::Integrity(_)));
        bytes[7] = 9; // version field
        assert!(matches!(model_from_bytes(&bytes).unwrap_err(), Error::Version(_)));
    }

    #[test]
    fn codebook_csv_round_trip() {
        let model = sample_model();
        let cb = crate::models::export_codebook(&model, 1.0, 0.5).unwrap();
        let csv = codebook_to_csv(&cb);
        assert!(csv.starts_with("message,row,col,intensity\n"));
        let back = codebook_from_csv(&csv).unwrap();
        assert_eq!(back.entries.len(), cb.entries.len());
        for (a, b) in cb.entries.iter().zip(&back.entries) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(back.mode, cb.mode);
    }

    #[test]
    fn ook_codebook_csv_round_trip() {
        let entries = vec![
            Tensor::new(vec![4], vec![1.0, 1.0, 0.0, 0.0]).unwrap(),
            Tensor::new(vec![4], vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
        ];
        let cb = Codebook {
            entries,
            mode: CodebookMode::Binary,
            hardness_gap: 0.0,
            delta_at_export: f64::INFINITY,
        };
        let back = codebook_from_csv(&codebook_to_csv(&cb)).unwrap();
        assert_eq!(back.mode, CodebookMode::Binary);
        for (a, b) in cb.entries.iter().zip(&back.entries) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
        assert!(codebook_from_csv("nope\n").is_err());
    }
}
