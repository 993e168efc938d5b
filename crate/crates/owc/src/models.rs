//! Transceiver models: the convolutional autoencoder (C-AE), its
//! fully-connected counterpart (F-AE), the temporal OOK autoencoder, the
//! dimming projection, and codebook encode/decode/export.

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Network, NetworkParams};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeKind {
    Cae,
    Fae,
    Ook,
}

impl AeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AeKind::Cae => "cae",
            AeKind::Fae => "fae",
            AeKind::Ook => "ook",
        }
    }
}

/// Encoder/decoder pair with its parameters.
#[derive(Debug, Clone)]
pub struct AeModel {
    pub kind: AeKind,
    pub m: usize,
    /// LED array side (ISC) or codeword length N (OOK).
    pub code_dim: usize,
    pub encoder: Network,
    pub encoder_params: NetworkParams,
    pub decoder: Network,
    pub decoder_params: NetworkParams,
    /// Slope of the binarizing sigmoid the parameters were last trained at.
    pub delta: f64,
}

/// Average-intensity requirement the codebook mean must meet.
#[derive(Debug, Clone, PartialEq)]
pub enum DimmingTarget {
    /// Per-LED target duty matrix (ISC), entries in [0, 1].
    Matrix(Tensor),
    /// Target Hamming weight d of each codeword (OOK), in [0, N].
    Weight(f64),
}

impl DimmingTarget {
    pub fn uniform_matrix(l: usize, duty: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&duty) {
            return Err(Error::Argument(format!("duty {duty} outside [0, 1]")));
        }
        Ok(DimmingTarget::Matrix(Tensor::full(vec![l, l], duty)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookMode {
    Relaxed,
    Binary,
}

/// Per-message optical signals: M matrices (ISC) or M vectors (OOK).
#[derive(Debug, Clone)]
pub struct Codebook {
    pub entries: Vec<Tensor>,
    pub mode: CodebookMode,
    /// Max distance of any entry from {0, 1} at export time.
    pub hardness_gap: f64,
    /// Sigmoid slope the encoder ran at during export.
    pub delta_at_export: f64,
}

impl Codebook {
    pub fn m(&self) -> usize {
        self.entries.len()
    }

    /// Elementwise average codeword.
    pub fn mean_entry(&self) -> Tensor {
        let mut mean = Tensor::zeros(self.entries[0].shape().to_vec());
        for e in &self.entries {
            for (m, v) in mean.data_mut().iter_mut().zip(e.data()) {
                *m += v;
            }
        }
        let inv = 1.0 / self.entries.len() as f64;
        for m in mean.data_mut() {
            *m *= inv;
        }
        mean
    }
}

/// OOK autoencoder dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct OokAeSpec {
    /// Codeword length (symbol duration).
    pub n: usize,
    pub m: usize,
    /// Target Hamming weight.
    pub d: f64,
    pub hidden: Vec<usize>,
}

impl OokAeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n >= 64 {
            return Err(Error::Config("codeword length must stay below 64".into()));
        }
        if (self.m as u128) > (1u128 << self.n) {
            return Err(Error::Config(format!(
                "alphabet {} exceeds 2^{} distinct codewords",
                self.m, self.n
            )));
        }
        if self.d < 0.0 || self.d > self.n as f64 {
            return Err(Error::Config(format!("weight target {} outside [0, {}]", self.d, self.n)));
        }
        Ok(())
    }
}

fn bn_relu_1d(features: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::BatchNorm { features },
        LayerSpec::Activation { act: Activation::Relu },
    ]
}

/// Table-layout C-AE: one-hot message in, L x L relaxed intensity matrix out
/// of the encoder; T x T image in, M-way posterior out of the decoder.
/// Batchnorm precedes every activation except the two output layers.
pub fn build_cae(m: usize, l: usize, t: usize, rng: &mut impl Rng) -> Result<AeModel> {
    if !t.is_multiple_of(4) {
        return Err(Error::Config(format!("sensor side {t} must be divisible by 4")));
    }
    if l < 2 {
        return Err(Error::Config(format!("array side {l} must be at least 2")));
    }
    let mut enc = vec![LayerSpec::Dense { fan_in: m, fan_out: m }];
    enc.extend(bn_relu_1d(m));
    enc.push(LayerSpec::Dense { fan_in: m, fan_out: 16 * l * l });
    enc.extend(bn_relu_1d(16 * l * l));
    enc.push(LayerSpec::Reshape { to: vec![1, 4 * l, 4 * l] });
    enc.push(LayerSpec::Conv2d { in_ch: 1, out_ch: m, ksize: 3 });
    enc.push(LayerSpec::BatchNorm { features: m });
    enc.push(LayerSpec::Activation { act: Activation::Relu });
    enc.push(LayerSpec::MaxPool2d { pool: 2 });
    enc.push(LayerSpec::Conv2d { in_ch: m, out_ch: 2 * m, ksize: 3 });
    enc.push(LayerSpec::BatchNorm { features: 2 * m });
    enc.push(LayerSpec::Activation { act: Activation::Relu });
    enc.push(LayerSpec::MaxPool2d { pool: 2 });
    enc.push(LayerSpec::Conv2d { in_ch: 2 * m, out_ch: 1, ksize: 3 });
    enc.push(LayerSpec::Activation { act: Activation::ParamSigmoid { delta: 1.0 } });
    let encoder = Network::new(vec![m], enc)?;

    let flat = m * (t / 4) * (t / 4);
    let mut dec = vec![
        LayerSpec::Conv2d { in_ch: 1, out_ch: 2 * m, ksize: 5 },
        LayerSpec::BatchNorm { features: 2 * m },
        LayerSpec::Activation { act: Activation::Relu },
        LayerSpec::MaxPool2d { pool: 2 },
        LayerSpec::Conv2d { in_ch: 2 * m, out_ch: m, ksize: 3 },
        LayerSpec::BatchNorm { features: m },
        LayerSpec::Activation { act: Activation::Relu },
        LayerSpec::MaxPool2d { pool: 2 },
        LayerSpec::Reshape { to: vec![flat] },
        LayerSpec::Dense { fan_in: flat, fan_out: m },
    ];
    dec.extend(bn_relu_1d(m));
    dec.push(LayerSpec::Dense { fan_in: m, fan_out: m });
    dec.push(LayerSpec::Activation { act: Activation::Softmax });
    let decoder = Network::new(vec![1, t, t], dec)?;

    let encoder_params = encoder.init_params(rng);
    let decoder_params = decoder.init_params(rng);
    Ok(AeModel {
        kind: AeKind::Cae,
        m,
        code_dim: l,
        encoder,
        encoder_params,
        decoder,
        decoder_params,
        delta: 1.0,
    })
}

/// Fully-connected counterpart: every convolution and pooling stage is
/// replaced by a dense layer whose output element count matches that
/// stage's spatial output, with activations (and their batchnorms)
/// unchanged. Pooling replacements are linear, like the pooling rows they
/// stand in for.
pub fn build_fae(m: usize, l: usize, t: usize, rng: &mut impl Rng) -> Result<AeModel> {
    if !t.is_multiple_of(4) {
        return Err(Error::Config(format!("sensor side {t} must be divisible by 4")));
    }
    if l < 2 {
        return Err(Error::Config(format!("array side {l} must be at least 2")));
    }
    let (s4, s2, s1) = (16 * l * l, 4 * l * l, l * l);
    let mut enc = vec![LayerSpec::Dense { fan_in: m, fan_out: m }];
    enc.extend(bn_relu_1d(m));
    enc.push(LayerSpec::Dense { fan_in: m, fan_out: s4 });
    enc.extend(bn_relu_1d(s4));
    enc.push(LayerSpec::Dense { fan_in: s4, fan_out: s4 }); // conv 4Lx4L
    enc.extend(bn_relu_1d(s4));
    enc.push(LayerSpec::Dense { fan_in: s4, fan_out: s2 }); // pool
    enc.push(LayerSpec::Dense { fan_in: s2, fan_out: s2 }); // conv 2Lx2L
    enc.extend(bn_relu_1d(s2));
    enc.push(LayerSpec::Dense { fan_in: s2, fan_out: s1 }); // pool
    enc.push(LayerSpec::Dense { fan_in: s1, fan_out: s1 }); // conv LxL, output
    enc.push(LayerSpec::Activation { act: Activation::ParamSigmoid { delta: 1.0 } });
    enc.push(LayerSpec::Reshape { to: vec![1, l, l] });
    let encoder = Network::new(vec![m], enc)?;

    let (t2, t1, t0) = (t * t, (t / 2) * (t / 2), (t / 4) * (t / 4));
    let mut dec = vec![
        LayerSpec::Reshape { to: vec![t2] },
        LayerSpec::Dense { fan_in: t2, fan_out: t2 }, // conv TxT
    ];
    dec.extend(bn_relu_1d(t2));
    dec.push(LayerSpec::Dense { fan_in: t2, fan_out: t1 }); // pool
    dec.push(LayerSpec::Dense { fan_in: t1, fan_out: t1 }); // conv
    dec.extend(bn_relu_1d(t1));
    dec.push(LayerSpec::Dense { fan_in: t1, fan_out: t0 }); // pool
    dec.push(LayerSpec::Dense { fan_in: t0, fan_out: m });
    dec.extend(bn_relu_1d(m));
    dec.push(LayerSpec::Dense { fan_in: m, fan_out: m });
    dec.push(LayerSpec::Activation { act: Activation::Softmax });
    let decoder = Network::new(vec![1, t, t], dec)?;

    let encoder_params = encoder.init_params(rng);
    let decoder_params = decoder.init_params(rng);
    Ok(AeModel {
        kind: AeKind::Fae,
        m,
        code_dim: l,
        encoder,
        encoder_params,
        decoder,
        decoder_params,
        delta: 1.0,
    })
}

/// One-dimensional OOK autoencoder: dense stack ending in a binarizing
/// sigmoid of width N; decoder dense stack ending in an M-way softmax.
pub fn build_ook_ae(spec: &OokAeSpec, rng: &mut impl Rng) -> Result<AeModel> {
    spec.validate()?;
    let mut enc = Vec::new();
    let mut fan_in = spec.m;
    for &h in &spec.hidden {
        enc.push(LayerSpec::Dense { fan_in, fan_out: h });
        enc.extend(bn_relu_1d(h));
        fan_in = h;
    }
    enc.push(LayerSpec::Dense { fan_in, fan_out: spec.n });
    enc.push(LayerSpec::Activation { act: Activation::ParamSigmoid { delta: 1.0 } });
    let encoder = Network::new(vec![spec.m], enc)?;

    let mut dec = Vec::new();
    let mut fan_in = spec.n;
    for &h in spec.hidden.iter().rev() {
        dec.push(LayerSpec::Dense { fan_in, fan_out: h });
        dec.extend(bn_relu_1d(h));
        fan_in = h;
    }
    dec.push(LayerSpec::Dense { fan_in, fan_out: spec.m });
    dec.push(LayerSpec::Activation { act: Activation::Softmax });
    let decoder = Network::new(vec![spec.n], dec)?;

    let encoder_params = encoder.init_params(rng);
    let decoder_params = decoder.init_params(rng);
    Ok(AeModel {
        kind: AeKind::Ook,
        m: spec.m,
        code_dim: spec.n,
        encoder,
        encoder_params,
        decoder,
        decoder_params,
        delta: 1.0,
    })
}

/// Table-style layer count: dense, convolutional and pooling stages
/// (batchnorm, activations and reshapes are attachments, not layers).
pub fn layer_count(net: &Network) -> usize {
    net.layers
        .iter()
        .filter(|l| {
            matches!(
                l,
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::MaxPool2d { .. }
            )
        })
        .count()
}

/// Euclidean projection of `v` onto {s : 0 <= s_i <= peak, mean(s) =
/// mean_target}: s_i = clip(v_i + mu, 0, peak) with mu found by bisection
/// on the monotone mean constraint.
pub fn project_dimming(v: &[f64], peak: f64, mean_target: f64) -> Result<Vec<f64>> {
    if !(0.0..=peak).contains(&mean_target) {
        return Err(Error::Argument(format!(
            "mean target {mean_target} outside [0, {peak}]"
        )));
    }
    let clip_mean = |mu: f64| -> f64 {
        v.iter().map(|&x| (x + mu).clamp(0.0, peak)).sum::<f64>() / v.len() as f64
    };
    let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lo = -vmax; // mean 0 <= target
    let mut hi = peak - vmin; // mean = peak >= target
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip_mean(mid) < mean_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    Ok(v.iter().map(|&x| (x + mu).clamp(0.0, peak)).collect())
}

/// One-hot the message and run the encoder in infer mode at slope `delta`.
pub fn encode_message(model: &AeModel, b: usize, delta: f64) -> Result<Tensor> {
    if b >= model.m {
        return Err(Error::Argument(format!("message {b} out of range {}", model.m)));
    }
    let x = Tensor::one_hot(model.m, b)?.reshape(vec![1, model.m])?;
    let y = model.encoder.infer(&model.encoder_params, &x, Some(delta))?;
    // Drop the batch dim and any leading unit channel dim: codebook
    // entries are L x L matrices (ISC) or length-N vectors (OOK).
    let mut per: Vec<usize> = y.shape()[1..].to_vec();
    while per.len() > 1 && per[0] == 1 {
        per.remove(0);
    }
    y.reshape(per)
}

/// Run the decoder on one sensor image; returns the posterior and the
/// argmax message (lowest index on ties). Needs no rotation angle or CSI.
pub fn decode_image(model: &AeModel, image: &Tensor) -> Result<(Tensor, usize)> {
    let mut shape = vec![1];
    shape.extend_from_slice(&model.decoder.input_shape);
    let x = image.clone().reshape(shape)?;
    let y = model.decoder.infer(&model.decoder_params, &x, None)?;
    let posterior = y.reshape(vec![model.m])?;
    let mut best = 0usize;
    for (i, &p) in posterior.data().iter().enumerate() {
        if p > posterior.data()[best] {
            best = i;
        }
    }
    Ok((posterior, best))
}

/// Encode every message; mark the codebook binary (rounded at `threshold`)
/// when the worst entry sits within 0.01 of {0, 1}, relaxed otherwise.
/// Duplicate binary codewords are an error.
pub fn export_codebook(model: &AeModel, delta: f64, threshold: f64) -> Result<Codebook> {
    let mut entries = Vec::with_capacity(model.m);
    let mut gap = 0.0f64;
    for b in 0..model.m {
        let e = encode_message(model, b, delta)?;
        for &v in e.data() {
            gap = gap.max(v.min(1.0 - v).abs());
        }
        entries.push(e);
    }
    let mode = if gap <= 0.01 { CodebookMode::Binary } else { CodebookMode::Relaxed };
    if mode == CodebookMode::Binary {
        for e in &mut entries {
            for v in e.data_mut() {
                *v = if *v >= threshold { 1.0 } else { 0.0 };
            }
        }
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if entries[i].data() == entries[j].data() {
                    return Err(Error::DegenerateCodebook(format!(
                        "messages {i} and {j} share a codeword"
                    )));
                }
            }
        }
    }
    Ok(Codebook { entries, mode, hardness_gap: gap, delta_at_export: delta })
}

/// Penalty of a whole codebook against its dimming target:
/// matrix targets use lambda * ||mean_b S_b - D||^2, weight targets use
/// lambda * mean_b (sum_j s_bj - d)^2.
pub fn dimming_penalty(codebook: &Codebook, target: &DimmingTarget, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Argument(format!("penalty weight must be non-negative, got {lambda}")));
    }
    match target {
        DimmingTarget::Matrix(d) => {
            let mean = codebook.mean_entry();
            if mean.len() != d.len() {
                return Err(Error::Dimension("dimming target shape mismatch".into()));
            }
            Ok(lambda
                * mean
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(m, t)| (m - t) * (m - t))
                    .sum::<f64>())
        }
        DimmingTarget::Weight(d) => {
            let total: f64 = codebook
                .entries
                .iter()
                .map(|e| {
                    let w: f64 = e.data().iter().sum();
                    (w - d) * (w - d)
                })
                .sum();
            Ok(lambda * total / codebook.m() as f64)
        }
    }
}
