//! End-to-end acceptance gate.
//!
//! Nine criteria covering gradient fidelity, kernel oracles, channel and
//! imaging statistics, the annealing contract, SER trends against
//! classical baselines, and byte-exact determinism. Everything runs in
//! one test because the expensive trained models are shared between
//! criteria; one PASS/FAIL line is printed per criterion and failures
//! are collected so a single run reports all of them.
//!
//! This is the long test: it trains full-size models and runs 1e5-trial
//! Monte-Carlo sweeps on a single core. Expect well over an hour.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;

use owc::channel::{apply_optical_noise, ChannelParams};
use owc::eval::{
    baseline_codebook, estimate_ser, estimate_ser_threaded, sweep_snr, BaselineKind, SerEstimate,
    SerSystem, SweepEntry,
};
use owc::imaging::{default_geometry, render_image, ArrayGeometry, CameraModel, ChannelFactory};
use owc::models::{
    build_cae, build_fae, build_ook_ae, project_dimming, AeModel, DimmingTarget, OokAeSpec,
};
use owc::nn::{grad_check, Activation, LayerSpec, Mode, Network};
use owc::rng::{stream, Domain};
use owc::train::{
    dimming_deviation, end_to_end_grad_check, finalize_binary, multistage_train,
    pretrain_from_codebook, AnnealSchedule, TrainChannel, TrainConfig,
};
use owc::{Result, Tensor};

const ROT: Option<(f64, f64)> = Some((-30.0, 30.0));
const TRIALS: u64 = 100_000;
const EVAL_SEED: u64 = 21;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn record(&mut self, criterion: usize, pass: bool, detail: String) {
        println!("criterion {criterion}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(format!("criterion {criterion}: {detail}"));
        }
    }
}

/// Non-overlapping 95% confidence intervals with `a` below `b`.
fn ci_below(a: &SerEstimate, b: &SerEstimate) -> bool {
    a.ser + a.ci95 < b.ser - b.ci95
}

fn fmt(e: &SerEstimate) -> String {
    format!("{:.4}±{:.4}", e.ser, e.ci95)
}

#[test]
fn acceptance() {
    owc::tune_allocator();
    let mut gate = Gate { failures: Vec::new() };

    criterion_1(&mut gate).unwrap();
    criterion_2(&mut gate).unwrap();
    criterion_3(&mut gate).unwrap();
    criterion_4(&mut gate).unwrap();

    // TEMP: fast gate for development
    if std::env::var("ACCEPT_FAST").is_ok() {
        criterion_8(&mut gate).unwrap();
        criterion_9(&mut gate).unwrap();
        assert!(gate.failures.is_empty(), "failed: {:#?}", gate.failures);
        return;
    }

    // Criteria 5-7 share trained models; train them all up front.
    let models = train_isc_models().unwrap();
    criterion_5(&mut gate, &models);
    criteria_6_7(&mut gate, &models).unwrap();
    criterion_8(&mut gate).unwrap();
    criterion_9(&mut gate).unwrap();

    assert!(gate.failures.is_empty(), "failed: {:#?}", gate.failures);
}

// ---------------------------------------------------------------------------
// criterion 1: gradient fidelity
// ---------------------------------------------------------------------------

/// Max relative error between analytic and central-difference gradients
/// for a small network, probing every parameter tensor.
fn layer_grad_check(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<f64> {
    let net = Network::new(input_shape.clone(), layers)?;
    let mut rng = stream(seed, Domain::Init, 0);
    let mut params = net.init_params(&mut rng);

    let batch = 3;
    let n_in: usize = input_shape.iter().product();
    let mut shape = vec![batch];
    shape.extend_from_slice(&input_shape);
    let x = Tensor::new(shape, (0..batch * n_in).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let out_len: usize = batch * net.output_shape()?.iter().product::<usize>();
    let direction: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // Loss: projection of the train-mode output onto a fixed direction.
    let dir = direction.clone();
    let loss = |p: &mut owc::nn::NetworkParams| -> Result<f64> {
        let (y, _) = net.forward(p, &x, Mode::Train, Some(2.0))?;
        Ok(y.data().iter().zip(&dir).map(|(a, b)| a * b).sum())
    };
    let (y, trace) = net.forward(&mut params, &x, Mode::Train, Some(2.0))?;
    let grad_out = Tensor::new(y.shape().to_vec(), direction)?;
    let (_, analytic) = net.backward(&params, trace.as_ref().unwrap(), &grad_out, Some(2.0))?;

    let mut pick = stream(seed, Domain::Eval, 1);
    grad_check(loss, &mut params, &analytic, 1e-5, 24, &mut pick)
}

fn criterion_1(gate: &mut Gate) -> Result<()> {
    let t0 = Instant::now();
    let d = LayerSpec::Dense { fan_in: 6, fan_out: 5 };
    let cases: Vec<(&str, Vec<usize>, Vec<LayerSpec>)> = vec![
        ("dense", vec![6], vec![d.clone()]),
        ("conv2d", vec![2, 6, 6], vec![LayerSpec::Conv2d { in_ch: 2, out_ch: 3, ksize: 3 }]),
        (
            "maxpool2d",
            vec![2, 4, 4],
            vec![
                LayerSpec::Conv2d { in_ch: 2, out_ch: 2, ksize: 3 },
                LayerSpec::MaxPool2d { pool: 2 },
            ],
        ),
        ("batchnorm", vec![6], vec![d.clone(), LayerSpec::BatchNorm { features: 5 }]),
        ("relu", vec![6], vec![d.clone(), LayerSpec::Activation { act: Activation::Relu }]),
        ("sigmoid", vec![6], vec![d.clone(), LayerSpec::Activation { act: Activation::Sigmoid }]),
        ("softmax", vec![6], vec![d.clone(), LayerSpec::Activation { act: Activation::Softmax }]),
        (
            "param_sigmoid",
            vec![6],
            vec![d, LayerSpec::Activation { act: Activation::ParamSigmoid { delta: 2.0 } }],
        ),
    ];
    let mut worst: (f64, &str) = (0.0, "-");
    for (name, shape, layers) in cases {
        let err = layer_grad_check(shape, layers, 5)?;
        if err > worst.0 {
            worst = (err, name);
        }
    }

    // Full graphs: small C-AE / F-AE over the lens channel, OOK direct.
    let (l, t) = (4, 8);
    let geom = ArrayGeometry { l, pitch_m: 0.015, distance_m: 5.0 };
    let cam = CameraModel { t, pixel_m: 5.6e-6, focal_m: 3.5e-3, fnumber: 1.4, psf_sigma_px: 1.0 };
    let factory = ChannelFactory::new(geom, cam)?;
    let dim = DimmingTarget::uniform_matrix(l, 0.3125)?;
    let mut rng = stream(7, Domain::Init, 0);
    let graphs: Vec<(&str, AeModel, TrainChannel, DimmingTarget)> = vec![
        ("c-ae", build_cae(16, l, t, &mut rng)?, TrainChannel::Isc(&factory), dim.clone()),
        ("f-ae", build_fae(16, l, t, &mut rng)?, TrainChannel::Isc(&factory), dim),
        (
            "ook-ae",
            build_ook_ae(&OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![64] }, &mut rng)?,
            TrainChannel::Direct,
            DimmingTarget::Weight(4.0),
        ),
    ];
    for (name, model, channel, dimming) in &graphs {
        let err = end_to_end_grad_check(model, *channel, dimming, 10.0, 10.0, 2.0, 2, 6, 7)?;
        if err > worst.0 {
            worst = (err, name);
        }
    }

    let secs = t0.elapsed().as_secs_f64();
    gate.record(
        1,
        worst.0 < 1e-4 && secs < 60.0,
        format!("max relative gradient error {:.3e} ({}), {:.1}s", worst.0, worst.1, secs),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// criterion 2: kernel oracles
// ---------------------------------------------------------------------------

fn conv_oracle(x: &Tensor, f: &Tensor, b: &Tensor) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (f.shape()[0], f.shape()[2]);
    let p = (k / 2) as isize;
    let mut y = Tensor::zeros(vec![co, h, w]);
    for oc in 0..co {
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = b.data()[oc];
                for ic in 0..ci {
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = yy as isize + dy as isize - p;
                            let sx = xx as isize + dx as isize - p;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                acc += f.data()[((oc * ci + ic) * k + dy) * k + dx]
                                    * x.data()[(ic * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
                y.data_mut()[(oc * h + yy) * w + xx] = acc;
            }
        }
    }
    y
}

/// Exact dimming projection by enumerating box-constraint active sets.
fn qp_oracle(v: &[f64], peak: f64, mean_target: f64) -> Vec<f64> {
    let n = v.len();
    let total = mean_target * n as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut m = mask;
        for _ in 0..n {
            state.push(m % 3); // 0 at lower bound, 1 free, 2 at peak
            m /= 3;
        }
        let fixed: f64 = state.iter().map(|&s| if s == 2 { peak } else { 0.0 }).sum();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let s: Vec<f64> = if free.is_empty() {
            if (fixed - total).abs() > 1e-9 {
                continue;
            }
            state.iter().map(|&s| if s == 2 { peak } else { 0.0 }).collect()
        } else {
            let free_v: f64 = free.iter().map(|&i| v[i]).sum();
            let mu = (total - fixed - free_v) / free.len() as f64;
            let mut s = vec![0.0; n];
            let mut ok = true;
            for i in 0..n {
                s[i] = match state[i] {
                    0 => {
                        if v[i] + mu > 1e-9 {
                            ok = false;
                        }
                        0.0
                    }
                    2 => {
                        if v[i] + mu < peak - 1e-9 {
                            ok = false;
                        }
                        peak
                    }
                    _ => {
                        let x = v[i] + mu;
                        if !(-1e-9..=peak + 1e-9).contains(&x) {
                            ok = false;
                        }
                        x.clamp(0.0, peak)
                    }
                };
            }
            if !ok {
                continue;
            }
            s
        };
        let dist: f64 = s.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, s));
        }
    }
    best.expect("feasible projection exists").1
}

fn criterion_2(gate: &mut Gate) -> Result<()> {
    use owc::nn::{conv2d_forward, maxpool2d_forward};
    let t0 = Instant::now();
    let mut rng = stream(11, Domain::Eval, 0);

    let mut conv_err = 0.0f64;
    for _ in 0..100 {
        let (ci, co) = (rng.gen_range(1..4usize), rng.gen_range(1..4usize));
        let (h, w) = (rng.gen_range(2..7usize), rng.gen_range(2..7usize));
        let k = [1, 3, 5][rng.gen_range(0..3usize)];
        let x = Tensor::new(vec![ci, h, w], (0..ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let f = Tensor::new(
            vec![co, ci, k, k],
            (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let b = Tensor::new(vec![co], (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let got = conv2d_forward(&x, &f, &b)?;
        let want = conv_oracle(&x, &f, &b);
        for (a, b) in got.data().iter().zip(want.data()) {
            conv_err = conv_err.max((a - b).abs());
        }
    }

    let mut pool_err = 0.0f64;
    for _ in 0..100 {
        let pool = rng.gen_range(2..4usize);
        let side = pool * rng.gen_range(1..4usize);
        let data: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = Tensor::new(vec![side, side], data.clone())?;
        let y = maxpool2d_forward(&x, pool)?;
        let o = side / pool;
        for oy in 0..o {
            for ox in 0..o {
                let mut m = f64::NEG_INFINITY;
                for py in 0..pool {
                    for px in 0..pool {
                        m = m.max(data[(oy * pool + py) * side + ox * pool + px]);
                    }
                }
                pool_err = pool_err.max((y.data()[oy * o + ox] - m).abs());
            }
        }
    }

    let mut proj_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=6usize);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let target = rng.gen_range(0.05..0.95);
        let got = project_dimming(&v, 1.0, target)?;
        let want = qp_oracle(&v, 1.0, target);
        // Compare achieved squared distances: ties in the active set can
        // give distinct minimizers of equal cost.
        let d_got: f64 = got.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        let d_want: f64 = want.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
        proj_err = proj_err.max((d_got - d_want).abs());
        let mean: f64 = got.iter().sum::<f64>() / n as f64;
        proj_err = proj_err.max((mean - target).abs());
    }

    let secs = t0.elapsed().as_secs_f64();
    gate.record(
        2,
        conv_err < 1e-12 && pool_err < 1e-12 && proj_err < 1e-6 && secs < 60.0,
        format!("conv {conv_err:.1e}, maxpool {pool_err:.1e}, projection {proj_err:.1e}, {secs:.1}s"),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// criterion 3: channel statistics
// ---------------------------------------------------------------------------

fn criterion_3(gate: &mut Gate) -> Result<()> {
    let t0 = Instant::now();
    let ch = ChannelParams::new(0.1, 5.0)?;
    let mut rng = stream(13, Domain::Eval, 0);
    let n = 1_000_000usize;
    let chunk = 10_000usize;

    let mut worst_var = 0.0f64;
    let mut worst_mean = 0.0f64;
    for s in [0.0, 0.25, 1.0] {
        let x = Tensor::full(vec![chunk], s);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n / chunk {
            let noisy = apply_optical_noise(&x, &ch, &mut rng)?;
            for &r in noisy.received.data() {
                let d = r - s;
                sum += d;
                sumsq += d * d;
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let want = ch.variance_at(s);
        worst_var = worst_var.max((var - want).abs() / want);
        worst_mean = worst_mean.max(mean.abs() / (4.0 * want.sqrt() / 1e3));
    }

    let secs = t0.elapsed().as_secs_f64();
    gate.record(
        3,
        worst_var < 0.02 && worst_mean < 1.0 && secs < 60.0,
        format!(
            "variance error {:.2}% (limit 2%), mean bias {:.2}x the 4-sigma allowance, {secs:.1}s",
            100.0 * worst_var, worst_mean
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// criterion 4: imaging geometry
// ---------------------------------------------------------------------------

fn centroid(img: &Tensor, t: usize) -> (f64, f64) {
    let mut mass = 0.0;
    let mut cy = 0.0;
    let mut cx = 0.0;
    for r in 0..t {
        for c in 0..t {
            let v = img.data()[r * t + c];
            mass += v;
            cy += v * r as f64;
            cx += v * c as f64;
        }
    }
    (cy / mass, cx / mass)
}

fn criterion_4(gate: &mut Gate) -> Result<()> {
    let (geom, cam) = default_geometry();
    let factory = ChannelFactory::new(geom, cam)?;
    let h = factory.matrix(0.0)?;
    let t = cam.t;

    let single = |row: usize, col: usize| -> Result<(f64, f64)> {
        let mut s = Tensor::zeros(vec![geom.l, geom.l]);
        s.data_mut()[row * geom.l + col] = 1.0;
        Ok(centroid(&render_image(&s, &h)?, t))
    };
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();

    // Pitch from adjacent interior LEDs; span from opposite corners.
    let pitch = dist(single(2, 2)?, single(2, 3)?);
    let span = dist(single(0, 0)?, single(4, 4)?) / std::f64::consts::SQRT_2;

    // Rendering must be linear in the transmit intensities.
    let mut rng = stream(17, Domain::Eval, 0);
    let n = geom.l * geom.l;
    let s1 = Tensor::new(vec![geom.l, geom.l], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let s2 = Tensor::new(vec![geom.l, geom.l], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let (a, b) = (0.37, -1.21);
    let mut combo = Tensor::zeros(vec![geom.l, geom.l]);
    for i in 0..n {
        combo.data_mut()[i] = a * s1.data()[i] + b * s2.data()[i];
    }
    let r1 = render_image(&s1, &h)?;
    let r2 = render_image(&s2, &h)?;
    let rc = render_image(&combo, &h)?;
    let mut lin_err = 0.0f64;
    for i in 0..rc.len() {
        lin_err = lin_err.max((rc.data()[i] - a * r1.data()[i] - b * r2.data()[i]).abs());
    }

    gate.record(
        4,
        (pitch - 1.88).abs() <= 0.05 && (span - 7.5).abs() <= 0.2 && lin_err < 1e-12,
        format!("pitch {pitch:.3}px (1.88±0.05), span {span:.2}px (7.5±0.2), linearity {lin_err:.1e}"),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// criteria 5-7: trained image-sensor models
// ---------------------------------------------------------------------------

struct IscModels {
    factory: ChannelFactory,
    dimming: DimmingTarget,
    /// Full-budget C-AE, trained at 14 dB with rotation (criterion 5).
    cae_high: AeModel,
    cae_high_secs: f64,
    cae_high_gap: f64,
    /// Reduced-budget companions for the sweep comparisons.
    cae_low: AeModel,
    cae_norot: AeModel,
    fae_low: AeModel,
    fae_high: AeModel,
}

fn train_cae(
    factory: &ChannelFactory,
    dimming: &DimmingTarget,
    seed: u64,
    snr_db: f64,
    samples: usize,
    rotate: bool,
) -> Result<(AeModel, f64, f64)> {
    let mut rng = stream(seed, Domain::Init, 0);
    let mut model = build_cae(64, 5, 28, &mut rng)?;
    let mut cfg = TrainConfig::desk_scale(seed, snr_db, dimming.clone());
    cfg.train_samples = samples;
    if !rotate {
        cfg.rotation_range = None;
    }
    let t0 = Instant::now();
    let report = multistage_train(&mut model, &AnnealSchedule::default_seven(), &cfg, TrainChannel::Isc(factory))?;
    Ok((model, t0.elapsed().as_secs_f64(), report.final_hardness_gap))
}

fn train_fae(
    factory: &ChannelFactory,
    dimming: &DimmingTarget,
    seed: u64,
    snr_db: f64,
    samples: usize,
) -> Result<AeModel> {
    let mut rng = stream(seed, Domain::Init, 0);
    let mut model = build_fae(64, 5, 28, &mut rng)?;
    let mut cfg = TrainConfig::desk_scale(seed, snr_db, dimming.clone());
    cfg.train_samples = samples;
    multistage_train(&mut model, &AnnealSchedule::default_seven(), &cfg, TrainChannel::Isc(factory))?;
    Ok(model)
}

fn train_isc_models() -> Result<IscModels> {
    let (geom, cam) = default_geometry();
    let factory = ChannelFactory::new(geom, cam)?;
    let dimming = DimmingTarget::uniform_matrix(5, 20.0 / 64.0)?;

    let (cae_high, cae_high_secs, cae_high_gap) =
        train_cae(&factory, &dimming, 1, 14.0, 100_000, true)?;
    eprintln!("[models] c-ae high trained in {cae_high_secs:.0}s, gap {cae_high_gap:.4}");
    let (cae_low, s, _) = train_cae(&factory, &dimming, 2, 10.0, 30_000, true)?;
    eprintln!("[models] c-ae low trained in {s:.0}s");
    let (cae_norot, s, _) = train_cae(&factory, &dimming, 3, 14.0, 30_000, false)?;
    eprintln!("[models] c-ae no-rotation trained in {s:.0}s");
    let fae_low = train_fae(&factory, &dimming, 5, 10.0, 30_000)?;
    let fae_high = train_fae(&factory, &dimming, 6, 14.0, 30_000)?;
    eprintln!("[models] f-ae pair trained");

    Ok(IscModels { factory, dimming, cae_high, cae_high_secs, cae_high_gap, cae_low, cae_norot, fae_low, fae_high })
}

fn criterion_5(gate: &mut Gate, m: &IscModels) {
    let (gap, secs) = (m.cae_high_gap, m.cae_high_secs);
    match finalize_binary(&m.cae_high) {
        Ok(cb) => {
            let distinct: BTreeSet<Vec<u8>> = cb
                .entries
                .iter()
                .map(|e| e.data().iter().map(|&v| (v > 0.5) as u8).collect())
                .collect();
            let dev = dimming_deviation(&cb, &m.dimming).unwrap_or(f64::INFINITY);
            gate.record(
                5,
                gap <= 0.01 && distinct.len() == 64 && dev <= 0.02 && secs <= 1800.0,
                format!(
                    "hardness gap {gap:.4} (≤0.01), {} distinct codewords (64), \
                     dimming deviation {dev:.4} (≤0.02), {secs:.0}s (≤1800)",
                    distinct.len()
                ),
            );
        }
        Err(e) => gate.record(5, false, format!("codebook export failed: {e}")),
    }
}

fn criteria_6_7(gate: &mut Gate, m: &IscModels) -> Result<()> {
    let snrs = [8.0, 10.0, 12.0, 14.0, 16.0];
    let entries = [SweepEntry::Routed {
        name: "c-ae".into(),
        low: SerSystem::AeIsc { model: &m.cae_low, factory: &m.factory },
        high: SerSystem::AeIsc { model: &m.cae_high, factory: &m.factory },
    }];
    let t0 = Instant::now();
    let table = sweep_snr(&entries, &snrs, ROT, TRIALS, EVAL_SEED, 1)?;
    let cae: Vec<&SerEstimate> = table.rows.iter().map(|r| &r.estimate).collect();
    eprintln!("[eval] c-ae sweep done in {:.0}s", t0.elapsed().as_secs_f64());

    // (a) non-increasing in SNR within 95% CIs.
    let mut monotone = true;
    for w in cae.windows(2) {
        if w[0].ser + w[0].ci95 < w[1].ser - w[1].ci95 {
            monotone = false;
        }
    }

    // (b) beats random OOK with ML decoding and perfect rotation estimates.
    let duty = Tensor::full(vec![5, 5], 20.0 / 64.0);
    let mut rng = stream(EVAL_SEED, Domain::Codebook, 1);
    let random_ook = baseline_codebook(&BaselineKind::RandomOok { l: 5, duty }, 64, &mut rng)?;
    let base = estimate_ser(
        &SerSystem::MlIsc { codebook: &random_ook, factory: &m.factory, csi_error_deg: 0.0 },
        14.0,
        ROT,
        TRIALS,
        EVAL_SEED,
    )?;
    let cae14 = cae[3];
    let beats_baseline = ci_below(cae14, &base);

    // (c) rotation-robust training matters: both tested under rotation.
    let norot = estimate_ser(
        &SerSystem::AeIsc { model: &m.cae_norot, factory: &m.factory },
        14.0,
        ROT,
        TRIALS,
        EVAL_SEED,
    )?;
    let rotation_helps = ci_below(cae14, &norot);

    let sers: Vec<String> = cae.iter().map(|e| fmt(e)).collect();
    gate.record(
        6,
        monotone && beats_baseline && rotation_helps,
        format!(
            "c-ae {} (monotone {monotone}); at 14dB vs random-OOK ML {} ({beats_baseline}); \
             vs no-rotation training {} ({rotation_helps})",
            sers.join(" "),
            fmt(&base),
            fmt(&norot)
        ),
    );

    // criterion 7: C-AE at least matches F-AE; fail only on a clear loss.
    let mut pass7 = true;
    let mut parts = Vec::new();
    for (snr, cae_e) in [(10.0, cae[1]), (14.0, cae[3])] {
        let fae_model = if snr < 12.0 { &m.fae_low } else { &m.fae_high };
        let fae = estimate_ser(
            &SerSystem::AeIsc { model: fae_model, factory: &m.factory },
            snr,
            ROT,
            TRIALS,
            EVAL_SEED,
        )?;
        if ci_below(&fae, cae_e) {
            pass7 = false;
        }
        parts.push(format!("{snr}dB c-ae {} f-ae {}", fmt(cae_e), fmt(&fae)));
    }
    gate.record(7, pass7, parts.join("; "));
    Ok(())
}

// ---------------------------------------------------------------------------
// criterion 8: OOK path
// ---------------------------------------------------------------------------

fn train_ook(seed: u64, samples: usize) -> Result<(AeModel, owc::models::Codebook)> {
    let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![128] };
    let mut rng = stream(seed, Domain::Init, 0);
    let mut model = build_ook_ae(&spec, &mut rng)?;
    let mut cfg = TrainConfig::desk_scale(seed, 10.0, DimmingTarget::Weight(spec.d));
    cfg.lambda = 1.0;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 256;
    cfg.train_samples = samples;
    cfg.rotation_range = None;
    let mut rng = stream(seed, Domain::Codebook, 0);
    let cwc = baseline_codebook(
        &BaselineKind::GreedyCwc { n: spec.n, d: spec.d as usize },
        spec.m,
        &mut rng,
    )?;
    let schedule = AnnealSchedule::default_seven();
    pretrain_from_codebook(&mut model, &cwc, &cfg, 4.0, 2000)?;
    multistage_train(&mut model, &schedule, &cfg, TrainChannel::Direct)?;
    // Polish the decoder against the final binary code: the annealed
    // decoder is a few tenths of a percent behind ML decoding, and this
    // closes most of that gap.
    let binary = finalize_binary(&model)?;
    let mut polish = cfg.clone();
    polish.learning_rate = 1e-3;
    pretrain_from_codebook(&mut model, &binary, &polish, schedule.final_delta(), 16000)?;
    Ok((model, cwc))
}

fn criterion_8(gate: &mut Gate) -> Result<()> {
    let (model, cwc) = train_ook(1, 400_000)?;
    let cb = finalize_binary(&model)?;
    let exact_weight = cb
        .entries
        .iter()
        .all(|e| (e.data().iter().sum::<f64>() - 4.0).abs() < 1e-12);

    let ae = estimate_ser(&SerSystem::AeDirect { model: &model }, 10.0, None, TRIALS, EVAL_SEED)?;
    let ml = estimate_ser(&SerSystem::MlDirect { codebook: &cwc }, 10.0, None, TRIALS, EVAL_SEED)?;
    let not_worse = !ci_below(&ml, &ae);
    gate.record(
        8,
        exact_weight && not_worse,
        format!("exact weight {exact_weight}; ook-ae {} vs cwc-ml {}", fmt(&ae), fmt(&ml)),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// criterion 9: determinism
// ---------------------------------------------------------------------------

fn criterion_9(gate: &mut Gate) -> Result<()> {
    // Identical seed/config must reproduce training byte for byte.
    let run = || -> Result<(String, AeModel, owc::models::Codebook)> {
        let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![32] };
        let mut rng = stream(4, Domain::Init, 0);
        let mut model = build_ook_ae(&spec, &mut rng)?;
        let mut cfg = TrainConfig::desk_scale(4, 10.0, DimmingTarget::Weight(4.0));
        cfg.batch_size = 128;
        cfg.train_samples = 10_000;
        cfg.rotation_range = None;
        let report =
            multistage_train(&mut model, &AnnealSchedule::default_seven(), &cfg, TrainChannel::Direct)?;
        let mut rng = stream(4, Domain::Codebook, 0);
        let cwc = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng)?;
        Ok((report.to_csv(), model, cwc))
    };
    let (csv_a, model, cwc) = run()?;
    let (csv_b, _, _) = run()?;
    let train_identical = csv_a == csv_b;

    let sweep = |threads: usize| -> Result<String> {
        let entries = [
            SweepEntry::Fixed { name: "ook-ae".into(), system: SerSystem::AeDirect { model: &model } },
            SweepEntry::Fixed { name: "cwc-ml".into(), system: SerSystem::MlDirect { codebook: &cwc } },
        ];
        Ok(sweep_snr(&entries, &[6.0, 10.0, 14.0], None, 20_000, EVAL_SEED, threads)?.to_csv())
    };
    let sweep_identical = sweep(1)? == sweep(1)?;

    let one = estimate_ser_threaded(&SerSystem::AeDirect { model: &model }, 10.0, None, TRIALS, EVAL_SEED, 1)?;
    let eight = estimate_ser_threaded(&SerSystem::AeDirect { model: &model }, 10.0, None, TRIALS, EVAL_SEED, 8)?;
    let threads_identical = one.errors == eight.errors;

    gate.record(
        9,
        train_identical && sweep_identical && threads_identical,
        format!(
            "train CSV identical {train_identical}, sweep CSV identical {sweep_identical}, \
             1-thread {} vs 8-thread {} errors",
            one.errors, eight.errors
        ),
    );
    Ok(())
}
