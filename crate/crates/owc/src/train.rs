//! Multi-stage annealed end-to-end training over the stochastic optical
//! channel, plus regularization-weight selection and final binarization.

use std::time::Instant;

use rand::Rng;

use crate::channel::{apply_optical_noise, noise_backward, ChannelParams};
use crate::error::{Error, Result};
use crate::imaging::{backproject, render_image, sample_rotation, ChannelFactory};
use crate::models::{export_codebook, AeModel, Codebook, CodebookMode, DimmingTarget};
use crate::nn::{
    mean_cross_entropy, mean_intensity_penalty, optimizer_step, weight_penalty, Mode,
    OptimizerState,
};
use crate::rng::{stream, Domain};
use crate::tensor::Tensor;

/// Binarizing-sigmoid slope per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    pub deltas: Vec<f64>,
}

impl AnnealSchedule {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::Config("annealing schedule needs at least one stage".into()));
        }
        for w in deltas.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config(format!(
                    "annealing slopes must strictly increase, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let last = *deltas.last().unwrap();
        if last < 12.0 {
            return Err(Error::Config(format!(
                "final slope {last} too small to binarize (need >= 12)"
            )));
        }
        Ok(AnnealSchedule { deltas })
    }

    /// Seven stages of geometric doubling.
    pub fn default_seven() -> Self {
        AnnealSchedule { deltas: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] }
    }

    pub fn final_delta(&self) -> f64 {
        *self.deltas.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Dimming-penalty weight.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Upper bound on optimization steps per annealing stage.
    pub steps_per_stage: usize,
    /// Total training samples across all stages (split evenly).
    pub train_samples: usize,
    /// Samples for validation checks (capped per check).
    pub valid_samples: usize,
    /// SNRs trained against; one is drawn per batch.
    pub snr_db: Vec<f64>,
    pub dimming: DimmingTarget,
    /// Rotation range in degrees; `None` trains without rotation.
    pub rotation_range: Option<(f64, f64)>,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults around a given dimming target and training SNR.
    pub fn desk_scale(seed: u64, snr_db: f64, dimming: DimmingTarget) -> Self {
        TrainConfig {
            lambda: 10.0,
            learning_rate: 1e-3,
            batch_size: 256,
            steps_per_stage: 2000,
            train_samples: 100_000,
            valid_samples: 100_000,
            snr_db: vec![snr_db],
            dimming,
            rotation_range: Some((-30.0, 30.0)),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("steps_per_stage", self.steps_per_stage),
            ("train_samples", self.train_samples),
            ("valid_samples", self.valid_samples),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("at least one training SNR required".into()));
        }
        Ok(())
    }
}

/// One logged point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub stage: usize,
    pub step: usize,
    pub loss: f64,
    pub val_ser: f64,
    pub dim_dev: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub final_hardness_gap: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn csv_header() -> &'static str {
        "stage,step,loss,val_ser,dim_dev"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:.6e}\n",
                r.stage, r.step, r.loss, r.val_ser, r.dim_dev
            ));
        }
        out
    }
}

/// Medium between encoder and decoder during training/evaluation.
#[derive(Clone, Copy)]
pub enum TrainChannel<'a> {
    /// Image-sensor path: render through H(theta), then noise.
    Isc(&'a ChannelFactory),
    /// Temporal path: noise applied to the codeword itself.
    Direct,
}

/// Which trained model serves a test SNR under the two-SNR protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrRegime {
    Low,
    High,
}

pub const SNR_ROUTING_BOUNDARY_DB: f64 = 12.0;

pub fn snr_regime(snr_db: f64) -> SnrRegime {
    if snr_db <= SNR_ROUTING_BOUNDARY_DB {
        SnrRegime::Low
    } else {
        SnrRegime::High
    }
}

const NOISE_PSI2: f64 = 5.0;

struct BatchResult {
    loss: f64,
    enc_grads: crate::nn::NetworkParams,
    dec_grads: crate::nn::NetworkParams,
}

/// Forward + backward over one batch; the gradient is hand-chained through
/// the channel: decoder -> noise reparameterization -> H^T backprojection
/// (ISC only) -> encoder, with the dimming penalty joining at the encoder
/// output.
/// With `fixed_eps` the noise draws are supplied by the caller instead of
/// the stream — that makes the loss a deterministic function of the
/// parameters, which the gradient checker needs.
fn run_batch(
    model: &mut AeModel,
    channel: TrainChannel,
    cfg: &TrainConfig,
    delta: f64,
    messages: &[usize],
    rng: &mut impl Rng,
    fixed_eps: Option<&[f64]>,
) -> Result<BatchResult> {
    let b = messages.len();
    let m = model.m;
    let mut x = Tensor::zeros(vec![b, m]);
    for (i, &msg) in messages.iter().enumerate() {
        x.data_mut()[i * m + msg] = 1.0;
    }
    let (s, enc_trace) = model.encoder.forward(&mut model.encoder_params, &x, Mode::Train, Some(delta))?;
    let enc_trace = enc_trace.expect("train mode returns a trace");

    // Dimming penalty on the relaxed codewords.
    let (pen_loss, pen_grad) = match &cfg.dimming {
        DimmingTarget::Matrix(d) => mean_intensity_penalty(&s, d.data(), cfg.lambda)?,
        DimmingTarget::Weight(d) => weight_penalty(&s, *d, cfg.lambda)?,
    };

    let snr = cfg.snr_db[rng.gen_range(0..cfg.snr_db.len())];
    let ch = ChannelParams::from_snr_db(snr, NOISE_PSI2)?;

    // Through the medium.
    let per_s = s.len() / b;
    let (clean, matrices) = match channel {
        TrainChannel::Isc(factory) => {
            let t = factory.cam.t;
            let mut clean = Tensor::zeros(vec![b, 1, t, t]);
            let mut mats = Vec::with_capacity(b);
            for i in 0..b {
                let theta = match cfg.rotation_range {
                    Some(range) => sample_rotation(rng, range)?,
                    None => 0.0,
                };
                let h = factory.matrix(theta)?;
                let l = h.l;
                let si = Tensor::new(vec![l, l], s.data()[i * per_s..(i + 1) * per_s].to_vec())?;
                let img = render_image(&si, &h)?;
                clean.data_mut()[i * t * t..(i + 1) * t * t].copy_from_slice(img.data());
                mats.push(h);
            }
            (clean, Some(mats))
        }
        TrainChannel::Direct => {
            let mut shape = vec![b];
            shape.extend_from_slice(&model.decoder.input_shape);
            (s.clone().reshape(shape)?, None)
        }
    };
    let noisy = match fixed_eps {
        None => apply_optical_noise(&clean, &ch, rng)?,
        Some(eps) => {
            if eps.len() != clean.len() {
                return Err(Error::Dimension(format!(
                    "{} fixed noise draws for {} signal entries",
                    eps.len(),
                    clean.len()
                )));
            }
            let mut received = clean.clone();
            for (r, &e) in received.data_mut().iter_mut().zip(eps) {
                let v = ch.variance_at(r.max(0.0));
                *r += v.sqrt() * e;
            }
            crate::channel::NoisySignal { received, eps: eps.to_vec() }
        }
    };

    let (post, dec_trace) =
        model.decoder.forward(&mut model.decoder_params, &noisy.received, Mode::Train, None)?;
    let dec_trace = dec_trace.expect("train mode returns a trace");
    let (ce_loss, grad_post) = mean_cross_entropy(&post, messages)?;
    let loss = ce_loss + pen_loss;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }

    let (grad_r, dec_grads) = model.decoder.backward(&model.decoder_params, &dec_trace, &grad_post, None)?;
    let grad_clean = noise_backward(&clean, &noisy.eps, &ch, &grad_r);

    // Back to the encoder output.
    let mut grad_s = pen_grad;
    match matrices {
        Some(mats) => {
            let tt = grad_clean.len() / b;
            for (i, h) in mats.iter().enumerate() {
                let u = Tensor::new(vec![h.t, h.t], grad_clean.data()[i * tt..(i + 1) * tt].to_vec())?;
                let g = backproject(&u, h)?;
                for (acc, v) in
                    grad_s.data_mut()[i * per_s..(i + 1) * per_s].iter_mut().zip(g.data())
                {
                    *acc += v;
                }
            }
        }
        None => {
            for (acc, v) in grad_s.data_mut().iter_mut().zip(grad_clean.data()) {
                *acc += v;
            }
        }
    }
    let grad_s = grad_s.reshape(s.shape().to_vec())?;
    let (_, enc_grads) = model.encoder.backward(&model.encoder_params, &enc_trace, &grad_s, Some(delta))?;

    Ok(BatchResult { loss, enc_grads, dec_grads })
}

/// Validation pass on a fixed, seed-derived sample set: mean loss
/// (cross-entropy + penalty) and symbol error rate at slope `delta`.
fn validate(
    model: &mut AeModel,
    channel: TrainChannel,
    cfg: &TrainConfig,
    delta: f64,
) -> Result<(f64, f64)> {
    let n = cfg.valid_samples.min(1024);
    let mut rng = stream(cfg.seed, Domain::Eval, u64::MAX);
    let messages: Vec<usize> = (0..n).map(|_| rng.gen_range(0..model.m)).collect();
    let m = model.m;
    let mut x = Tensor::zeros(vec![n, m]);
    for (i, &msg) in messages.iter().enumerate() {
        x.data_mut()[i * m + msg] = 1.0;
    }
    let s = model.encoder.infer(&model.encoder_params, &x, Some(delta))?;
    let (pen_loss, _) = match &cfg.dimming {
        DimmingTarget::Matrix(d) => mean_intensity_penalty(&s, d.data(), cfg.lambda)?,
        DimmingTarget::Weight(d) => weight_penalty(&s, *d, cfg.lambda)?,
    };
    let snr = cfg.snr_db[0];
    let ch = ChannelParams::from_snr_db(snr, NOISE_PSI2)?;
    let per_s = s.len() / n;
    let clean = match channel {
        TrainChannel::Isc(factory) => {
            let t = factory.cam.t;
            let mut clean = Tensor::zeros(vec![n, 1, t, t]);
            for i in 0..n {
                let theta = match cfg.rotation_range {
                    Some(range) => sample_rotation(&mut rng, range)?,
                    None => 0.0,
                };
                let h = factory.matrix(theta)?;
                let l = h.l;
                let si = Tensor::new(vec![l, l], s.data()[i * per_s..(i + 1) * per_s].to_vec())?;
                let img = render_image(&si, &h)?;
                clean.data_mut()[i * t * t..(i + 1) * t * t].copy_from_slice(img.data());
            }
            clean
        }
        TrainChannel::Direct => {
            let mut shape = vec![n];
            shape.extend_from_slice(&model.decoder.input_shape);
            s.clone().reshape(shape)?
        }
    };
    let noisy = apply_optical_noise(&clean, &ch, &mut rng)?;
    let post = model.decoder.infer(&model.decoder_params, &noisy.received, None)?;
    let (ce, _) = mean_cross_entropy(&post, &messages)?;
    let mut errors = 0usize;
    for (i, &msg) in messages.iter().enumerate() {
        let row = &post.data()[i * m..(i + 1) * m];
        let mut best = 0usize;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        if best != msg {
            errors += 1;
        }
    }
    Ok((ce + pen_loss, errors as f64 / n as f64))
}

/// Entrywise deviation of the codebook average from the dimming target
/// (max over entries for matrix targets, mean-weight gap for OOK).
pub fn dimming_deviation(codebook: &Codebook, target: &DimmingTarget) -> Result<f64> {
    match target {
        DimmingTarget::Matrix(d) => {
            let mean = codebook.mean_entry();
            if mean.len() != d.len() {
                return Err(Error::Dimension("dimming target shape mismatch".into()));
            }
            Ok(mean
                .data()
                .iter()
                .zip(d.data())
                .map(|(m, t)| (m - t).abs())
                .fold(0.0, f64::max))
        }
        DimmingTarget::Weight(d) => {
            let mean_w = codebook.entries.iter().map(|e| e.data().iter().sum::<f64>()).sum::<f64>()
                / codebook.m() as f64;
            Ok((mean_w - d).abs())
        }
    }
}

/// All message encodings at slope `delta`, unrounded — diagnostics during
/// training must not trip the degenerate-codebook guard of
/// [`export_codebook`].
fn relaxed_encodings(model: &AeModel, delta: f64) -> Result<(Vec<Tensor>, f64)> {
    let mut entries = Vec::with_capacity(model.m);
    let mut gap = 0.0f64;
    for b in 0..model.m {
        let e = crate::models::encode_message(model, b, delta)?;
        for &v in e.data() {
            gap = gap.max(v.min(1.0 - v).abs());
        }
        entries.push(e);
    }
    Ok((entries, gap))
}

fn deviation_of(entries: &[Tensor], target: &DimmingTarget) -> Result<f64> {
    let cb = Codebook {
        entries: entries.to_vec(),
        mode: CodebookMode::Relaxed,
        hardness_gap: 0.0,
        delta_at_export: 0.0,
    };
    dimming_deviation(&cb, target)
}

const PLATEAU_TOL: f64 = 1e-4;
const PLATEAU_CHECKS: usize = 5;

/// Anneal through the schedule, warm-starting each stage from the last.
/// The per-stage step count is `steps_per_stage` capped by an even split
/// of `train_samples` across stages. Early-stops a stage when validation
/// loss improves by less than 1e-4 over 5 consecutive checks.
pub fn multistage_train(
    model: &mut AeModel,
    schedule: &AnnealSchedule,
    cfg: &TrainConfig,
    channel: TrainChannel,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let stages = schedule.deltas.len();
    let budget = cfg.train_samples.div_ceil(stages * cfg.batch_size).max(1);
    let steps = cfg.steps_per_stage.min(budget);
    let check_every = (steps / 5).max(1);

    let mut enc_opt = OptimizerState::adam(cfg.learning_rate);
    let mut dec_opt = OptimizerState::adam(cfg.learning_rate);
    let mut records = Vec::new();
    let mut counter: u64 = 0;

    for (stage, &delta) in schedule.deltas.iter().enumerate() {
        let stage_cfg = cfg.clone();
        // Later annealing stages refine an almost-binary code; smaller
        // steps there keep the refinement from bouncing between basins.
        let stage_lr = cfg.learning_rate * 0.6f64.powi(stage as i32);
        enc_opt.learning_rate = stage_lr;
        dec_opt.learning_rate = stage_lr;
        let mut best_val = f64::INFINITY;
        let mut stale = 0usize;
        for step in 0..steps {
            let mut rng = stream(cfg.seed, Domain::Train, counter);
            counter += 1;
            // Stratified batch: every message appears an equal number of
            // times (plus a random remainder), which removes per-batch
            // class imbalance from the code-geometry gradients.
            let full = cfg.batch_size - cfg.batch_size % model.m;
            let mut messages: Vec<usize> = (0..cfg.batch_size)
                .map(|i| if i < full { i % model.m } else { rng.gen_range(0..model.m) })
                .collect();
            for i in (1..messages.len()).rev() {
                let j = rng.gen_range(0..=i);
                messages.swap(i, j);
            }
            let batch = run_batch(model, channel, &stage_cfg, delta, &messages, &mut rng, None)
                .map_err(|e| Error::Numeric(format!("stage {stage} step {step}: {e}")))?;
            optimizer_step(&mut model.encoder_params, &batch.enc_grads, &mut enc_opt)?;
            optimizer_step(&mut model.decoder_params, &batch.dec_grads, &mut dec_opt)?;

            let last = step + 1 == steps;
            if (step + 1) % check_every == 0 || last {
                let (val_loss, val_ser) = validate(model, channel, &stage_cfg, delta)?;
                let (entries, _) = relaxed_encodings(model, delta)?;
                let dim_dev = deviation_of(&entries, &cfg.dimming)?;
                records.push(TrainRecord { stage, step, loss: batch.loss, val_ser, dim_dev });
                if val_loss < best_val - PLATEAU_TOL {
                    best_val = val_loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= PLATEAU_CHECKS {
                        break;
                    }
                }
            }
        }
    }
    model.delta = schedule.final_delta();

    let (_, final_gap) = relaxed_encodings(model, model.delta)?;
    Ok(TrainReport {
        records,
        final_hardness_gap: final_gap,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Warm-start the transceiver from a seed codebook before the annealed
/// end-to-end run: regress the encoder's relaxed output onto the seed
/// codewords, then train the decoder to classify noisy observations of
/// them. Multi-stage training fine-tunes from here and is free to
/// improve on the seed design; gradient descent alone rarely finds
/// codes with a distance spectrum as good as a combinatorial
/// construction, but it preserves and polishes one.
pub fn pretrain_from_codebook(
    model: &mut AeModel,
    seed: &Codebook,
    cfg: &TrainConfig,
    delta: f64,
    steps: usize,
) -> Result<()> {
    if seed.m() != model.m {
        return Err(Error::Argument(format!(
            "seed codebook has {} entries for an alphabet of {}",
            seed.m(),
            model.m
        )));
    }
    let m = model.m;
    let per = seed.entries[0].len();
    let mut target = Tensor::zeros(vec![m, per]);
    for (b, e) in seed.entries.iter().enumerate() {
        target.data_mut()[b * per..(b + 1) * per].copy_from_slice(e.data());
    }
    let mut x = Tensor::zeros(vec![m, m]);
    for b in 0..m {
        x.data_mut()[b * m + b] = 1.0;
    }

    // Encoder: mean squared error against the seed codewords.
    let mut enc_opt = OptimizerState::adam(cfg.learning_rate);
    for _ in 0..steps {
        let (s, trace) =
            model.encoder.forward(&mut model.encoder_params, &x, Mode::Train, Some(delta))?;
        let trace = trace.expect("train mode returns a trace");
        let mut grad = Tensor::zeros(s.shape().to_vec());
        for ((g, &sv), &tv) in grad.data_mut().iter_mut().zip(s.data()).zip(target.data()) {
            *g = 2.0 * (sv - tv) / s.len() as f64;
        }
        let (_, enc_grads) = model.encoder.backward(&model.encoder_params, &trace, &grad, Some(delta))?;
        optimizer_step(&mut model.encoder_params, &enc_grads, &mut enc_opt)?;
    }

    // Decoder: cross-entropy on noisy seed codewords (direct channel).
    let mut dec_opt = OptimizerState::adam(cfg.learning_rate);
    for step in 0..steps {
        let mut rng = stream(cfg.seed, Domain::Train, u64::MAX - 2 - step as u64);
        let snr = cfg.snr_db[rng.gen_range(0..cfg.snr_db.len())];
        let ch = ChannelParams::from_snr_db(snr, NOISE_PSI2)?;
        let messages: Vec<usize> = (0..cfg.batch_size).map(|i| i % m).collect();
        let mut clean = Tensor::zeros(vec![messages.len(), per]);
        for (i, &b) in messages.iter().enumerate() {
            clean.data_mut()[i * per..(i + 1) * per].copy_from_slice(seed.entries[b].data());
        }
        let mut shape = vec![messages.len()];
        shape.extend_from_slice(&model.decoder.input_shape);
        let clean = clean.reshape(shape)?;
        let noisy = apply_optical_noise(&clean, &ch, &mut rng)?;
        let (post, trace) =
            model.decoder.forward(&mut model.decoder_params, &noisy.received, Mode::Train, None)?;
        let trace = trace.expect("train mode returns a trace");
        let (_, grad_post) = mean_cross_entropy(&post, &messages)?;
        let (_, dec_grads) = model.decoder.backward(&model.decoder_params, &trace, &grad_post, None)?;
        optimizer_step(&mut model.decoder_params, &dec_grads, &mut dec_opt)?;
    }
    model.delta = delta;
    Ok(())
}

/// Export the codebook in binary mode; errors unless the annealing drove
/// every entry within 0.01 of {0, 1}.
pub fn finalize_binary(model: &AeModel) -> Result<Codebook> {
    let cb = export_codebook(model, model.delta, 0.5)?;
    if cb.mode != CodebookMode::Binary {
        let mut worst = (0usize, 0usize, 0.0f64);
        for (b, e) in cb.entries.iter().enumerate() {
            for (i, &v) in e.data().iter().enumerate() {
                let gap = v.min(1.0 - v).abs();
                if gap > worst.2 {
                    worst = (b, i, gap);
                }
            }
        }
        return Err(Error::AnnealingIncomplete(format!(
            "hardness gap {:.4} at message {} entry {} exceeds 0.01",
            worst.2, worst.0, worst.1
        )));
    }
    Ok(cb)
}

/// Finite-difference check of the full transmit-channel-receive gradient
/// (both networks, noise and rotations frozen). Returns the max relative
/// error over up to `max_coords` sampled coordinates per tensor.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_grad_check(
    model: &AeModel,
    channel: TrainChannel,
    dimming: &DimmingTarget,
    lambda: f64,
    snr_db: f64,
    delta: f64,
    batch: usize,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    end_to_end_grad_check_detailed(
        model, channel, dimming, lambda, snr_db, delta, batch, max_coords, seed,
    )
    .map(|r| r.max_rel_err)
}

/// As [`end_to_end_grad_check`], but reporting the worst coordinate.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_grad_check_detailed(
    model: &AeModel,
    channel: TrainChannel,
    dimming: &DimmingTarget,
    lambda: f64,
    snr_db: f64,
    delta: f64,
    batch: usize,
    max_coords: usize,
    seed: u64,
) -> Result<crate::nn::GradCheckReport> {
    use rand_distr::StandardNormal;
    const DRAW_COUNTER: u64 = u64::MAX - 1;

    let cfg = TrainConfig {
        lambda,
        learning_rate: 1e-3,
        batch_size: batch,
        steps_per_stage: 1,
        train_samples: batch,
        valid_samples: batch,
        snr_db: vec![snr_db],
        dimming: dimming.clone(),
        rotation_range: match channel {
            TrainChannel::Isc(_) => Some((-30.0, 30.0)),
            TrainChannel::Direct => None,
        },
        seed,
    };
    let mut draw_rng = stream(seed, Domain::Eval, DRAW_COUNTER);
    // Distinct messages: a batch with duplicates can give batchnorm a
    // zero per-feature variance, and the epsilon-regularized inverse
    // standard deviation then amplifies float cancellation noise far
    // above the finite-difference signal.
    let messages: Vec<usize> = if batch <= model.m {
        let mut pool: Vec<usize> = (0..model.m).collect();
        for i in 0..batch {
            let j = draw_rng.gen_range(i..model.m);
            pool.swap(i, j);
        }
        pool.truncate(batch);
        pool
    } else {
        (0..batch).map(|_| draw_rng.gen_range(0..model.m)).collect()
    };
    let signal_len = batch
        * match channel {
            TrainChannel::Isc(f) => f.cam.t * f.cam.t,
            TrainChannel::Direct => model.decoder.input_shape.iter().product::<usize>(),
        };
    let eps: Vec<f64> = (0..signal_len).map(|_| draw_rng.sample(StandardNormal)).collect();

    let n_enc = model.encoder_params.len();
    let mut combined: crate::nn::NetworkParams = model.encoder_params.clone();
    combined.extend(model.decoder_params.clone());

    let cell = std::cell::RefCell::new(model.clone());
    let run = |p: &crate::nn::NetworkParams| -> Result<BatchResult> {
        let mut m = cell.borrow_mut();
        m.encoder_params = p[..n_enc].to_vec();
        m.decoder_params = p[n_enc..].to_vec();
        // same stream every call: rotations and SNR choice are frozen too
        let mut rng = stream(seed, Domain::Eval, DRAW_COUNTER.wrapping_add(1));
        run_batch(&mut m, channel, &cfg, delta, &messages, &mut rng, Some(&eps))
    };
    let result = run(&combined)?;
    let mut analytic = result.enc_grads;
    analytic.extend(result.dec_grads);

    let mut coord_rng = stream(seed, Domain::Eval, DRAW_COUNTER.wrapping_add(2));
    crate::nn::grad_check_detailed(
        |p: &mut crate::nn::NetworkParams| run(p).map(|r| r.loss),
        &mut combined,
        &analytic,
        1e-5,
        max_coords,
        &mut coord_rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub val_ser: f64,
    pub dim_dev: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub feasible: bool,
    pub table: Vec<LambdaTrial>,
}

pub const DIMMING_FEASIBLE_TOL: f64 = 0.02;

/// Try each candidate with the supplied (possibly shortened) training run
/// returning (validation SER, dimming deviation); pick the smallest-SER
/// feasible candidate (deviation <= 0.02), ties broken by smaller
/// deviation, then smaller lambda. With no feasible candidate, pick the
/// smallest deviation and flag infeasibility.
pub fn select_lambda<F>(candidates: &[f64], mut run: F) -> Result<LambdaChoice>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    if candidates.is_empty() {
        return Err(Error::Argument("no regularization candidates supplied".into()));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        if lambda < 0.0 {
            return Err(Error::Argument(format!("negative candidate {lambda}")));
        }
        let (val_ser, dim_dev) = run(lambda)?;
        table.push(LambdaTrial { lambda, val_ser, dim_dev, feasible: dim_dev <= DIMMING_FEASIBLE_TOL });
    }
    let pick = |pool: &[&LambdaTrial]| -> LambdaTrial {
        let mut best = pool[0];
        for t in &pool[1..] {
            let better = (t.val_ser, t.dim_dev, t.lambda) < (best.val_ser, best.dim_dev, best.lambda);
            if better {
                best = t;
            }
        }
        *best
    };
    let feasible: Vec<&LambdaTrial> = table.iter().filter(|t| t.feasible).collect();
    let (chosen, ok) = if feasible.is_empty() {
        let mut best = &table[0];
        for t in &table[1..] {
            if (t.dim_dev, t.val_ser, t.lambda) < (best.dim_dev, best.val_ser, best.lambda) {
                best = t;
            }
        }
        (*best, false)
    } else {
        (pick(&feasible), true)
    };
    Ok(LambdaChoice { lambda: chosen.lambda, feasible: ok, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_ook_ae, OokAeSpec};
    use crate::rng::{stream, Domain};

    #[test]
    fn schedule_invariants() {
        assert!(AnnealSchedule::new(vec![]).is_err());
        assert!(AnnealSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(AnnealSchedule::new(vec![1.0, 8.0]).is_err()); // final < 12
        assert!(AnnealSchedule::new(vec![16.0]).is_ok());
        let d = AnnealSchedule::default_seven();
        assert_eq!(d.deltas.len(), 7);
        assert_eq!(d.final_delta(), 64.0);
        // final-slope hardness: sig_delta(0.5) within 0.01 of 1
        let sig = 1.0 / (1.0 + (-d.final_delta() * 0.5).exp());
        assert!(sig > 0.99);
    }

    fn tiny_ook_cfg(seed: u64) -> (AeModel, TrainConfig) {
        let spec = OokAeSpec { n: 4, m: 4, d: 2.0, hidden: vec![16] };
        let mut rng = stream(seed, Domain::Init, 0);
        let model = build_ook_ae(&spec, &mut rng).unwrap();
        let cfg = TrainConfig {
            lambda: 0.1,
            learning_rate: 1e-2,
            batch_size: 32,
            steps_per_stage: 40,
            train_samples: 40 * 32 * 7,
            valid_samples: 256,
            snr_db: vec![14.0],
            dimming: DimmingTarget::Weight(2.0),
            rotation_range: None,
            seed,
        };
        (model, cfg)
    }

    #[test]
    fn single_stage_large_delta_trains() {
        let (mut model, mut cfg) = tiny_ook_cfg(21);
        cfg.steps_per_stage = 60;
        cfg.train_samples = 60 * 32;
        let schedule = AnnealSchedule::new(vec![64.0]).unwrap();
        let report = multistage_train(&mut model, &schedule, &cfg, TrainChannel::Direct).unwrap();
        assert!(report.records.iter().all(|r| r.stage == 0));
        assert!(report.records.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn training_reduces_error_and_binarizes() {
        let (mut model, cfg) = tiny_ook_cfg(22);
        let schedule = AnnealSchedule::default_seven();
        let report = multistage_train(&mut model, &schedule, &cfg, TrainChannel::Direct).unwrap();
        assert!(report.final_hardness_gap <= 0.01, "gap {}", report.final_hardness_gap);
        let last = report.records.last().unwrap();
        assert!(last.val_ser < 0.75, "val SER {} not below chance", last.val_ser);
        let cb = finalize_binary(&model).unwrap();
        assert_eq!(cb.mode, CodebookMode::Binary);
        assert_eq!(cb.m(), 4);
    }

    #[test]
    fn determinism_same_seed_same_losses() {
        let (mut a, mut cfg) = tiny_ook_cfg(23);
        cfg.steps_per_stage = 10;
        cfg.train_samples = 10 * 32 * 2;
        let schedule = AnnealSchedule::new(vec![4.0, 64.0]).unwrap();
        let ra = multistage_train(&mut a, &schedule, &cfg, TrainChannel::Direct).unwrap();
        let (mut b, _) = tiny_ook_cfg(23);
        let rb = multistage_train(&mut b, &schedule, &cfg, TrainChannel::Direct).unwrap();
        assert_eq!(ra.records, rb.records);
        for (pa, pb) in a.encoder_params.iter().zip(&b.encoder_params) {
            for (ta, tb) in pa.tensors.iter().zip(&pb.tensors) {
                assert_eq!(ta.data(), tb.data());
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let (mut model, cfg) = tiny_ook_cfg(24);
        model.encoder_params[0].tensors[0].data_mut()[0] = f64::NAN;
        let schedule = AnnealSchedule::new(vec![64.0]).unwrap();
        let err = multistage_train(&mut model, &schedule, &cfg, TrainChannel::Direct).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage 0"), "{msg}");
    }

    #[test]
    fn finalize_rejects_soft_model() {
        let (model, _) = tiny_ook_cfg(25); // untrained, delta 1.0
        let err = finalize_binary(&model).unwrap_err();
        assert!(matches!(err, Error::AnnealingIncomplete(_)), "{err}");
    }

    #[test]
    fn lambda_selection_rules() {
        assert!(select_lambda(&[], |_| Ok((0.0, 0.0))).is_err());

        // single candidate -> returned even if infeasible
        let c = select_lambda(&[5.0], |_| Ok((0.3, 0.5))).unwrap();
        assert_eq!(c.lambda, 5.0);
        assert!(!c.feasible);

        // lambda=0 infeasible on dimming, excluded despite best SER
        let c = select_lambda(&[0.0, 1.0, 10.0], |l| {
            Ok(if l == 0.0 { (0.01, 0.3) } else if l == 1.0 { (0.02, 0.015) } else { (0.05, 0.001) })
        })
        .unwrap();
        assert_eq!(c.lambda, 1.0);
        assert!(c.feasible);

        // equal SER -> smaller deviation wins, then smaller lambda
        let c = select_lambda(&[1.0, 2.0], |l| Ok(if l == 1.0 { (0.02, 0.01) } else { (0.02, 0.005) }))
            .unwrap();
        assert_eq!(c.lambda, 2.0);
        let c = select_lambda(&[1.0, 2.0], |_| Ok((0.02, 0.005))).unwrap();
        assert_eq!(c.lambda, 1.0);

        // none feasible -> minimal deviation, flagged
        let c = select_lambda(&[1.0, 2.0], |l| Ok(if l == 1.0 { (0.1, 0.5) } else { (0.2, 0.3) }))
            .unwrap();
        assert_eq!(c.lambda, 2.0);
        assert!(!c.feasible);
    }

    #[test]
    fn end_to_end_gradients_check_out() {
        let (model, _) = tiny_ook_cfg(26);
        let err = end_to_end_grad_check(
            &model,
            TrainChannel::Direct,
            &DimmingTarget::Weight(2.0),
            0.5,
            10.0,
            2.0,
            3,
            10,
            1,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn snr_routing_boundary() {
        assert_eq!(snr_regime(10.0), SnrRegime::Low);
        assert_eq!(snr_regime(12.0), SnrRegime::Low);
        assert_eq!(snr_regime(12.1), SnrRegime::High);
        assert_eq!(snr_regime(14.0), SnrRegime::High);
    }

    #[test]
    fn report_csv_shape() {
        let report = TrainReport {
            records: vec![TrainRecord { stage: 0, step: 9, loss: 1.5, val_ser: 0.25, dim_dev: 0.01 }],
            final_hardness_gap: 0.0,
            wall_time_s: 1.0,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("stage,step,loss,val_ser,dim_dev\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
