//! Monte-Carlo symbol-error-rate estimation, classical baselines (random
//! OOK and greedy constant-weight codes with maximum-likelihood decoding),
//! and SNR sweeps.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{apply_optical_noise, ChannelParams};
use crate::error::{Error, Result};
use crate::imaging::{render_image, sample_rotation, snap_to_grid, ChannelFactory};
use crate::models::{export_codebook, AeModel, Codebook, CodebookMode};
use crate::tensor::Tensor;
use crate::train::{snr_regime, SnrRegime};
use crate::rng::{stream, Domain};

const NOISE_PSI2: f64 = 5.0;

/// Monte-Carlo SER with a 95% normal-approximation confidence half-width;
/// zero observed errors reports the 3.69/n upper bound instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SerEstimate {
    pub errors: u64,
    pub trials: u64,
    pub ser: f64,
    pub ci95: f64,
}

impl SerEstimate {
    pub fn new(errors: u64, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Argument("SER estimate needs at least one trial".into()));
        }
        if errors > trials {
            return Err(Error::Argument(format!("{errors} errors out of {trials} trials")));
        }
        let n = trials as f64;
        let p = errors as f64 / n;
        let ci95 = if errors == 0 { 3.69 / n } else { 1.96 * (p * (1.0 - p) / n).sqrt() };
        Ok(SerEstimate { errors, trials, ser: p, ci95 })
    }
}

/// Classical transmit designs.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    /// Random OOK matrices meeting the average-intensity target exactly:
    /// LED (i,j) is on in exactly round(M * D_ij) of the M codewords.
    RandomOok { l: usize, duty: Tensor },
    /// Greedy maximum-minimum-Hamming-distance constant-weight code.
    GreedyCwc { n: usize, d: usize },
}

const REDRAW_LIMIT: usize = 100;

pub fn baseline_codebook(kind: &BaselineKind, m: usize, rng: &mut impl Rng) -> Result<Codebook> {
    if m == 0 {
        return Err(Error::Argument("alphabet must be non-empty".into()));
    }
    let entries = match kind {
        BaselineKind::RandomOok { l, duty } => {
            if duty.len() != l * l {
                return Err(Error::Dimension(format!(
                    "duty matrix has {} entries for a {l}x{l} array",
                    duty.len()
                )));
            }
            let counts: Vec<usize> = duty
                .data()
                .iter()
                .map(|&d| {
                    let k = (m as f64 * d).round();
                    if (k - m as f64 * d).abs() > 1e-9 || !(0.0..=m as f64).contains(&k) {
                        Err(Error::Infeasible(format!(
                            "duty {d} times {m} codewords is not an integer on-count"
                        )))
                    } else {
                        Ok(k as usize)
                    }
                })
                .collect::<Result<_>>()?;
            let mut entries = Vec::new();
            let mut ok = false;
            for _ in 0..REDRAW_LIMIT {
                entries = vec![Tensor::zeros(vec![*l, *l]); m];
                for (led, &k) in counts.iter().enumerate() {
                    // k distinct codeword slots, uniform (partial Fisher-Yates)
                    let mut slots: Vec<usize> = (0..m).collect();
                    for pick in 0..k {
                        let j = rng.gen_range(pick..m);
                        slots.swap(pick, j);
                        entries[slots[pick]].data_mut()[led] = 1.0;
                    }
                }
                if all_distinct(&entries) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::Infeasible(format!(
                    "no distinct random OOK codebook after {REDRAW_LIMIT} draws"
                )));
            }
            entries
        }
        BaselineKind::GreedyCwc { n, d } => greedy_cwc(*n, *d, m)?,
    };
    Ok(Codebook { entries, mode: CodebookMode::Binary, hardness_gap: 0.0, delta_at_export: f64::INFINITY })
}

fn all_distinct(entries: &[Tensor]) -> bool {
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            if entries[i].data() == entries[j].data() {
                return false;
            }
        }
    }
    true
}

/// Greedy selection over all weight-d words of length n, visited in
/// descending numeric order: seed with the first word, then repeatedly add
/// the word maximizing the minimum Hamming distance to the chosen set
/// (earliest visited wins ties).
fn greedy_cwc(n: usize, d: usize, m: usize) -> Result<Vec<Tensor>> {
    if n >= 64 {
        return Err(Error::Argument("codeword length must stay below 64".into()));
    }
    if d > n {
        return Err(Error::Argument(format!("weight {d} exceeds length {n}")));
    }
    let words: Vec<u64> =
        (0..1u64 << n).rev().filter(|w| w.count_ones() as usize == d).collect();
    if m > words.len() {
        return Err(Error::Infeasible(format!(
            "{m} codewords requested but only {} distinct weight-{d} words exist",
            words.len()
        )));
    }
    let mut chosen = vec![words[0]];
    while chosen.len() < m {
        let mut best: Option<(u32, u64)> = None;
        for &w in &words {
            if chosen.contains(&w) {
                continue;
            }
            let min_d = chosen.iter().map(|&c| (c ^ w).count_ones()).min().unwrap();
            if best.is_none_or(|(bd, _)| min_d > bd) {
                best = Some((min_d, w));
            }
        }
        chosen.push(best.unwrap().1);
    }
    Ok(chosen
        .into_iter()
        .map(|w| {
            // most significant bit first
            let bits: Vec<f64> =
                (0..n).rev().map(|i| if (w >> i) & 1 == 1 { 1.0 } else { 0.0 }).collect();
            Tensor::new(vec![n], bits).unwrap()
        })
        .collect())
}

/// Minimum pairwise Hamming distance of a binary codebook; infinity for a
/// single codeword.
pub fn min_hamming_distance(cb: &Codebook) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..cb.entries.len() {
        for j in i + 1..cb.entries.len() {
            let d: f64 = cb.entries[i]
                .data()
                .iter()
                .zip(cb.entries[j].data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            best = best.min(d);
        }
    }
    best
}

/// Exact Gaussian negative log-likelihood of the signal-dependent noise
/// model, up to constants: sum_p (y_p - x_p)^2 / (2 var_p) + ln(var_p)/2.
fn nll(y: &[f64], x: &[f64], ch: &ChannelParams) -> f64 {
    let mut acc = 0.0;
    for (&yv, &xv) in y.iter().zip(x) {
        let var = ch.variance_at(xv.max(0.0));
        let d = yv - xv;
        acc += d * d / (2.0 * var) + 0.5 * var.ln();
    }
    acc
}

/// Per-angle rendered codebook for the ML receiver.
struct MlCache<'a> {
    codebook: &'a Codebook,
    factory: Option<&'a ChannelFactory>,
    ch: ChannelParams,
    rendered: HashMap<i64, Vec<Tensor>>,
}

impl<'a> MlCache<'a> {
    fn new(codebook: &'a Codebook, factory: Option<&'a ChannelFactory>, ch: ChannelParams) -> Result<Self> {
        if codebook.mode != CodebookMode::Binary {
            return Err(Error::Argument("ML decoding needs a binary codebook".into()));
        }
        if !all_distinct(&codebook.entries) {
            return Err(Error::Argument("ML decoding needs distinct codewords".into()));
        }
        Ok(MlCache { codebook, factory, ch, rendered: HashMap::new() })
    }

    fn decode(&mut self, y: &Tensor, theta_est: f64) -> Result<usize> {
        let signals: &Vec<Tensor> = match self.factory {
            Some(factory) => {
                let snapped = snap_to_grid(theta_est);
                let key = (snapped / 0.5).round() as i64;
                if !self.rendered.contains_key(&key) {
                    let h = factory.matrix(snapped)?;
                    let rendered: Result<Vec<Tensor>> =
                        self.codebook.entries.iter().map(|s| render_image(s, &h)).collect();
                    self.rendered.insert(key, rendered?);
                }
                &self.rendered[&key]
            }
            None => &self.codebook.entries,
        };
        let mut best = 0usize;
        let mut best_nll = f64::INFINITY;
        for (b, x) in signals.iter().enumerate() {
            let v = nll(y.data(), x.data(), &self.ch);
            if v < best_nll {
                best_nll = v;
                best = b;
            }
        }
        Ok(best)
    }
}

/// Maximum-likelihood decoding of one sensor image (or direct codeword
/// observation when `factory` is `None`) given channel-state information:
/// the noise parameters and the estimated rotation angle.
pub fn ml_decode(
    y: &Tensor,
    codebook: &Codebook,
    factory: Option<&ChannelFactory>,
    ch: &ChannelParams,
    theta_est: f64,
) -> Result<usize> {
    MlCache::new(codebook, factory, *ch)?.decode(y, theta_est)
}

/// Corrupted rotation estimate: truth plus zero-mean Gaussian error in
/// degrees.
pub fn perturb_csi(true_theta: f64, error_level_deg: f64, rng: &mut impl Rng) -> Result<f64> {
    if error_level_deg < 0.0 {
        return Err(Error::Argument(format!("error level {error_level_deg} is negative")));
    }
    if error_level_deg == 0.0 {
        return Ok(true_theta);
    }
    let e: f64 = rng.sample(StandardNormal);
    Ok(true_theta + error_level_deg * e)
}

/// A transmit/receive pair under test.
pub enum SerSystem<'a> {
    /// Autoencoder over the image-sensor channel.
    AeIsc { model: &'a AeModel, factory: &'a ChannelFactory },
    /// Autoencoder over the direct (temporal OOK) channel.
    AeDirect { model: &'a AeModel },
    /// Fixed codebook with ML decoding over the image-sensor channel;
    /// the rotation estimate carries Gaussian error of this many degrees.
    MlIsc { codebook: &'a Codebook, factory: &'a ChannelFactory, csi_error_deg: f64 },
    /// Fixed codebook with ML decoding over the direct channel.
    MlDirect { codebook: &'a Codebook },
}

const EVAL_CHUNK: usize = 256;

/// Monte-Carlo SER over `trials` (global trial indices, so shard splits
/// reproduce the exact same draws: trial i always uses the stream
/// derived from (seed, i)).
pub fn estimate_ser_range(
    system: &SerSystem,
    snr_db: f64,
    rotation_range: Option<(f64, f64)>,
    trials: Range<u64>,
    seed: u64,
) -> Result<u64> {
    let ch = ChannelParams::from_snr_db(snr_db, NOISE_PSI2)?;
    match system {
        SerSystem::AeIsc { model, factory } => {
            let cb = export_codebook(model, model.delta, 0.5)?;
            ae_trials(model, &cb, Some(factory), &ch, rotation_range, trials, seed)
        }
        SerSystem::AeDirect { model } => {
            let cb = export_codebook(model, model.delta, 0.5)?;
            ae_trials(model, &cb, None, &ch, rotation_range, trials, seed)
        }
        SerSystem::MlIsc { codebook, factory, csi_error_deg } => {
            let mut cache = MlCache::new(codebook, Some(factory), ch)?;
            let m = codebook.m();
            let mut errors = 0u64;
            for trial in trials {
                let mut rng = stream(seed, Domain::Eval, trial);
                let b = rng.gen_range(0..m);
                let theta = match rotation_range {
                    Some(range) => sample_rotation(&mut rng, range)?,
                    None => 0.0,
                };
                let h = factory.matrix(theta)?;
                let clean = render_image(&codebook.entries[b], &h)?;
                let noisy = apply_optical_noise(&clean, &ch, &mut rng)?;
                let theta_est = perturb_csi(h.theta_deg, *csi_error_deg, &mut rng)?;
                if cache.decode(&noisy.received, theta_est)? != b {
                    errors += 1;
                }
            }
            Ok(errors)
        }
        SerSystem::MlDirect { codebook } => {
            let mut cache = MlCache::new(codebook, None, ch)?;
            let m = codebook.m();
            let mut errors = 0u64;
            for trial in trials {
                let mut rng = stream(seed, Domain::Eval, trial);
                let b = rng.gen_range(0..m);
                let noisy = apply_optical_noise(&codebook.entries[b], &ch, &mut rng)?;
                if cache.decode(&noisy.received, 0.0)? != b {
                    errors += 1;
                }
            }
            Ok(errors)
        }
    }
}

/// Autoencoder trials, batched through the decoder for throughput. The
/// per-trial streams keep the result independent of the batch size.
fn ae_trials(
    model: &AeModel,
    codebook: &Codebook,
    factory: Option<&ChannelFactory>,
    ch: &ChannelParams,
    rotation_range: Option<(f64, f64)>,
    trials: Range<u64>,
    seed: u64,
) -> Result<u64> {
    let m = model.m;
    let mut errors = 0u64;
    let mut pending: Vec<u64> = Vec::with_capacity(EVAL_CHUNK);
    let all: Vec<u64> = trials.collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        pending.clear();
        pending.extend_from_slice(chunk);
        let n = pending.len();
        let per = model.decoder.input_shape.iter().product::<usize>();
        let mut batch = Tensor::zeros(vec![n, per]);
        let mut labels = Vec::with_capacity(n);
        for (i, &trial) in pending.iter().enumerate() {
            let mut rng = stream(seed, Domain::Eval, trial);
            let b = rng.gen_range(0..m);
            labels.push(b);
            let clean = match factory {
                Some(f) => {
                    let theta = match rotation_range {
                        Some(range) => sample_rotation(&mut rng, range)?,
                        None => 0.0,
                    };
                    let h = f.matrix(theta)?;
                    render_image(&codebook.entries[b], &h)?
                }
                None => codebook.entries[b].clone(),
            };
            let noisy = apply_optical_noise(&clean, ch, &mut rng)?;
            batch.data_mut()[i * per..(i + 1) * per].copy_from_slice(noisy.received.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&model.decoder.input_shape);
        let batch = batch.reshape(shape)?;
        let post = model.decoder.infer(&model.decoder_params, &batch, None)?;
        for (i, &b) in labels.iter().enumerate() {
            let row = &post.data()[i * m..(i + 1) * m];
            let mut best = 0usize;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            if best != b {
                errors += 1;
            }
        }
    }
    Ok(errors)
}

pub fn estimate_ser(
    system: &SerSystem,
    snr_db: f64,
    rotation_range: Option<(f64, f64)>,
    n_trials: u64,
    seed: u64,
) -> Result<SerEstimate> {
    estimate_ser_threaded(system, snr_db, rotation_range, n_trials, seed, 1)
}

/// Same estimate fanned out over worker threads. Per-trial streams make
/// the error count identical for any thread count.
pub fn estimate_ser_threaded(
    system: &SerSystem,
    snr_db: f64,
    rotation_range: Option<(f64, f64)>,
    n_trials: u64,
    seed: u64,
    threads: usize,
) -> Result<SerEstimate> {
    if n_trials == 0 {
        return Err(Error::Argument("SER estimation needs at least one trial".into()));
    }
    if threads == 0 {
        return Err(Error::Argument("thread count must be positive".into()));
    }
    let errors = if threads == 1 {
        estimate_ser_range(system, snr_db, rotation_range, 0..n_trials, seed)?
    } else {
        let per = n_trials.div_ceil(threads as u64);
        let mut total = 0u64;
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for w in 0..threads as u64 {
                let lo = (w * per).min(n_trials);
                let hi = ((w + 1) * per).min(n_trials);
                if lo == hi {
                    continue;
                }
                handles.push(
                    scope.spawn(move || estimate_ser_range(system, snr_db, rotation_range, lo..hi, seed)),
                );
            }
            for h in handles {
                total += h.join().expect("evaluation worker panicked")?;
            }
            Ok(())
        })?;
        total
    };
    SerEstimate::new(errors, n_trials)
}

/// One system under sweep: either a low/high model pair routed by the
/// two-SNR protocol, or a fixed system used at every SNR.
pub enum SweepEntry<'a> {
    Routed { name: String, low: SerSystem<'a>, high: SerSystem<'a> },
    Fixed { name: String, system: SerSystem<'a> },
}

impl<'a> SweepEntry<'a> {
    fn name(&self) -> &str {
        match self {
            SweepEntry::Routed { name, .. } | SweepEntry::Fixed { name, .. } => name,
        }
    }

    fn at(&self, snr_db: f64) -> &SerSystem<'a> {
        match self {
            SweepEntry::Fixed { system, .. } => system,
            SweepEntry::Routed { low, high, .. } => match snr_regime(snr_db) {
                SnrRegime::Low => low,
                SnrRegime::High => high,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub system: String,
    pub snr_db: f64,
    pub estimate: SerEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn csv_header() -> &'static str {
        "system,snr_db,trials,errors,ser,ci95"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6e},{:.6e}\n",
                r.system, r.snr_db, r.estimate.trials, r.estimate.errors, r.estimate.ser, r.estimate.ci95
            ));
        }
        out
    }
}

/// One row per (system, SNR), systems outermost, deterministic order.
pub fn sweep_snr(
    entries: &[SweepEntry],
    snr_list: &[f64],
    rotation_range: Option<(f64, f64)>,
    n_trials: u64,
    seed: u64,
    threads: usize,
) -> Result<SweepTable> {
    if entries.is_empty() || snr_list.is_empty() {
        return Err(Error::Argument("sweep needs at least one system and one SNR".into()));
    }
    let mut rows = Vec::with_capacity(entries.len() * snr_list.len());
    for entry in entries {
        for &snr in snr_list {
            let estimate =
                estimate_ser_threaded(entry.at(snr), snr, rotation_range, n_trials, seed, threads)?;
            rows.push(SweepRow { system: entry.name().to_string(), snr_db: snr, estimate });
        }
    }
    Ok(SweepTable { rows })
}

/// Max and mean entrywise deviation of the codebook average from the
/// target duty matrix.
pub fn dimming_report(codebook: &Codebook, target: &Tensor) -> Result<(f64, f64)> {
    if codebook.entries.is_empty() {
        return Err(Error::Argument("empty codebook".into()));
    }
    let mean = codebook.mean_entry();
    if mean.len() != target.len() {
        return Err(Error::Dimension(format!(
            "codebook entries have {} values, target has {}",
            mean.len(),
            target.len()
        )));
    }
    let mut max_dev = 0.0f64;
    let mut sum = 0.0;
    for (m, t) in mean.data().iter().zip(target.data()) {
        let d = (m - t).abs();
        max_dev = max_dev.max(d);
        sum += d;
    }
    Ok((max_dev, sum / mean.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{default_geometry, ChannelFactory};
    use crate::models::{build_ook_ae, OokAeSpec};
    use crate::rng::{stream, Domain};

    #[test]
    fn ser_estimate_ci() {
        let e = SerEstimate::new(25, 100).unwrap();
        assert_eq!(e.ser, 0.25);
        assert!((e.ci95 - 1.96 * (0.25 * 0.75 / 100.0f64).sqrt()).abs() < 1e-12);
        let z = SerEstimate::new(0, 1000).unwrap();
        assert_eq!(z.ci95, 3.69 / 1000.0);
        assert!(SerEstimate::new(2, 1).is_err());
        assert!(SerEstimate::new(0, 0).is_err());
        // quadrupling trials halves the half-width
        let a = SerEstimate::new(100, 1000).unwrap();
        let b = SerEstimate::new(400, 4000).unwrap();
        assert!((a.ci95 / b.ci95 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn random_ook_exact_duty() {
        let mut rng = stream(0, Domain::Codebook, 0);
        let duty = Tensor::full(vec![5, 5], 20.0 / 64.0);
        let kind = BaselineKind::RandomOok { l: 5, duty };
        let cb = baseline_codebook(&kind, 64, &mut rng).unwrap();
        assert_eq!(cb.m(), 64);
        for led in 0..25 {
            let on: f64 = cb.entries.iter().map(|e| e.data()[led]).sum();
            assert_eq!(on, 20.0, "LED {led}");
        }
        assert!(all_distinct(&cb.entries));
        let (max_dev, mean_dev) = dimming_report(&cb, &Tensor::full(vec![5, 5], 0.3125)).unwrap();
        assert!(max_dev < 1e-12 && mean_dev < 1e-12);
    }

    #[test]
    fn random_ook_fractional_duty_rejected() {
        let mut rng = stream(1, Domain::Codebook, 0);
        let kind = BaselineKind::RandomOok { l: 2, duty: Tensor::full(vec![2, 2], 0.3) };
        assert!(baseline_codebook(&kind, 7, &mut rng).is_err());
    }

    #[test]
    fn random_ook_distinctness_unattainable() {
        let mut rng = stream(2, Domain::Codebook, 0);
        // all-zero duty forces identical all-zero codewords
        let kind = BaselineKind::RandomOok { l: 2, duty: Tensor::zeros(vec![2, 2]) };
        let err = baseline_codebook(&kind, 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn greedy_cwc_small_case() {
        let mut rng = stream(3, Domain::Codebook, 0);
        let kind = BaselineKind::GreedyCwc { n: 4, d: 2 };
        let cb = baseline_codebook(&kind, 2, &mut rng).unwrap();
        assert_eq!(cb.entries[0].data(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(cb.entries[1].data(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(min_hamming_distance(&cb), 4.0);

        let single = baseline_codebook(&kind, 1, &mut rng).unwrap();
        assert_eq!(min_hamming_distance(&single), f64::INFINITY);

        // more codewords than C(4,2) = 6
        assert!(baseline_codebook(&kind, 7, &mut rng).is_err());

        let full = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        assert_eq!(full.m(), 16);
        for e in &full.entries {
            assert_eq!(e.data().iter().sum::<f64>(), 4.0);
        }
        assert!(all_distinct(&full.entries));
        assert!(min_hamming_distance(&full) >= 2.0);
    }

    fn small_factory() -> ChannelFactory {
        let (geom, cam) = default_geometry();
        ChannelFactory::new(geom, cam).unwrap()
    }

    #[test]
    fn ml_decode_noiseless_recovers_message() {
        let factory = small_factory();
        let mut rng = stream(4, Domain::Codebook, 0);
        let duty = Tensor::full(vec![5, 5], 0.3125);
        let cb = baseline_codebook(&BaselineKind::RandomOok { l: 5, duty }, 64, &mut rng).unwrap();
        let ch = ChannelParams::from_snr_db(60.0, 5.0).unwrap();
        for b in [0usize, 17, 63] {
            let h = factory.matrix(30.0).unwrap();
            let y = render_image(&cb.entries[b], &h).unwrap();
            assert_eq!(ml_decode(&y, &cb, Some(&factory), &ch, 30.0).unwrap(), b);
        }
    }

    #[test]
    fn ml_homoscedastic_is_nearest_euclidean() {
        let mut rng = stream(5, Domain::Codebook, 0);
        let cb = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        let ch = ChannelParams::new(0.25, 0.0).unwrap(); // psi2 = 0
        for trial in 0..50u64 {
            let mut r = stream(6, Domain::Eval, trial);
            let b = r.gen_range(0..16);
            let noisy = apply_optical_noise(&cb.entries[b], &ch, &mut r).unwrap();
            let got = ml_decode(&noisy.received, &cb, None, &ch, 0.0).unwrap();
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, e) in cb.entries.iter().enumerate() {
                let d: f64 = e
                    .data()
                    .iter()
                    .zip(noisy.received.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            assert_eq!(got, best);
        }
    }

    #[test]
    fn ml_matches_brute_force_posterior() {
        // independent likelihood computation over an M=4 toy codebook
        let entries = vec![
            Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap(),
            Tensor::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap(),
            Tensor::new(vec![3], vec![0.0, 0.0, 1.0]).unwrap(),
            Tensor::new(vec![3], vec![1.0, 1.0, 0.0]).unwrap(),
        ];
        let cb = Codebook {
            entries,
            mode: CodebookMode::Binary,
            hardness_gap: 0.0,
            delta_at_export: f64::INFINITY,
        };
        let ch = ChannelParams::new(0.1, 5.0).unwrap();
        for trial in 0..100u64 {
            let mut r = stream(7, Domain::Eval, trial);
            let b = r.gen_range(0..4);
            let noisy = apply_optical_noise(&cb.entries[b], &ch, &mut r).unwrap();
            let y = noisy.received.data();
            // unnormalized log posterior, densities written out directly
            let mut scores = Vec::new();
            for e in &cb.entries {
                let mut lp = 0.0;
                for (&yv, &xv) in y.iter().zip(e.data()) {
                    let var = ch.sigma2 * (1.0 + ch.psi2 * xv);
                    lp += -0.5 * ((yv - xv) * (yv - xv) / var
                        + (2.0 * std::f64::consts::PI * var).ln());
                }
                scores.push(lp);
            }
            let want = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(ml_decode(&noisy.received, &cb, None, &ch, 0.0).unwrap(), want);
        }
    }

    #[test]
    fn ml_requires_binary_codebook() {
        let cb = Codebook {
            entries: vec![Tensor::new(vec![2], vec![0.4, 0.6]).unwrap()],
            mode: CodebookMode::Relaxed,
            hardness_gap: 0.4,
            delta_at_export: 1.0,
        };
        let ch = ChannelParams::new(0.1, 5.0).unwrap();
        assert!(ml_decode(&Tensor::zeros(vec![2]), &cb, None, &ch, 0.0).is_err());
    }

    #[test]
    fn csi_perturbation_statistics() {
        let mut rng = stream(8, Domain::Eval, 0);
        assert_eq!(perturb_csi(17.0, 0.0, &mut rng).unwrap(), 17.0);
        assert!(perturb_csi(0.0, -1.0, &mut rng).is_err());
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| perturb_csi(10.0, 5.0, &mut rng).unwrap()). collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.2, "mean {mean}");
        assert!((var.sqrt() - 5.0).abs() < 0.2, "std {}", var.sqrt());
    }

    #[test]
    fn ser_zero_noise_ml_is_zero() {
        let mut rng = stream(9, Domain::Codebook, 0);
        let cb = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        let system = SerSystem::MlDirect { codebook: &cb };
        let e = estimate_ser(&system, 100.0, None, 500, 0).unwrap();
        assert_eq!(e.errors, 0);
        assert_eq!(e.ci95, 3.69 / 500.0);
    }

    #[test]
    fn ser_shard_invariance_and_determinism() {
        let mut rng = stream(10, Domain::Codebook, 0);
        let cb = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        let system = SerSystem::MlDirect { codebook: &cb };
        let full = estimate_ser_range(&system, 2.0, None, 0..400, 7).unwrap();
        let a = estimate_ser_range(&system, 2.0, None, 0..137, 7).unwrap();
        let b = estimate_ser_range(&system, 2.0, None, 137..400, 7).unwrap();
        assert_eq!(full, a + b);
        let again = estimate_ser_range(&system, 2.0, None, 0..400, 7).unwrap();
        assert_eq!(full, again);
        assert!(full > 0, "expected some errors at 2 dB");
    }

    #[test]
    fn ae_chunking_does_not_change_counts() {
        let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![32] };
        let mut rng = stream(11, Domain::Init, 0);
        let model = build_ook_ae(&spec, &mut rng).unwrap();
        let system = SerSystem::AeDirect { model: &model };
        // spans two chunks (256 + partial)
        let full = estimate_ser_range(&system, 10.0, None, 0..300, 3).unwrap();
        let a = estimate_ser_range(&system, 10.0, None, 0..123, 3).unwrap();
        let b = estimate_ser_range(&system, 10.0, None, 123..300, 3).unwrap();
        assert_eq!(full, a + b);
    }

    #[test]
    fn thread_count_does_not_change_errors() {
        let mut rng = stream(13, Domain::Codebook, 0);
        let cb = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        let system = SerSystem::MlDirect { codebook: &cb };
        let one = estimate_ser_threaded(&system, 4.0, None, 500, 11, 1).unwrap();
        let eight = estimate_ser_threaded(&system, 4.0, None, 500, 11, 8).unwrap();
        assert_eq!(one, eight);
        assert!(estimate_ser_threaded(&system, 4.0, None, 500, 11, 0).is_err());
    }

    #[test]
    fn sweep_rows_and_csv() {
        let mut rng = stream(12, Domain::Codebook, 0);
        let cb = baseline_codebook(&BaselineKind::GreedyCwc { n: 8, d: 4 }, 16, &mut rng).unwrap();
        let sys_a = SerSystem::MlDirect { codebook: &cb };
        let sys_low = SerSystem::MlDirect { codebook: &cb };
        let sys_high = SerSystem::MlDirect { codebook: &cb };
        let entries = vec![
            SweepEntry::Fixed { name: "cwc-ml".into(), system: sys_a },
            SweepEntry::Routed { name: "routed".into(), low: sys_low, high: sys_high },
        ];
        let table = sweep_snr(&entries, &[10.0, 14.0], None, 50, 0, 1).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0].system, "cwc-ml");
        assert_eq!(table.rows[0].snr_db, 10.0);
        assert_eq!(table.rows[3].system, "routed");
        let csv = table.to_csv();
        assert!(csv.starts_with("system,snr_db,trials,errors,ser,ci95\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(sweep_snr(&[], &[10.0], None, 1, 0, 1).is_err());
    }

    #[test]
    fn dimming_report_examples() {
        let entries = vec![Tensor::full(vec![5, 5], 1.0); 4];
        let cb = Codebook { entries, mode: CodebookMode::Binary, hardness_gap: 0.0, delta_at_export: f64::INFINITY };
        let (max_dev, mean_dev) = dimming_report(&cb, &Tensor::full(vec![5, 5], 0.3125)).unwrap();
        assert!((max_dev - 0.6875).abs() < 1e-12);
        assert!((mean_dev - 0.6875).abs() < 1e-12);
        assert!(dimming_report(&cb, &Tensor::full(vec![2, 2], 0.3125)).is_err());
    }
}
