//! Train an OOK autoencoder end to end and harden it into a binary code.
//!
//! A dense encoder/decoder pair learns length-8 on-off keying codewords
//! for 16 messages under a Hamming-weight dimming constraint. The
//! transceiver warm-starts from the greedy constant-weight code, then
//! runs the seven-stage sigmoid-slope annealing schedule
//! (delta = 1, 2, ..., 64) end to end; at the final slope the relaxed
//! codewords are close enough to {0, 1} to round into a true binary
//! codebook. Training from scratch also works but tends to land on
//! codes with a worse distance spectrum than the combinatorial seed.
//!
//! Run with: cargo run --release --example train_ook_autoencoder

use owc::eval::{
    baseline_codebook, estimate_ser, min_hamming_distance, BaselineKind, SerSystem,
};
use owc::models::{build_ook_ae, DimmingTarget, OokAeSpec};
use owc::rng::{stream, Domain};
use owc::train::{
    dimming_deviation, finalize_binary, multistage_train, pretrain_from_codebook, AnnealSchedule,
    TrainChannel, TrainConfig,
};
use owc::Result;

fn main() -> Result<()> {
    owc::tune_allocator();
    let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![128] };
    let mut rng = stream(1, Domain::Init, 0);
    let mut model = build_ook_ae(&spec, &mut rng)?;

    let mut cfg = TrainConfig::desk_scale(1, 10.0, DimmingTarget::Weight(spec.d));
    cfg.lambda = 1.0;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 256;
    cfg.train_samples = 400_000;
    cfg.rotation_range = None; // direct temporal channel, no imaging

    let mut rng = stream(1, Domain::Codebook, 0);
    let cwc = baseline_codebook(
        &BaselineKind::GreedyCwc { n: spec.n, d: spec.d as usize },
        spec.m,
        &mut rng,
    )?;
    pretrain_from_codebook(&mut model, &cwc, &cfg, 4.0, 2000)?;

    let schedule = AnnealSchedule::default_seven();
    let report = multistage_train(&mut model, &schedule, &cfg, TrainChannel::Direct)?;
    println!(
        "trained {} stages in {:.1}s, final hardness gap {:.4}",
        schedule.deltas.len(),
        report.wall_time_s,
        report.final_hardness_gap
    );
    println!("{:>6} {:>6} {:>10} {:>10} {:>10}", "stage", "step", "loss", "val SER", "dim dev");
    for stage in 0..schedule.deltas.len() {
        if let Some(r) = report.records.iter().rev().find(|r| r.stage == stage) {
            println!(
                "{:>6} {:>6} {:>10.4} {:>10.4} {:>10.4}",
                r.stage, r.step, r.loss, r.val_ser, r.dim_dev
            );
        }
    }

    let learned = finalize_binary(&model)?;
    let dev = dimming_deviation(&learned, &cfg.dimming)?;
    println!(
        "learned binary code: min Hamming distance {}, weight deviation {:.4}",
        min_hamming_distance(&learned),
        dev
    );

    println!("\n{:>8} {:>12} {:>12}", "SNR dB", "ook-ae SER", "CWC-ML SER");
    for snr in [6.0, 10.0, 14.0] {
        let ae = estimate_ser(&SerSystem::AeDirect { model: &model }, snr, None, 20_000, 9)?;
        let ml = estimate_ser(&SerSystem::MlDirect { codebook: &cwc }, snr, None, 20_000, 9)?;
        println!("{snr:>8} {:>12.4e} {:>12.4e}", ae.ser, ml.ser);
    }
    Ok(())
}
