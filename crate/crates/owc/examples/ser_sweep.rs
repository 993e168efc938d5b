//! Monte-Carlo symbol-error-rate sweep across SNRs.
//!
//! Estimates SER for a learned OOK transceiver and the constant-weight
//! maximum-likelihood baseline over a range of SNRs, using per-trial
//! counter-based random streams so the exact same error counts come out
//! for any thread count or shard split. Results print as the same CSV
//! the `owc sweep` subcommand writes.
//!
//! Run with: cargo run --release --example ser_sweep

use owc::eval::{baseline_codebook, sweep_snr, BaselineKind, SerSystem, SweepEntry};
use owc::models::{build_ook_ae, DimmingTarget, OokAeSpec};
use owc::rng::{stream, Domain};
use owc::train::{
    multistage_train, pretrain_from_codebook, AnnealSchedule, TrainChannel, TrainConfig,
};
use owc::Result;

fn main() -> Result<()> {
    owc::tune_allocator();
    // Quick training run; see train_ook_autoencoder.rs for the full recipe.
    let spec = OokAeSpec { n: 8, m: 16, d: 4.0, hidden: vec![64] };
    let mut rng = stream(4, Domain::Init, 0);
    let mut model = build_ook_ae(&spec, &mut rng)?;
    let mut cfg = TrainConfig::desk_scale(4, 10.0, DimmingTarget::Weight(spec.d));
    cfg.lambda = 1.0;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 256;
    cfg.train_samples = 120_000;
    cfg.rotation_range = None;

    let mut rng = stream(4, Domain::Codebook, 0);
    let cwc = baseline_codebook(&BaselineKind::GreedyCwc { n: spec.n, d: spec.d as usize }, spec.m, &mut rng)?;
    // Seed the encoder with the constant-weight code, then anneal end to end.
    pretrain_from_codebook(&mut model, &cwc, &cfg, 4.0, 2000)?;
    multistage_train(&mut model, &schedule(), &cfg, TrainChannel::Direct)?;

    let entries = [
        SweepEntry::Fixed { name: "ook-ae".into(), system: SerSystem::AeDirect { model: &model } },
        SweepEntry::Fixed { name: "cwc-ml".into(), system: SerSystem::MlDirect { codebook: &cwc } },
    ];
    let snrs = [6.0, 8.0, 10.0, 12.0, 14.0];

    let table = sweep_snr(&entries, &snrs, None, 50_000, 11, 4)?;
    print!("{}", table.to_csv());

    // Same sweep on one thread must produce byte-identical output.
    let single = sweep_snr(&entries, &snrs, None, 50_000, 11, 1)?;
    assert_eq!(table.to_csv(), single.to_csv());
    eprintln!("(verified: 4-thread and 1-thread sweeps are byte-identical)");
    Ok(())
}

fn schedule() -> AnnealSchedule {
    AnnealSchedule::default_seven()
}
