//! Train a convolutional autoencoder over the image-sensor channel.
//!
//! The encoder maps each message to an LED intensity matrix; a thin lens
//! renders the array onto the sensor under a random in-plane rotation,
//! signal-dependent noise is added, and the convolutional decoder
//! recovers the message from the blurry image. A dimming penalty keeps
//! the average LED intensity at the target duty. This example uses a
//! scaled-down geometry so a full seven-stage annealed run finishes in
//! a couple of minutes; the `owc train` binary runs the full-size system.
//!
//! Run with: cargo run --release --example train_image_sensor_autoencoder

use owc::imaging::{ArrayGeometry, CameraModel, ChannelFactory};
use owc::models::{build_cae, DimmingTarget};
use owc::rng::{stream, Domain};
use owc::train::{
    dimming_deviation, finalize_binary, multistage_train, AnnealSchedule, TrainChannel, TrainConfig,
};
use owc::Result;

fn main() -> Result<()> {
    owc::tune_allocator();
    let (m, l, t) = (16, 4, 12);
    let geom = ArrayGeometry { l, pitch_m: 0.015, distance_m: 5.0 };
    let cam = CameraModel { t, pixel_m: 5.6e-6, focal_m: 3.5e-3, fnumber: 1.4, psf_sigma_px: 1.0 };
    let factory = ChannelFactory::new(geom, cam)?;

    let mut rng = stream(3, Domain::Init, 0);
    let mut model = build_cae(m, l, t, &mut rng)?;
    println!(
        "convolutional autoencoder: {} encoder + {} decoder parameters",
        model.encoder.param_count(&model.encoder_params),
        model.decoder.param_count(&model.decoder_params)
    );

    let dimming = DimmingTarget::uniform_matrix(l, 0.3125)?;
    let mut cfg = TrainConfig::desk_scale(3, 14.0, dimming);
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 64;
    cfg.train_samples = 200_000;
    cfg.rotation_range = Some((-30.0, 30.0));
    let schedule = AnnealSchedule::default_seven();

    let report = multistage_train(&mut model, &schedule, &cfg, TrainChannel::Isc(&factory))?;
    println!("wall time {:.1}s, final hardness gap {:.4}", report.wall_time_s, report.final_hardness_gap);

    // Last validation point of each annealing stage.
    println!("{:>6} {:>6} {:>10} {:>10} {:>10}", "stage", "step", "loss", "val SER", "dim dev");
    for stage in 0..schedule.deltas.len() {
        if let Some(r) = report.records.iter().rev().find(|r| r.stage == stage) {
            println!(
                "{:>6} {:>6} {:>10.4} {:>10.4} {:>10.4}",
                r.stage, r.step, r.loss, r.val_ser, r.dim_dev
            );
        }
    }

    match finalize_binary(&model) {
        Ok(cb) => {
            let dev = dimming_deviation(&cb, &cfg.dimming)?;
            println!("binary codebook: {} distinct entries, dimming deviation {dev:.4}", cb.m());
        }
        Err(e) => println!("codebook not yet binary: {e}"),
    }
    Ok(())
}
