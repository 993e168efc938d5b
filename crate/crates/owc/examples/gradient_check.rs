//! End-to-end gradient check of a convolutional autoencoder link.
//!
//! Builds a small convolutional transceiver, runs the full differentiable
//! chain (encoder -> dimming penalty -> lens rendering -> signal-dependent
//! noise -> decoder -> cross-entropy) and compares analytic gradients
//! against central finite differences on randomly chosen coordinates of
//! every parameter tensor in both networks.
//!
//! Run with: cargo run --release --example gradient_check

use owc::imaging::{ArrayGeometry, CameraModel, ChannelFactory};
use owc::models::{build_cae, DimmingTarget};
use owc::rng::{stream, Domain};
use owc::train::{end_to_end_grad_check_detailed, TrainChannel};
use owc::Result;

fn main() -> Result<()> {
    owc::tune_allocator();
    // Small geometry so the check runs in a couple of seconds.
    let (m, l, t) = (16, 4, 8);
    let geom = ArrayGeometry { l, pitch_m: 0.015, distance_m: 5.0 };
    let cam = CameraModel { t, pixel_m: 5.6e-6, focal_m: 3.5e-3, fnumber: 1.4, psf_sigma_px: 1.0 };
    let factory = ChannelFactory::new(geom, cam)?;

    let mut rng = stream(7, Domain::Init, 0);
    let model = build_cae(m, l, t, &mut rng)?;
    let dimming = DimmingTarget::uniform_matrix(l, 0.3125)?;

    let report = end_to_end_grad_check_detailed(
        &model,
        TrainChannel::Isc(&factory),
        &dimming,
        10.0, // dimming penalty weight
        10.0, // SNR in dB
        2.0,  // sigmoid slope
        2,    // batch size
        6,    // coordinates probed per parameter tensor
        7,    // seed
    )?;

    println!("max relative gradient error: {:.3e}", report.max_rel_err);
    if let Some((layer, tensor, coord)) = report.worst_coord {
        println!(
            "worst coordinate: layer {layer}, tensor {tensor}, index {coord} \
             (analytic {:.6e}, numeric {:.6e})",
            report.worst_analytic, report.worst_numeric
        );
    }
    let ok = report.max_rel_err < 1e-4;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    std::process::exit(if ok { 0 } else { 1 });
}
