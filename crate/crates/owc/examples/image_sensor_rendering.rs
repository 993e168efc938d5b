//! Thin-lens rendering of the LED array onto the image sensor.
//!
//! A 5x5 LED array with 1.5 cm pitch seen from 5 m through a 3.5 mm lens
//! lands on a 28x28 sensor as a roughly 7.5-pixel-wide blob: the
//! magnification is ~7e-4, so neighbouring LEDs are only ~1.9 pixels
//! apart and their point-spread functions overlap. This example prints
//! the projected geometry, an ASCII view of the rendered image for one
//! codeword, and the effect of in-plane rotation (snapped to the 0.5
//! degree cache grid).
//!
//! Run with: cargo run --release --example image_sensor_rendering

use owc::imaging::{default_geometry, render_image, snap_to_grid, ChannelFactory};
use owc::{Result, Tensor};

fn ascii(image: &Tensor, t: usize) {
    let ramp = [' ', '.', ':', '+', '*', '#'];
    for r in 0..t {
        let line: String = (0..t)
            .map(|c| {
                let v = image.data()[r * t + c].clamp(0.0, 1.0);
                ramp[(v * (ramp.len() - 1) as f64).round() as usize]
            })
            .collect();
        println!("    |{line}|");
    }
}

fn main() -> Result<()> {
    owc::tune_allocator();
    let (geom, cam) = default_geometry();
    let m = cam.magnification(geom.distance_m);
    let pitch_px = m * geom.pitch_m / cam.pixel_m;
    let span_px = pitch_px * (geom.l - 1) as f64 + 2.0 * cam.psf_sigma_px;
    println!("magnification      {m:.6e}");
    println!("LED pitch on chip  {pitch_px:.3} px");
    println!("array span on chip ~{span_px:.2} px (of {} px sensor)", cam.t);

    let factory = ChannelFactory::new(geom, cam)?;

    // A diagonal stripe pattern so rotation is visible.
    let mut s = vec![0.0; geom.l * geom.l];
    for i in 0..geom.l {
        s[i * geom.l + i] = 1.0;
        s[i * geom.l] = 1.0;
    }
    let s = Tensor::new(vec![geom.l, geom.l], s)?;

    for theta in [0.0, 30.0, 45.1] {
        let snapped = snap_to_grid(theta);
        let h = factory.matrix(theta)?;
        let img = render_image(&s, &h)?;
        let peak = img.data().iter().cloned().fold(f64::MIN, f64::max);
        println!("\nrotation {theta} deg (snapped to {snapped} deg), peak {peak:.3}:");
        ascii(&img, cam.t);
    }
    Ok(())
}
