//! Signal-dependent optical noise: empirical moments vs. the model.
//!
//! The receiver sees r = s + sqrt(sigma^2 (1 + psi^2 s)) * eps with
//! eps ~ N(0, 1), so the noise variance grows linearly with the signal
//! level (ambient floor plus shot noise). This example draws a large
//! sample at several signal levels and compares the empirical mean and
//! variance against the closed form.
//!
//! Run with: cargo run --release --example optical_noise

use owc::channel::{apply_optical_noise, ChannelParams};
use owc::rng::{stream, Domain};
use owc::{Result, Tensor};

fn main() -> Result<()> {
    owc::tune_allocator();
    let snr_db = 10.0;
    let psi2 = 5.0;
    let ch = ChannelParams::from_snr_db(snr_db, psi2)?;
    println!("SNR {snr_db} dB -> sigma^2 = {:.6}, psi^2 = {psi2}", ch.sigma2);

    let draws = 200_000usize;
    let mut rng = stream(42, Domain::Eval, 0);
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "s", "mean(r)", "var(r)", "model var", "rel err");
    for s in [0.0, 0.25, 0.5, 1.0] {
        let signal = Tensor::full(vec![draws], s);
        let out = apply_optical_noise(&signal, &ch, &mut rng)?;
        let mean = out.received.data().iter().sum::<f64>() / draws as f64;
        let var = out
            .received
            .data()
            .iter()
            .map(|r| (r - mean) * (r - mean))
            .sum::<f64>()
            / (draws - 1) as f64;
        let model = ch.variance_at(s);
        println!(
            "{s:>6.2} {mean:>12.6} {var:>12.6} {model:>12.6} {:>11.3}%",
            100.0 * (var - model).abs() / model
        );
    }
    Ok(())
}
