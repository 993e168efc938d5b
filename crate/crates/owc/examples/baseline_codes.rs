//! Classical codebook baselines: random OOK matrices and greedy
//! constant-weight codes.
//!
//! The learned transceivers are compared against two hand-designed
//! schemes. For the image-sensor link, random binary LED patterns that
//! meet the average-intensity target exactly (each LED is on in
//! round(M * D) of the M codewords). For the temporal OOK link, a greedy
//! constant-weight code that maximizes the minimum pairwise Hamming
//! distance. This example builds both and reports their properties.
//!
//! Run with: cargo run --release --example baseline_codes

use owc::eval::{baseline_codebook, min_hamming_distance, BaselineKind};
use owc::rng::{stream, Domain};
use owc::{Result, Tensor};

fn main() -> Result<()> {
    owc::tune_allocator();
    let mut rng = stream(5, Domain::Codebook, 0);

    // 4x4 LED array, 16 codewords, 31.25% average duty per LED.
    let l = 4;
    let m = 16;
    let duty = Tensor::full(vec![l, l], 0.3125);
    let cb = baseline_codebook(&BaselineKind::RandomOok { l, duty: duty.clone() }, m, &mut rng)?;
    let mean = cb.mean_entry();
    let max_dev = mean
        .data()
        .iter()
        .zip(duty.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("random OOK: {} distinct {l}x{l} codewords", cb.m());
    println!("  max per-LED deviation from target duty: {max_dev:.4}");
    println!("  min pairwise Hamming distance: {}", min_hamming_distance(&cb));

    // Constant-weight code: length 8, weight 4, 16 codewords.
    let (n, d) = (8, 4);
    let cb = baseline_codebook(&BaselineKind::GreedyCwc { n, d }, m, &mut rng)?;
    println!("\ngreedy constant-weight code (n={n}, weight={d}, M={m}):");
    for (i, entry) in cb.entries.iter().enumerate() {
        let bits: String = entry.data().iter().map(|&b| if b > 0.5 { '1' } else { '0' }).collect();
        print!("{bits}  ");
        if i % 4 == 3 {
            println!();
        }
    }
    println!("min pairwise Hamming distance: {}", min_hamming_distance(&cb));
    Ok(())
}
