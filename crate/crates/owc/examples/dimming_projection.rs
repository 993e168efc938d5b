//! Euclidean projection onto the dimming constraint set.
//!
//! LED intensities must stay in [0, peak] while averaging exactly to the
//! dimming target. The projection clips a shifted copy of the input,
//! clip(v + mu), and bisects on the shift mu until the mean constraint
//! holds. This example projects a few vectors and verifies optimality
//! against a brute-force active-set solve of the same quadratic program.
//!
//! Run with: cargo run --release --example dimming_projection

use owc::models::project_dimming;
use owc::rng::{stream, Domain};
use owc::Result;
use rand::Rng;

/// Exact solution by enumerating active sets: each coordinate is clipped
/// low, clipped high, or free; free coordinates share one shift.
fn exact_qp(v: &[f64], peak: f64, target: f64) -> Vec<f64> {
    let n = v.len();
    let sum_target = target * n as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..3usize.pow(n as u32) {
        let mut states = Vec::with_capacity(n);
        let mut code = mask;
        for _ in 0..n {
            states.push(code % 3);
            code /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| states[i] == 2).collect();
        let fixed_sum: f64 =
            (0..n).filter(|&i| states[i] != 2).map(|i| if states[i] == 1 { peak } else { 0.0 }).sum();
        let mut x = vec![0.0; n];
        if free.is_empty() {
            if (fixed_sum - sum_target).abs() > 1e-9 {
                continue;
            }
        } else {
            let mu = (sum_target - fixed_sum - free.iter().map(|&i| v[i]).sum::<f64>())
                / free.len() as f64;
            for &i in &free {
                x[i] = v[i] + mu;
            }
            if free.iter().any(|&i| x[i] < -1e-9 || x[i] > peak + 1e-9) {
                continue;
            }
        }
        for i in 0..n {
            if states[i] == 1 {
                x[i] = peak;
            }
        }
        let cost: f64 = (0..n).map(|i| (x[i] - v[i]).powi(2)).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    }
    best.expect("feasible set is non-empty").1
}

fn main() -> Result<()> {
    owc::tune_allocator();
    let peak = 1.0;
    let target = 0.3125;
    let mut rng = stream(3, Domain::Eval, 0);

    let mut worst = 0.0f64;
    for trial in 0..5 {
        let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let p = project_dimming(&v, peak, target)?;
        let q = exact_qp(&v, peak, target);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        println!("trial {trial}: mean {mean:.6} (target {target}), max |bisection - exact| = {gap:.2e}");
        println!("  input     {v:.3?}");
        println!("  projected {p:.3?}");
    }
    println!("\nworst disagreement with the exact solver: {worst:.2e}");
    Ok(())
}
