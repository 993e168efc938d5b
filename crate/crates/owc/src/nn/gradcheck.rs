//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::NetworkParams;
use crate::error::{Error, Result};

/// Compare analytic parameter gradients against central differences of a
/// scalar loss, on up to `max_coords` randomly sampled coordinates per
/// parameter tensor. Returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-8).
///
/// The loss closure must be deterministic (noise frozen) and evaluated in
/// 64-bit; `eps` should sit in [1e-6, 1e-4].
pub fn grad_check<F>(
    loss: F,
    params: &mut NetworkParams,
    analytic: &NetworkParams,
    eps: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<f64>
where
    F: Fn(&mut NetworkParams) -> Result<f64>,
{
    Ok(grad_check_detailed(loss, params, analytic, eps, max_coords, rng)?.max_rel_err)
}

/// Worst coordinate found by [`grad_check`], for diagnosing failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (layer, tensor, coordinate) of the worst mismatch.
    pub worst_coord: Option<(usize, usize, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn grad_check_detailed<F>(
    loss: F,
    params: &mut NetworkParams,
    analytic: &NetworkParams,
    eps: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut NetworkParams) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Argument(format!("gradcheck step {eps} outside [1e-6, 1e-4]")));
    }
    let mut worst = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for li in 0..params.len() {
        for ti in 0..params[li].tensors.len() {
            let n = params[li].tensors[ti].len();
            let coords: Vec<usize> = if n <= max_coords {
                (0..n).collect()
            } else {
                (0..max_coords).map(|_| rng.gen_range(0..n)).collect()
            };
            for c in coords {
                let a = analytic[li].tensors[ti].data()[c];
                let orig = params[li].tensors[ti].data()[c];
                params[li].tensors[ti].data_mut()[c] = orig + eps;
                let lp = loss(params)?;
                params[li].tensors[ti].data_mut()[c] = orig - eps;
                let lm = loss(params)?;
                params[li].tensors[ti].data_mut()[c] = orig;
                let num = (lp - lm) / (2.0 * eps);
                let diff = (a - num).abs();
                // Coordinates whose true gradient is exactly zero (e.g. a
                // bias feeding a batchnorm) read as pure finite-difference
                // roundoff; below this absolute floor that noise is not
                // evidence of a wrong gradient.
                if diff <= 1e-7 {
                    continue;
                }
                let rel = diff / a.abs().max(num.abs()).max(1e-8);
                if rel > worst.max_rel_err {
                    worst = GradCheckReport {
                        max_rel_err: rel,
                        worst_coord: Some((li, ti, c)),
                        worst_analytic: a,
                        worst_numeric: num,
                    };
                }
            }
        }
    }
    Ok(worst)
}
