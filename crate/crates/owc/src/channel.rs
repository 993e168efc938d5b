//! Signal-dependent optical noise.
//!
//! The received intensity is r_i = s_i + n_i with n_i ~ N(0, sigma2 +
//! psi2 * sigma2 * s_i): a zero-mean ambient term plus shot noise whose
//! variance scales with the transmitted intensity. Sampling is
//! reparameterized (r = s + sqrt(var(s)) * eps) so training can
//! backpropagate through the noise layer.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Ambient noise variance (normalized intensity squared).
    pub sigma2: f64,
    /// Shot noise scaling factor (dimensionless).
    pub psi2: f64,
}

impl ChannelParams {
    pub fn new(sigma2: f64, psi2: f64) -> Result<Self> {
        if sigma2 < 0.0 || psi2 < 0.0 {
            return Err(Error::Argument(format!(
                "noise parameters must be non-negative (sigma2 {sigma2}, psi2 {psi2})"
            )));
        }
        Ok(ChannelParams { sigma2, psi2 })
    }

    /// Ambient variance from an SNR in dB, against unit peak intensity.
    pub fn from_snr_db(snr_db: f64, psi2: f64) -> Result<Self> {
        Self::new(sigma_from_snr(snr_db), psi2)
    }

    /// Total noise variance at clean intensity `s`.
    pub fn variance_at(&self, s: f64) -> f64 {
        self.sigma2 * (1.0 + self.psi2 * s)
    }
}

/// sigma2 = 10^(-snr_db / 10), with the rendered peak intensity normalized
/// to 1 (see the imaging module's normalization contract).
pub fn sigma_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Noise application with the standard-normal draws returned for the
/// differentiable path: r_i = s_i + sqrt(var(s_i)) * eps_i.
pub struct NoisySignal {
    pub received: Tensor,
    /// The standard normal draws; d r_i / d s_i = 1 + psi2*sigma2*eps_i /
    /// (2 sqrt(var(s_i))).
    pub eps: Vec<f64>,
}

/// Draw r = s + n elementwise. Entries of `s` slightly below zero (from an
/// upstream relaxation) are clamped to 0 for the variance computation.
pub fn apply_optical_noise(s: &Tensor, ch: &ChannelParams, rng: &mut impl Rng) -> Result<NoisySignal> {
    let mut received = s.clone();
    let mut eps = Vec::with_capacity(s.len());
    for v in received.data_mut() {
        let clean = v.max(0.0);
        let e: f64 = rng.sample(StandardNormal);
        *v += (ch.variance_at(clean)).sqrt() * e;
        eps.push(e);
    }
    Ok(NoisySignal { received, eps })
}

/// Chain-rule factor of the reparameterized noise: given the clean signal,
/// the draws, and an incoming gradient w.r.t. r, produce the gradient
/// w.r.t. s. Gradient flows through both the mean and the signal-dependent
/// standard deviation.
pub fn noise_backward(s: &Tensor, eps: &[f64], ch: &ChannelParams, grad_r: &Tensor) -> Tensor {
    let mut grad_s = grad_r.clone();
    for ((g, &sv), &e) in grad_s.data_mut().iter_mut().zip(s.data()).zip(eps) {
        let clean = sv.max(0.0);
        let var = ch.variance_at(clean);
        let dstd = if var > 0.0 && sv > 0.0 {
            ch.psi2 * ch.sigma2 / (2.0 * var.sqrt())
        } else {
            0.0
        };
        *g *= 1.0 + dstd * e;
    }
    grad_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn snr_mapping() {
        assert!((sigma_from_snr(0.0) - 1.0).abs() < 1e-15);
        assert!((sigma_from_snr(10.0) - 0.1).abs() < 1e-15);
        assert!((sigma_from_snr(14.0) - 0.03981).abs() < 1e-5);
    }

    #[test]
    fn rejects_negative_params() {
        assert!(ChannelParams::new(-0.1, 5.0).is_err());
        assert!(ChannelParams::new(0.1, -5.0).is_err());
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let ch = ChannelParams::new(0.0, 5.0).unwrap();
        let s = Tensor::from_vec(vec![0.0, 0.3, 1.0]);
        let mut rng = stream(1, Domain::Eval, 0);
        let out = apply_optical_noise(&s, &ch, &mut rng).unwrap();
        assert_eq!(out.received.data(), s.data());
    }

    #[test]
    fn empirical_moments_match_model() {
        let ch = ChannelParams::new(0.1, 5.0).unwrap();
        let n = 1_000_000usize;
        for (i, &s_val) in [0.0, 0.25, 1.0].iter().enumerate() {
            let s = Tensor::full(vec![n], s_val);
            let mut rng = stream(9, Domain::Eval, i as u64);
            let out = apply_optical_noise(&s, &ch, &mut rng).unwrap();
            let mean: f64 = out.received.data().iter().sum::<f64>() / n as f64;
            let var: f64 =
                out.received.data().iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
            let want = ch.variance_at(s_val);
            let sigma_tot = want.sqrt();
            assert!(
                (mean - s_val).abs() < 4.0 * sigma_tot / 1e3,
                "mean bias {} at s={s_val}",
                mean - s_val
            );
            assert!(
                (var - want).abs() / want < 0.02,
                "variance {var} vs {want} at s={s_val}"
            );
        }
    }

    #[test]
    fn ambient_only_at_zero_signal() {
        let ch = ChannelParams::new(0.1, 5.0).unwrap();
        assert_eq!(ch.variance_at(0.0), 0.1);
        assert!((ch.variance_at(1.0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn same_seed_bit_identical() {
        let ch = ChannelParams::new(0.05, 5.0).unwrap();
        let s = Tensor::from_vec(vec![0.2; 64]);
        let a = apply_optical_noise(&s, &ch, &mut stream(3, Domain::Eval, 7)).unwrap();
        let b = apply_optical_noise(&s, &ch, &mut stream(3, Domain::Eval, 7)).unwrap();
        assert_eq!(a.received.data(), b.received.data());
    }

    #[test]
    fn noise_backward_matches_fd() {
        let ch = ChannelParams::new(0.1, 5.0).unwrap();
        let s = Tensor::from_vec(vec![0.4, 0.9, 0.05]);
        let mut rng = stream(11, Domain::Eval, 0);
        let out = apply_optical_noise(&s, &ch, &mut rng).unwrap();
        // loss = sum r_i; grad wrt r = 1
        let ones = Tensor::full(vec![3], 1.0);
        let g = noise_backward(&s, &out.eps, &ch, &ones);
        let eps_fd = 1e-6;
        for i in 0..3 {
            let mut sp = s.clone();
            sp.data_mut()[i] += eps_fd;
            let mut sm = s.clone();
            sm.data_mut()[i] -= eps_fd;
            // frozen draws
            let f = |sv: &Tensor| -> f64 {
                sv.data()
                    .iter()
                    .zip(&out.eps)
                    .map(|(&v, &e)| v + (ch.variance_at(v.max(0.0))).sqrt() * e)
                    .sum()
            };
            let num = (f(&sp) - f(&sm)) / (2.0 * eps_fd);
            assert!((num - g.data()[i]).abs() < 1e-6, "coord {i}: {num} vs {}", g.data()[i]);
        }
    }
}
