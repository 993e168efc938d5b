//! Classification loss and dimming penalties, with gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LOG_FLOOR: f64 = 1e-12;

/// -ln(posterior[label]) for one posterior vector, floored inside the log.
pub fn cross_entropy_loss(posterior: &Tensor, label: usize) -> Result<f64> {
    if label >= posterior.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for posterior of length {}",
            posterior.len()
        )));
    }
    let sum: f64 = posterior.data().iter().sum();
    if posterior.data().iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("posterior is not a probability vector (sum {sum})")));
    }
    Ok(-posterior.data()[label].max(LOG_FLOOR).ln())
}

/// Mean cross-entropy over a `[B, M]` batch of posteriors; returns the loss
/// and its gradient with respect to the posteriors.
pub fn mean_cross_entropy(posteriors: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [batch, m] = *posteriors.shape() else {
        return Err(Error::Dimension("posteriors must be [B, M]".into()));
    };
    if labels.len() != batch {
        return Err(Error::Argument("one label per posterior required".into()));
    }
    let mut grad = Tensor::zeros(vec![batch, m]);
    let mut loss = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(Error::Argument(format!("label {label} out of range {m}")));
        }
        let p = posteriors.data()[s * m + label].max(LOG_FLOOR);
        loss += -p.ln();
        grad.data_mut()[s * m + label] = -1.0 / (p * batch as f64);
    }
    Ok((loss / batch as f64, grad))
}

/// ISC dimming penalty: lambda * sum_e (mean_b S_b - D)_e^2 over a batch of
/// encoder outputs `[B, ...]` standing in for the codebook. The gradient
/// flows to every sample through the mean.
pub fn mean_intensity_penalty(outputs: &Tensor, target: &[f64], lambda: f64) -> Result<(f64, Tensor)> {
    if lambda < 0.0 {
        return Err(Error::Argument(format!("penalty weight must be non-negative, got {lambda}")));
    }
    let batch = outputs.shape()[0];
    let per = outputs.len() / batch;
    if target.len() != per {
        return Err(Error::Dimension(format!(
            "dimming target has {} entries, codewords have {per}",
            target.len()
        )));
    }
    let mut mean = vec![0.0; per];
    for s in 0..batch {
        for (m, &v) in mean.iter_mut().zip(&outputs.data()[s * per..(s + 1) * per]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= batch as f64;
    }
    let mut loss = 0.0;
    let mut ge = vec![0.0; per];
    for e in 0..per {
        let dev = mean[e] - target[e];
        loss += dev * dev;
        ge[e] = lambda * 2.0 * dev / batch as f64;
    }
    let mut grad = Tensor::zeros(outputs.shape().to_vec());
    for s in 0..batch {
        grad.data_mut()[s * per..(s + 1) * per].copy_from_slice(&ge);
    }
    Ok((lambda * loss, grad))
}

/// OOK dimming penalty: lambda * (sum_j s_j - d)^2 per codeword, averaged
/// over the batch.
pub fn weight_penalty(outputs: &Tensor, d: f64, lambda: f64) -> Result<(f64, Tensor)> {
    if lambda < 0.0 {
        return Err(Error::Argument(format!("penalty weight must be non-negative, got {lambda}")));
    }
    let batch = outputs.shape()[0];
    let per = outputs.len() / batch;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(outputs.shape().to_vec());
    for s in 0..batch {
        let row = &outputs.data()[s * per..(s + 1) * per];
        let dev: f64 = row.iter().sum::<f64>() - d;
        loss += dev * dev;
        let g = lambda * 2.0 * dev / batch as f64;
        for v in &mut grad.data_mut()[s * per..(s + 1) * per] {
            *v = g;
        }
    }
    Ok((lambda * loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_examples() {
        let onehot = Tensor::one_hot(4, 1).unwrap();
        assert!(cross_entropy_loss(&onehot, 1).unwrap() < 1e-9);

        let uniform = Tensor::full(vec![64], 1.0 / 64.0);
        let l = cross_entropy_loss(&uniform, 7).unwrap();
        assert!((l - 64f64.ln()).abs() < 1e-12);
        assert!((l - 4.1589).abs() < 1e-4);

        let half = Tensor::from_vec(vec![0.5, 0.25, 0.25]);
        assert!((cross_entropy_loss(&half, 0).unwrap() - 2f64.ln()).abs() < 1e-12);

        assert!(cross_entropy_loss(&half, 3).is_err());
        let bogus = Tensor::from_vec(vec![0.9, 0.9]);
        assert!(cross_entropy_loss(&bogus, 0).is_err());
    }

    #[test]
    fn mean_ce_gradient_matches_fd() {
        let mut p = Tensor::new(vec![2, 3], vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8]).unwrap();
        let labels = [0usize, 2];
        let (l0, grad) = mean_cross_entropy(&p, &labels).unwrap();
        let eps = 1e-7;
        for i in [0usize, 5] {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + eps;
            let (lp, _) = mean_cross_entropy(&p, &labels).unwrap();
            p.data_mut()[i] = orig - eps;
            let (lm, _) = mean_cross_entropy(&p, &labels).unwrap();
            p.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grad.data()[i]).abs() < 1e-6, "coord {i}: fd {fd} vs {}", grad.data()[i]);
            let _ = l0;
        }
    }

    #[test]
    fn dimming_penalty_examples() {
        // mean equals target -> 0
        let out = Tensor::new(vec![2, 2], vec![0.2, 0.6, 0.4, 0.2]).unwrap();
        let (l, _) = mean_intensity_penalty(&out, &[0.3, 0.4], 5.0).unwrap();
        assert!(l.abs() < 1e-15);

        // lambda = 0 -> 0
        let (l0, g0) = mean_intensity_penalty(&out, &[0.9, 0.9], 0.0).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.data().iter().all(|&v| v == 0.0));

        // M=1, all-ones 5x5 vs D = 0.3125, lambda = 1 -> 25 * 0.6875^2
        let ones = Tensor::full(vec![1, 5, 5], 1.0);
        let d = vec![0.3125; 25];
        let (l1, _) = mean_intensity_penalty(&ones, &d, 1.0).unwrap();
        assert!((l1 - 25.0 * 0.6875f64.powi(2)).abs() < 1e-12);
        assert!((l1 - 11.8164).abs() < 5e-4);

        assert!(mean_intensity_penalty(&ones, &d, -1.0).is_err());
    }

    #[test]
    fn weight_penalty_zero_at_target() {
        let out = Tensor::new(vec![2, 4], vec![1., 1., 0., 0., 0., 1., 0., 1.]).unwrap();
        let (l, g) = weight_penalty(&out, 2.0, 3.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let (l2, _) = weight_penalty(&out, 1.0, 1.0).unwrap();
        assert!((l2 - 1.0).abs() < 1e-12); // each codeword off by 1, squared, averaged
    }
}
