//! SGD and Adam parameter updates.

use super::NetworkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub step: u64,
    first_moment: Option<NetworkParams>,
    second_moment: Option<NetworkParams>,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64) -> Self {
        OptimizerState { algorithm, learning_rate, step: 0, first_moment: None, second_moment: None }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(Algorithm::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(Algorithm::adam(), learning_rate)
    }
}

/// One update. Rejects the whole step if any gradient entry is non-finite.
pub fn optimizer_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension("gradient structure does not match parameters".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensors.len() != g.tensors.len() {
            return Err(Error::Dimension("gradient group does not match parameter group".into()));
        }
        for (pt, gt) in p.tensors.iter().zip(&g.tensors) {
            if pt.shape() != gt.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    gt.shape(),
                    pt.shape()
                )));
            }
            if !gt.all_finite() {
                return Err(Error::Numeric("non-finite gradient, step rejected".into()));
            }
        }
    }

    state.step += 1;
    let lr = state.learning_rate;
    match state.algorithm {
        Algorithm::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (pt, gt) in p.tensors.iter_mut().zip(&g.tensors) {
                    for (pv, gv) in pt.data_mut().iter_mut().zip(gt.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
        }
        Algorithm::Adam { beta1, beta2, eps } => {
            if state.first_moment.is_none() {
                state.first_moment = Some(zeros_like(grads));
                state.second_moment = Some(zeros_like(grads));
            }
            let m = state.first_moment.as_mut().unwrap();
            let v = state.second_moment.as_mut().unwrap();
            let t = state.step as f64;
            let bc1 = 1.0 - beta1.powf(t);
            let bc2 = 1.0 - beta2.powf(t);
            for li in 0..params.len() {
                for ti in 0..params[li].tensors.len() {
                    let gt = grads[li].tensors[ti].data();
                    let mt = m[li].tensors[ti].data_mut();
                    let vt = v[li].tensors[ti].data_mut();
                    let pt = params[li].tensors[ti].data_mut();
                    for i in 0..pt.len() {
                        let gv = gt[i];
                        mt[i] = beta1 * mt[i] + (1.0 - beta1) * gv;
                        vt[i] = beta2 * vt[i] + (1.0 - beta2) * gv * gv;
                        let mhat = mt[i] / bc1;
                        let vhat = vt[i] / bc2;
                        pt[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
    Ok(())
}

fn zeros_like(params: &NetworkParams) -> NetworkParams {
    params.iter().map(|p| p.zeros_like()).collect()
}
