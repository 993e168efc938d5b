//! Sequential network composition: shape propagation, initialization,
//! batched forward with per-layer caches, and the exact reverse pass.

use rand::Rng;

use super::layers::*;
use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Ordered parameter groups, one per layer (empty for parameterless layers).
pub type NetworkParams = Vec<LayerParams>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    /// Per-sample input shape (without the batch axis).
    pub input_shape: Vec<usize>,
}

enum LayerCache {
    None,
    Input(Tensor),
    InputOutput(Tensor, Tensor),
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    BatchNorm(BnCache),
}

/// Per-layer caches from a train-mode forward pass.
pub struct ForwardTrace {
    caches: Vec<LayerCache>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let net = Network { layers, input_shape };
        net.output_shape()?;
        Ok(net)
    }

    /// Propagate per-sample shapes through all layers; validates the spec.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            shape = layer_out_shape(layer, &shape)
                .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
        }
        Ok(shape)
    }

    /// Per-layer output shapes (diagnostics, architecture checks).
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer_out_shape(layer, &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Number of trainable scalars.
    pub fn param_count(&self, params: &NetworkParams) -> usize {
        params
            .iter()
            .zip(&self.layers)
            .map(|(p, l)| match l {
                // running stats are state, not parameters
                LayerSpec::BatchNorm { .. } => p.tensors[0].len() + p.tensors[1].len(),
                _ => p.tensors.iter().map(|t| t.len()).sum(),
            })
            .sum()
    }

    /// He-uniform weights, zero biases, unit batchnorm.
    pub fn init_params(&self, rng: &mut impl Rng) -> NetworkParams {
        self.layers
            .iter()
            .map(|layer| match layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    let limit = (6.0 / *fan_in as f64).sqrt();
                    let w = Tensor::new(
                        vec![*fan_out, *fan_in],
                        (0..fan_out * fan_in).map(|_| rng.gen_range(-limit..limit)).collect(),
                    )
                    .expect("shape consistent");
                    LayerParams { tensors: vec![w, Tensor::zeros(vec![*fan_out])] }
                }
                LayerSpec::Conv2d { in_ch, out_ch, ksize } => {
                    let fan_in = in_ch * ksize * ksize;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let w = Tensor::new(
                        vec![*out_ch, *in_ch, *ksize, *ksize],
                        (0..out_ch * fan_in).map(|_| rng.gen_range(-limit..limit)).collect(),
                    )
                    .expect("shape consistent");
                    LayerParams { tensors: vec![w, Tensor::zeros(vec![*out_ch])] }
                }
                LayerSpec::BatchNorm { features } => LayerParams {
                    tensors: vec![
                        Tensor::full(vec![*features], 1.0),
                        Tensor::zeros(vec![*features]),
                        Tensor::zeros(vec![*features]),
                        Tensor::full(vec![*features], 1.0),
                    ],
                },
                _ => LayerParams::empty(),
            })
            .collect()
    }

    /// Batched forward pass. `x` is `[B, input_shape...]`. Train mode records
    /// caches for [`Network::backward`] and updates batchnorm running stats
    /// (hence `&mut` params). `delta_override` re-slopes every
    /// param_sigmoid layer, which is how annealing stages change hardness
    /// without rebuilding the spec.
    pub fn forward(
        &self,
        params: &mut NetworkParams,
        x: &Tensor,
        mode: Mode,
        delta_override: Option<f64>,
    ) -> Result<(Tensor, Option<ForwardTrace>)> {
        if params.len() != self.layers.len() {
            return Err(Error::State(format!(
                "params for {} layers, network has {}",
                params.len(),
                self.layers.len()
            )));
        }
        let batch = *x
            .shape()
            .first()
            .ok_or_else(|| Error::Dimension("forward on scalar input".into()))?;
        if x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Dimension(format!(
                "input per-sample shape {:?}, network expects {:?}",
                &x.shape()[1..],
                self.input_shape
            )));
        }
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (layer, p) in self.layers.iter().zip(params.iter_mut()) {
            let (next, cache) = match layer {
                LayerSpec::Dense { .. } => {
                    let y = dense_fw(&cur, &p.tensors[0], &p.tensors[1])?;
                    (y, LayerCache::Input(cur))
                }
                LayerSpec::Conv2d { .. } => {
                    let y = conv2d_fw(&cur, &p.tensors[0], &p.tensors[1])?;
                    (y, LayerCache::Input(cur))
                }
                LayerSpec::MaxPool2d { pool } => {
                    let (y, argmax) = maxpool_fw(&cur, *pool)?;
                    (y, LayerCache::MaxPool { input_shape: cur.shape().to_vec(), argmax })
                }
                LayerSpec::BatchNorm { .. } => match mode {
                    Mode::Train => {
                        let [gamma, beta, rm, rv] = p.tensors.as_mut_slice() else {
                            return Err(Error::State("batchnorm params malformed".into()));
                        };
                        let (y, cache) = bn_fw_train(&cur, gamma, beta, rm, rv)?;
                        (y, LayerCache::BatchNorm(cache))
                    }
                    Mode::Infer => {
                        let y = bn_fw_infer(&cur, &p.tensors[0], &p.tensors[1], &p.tensors[2], &p.tensors[3])?;
                        (y, LayerCache::None)
                    }
                },
                LayerSpec::Activation { act } => {
                    let act = resolve_delta(*act, delta_override);
                    let y = act_fw(&cur, act)?;
                    (y.clone(), LayerCache::InputOutput(cur, y))
                }
                LayerSpec::Reshape { to } => {
                    let mut shape = vec![batch];
                    shape.extend_from_slice(to);
                    (cur.clone().reshape(shape)?, LayerCache::None)
                }
            };
            cur = next;
            if mode == Mode::Train {
                caches.push(cache);
            }
        }
        cur.check_finite("network forward output")?;
        let trace = (mode == Mode::Train).then_some(ForwardTrace { caches });
        Ok((cur, trace))
    }

    /// Inference convenience: no caches, running batchnorm statistics.
    /// Infer mode never writes through params; the clone only satisfies the
    /// shared forward signature.
    pub fn infer(&self, params: &NetworkParams, x: &Tensor, delta_override: Option<f64>) -> Result<Tensor> {
        let mut p = params.clone();
        let (y, _) = self.forward(&mut p, x, Mode::Infer, delta_override)?;
        Ok(y)
    }

    /// Reverse pass. `grad_out` is the loss gradient with respect to the
    /// network output; returns (gradient w.r.t. input, parameter gradients).
    /// Parameter gradients mirror the params structure; batchnorm running
    /// statistics get zero gradients.
    pub fn backward(
        &self,
        params: &NetworkParams,
        trace: &ForwardTrace,
        grad_out: &Tensor,
        delta_override: Option<f64>,
    ) -> Result<(Tensor, NetworkParams)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::State("forward trace does not match network".into()));
        }
        let mut grad = grad_out.clone();
        let mut grads: Vec<LayerParams> = self.layers.iter().map(|_| LayerParams::empty()).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let p = &params[i];
            match (layer, &trace.caches[i]) {
                (LayerSpec::Dense { .. }, LayerCache::Input(x)) => {
                    let (dx, dw, db) = dense_bw(x, &p.tensors[0], &grad);
                    grads[i] = LayerParams { tensors: vec![dw, db] };
                    grad = dx;
                }
                (LayerSpec::Conv2d { .. }, LayerCache::Input(x)) => {
                    let (dx, dw, db) = conv2d_bw(x, &p.tensors[0], &grad);
                    grads[i] = LayerParams { tensors: vec![dw, db] };
                    grad = dx;
                }
                (LayerSpec::MaxPool2d { .. }, LayerCache::MaxPool { input_shape, argmax }) => {
                    grad = maxpool_bw(input_shape, argmax, &grad);
                }
                (LayerSpec::BatchNorm { .. }, LayerCache::BatchNorm(cache)) => {
                    let (dx, dgamma, dbeta) = bn_bw(cache, &p.tensors[0], &grad);
                    grads[i] = LayerParams {
                        tensors: vec![
                            dgamma,
                            dbeta,
                            Tensor::zeros(p.tensors[2].shape().to_vec()),
                            Tensor::zeros(p.tensors[3].shape().to_vec()),
                        ],
                    };
                    grad = dx;
                }
                (LayerSpec::Activation { act }, LayerCache::InputOutput(x, y)) => {
                    let act = resolve_delta(*act, delta_override);
                    grad = act_bw(x, y, act, &grad);
                }
                (LayerSpec::Reshape { .. }, LayerCache::None) => {
                    let batch = grad.shape()[0];
                    let mut shape = vec![batch];
                    // previous layer's output shape: recover from cache chain
                    // by reshaping to the recorded input of the next cached
                    // tensor; reshape gradients are shape-only, so track via
                    // recomputed propagation.
                    shape.extend(self.shape_before(i)?);
                    grad = grad.reshape(shape)?;
                }
                _ => return Err(Error::State(format!("cache/layer mismatch at layer {i}"))),
            }
        }
        Ok((grad, grads))
    }

    /// Per-sample shape entering layer `i`.
    fn shape_before(&self, i: usize) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers[..i] {
            shape = layer_out_shape(layer, &shape)?;
        }
        Ok(shape)
    }
}

fn resolve_delta(act: Activation, delta_override: Option<f64>) -> Activation {
    match (act, delta_override) {
        (Activation::ParamSigmoid { .. }, Some(delta)) => Activation::ParamSigmoid { delta },
        _ => act,
    }
}

fn layer_out_shape(layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>> {
    match layer {
        LayerSpec::Dense { fan_in, fan_out } => {
            if shape != [*fan_in] {
                return Err(Error::Dimension(format!(
                    "dense expects [{fan_in}], got {shape:?}"
                )));
            }
            Ok(vec![*fan_out])
        }
        LayerSpec::Conv2d { in_ch, out_ch, .. } => {
            let [c, h, w] = shape else {
                return Err(Error::Dimension(format!("conv expects C x H x W, got {shape:?}")));
            };
            if c != in_ch {
                return Err(Error::Dimension(format!("conv expects {in_ch} channels, got {c}")));
            }
            Ok(vec![*out_ch, *h, *w])
        }
        LayerSpec::MaxPool2d { pool } => {
            let [c, h, w] = shape else {
                return Err(Error::Dimension(format!("maxpool expects C x H x W, got {shape:?}")));
            };
            if h % pool != 0 || w % pool != 0 {
                return Err(Error::Dimension(format!(
                    "maxpool {pool} does not divide {h}x{w}"
                )));
            }
            Ok(vec![*c, h / pool, w / pool])
        }
        LayerSpec::BatchNorm { features } => {
            let ok = match shape {
                [f] => f == features,
                [c, _, _] => c == features,
                _ => false,
            };
            if !ok {
                return Err(Error::Dimension(format!(
                    "batchnorm over {features} features, input {shape:?}"
                )));
            }
            Ok(shape.to_vec())
        }
        LayerSpec::Activation { .. } => Ok(shape.to_vec()),
        LayerSpec::Reshape { to } => {
            let n: usize = shape.iter().product();
            let m: usize = to.iter().product();
            if n != m {
                return Err(Error::Dimension(format!("reshape {shape:?} -> {to:?}")));
            }
            Ok(to.clone())
        }
    }
}
