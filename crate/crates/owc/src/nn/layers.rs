//! Layer kernels: batched forward/backward for the five layer kinds, plus the
//! standalone single-sample entry points used by tests and diagnostics.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    /// sig_delta(z) = 1 / (1 + exp(-delta z)); the slope anneals toward a
    /// hard 0/1 step as delta grows.
    ParamSigmoid { delta: f64 },
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::ParamSigmoid { .. } => "param_sigmoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { fan_in: usize, fan_out: usize },
    /// Zero-padded "same" cross-correlation, odd filter size.
    Conv2d { in_ch: usize, out_ch: usize, ksize: usize },
    MaxPool2d { pool: usize },
    BatchNorm { features: usize },
    Activation { act: Activation },
    /// Per-sample reshape (no parameters, no computation).
    Reshape { to: Vec<usize> },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv2d { ksize, .. } => {
                if *ksize % 2 == 0 {
                    return Err(Error::Config(format!("conv filter size {ksize} must be odd")));
                }
            }
            LayerSpec::MaxPool2d { pool } => {
                if *pool == 0 {
                    return Err(Error::Config("pool size must be positive".into()));
                }
            }
            LayerSpec::Activation { act: Activation::ParamSigmoid { delta } } if *delta <= 0.0 => {
                return Err(Error::Config(format!(
                    "param_sigmoid slope must be positive, got {delta}"
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

/// y[B,out] = x[B,in] W^T + b
pub fn dense_fw(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let (fan_out, w_in) = (w.shape()[0], w.shape()[1]);
    if fan_in != w_in || b.len() != fan_out {
        return Err(Error::Dimension(format!(
            "dense: input {fan_in}, weight {fan_out}x{w_in}, bias {}",
            b.len()
        )));
    }
    let mut y = Tensor::zeros(vec![batch, fan_out]);
    gemm_nt(x.data(), w.data(), y.data_mut(), batch, fan_in, fan_out, false);
    for row in y.data_mut().chunks_exact_mut(fan_out) {
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns (dx, dW, db).
pub fn dense_bw(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let fan_out = w.shape()[0];
    let mut dx = Tensor::zeros(vec![batch, fan_in]);
    gemm_nn(dy.data(), w.data(), dx.data_mut(), batch, fan_out, fan_in, false);
    let mut dw = Tensor::zeros(vec![fan_out, fan_in]);
    gemm_tn(dy.data(), x.data(), dw.data_mut(), fan_out, batch, fan_in, false);
    let mut db = Tensor::zeros(vec![fan_out]);
    for row in dy.data().chunks_exact(fan_out) {
        for (d, v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// conv2d (same padding, stride 1, cross-correlation)
// ---------------------------------------------------------------------------

/// col[(ic*k+dy)*k+dx, y*w + x] = x[ic, y+dy-p, x+dx-p] (zero outside).
fn im2col(x: &[f64], c_in: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let p = k / 2;
    debug_assert_eq!(col.len(), c_in * k * k * h * w);
    for ic in 0..c_in {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for dy in 0..k {
            for dx in 0..k {
                let row = &mut col[((ic * k + dy) * k + dx) * h * w..][..h * w];
                for y in 0..h {
                    let seg = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // x-range where sx = x + dx - p stays inside [0, w)
                    let lo = p.saturating_sub(dx);
                    let hi = (w + p).saturating_sub(dx).min(w);
                    seg[..lo].fill(0.0);
                    seg[hi..].fill(0.0);
                    if lo < hi {
                        let off = dx as isize - p as isize;
                        seg[lo..hi]
                            .copy_from_slice(&src[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of `im2col`.
fn col2im(col: &[f64], c_in: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let p = k / 2;
    for ic in 0..c_in {
        let plane = &mut x[ic * h * w..(ic + 1) * h * w];
        for dy in 0..k {
            for dx in 0..k {
                let row = &col[((ic * k + dy) * k + dx) * h * w..][..h * w];
                for y in 0..h {
                    let sy = y as isize + dy as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let seg = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let lo = p.saturating_sub(dx);
                    let hi = (w + p).saturating_sub(dx).min(w);
                    if lo < hi {
                        let off = dx as isize - p as isize;
                        for i in lo..hi {
                            dst[(i as isize + off) as usize] += seg[i];
                        }
                    }
                }
            }
        }
    }
}

/// x[B,Cin,H,W], w[Cout,Cin,k,k], b[Cout] -> y[B,Cout,H,W]
pub fn conv2d_fw(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [batch, c_in, h, wd] = *x.shape() else {
        return Err(Error::Dimension(format!("conv input must be rank 4, got {:?}", x.shape())));
    };
    let [c_out, wc_in, k, k2] = *w.shape() else {
        return Err(Error::Dimension("conv filters must be rank 4".into()));
    };
    if wc_in != c_in {
        return Err(Error::Dimension(format!(
            "conv channel mismatch: input {c_in}, filters expect {wc_in}"
        )));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::Config(format!("conv filter must be square odd, got {k}x{k2}")));
    }
    let kk = c_in * k * k;
    let hw = h * wd;
    let mut col = vec![0.0; kk * hw];
    let mut y = Tensor::zeros(vec![batch, c_out, h, wd]);
    for s in 0..batch {
        im2col(&x.data()[s * c_in * hw..][..c_in * hw], c_in, h, wd, k, &mut col);
        let out = &mut y.data_mut()[s * c_out * hw..][..c_out * hw];
        gemm_nn(w.data(), &col, out, c_out, kk, hw, false);
        for oc in 0..c_out {
            let bv = b.data()[oc];
            for v in &mut out[oc * hw..(oc + 1) * hw] {
                *v += bv;
            }
        }
    }
    Ok(y)
}

/// Returns (dx, dW, db); recomputes im2col from the cached input.
pub fn conv2d_bw(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [batch, c_in, h, wd] = *x.shape() else { unreachable!() };
    let [c_out, _, k, _] = *w.shape() else { unreachable!() };
    let kk = c_in * k * k;
    let hw = h * wd;
    let mut col = vec![0.0; kk * hw];
    let mut dcol = vec![0.0; kk * hw];
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dw = Tensor::zeros(w.shape().to_vec());
    let mut db = Tensor::zeros(vec![c_out]);
    for s in 0..batch {
        im2col(&x.data()[s * c_in * hw..][..c_in * hw], c_in, h, wd, k, &mut col);
        let dys = &dy.data()[s * c_out * hw..][..c_out * hw];
        // dW += dY_s . col^T
        gemm_nt(dys, &col, dw.data_mut(), c_out, hw, kk, true);
        // dcol = W^T . dY_s
        gemm_tn(w.data(), dys, &mut dcol, kk, c_out, hw, false);
        col2im(&dcol, c_in, h, wd, k, &mut dx.data_mut()[s * c_in * hw..][..c_in * hw]);
        for oc in 0..c_out {
            db.data_mut()[oc] += dys[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

/// x[B,C,H,W] -> (y[B,C,H/p,W/p], argmax flat indices into x).
/// Ties break toward the first element in row-major order.
pub fn maxpool_fw(x: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    let [batch, c, h, w] = *x.shape() else {
        return Err(Error::Dimension(format!("maxpool input must be rank 4, got {:?}", x.shape())));
    };
    if h % pool != 0 || w % pool != 0 {
        return Err(Error::Dimension(format!(
            "maxpool: extent {h}x{w} not divisible by pool {pool}"
        )));
    }
    let (oh, ow) = (h / pool, w / pool);
    let mut y = Tensor::zeros(vec![batch, c, oh, ow]);
    let mut arg = vec![0usize; batch * c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    for bc in 0..batch * c {
        let base = bc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for py in 0..pool {
                    for px in 0..pool {
                        let idx = base + (oy * pool + py) * w + ox * pool + px;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = bc * oh * ow + oy * ow + ox;
                yd[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_bw(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (o, &i) in argmax.iter().enumerate() {
        dx.data_mut()[i] += dy.data()[o];
    }
    dx
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

/// Reduction bookkeeping: (features, per-feature element count, stride layout).
fn bn_layout(shape: &[usize], features: usize) -> Result<(usize, usize)> {
    match shape.len() {
        2 => {
            if shape[1] != features {
                return Err(Error::Dimension(format!(
                    "batchnorm feature mismatch: input {}, params {features}",
                    shape[1]
                )));
            }
            Ok((shape[0], 1))
        }
        4 => {
            if shape[1] != features {
                return Err(Error::Dimension(format!(
                    "batchnorm channel mismatch: input {}, params {features}",
                    shape[1]
                )));
            }
            Ok((shape[0], shape[2] * shape[3]))
        }
        _ => Err(Error::Dimension(format!("batchnorm input rank {} unsupported", shape.len()))),
    }
}

/// Iterate feature f of sample s as contiguous runs of length `plane`.
#[inline]
fn bn_run(data: &[f64], s: usize, f: usize, features: usize, plane: usize) -> &[f64] {
    &data[(s * features + f) * plane..][..plane]
}

pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Train-mode batchnorm: biased batch statistics, running stats updated with
/// momentum [`BN_MOMENTUM`].
#[allow(clippy::needless_range_loop)]
pub fn bn_fw_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    run_mean: &mut Tensor,
    run_var: &mut Tensor,
) -> Result<(Tensor, BnCache)> {
    let features = gamma.len();
    let (batch, plane) = bn_layout(x.shape(), features)?;
    if batch < 2 {
        return Err(Error::Config("batchnorm requires batch size >= 2 in train mode".into()));
    }
    let n = (batch * plane) as f64;
    let mut xhat = Tensor::zeros(x.shape().to_vec());
    let mut inv_std = vec![0.0; features];
    for f in 0..features {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in 0..batch {
            for &v in bn_run(x.data(), s, f, features, plane) {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[f] = istd;
        run_mean.data_mut()[f] = BN_MOMENTUM * run_mean.data()[f] + (1.0 - BN_MOMENTUM) * mean;
        run_var.data_mut()[f] = BN_MOMENTUM * run_var.data()[f] + (1.0 - BN_MOMENTUM) * var;
        for s in 0..batch {
            let dst = &mut xhat.data_mut()[(s * features + f) * plane..][..plane];
            let src = bn_run(x.data(), s, f, features, plane);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * istd;
            }
        }
    }
    let mut y = xhat.clone();
    scale_shift(&mut y, gamma, beta, features, plane, batch);
    Ok((y, BnCache { xhat, inv_std }))
}

pub fn bn_fw_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    run_mean: &Tensor,
    run_var: &Tensor,
) -> Result<Tensor> {
    let features = gamma.len();
    let (batch, plane) = bn_layout(x.shape(), features)?;
    let mut y = Tensor::zeros(x.shape().to_vec());
    for f in 0..features {
        let mean = run_mean.data()[f];
        let istd = 1.0 / (run_var.data()[f] + BN_EPS).sqrt();
        let (g, b) = (gamma.data()[f], beta.data()[f]);
        for s in 0..batch {
            let dst = &mut y.data_mut()[(s * features + f) * plane..][..plane];
            let src = bn_run(x.data(), s, f, features, plane);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = g * (v - mean) * istd + b;
            }
        }
    }
    Ok(y)
}

fn scale_shift(y: &mut Tensor, gamma: &Tensor, beta: &Tensor, features: usize, plane: usize, batch: usize) {
    for f in 0..features {
        let (g, b) = (gamma.data()[f], beta.data()[f]);
        for s in 0..batch {
            for v in &mut y.data_mut()[(s * features + f) * plane..][..plane] {
                *v = g * *v + b;
            }
        }
    }
}

/// Standard batch-statistics chain rule. Returns (dx, dgamma, dbeta).
pub fn bn_bw(cache: &BnCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let features = gamma.len();
    let (batch, plane) = bn_layout(dy.shape(), features).expect("cached shapes consistent");
    let n = (batch * plane) as f64;
    let mut dx = Tensor::zeros(dy.shape().to_vec());
    let mut dgamma = Tensor::zeros(vec![features]);
    let mut dbeta = Tensor::zeros(vec![features]);
    for f in 0..features {
        let g = gamma.data()[f];
        let istd = cache.inv_std[f];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for s in 0..batch {
            let d = bn_run(dy.data(), s, f, features, plane);
            let xh = bn_run(cache.xhat.data(), s, f, features, plane);
            for (dv, xv) in d.iter().zip(xh) {
                sum_dy += dv;
                sum_dy_xhat += dv * xv;
            }
        }
        dgamma.data_mut()[f] = sum_dy_xhat;
        dbeta.data_mut()[f] = sum_dy;
        let k = g * istd / n;
        for s in 0..batch {
            let base = (s * features + f) * plane;
            for i in 0..plane {
                let dv = dy.data()[base + i];
                let xh = cache.xhat.data()[base + i];
                dx.data_mut()[base + i] = k * (n * dv - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

pub fn act_fw(x: &Tensor, act: Activation) -> Result<Tensor> {
    let mut y = x.clone();
    match act {
        Activation::Relu => {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for v in y.data_mut() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
        Activation::ParamSigmoid { delta } => {
            if delta <= 0.0 {
                return Err(Error::Config(format!("param_sigmoid slope must be positive, got {delta}")));
            }
            for v in y.data_mut() {
                *v = 1.0 / (1.0 + (-delta * *v).exp());
            }
        }
        Activation::Softmax => {
            let last = *x.shape().last().ok_or_else(|| Error::Dimension("softmax on scalar".into()))?;
            for slice in y.data_mut().chunks_exact_mut(last) {
                let m = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in slice.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in slice.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }
    Ok(y)
}

/// Backward through an activation given its cached input and output.
pub fn act_bw(x: &Tensor, y: &Tensor, act: Activation, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    match act {
        Activation::Relu => {
            for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                if xv <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                *d *= yv * (1.0 - yv);
            }
        }
        Activation::ParamSigmoid { delta } => {
            for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                *d *= delta * yv * (1.0 - yv);
            }
        }
        Activation::Softmax => {
            let last = *y.shape().last().unwrap();
            for (ds, ys) in dx.data_mut().chunks_exact_mut(last).zip(y.data().chunks_exact(last)) {
                let dot: f64 = ds.iter().zip(ys).map(|(d, y)| d * y).sum();
                for (d, &yv) in ds.iter_mut().zip(ys) {
                    *d = yv * (*d - dot);
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// standalone single-sample entry points
// ---------------------------------------------------------------------------

/// y = Wx + b for a single input vector.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.check_finite("dense input")?;
    if x.shape().len() != 1 || w.shape().len() != 2 {
        return Err(Error::Dimension("dense_forward expects vector input and 2-D weight".into()));
    }
    let xb = x.clone().reshape(vec![1, x.len()])?;
    let y = dense_fw(&xb, w, b)?;
    let out = y.shape()[1];
    y.reshape(vec![out])
}

/// Same-padded cross-correlation of a single C_in x H x W input.
pub fn conv2d_forward(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "conv2d_forward expects C x H x W input, got {:?}",
            x.shape()
        )));
    }
    let s = x.shape().to_vec();
    let xb = x.clone().reshape(vec![1, s[0], s[1], s[2]])?;
    let y = conv2d_fw(&xb, filters, bias)?;
    let ys = y.shape().to_vec();
    y.reshape(vec![ys[1], ys[2], ys[3]])
}

/// Max-pooling of a single H x W or C x H x W input.
pub fn maxpool2d_forward(x: &Tensor, pool: usize) -> Result<Tensor> {
    let s = x.shape().to_vec();
    let xb = match s.len() {
        2 => x.clone().reshape(vec![1, 1, s[0], s[1]])?,
        3 => x.clone().reshape(vec![1, s[0], s[1], s[2]])?,
        _ => return Err(Error::Dimension(format!("maxpool2d_forward: rank {} input", s.len()))),
    };
    let (y, _) = maxpool_fw(&xb, pool)?;
    let ys = y.shape().to_vec();
    match s.len() {
        2 => y.reshape(vec![ys[2], ys[3]]),
        _ => y.reshape(vec![ys[1], ys[2], ys[3]]),
    }
}

/// Batchnorm over a batch with explicit mode; `params` = (gamma, beta,
/// running mean, running var), running stats updated in train mode.
pub fn batchnorm_apply(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    run_mean: &mut Tensor,
    run_var: &mut Tensor,
    train: bool,
) -> Result<Tensor> {
    if train {
        Ok(bn_fw_train(x, gamma, beta, run_mean, run_var)?.0)
    } else {
        bn_fw_infer(x, gamma, beta, run_mean, run_var)
    }
}

/// Elementwise (or last-axis for softmax) activation.
pub fn activation_apply(x: &Tensor, act: Activation) -> Result<Tensor> {
    act_fw(x, act)
}
