//! Autoencoder-designed optical wireless transceivers.
//!
//! The crate bundles everything needed to train and evaluate learned
//! image-sensor-communication (ISC) and on-off-keying (OOK) links:
//!
//! - [`nn`]: a minimal batched reverse-mode network engine (dense, conv2d,
//!   max-pooling, batch normalization, the usual activations plus a
//!   slope-parameterized sigmoid for annealed binarization);
//! - [`channel`]: the signal-dependent optical noise model (ambient +
//!   shot noise) with a reparameterized, differentiable sampling path;
//! - [`imaging`]: thin-lens rendering of an LED array onto a low-resolution
//!   image sensor, with blur and random in-plane rotation;
//! - [`models`]: the convolutional / fully-connected / OOK autoencoder
//!   transceivers, dimming projection, and codebook export;
//! - [`train`]: multi-stage annealed end-to-end training;
//! - [`eval`]: Monte-Carlo symbol-error-rate estimation, classical
//!   baselines (random OOK + ML decoding, greedy constant-weight codes),
//!   and SNR sweeps;
//! - [`config`] / [`model_io`]: experiment configuration and model
//!   persistence used by the `owc` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod model_io;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Keep large buffers in the heap instead of handing them back to the
/// kernel on every free. Training and batched evaluation reallocate
/// hundreds of megabytes of activations per step; with glibc's default
/// mmap threshold that turns into page-fault churn that can eat a third
/// of the runtime. Call once at process start; safe to call repeatedly.
pub fn tune_allocator() {
    #[cfg(target_os = "linux")]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
