//! Thin-lens rendering of the LED array onto the image sensor.
//!
//! Each LED center is rotated about the array center, projected through a
//! thin lens (magnification f / (d - f)) onto the sensor plane, and spread
//! as an isotropic Gaussian spot integrated over each pixel with
//! error-function quadrature. The result is a T^2 x L^2 linear map from LED
//! intensities to clean pixel intensities; rotation angles snap to a 0.5
//! degree grid and the corresponding matrices are cached.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::channel::{apply_optical_noise, ChannelParams, NoisySignal};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// LED array geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    /// LEDs per side.
    pub l: usize,
    /// Inter-LED spacing in meters.
    pub pitch_m: f64,
    /// Link distance in meters.
    pub distance_m: f64,
}

/// Camera intrinsics. The f-number is carried for completeness but does not
/// enter the default PSF width: the object is treated as in focus and blur
/// is parameterized directly via `psf_sigma_px`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Pixels per side.
    pub t: usize,
    /// Pixel pitch in meters.
    pub pixel_m: f64,
    /// Focal length in meters.
    pub focal_m: f64,
    pub fnumber: f64,
    /// Blur standard deviation in pixels.
    pub psf_sigma_px: f64,
}

impl ArrayGeometry {
    pub fn validate(&self, cam: &CameraModel) -> Result<()> {
        if self.l < 1 || self.pitch_m <= 0.0 {
            return Err(Error::Config("LED array needs L >= 1 and positive pitch".into()));
        }
        if self.distance_m <= cam.focal_m {
            return Err(Error::Config("link distance must exceed the focal length".into()));
        }
        Ok(())
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || !self.t.is_multiple_of(2) {
            return Err(Error::Config(format!("sensor side {} must be positive and even", self.t)));
        }
        if self.pixel_m <= 0.0 || self.focal_m <= 0.0 || self.fnumber <= 0.0 || self.psf_sigma_px <= 0.0 {
            return Err(Error::Config("camera parameters must be positive".into()));
        }
        Ok(())
    }

    /// Thin-lens magnification for an object at `distance_m`.
    pub fn magnification(&self, distance_m: f64) -> f64 {
        self.focal_m / (distance_m - self.focal_m)
    }
}

/// T^2 x L^2 non-negative matrix mapping LED intensities to clean pixel
/// intensities, built for one rotation angle.
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    h: Vec<f64>,
    pub t: usize,
    pub l: usize,
    pub theta_deg: f64,
}

impl ChannelMatrix {
    /// Row-major [T^2, L^2] entries.
    pub fn entries(&self) -> &[f64] {
        &self.h
    }

    /// Entry mapping LED `led` to pixel `px`.
    pub fn at(&self, px: usize, led: usize) -> f64 {
        self.h[px * self.l * self.l + led]
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Unnormalized spot matrix for one angle: columns hold per-pixel Gaussian
/// masses, each column scaled to unit total energy.
fn build_raw(geom: &ArrayGeometry, cam: &CameraModel, theta_deg: f64) -> Result<Vec<f64>> {
    let l = geom.l;
    let t = cam.t;
    let m = cam.magnification(geom.distance_m);
    let (sin_t, cos_t) = theta_deg.to_radians().sin_cos();
    let sigma = cam.psf_sigma_px;
    let inv = 1.0 / (sigma * std::f64::consts::SQRT_2);
    let half = (l as f64 - 1.0) / 2.0;
    let center = t as f64 / 2.0;

    let mut h = vec![0.0; t * t * l * l];
    let mut wx = vec![0.0; t];
    let mut wy = vec![0.0; t];
    for row in 0..l {
        for col in 0..l {
            // array coordinates, meters, centered
            let x = (col as f64 - half) * geom.pitch_m;
            let y = (row as f64 - half) * geom.pitch_m;
            let xr = x * cos_t - y * sin_t;
            let yr = x * sin_t + y * cos_t;
            // projected position in pixel units
            let px = m * xr / cam.pixel_m + center;
            let py = m * yr / cam.pixel_m + center;
            if !(0.0..=t as f64).contains(&px) || !(0.0..=t as f64).contains(&py) {
                return Err(Error::Geometry(format!(
                    "LED ({row},{col}) projects to ({px:.2},{py:.2}) outside the {t}x{t} sensor"
                )));
            }
            for i in 0..t {
                wx[i] = 0.5 * (erf((i as f64 + 1.0 - px) * inv) - erf((i as f64 - px) * inv));
                wy[i] = 0.5 * (erf((i as f64 + 1.0 - py) * inv) - erf((i as f64 - py) * inv));
            }
            let led = row * l + col;
            // sum_{r,c} wy[r]*wx[c] factors into the product of the sums
            let total = wy.iter().sum::<f64>() * wx.iter().sum::<f64>();
            // equal energy per LED regardless of how much of the spot the
            // sensor captures
            let scale = 1.0 / total;
            for r in 0..t {
                let wyr = wy[r] * scale;
                for c in 0..t {
                    h[(r * t + c) * l * l + led] = wyr * wx[c];
                }
            }
        }
    }
    Ok(h)
}

/// Builds channel matrices and owns the shared normalization: the all-on
/// array at theta = 0 renders with peak pixel value exactly 1, and that
/// scale applies at every angle.
pub struct ChannelFactory {
    pub geom: ArrayGeometry,
    pub cam: CameraModel,
    scale: f64,
    cache: RwLock<HashMap<i64, Arc<ChannelMatrix>>>,
}

/// Rotation grid pitch in degrees; training and evaluation angles snap here
/// so matrix construction amortizes over millions of samples.
pub const ROTATION_GRID_DEG: f64 = 0.5;

pub fn snap_to_grid(theta_deg: f64) -> f64 {
    (theta_deg / ROTATION_GRID_DEG).round() * ROTATION_GRID_DEG
}

impl ChannelFactory {
    pub fn new(geom: ArrayGeometry, cam: CameraModel) -> Result<Self> {
        cam.validate()?;
        geom.validate(&cam)?;
        let raw0 = build_raw(&geom, &cam, 0.0)?;
        let ll = geom.l * geom.l;
        let mut peak = 0.0f64;
        for px in 0..cam.t * cam.t {
            let s: f64 = raw0[px * ll..(px + 1) * ll].iter().sum();
            peak = peak.max(s);
        }
        if peak <= 0.0 {
            return Err(Error::Geometry("all-on render has zero peak".into()));
        }
        let factory = ChannelFactory { geom, cam, scale: 1.0 / peak, cache: RwLock::new(HashMap::new()) };
        Ok(factory)
    }

    /// Matrix for `theta_deg`, snapped to the rotation grid; cached.
    pub fn matrix(&self, theta_deg: f64) -> Result<Arc<ChannelMatrix>> {
        if theta_deg.abs() > 90.0 {
            return Err(Error::Argument(format!("rotation {theta_deg} outside [-90, 90]")));
        }
        let snapped = snap_to_grid(theta_deg);
        let key = (snapped / ROTATION_GRID_DEG).round() as i64;
        if let Some(m) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let mut h = build_raw(&self.geom, &self.cam, snapped)?;
        for v in &mut h {
            *v *= self.scale;
        }
        let m = Arc::new(ChannelMatrix { h, t: self.cam.t, l: self.geom.l, theta_deg: snapped });
        // last-writer-wins idempotent insert
        self.cache.write().expect("cache lock").insert(key, m.clone());
        Ok(m)
    }

    /// Uncached direct build (cache-consistency checks).
    pub fn build_uncached(&self, theta_deg: f64) -> Result<ChannelMatrix> {
        let snapped = snap_to_grid(theta_deg);
        let mut h = build_raw(&self.geom, &self.cam, snapped)?;
        for v in &mut h {
            *v *= self.scale;
        }
        Ok(ChannelMatrix { h, t: self.cam.t, l: self.geom.l, theta_deg: snapped })
    }
}

/// Clean image: reshape(H . vec(S)), exactly linear in S.
pub fn render_image(s: &Tensor, h: &ChannelMatrix) -> Result<Tensor> {
    let ll = h.l * h.l;
    if s.len() != ll {
        return Err(Error::Dimension(format!(
            "intensity matrix has {} entries, channel expects {ll}",
            s.len()
        )));
    }
    let mut y = Tensor::zeros(vec![h.t, h.t]);
    for (out, row) in y.data_mut().iter_mut().zip(h.h.chunks_exact(ll)) {
        let mut acc = 0.0;
        for (hv, sv) in row.iter().zip(s.data()) {
            acc += hv * sv;
        }
        *out = acc;
    }
    Ok(y)
}

/// Adjoint of [`render_image`]: H^T u, the training gradient w.r.t. S.
pub fn backproject(u: &Tensor, h: &ChannelMatrix) -> Result<Tensor> {
    let tt = h.t * h.t;
    let ll = h.l * h.l;
    if u.len() != tt {
        return Err(Error::Dimension(format!("image has {} pixels, channel expects {tt}", u.len())));
    }
    let mut g = Tensor::zeros(vec![h.l, h.l]);
    for px in 0..tt {
        let uv = u.data()[px];
        if uv == 0.0 {
            continue;
        }
        let row = &h.h[px * ll..(px + 1) * ll];
        for (gv, hv) in g.data_mut().iter_mut().zip(row) {
            *gv += hv * uv;
        }
    }
    Ok(g)
}

/// Uniform rotation draw over [lo, hi] degrees.
pub fn sample_rotation(rng: &mut impl Rng, range_deg: (f64, f64)) -> Result<f64> {
    let (lo, hi) = range_deg;
    if lo > hi {
        return Err(Error::Argument(format!("rotation range [{lo}, {hi}] is empty")));
    }
    if lo == hi {
        return Ok(lo);
    }
    Ok(rng.gen_range(lo..=hi))
}

/// One pass through the ISC channel: render at a (sampled or given) rotation,
/// then apply signal-dependent noise. Returns the noisy sensor image and the
/// rotation actually used; only CSI-aware baselines may consume the angle.
pub struct IscObservation {
    pub image: Tensor,
    pub clean: Tensor,
    pub noise: NoisySignal,
    pub theta_used: f64,
}

pub fn isc_channel(
    s: &Tensor,
    factory: &ChannelFactory,
    ch: &ChannelParams,
    rotation_range: (f64, f64),
    rng: &mut impl Rng,
    theta: Option<f64>,
) -> Result<IscObservation> {
    let theta_used = match theta {
        Some(t) => t,
        None => sample_rotation(rng, rotation_range)?,
    };
    let h = factory.matrix(theta_used)?;
    let clean = render_image(s, &h)?;
    let noise = apply_optical_noise(&clean, ch, rng)?;
    Ok(IscObservation {
        image: noise.received.clone(),
        clean,
        noise,
        theta_used: h.theta_deg,
    })
}

/// The experiment geometry used throughout the evaluation section: 5x5 array,
/// 1.5 cm pitch, 5 m link, 28x28 sensor with 5.6 um pixels, 3.5 mm focal
/// length, f/1.4, 1 px PSF.
pub fn default_geometry() -> (ArrayGeometry, CameraModel) {
    (
        ArrayGeometry { l: 5, pitch_m: 0.015, distance_m: 5.0 },
        CameraModel { t: 28, pixel_m: 5.6e-6, focal_m: 3.5e-3, fnumber: 1.4, psf_sigma_px: 1.0 },
    )
}
