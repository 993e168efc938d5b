//! Line-oriented experiment configuration: `key = value` pairs with `#`
//! comments and dotted section prefixes (`camera.pixel_um = 5.6`).
//! Unknown keys and malformed lines are rejected with line numbers.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{ArrayGeometry, CameraModel};
use crate::models::DimmingTarget;
use crate::train::{AnnealSchedule, TrainConfig};

/// Every knob of the pipeline, with the evaluation-section defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,

    /// "cae", "fae" or "ook".
    pub model_kind: String,
    pub m: usize,
    pub l: usize,
    pub t: usize,

    pub ook_n: usize,
    pub ook_d: f64,
    pub ook_hidden: Vec<usize>,

    pub array_pitch_m: f64,
    pub array_distance_m: f64,
    pub camera_pixel_m: f64,
    pub camera_focal_m: f64,
    pub camera_fnumber: f64,
    pub camera_psf_sigma_px: f64,
    pub channel_psi2: f64,

    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_stage: usize,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub train_snr_db: Vec<f64>,
    pub dimming_duty: f64,
    pub rotate: bool,
    pub rotation_lo_deg: f64,
    pub rotation_hi_deg: f64,
    pub anneal_deltas: Vec<f64>,

    pub eval_snr_db: Vec<f64>,
    pub eval_trials: u64,
    pub csi_error_deg: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: "out".into(),
            model_kind: "cae".into(),
            m: 64,
            l: 5,
            t: 28,
            ook_n: 8,
            ook_d: 4.0,
            ook_hidden: vec![32],
            array_pitch_m: 0.015,
            array_distance_m: 5.0,
            camera_pixel_m: 5.6e-6,
            camera_focal_m: 3.5e-3,
            camera_fnumber: 1.4,
            camera_psf_sigma_px: 1.0,
            channel_psi2: 5.0,
            lambda: 10.0,
            learning_rate: 1e-3,
            batch_size: 256,
            steps_per_stage: 2000,
            train_samples: 100_000,
            valid_samples: 100_000,
            train_snr_db: vec![10.0],
            dimming_duty: 20.0 / 64.0,
            rotate: true,
            rotation_lo_deg: -30.0,
            rotation_hi_deg: 30.0,
            anneal_deltas: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            eval_snr_db: vec![8.0, 10.0, 12.0, 14.0, 16.0],
            eval_trials: 100_000,
            csi_error_deg: 0.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("line {line}: cannot parse `{value}` as a value for `{key}`"))
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(|v| parse_num(key, v.trim(), line))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("line {line}: empty list for `{key}`")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: `{key}` expects true/false, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Parse config text over the defaults. Later lines override earlier
    /// ones; duplicate keys are allowed, unknown keys are not.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line}: expected `key = value`, got `{content}`"
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(Error::Config(format!("line {line}: empty value for `{key}`")));
            }
            seen.insert(key.to_string(), line);
            match key {
                "seed" => cfg.seed = parse_num(key, value, line)?,
                "out_dir" => cfg.out_dir = value.to_string(),
                "model.kind" => {
                    if !["cae", "fae", "ook"].contains(&value) {
                        return Err(Error::Config(format!(
                            "line {line}: model.kind must be cae, fae or ook, got `{value}`"
                        )));
                    }
                    cfg.model_kind = value.to_string();
                }
                "model.m" => cfg.m = parse_num(key, value, line)?,
                "model.l" => cfg.l = parse_num(key, value, line)?,
                "model.t" => cfg.t = parse_num(key, value, line)?,
                "ook.n" => cfg.ook_n = parse_num(key, value, line)?,
                "ook.d" => cfg.ook_d = parse_num(key, value, line)?,
                "ook.hidden" => cfg.ook_hidden = parse_list(key, value, line)?,
                "array.pitch_m" => cfg.array_pitch_m = parse_num(key, value, line)?,
                "array.distance_m" => cfg.array_distance_m = parse_num(key, value, line)?,
                "camera.pixel_um" => {
                    cfg.camera_pixel_m = parse_num::<f64>(key, value, line)? * 1e-6
                }
                "camera.focal_mm" => {
                    cfg.camera_focal_m = parse_num::<f64>(key, value, line)? * 1e-3
                }
                "camera.fnumber" => cfg.camera_fnumber = parse_num(key, value, line)?,
                "camera.psf_sigma_px" => cfg.camera_psf_sigma_px = parse_num(key, value, line)?,
                "channel.psi2" => cfg.channel_psi2 = parse_num(key, value, line)?,
                "train.lambda" => cfg.lambda = parse_num(key, value, line)?,
                "train.learning_rate" => cfg.learning_rate = parse_num(key, value, line)?,
                "train.batch_size" => cfg.batch_size = parse_num(key, value, line)?,
                "train.steps_per_stage" => cfg.steps_per_stage = parse_num(key, value, line)?,
                "train.train_samples" => cfg.train_samples = parse_num(key, value, line)?,
                "train.valid_samples" => cfg.valid_samples = parse_num(key, value, line)?,
                "train.snr_db" => cfg.train_snr_db = parse_list(key, value, line)?,
                "train.dimming_duty" => cfg.dimming_duty = parse_num(key, value, line)?,
                "train.rotate" => cfg.rotate = parse_bool(key, value, line)?,
                "train.rotation_lo_deg" => cfg.rotation_lo_deg = parse_num(key, value, line)?,
                "train.rotation_hi_deg" => cfg.rotation_hi_deg = parse_num(key, value, line)?,
                "anneal.deltas" => cfg.anneal_deltas = parse_list(key, value, line)?,
                "eval.snr_db" => cfg.eval_snr_db = parse_list(key, value, line)?,
                "eval.trials" => cfg.eval_trials = parse_num(key, value, line)?,
                "eval.csi_error_deg" => cfg.csi_error_deg = parse_num(key, value, line)?,
                _ => {
                    return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Cross-checks against every consumer's type invariants.
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        self.anneal_schedule()?;
        self.train_config()?.validate()?;
        if self.model_kind == "ook" {
            self.ook_spec()?.validate()?;
        }
        if self.eval_trials == 0 {
            return Err(Error::Config("eval.trials must be positive".into()));
        }
        if self.csi_error_deg < 0.0 {
            return Err(Error::Config("eval.csi_error_deg must be non-negative".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<(ArrayGeometry, CameraModel)> {
        let geom = ArrayGeometry {
            l: self.l,
            pitch_m: self.array_pitch_m,
            distance_m: self.array_distance_m,
        };
        let cam = CameraModel {
            t: self.t,
            pixel_m: self.camera_pixel_m,
            focal_m: self.camera_focal_m,
            fnumber: self.camera_fnumber,
            psf_sigma_px: self.camera_psf_sigma_px,
        };
        cam.validate()?;
        geom.validate(&cam)?;
        Ok((geom, cam))
    }

    pub fn anneal_schedule(&self) -> Result<AnnealSchedule> {
        AnnealSchedule::new(self.anneal_deltas.clone())
    }

    pub fn dimming_target(&self) -> Result<DimmingTarget> {
        if self.model_kind == "ook" {
            Ok(DimmingTarget::Weight(self.ook_d))
        } else {
            DimmingTarget::uniform_matrix(self.l, self.dimming_duty)
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            steps_per_stage: self.steps_per_stage,
            train_samples: self.train_samples,
            valid_samples: self.valid_samples,
            snr_db: self.train_snr_db.clone(),
            dimming: self.dimming_target()?,
            rotation_range: if self.rotate && self.model_kind != "ook" {
                Some((self.rotation_lo_deg, self.rotation_hi_deg))
            } else {
                None
            },
            seed: self.seed,
        })
    }

    pub fn ook_spec(&self) -> Result<crate::models::OokAeSpec> {
        Ok(crate::models::OokAeSpec {
            n: self.ook_n,
            m: self.m,
            d: self.ook_d,
            hidden: self.ook_hidden.clone(),
        })
    }
}
