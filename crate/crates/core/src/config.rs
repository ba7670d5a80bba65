//! `key = value` configuration for the filter and the adapter output scaling.
//!
//! Every key is optional; missing keys take the built-in defaults.
//!
//! ```text
//! sigma0_rot = 1e-3
//! sigma_gyro = 1.4e-2
//! sigma_lat = 1.0
//! beta = 3.0
//! gravity = [0.0, 0.0, -9.80655]
//! theta_small = 1e-7
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Vec3, THETA_SMALL};
use crate::model::{InitialBeliefs, MeasurementNoise, ProcessNoise, GRAVITY, SIGMA_LAT, SIGMA_UP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value for `{key}`: {reason}")]
    Value { key: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub sigma0_rot: f64,
    pub sigma0_vel: f64,
    pub sigma0_bias_gyro: f64,
    pub sigma0_bias_accel: f64,
    pub sigma0_car_rot: f64,
    pub sigma0_car_pos: f64,

    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub sigma_bias_gyro: f64,
    pub sigma_bias_accel: f64,
    pub sigma_car_rot: f64,
    pub sigma_car_pos: f64,

    pub sigma_lat: f64,
    pub sigma_up: f64,
    pub beta: f64,

    pub gravity: [f64; 3],
    pub theta_small: f64,
    /// Gaps between samples above this (seconds) are reported as time jumps.
    pub max_dt: f64,
    /// Steps between projections of the rotation blocks back onto SO(3).
    pub reorthonormalize_every: usize,
    /// Steps between eigenvalue clamps of the covariance.
    pub psd_clamp_every: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let p0 = InitialBeliefs::default();
        let q = ProcessNoise::default();
        Self {
            sigma0_rot: p0.rot,
            sigma0_vel: p0.vel,
            sigma0_bias_gyro: p0.bias_gyro,
            sigma0_bias_accel: p0.bias_accel,
            sigma0_car_rot: p0.car_rot,
            sigma0_car_pos: p0.car_pos,
            sigma_gyro: q.gyro,
            sigma_accel: q.accel,
            sigma_bias_gyro: q.bias_gyro,
            sigma_bias_accel: q.bias_accel,
            sigma_car_rot: q.car_rot,
            sigma_car_pos: q.car_pos,
            sigma_lat: SIGMA_LAT,
            sigma_up: SIGMA_UP,
            beta: 3.0,
            gravity: GRAVITY,
            theta_small: THETA_SMALL,
            max_dt: 0.05,
            reorthonormalize_every: 1000,
            psd_clamp_every: 1000,
        }
    }
}

impl FilterConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: FilterConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, f64); 16] = [
            ("sigma0_rot", self.sigma0_rot),
            ("sigma0_vel", self.sigma0_vel),
            ("sigma0_bias_gyro", self.sigma0_bias_gyro),
            ("sigma0_bias_accel", self.sigma0_bias_accel),
            ("sigma0_car_rot", self.sigma0_car_rot),
            ("sigma0_car_pos", self.sigma0_car_pos),
            ("sigma_gyro", self.sigma_gyro),
            ("sigma_accel", self.sigma_accel),
            ("sigma_bias_gyro", self.sigma_bias_gyro),
            ("sigma_bias_accel", self.sigma_bias_accel),
            ("sigma_car_rot", self.sigma_car_rot),
            ("sigma_car_pos", self.sigma_car_pos),
            ("sigma_lat", self.sigma_lat),
            ("sigma_up", self.sigma_up),
            ("beta", self.beta),
            ("max_dt", self.max_dt),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Value {
                    key,
                    reason: format!("must be finite and positive, got {v}"),
                });
            }
        }
        if !(self.theta_small.is_finite() && self.theta_small >= 0.0) {
            return Err(ConfigError::Value {
                key: "theta_small",
                reason: format!("must be finite and nonnegative, got {}", self.theta_small),
            });
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(ConfigError::Value {
                key: "gravity",
                reason: "components must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn initial_beliefs(&self) -> InitialBeliefs {
        InitialBeliefs {
            rot: self.sigma0_rot,
            vel: self.sigma0_vel,
            bias_gyro: self.sigma0_bias_gyro,
            bias_accel: self.sigma0_bias_accel,
            car_rot: self.sigma0_car_rot,
            car_pos: self.sigma0_car_pos,
        }
    }

    pub fn set_initial_beliefs(&mut self, p0: &InitialBeliefs) {
        self.sigma0_rot = p0.rot;
        self.sigma0_vel = p0.vel;
        self.sigma0_bias_gyro = p0.bias_gyro;
        self.sigma0_bias_accel = p0.bias_accel;
        self.sigma0_car_rot = p0.car_rot;
        self.sigma0_car_pos = p0.car_pos;
    }

    pub fn process_noise(&self) -> ProcessNoise {
        ProcessNoise {
            gyro: self.sigma_gyro,
            accel: self.sigma_accel,
            bias_gyro: self.sigma_bias_gyro,
            bias_accel: self.sigma_bias_accel,
            car_rot: self.sigma_car_rot,
            car_pos: self.sigma_car_pos,
        }
    }

    pub fn set_process_noise(&mut self, q: &ProcessNoise) {
        self.sigma_gyro = q.gyro;
        self.sigma_accel = q.accel;
        self.sigma_bias_gyro = q.bias_gyro;
        self.sigma_bias_accel = q.bias_accel;
        self.sigma_car_rot = q.car_rot;
        self.sigma_car_pos = q.car_pos;
    }

    pub fn static_noise(&self) -> MeasurementNoise {
        MeasurementNoise::from_std(self.sigma_lat, self.sigma_up)
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }
}
