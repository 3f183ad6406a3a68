//! Run configuration: TOML schema, validation, and mapping onto the benchmark.

use std::path::Path;

use capnmpc::vehicle::{Benchmark, BicycleParams, TrackSpec};
use capnmpc::{Algorithm, BarrierConfig, NoiseSpec, DEFAULT_EPSILON};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// The shipped configuration, selected with `--config default`.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Pnmpc,
    Capnmpc,
}

impl From<AlgorithmName> for Algorithm {
    fn from(a: AlgorithmName) -> Self {
        match a {
            AlgorithmName::Pnmpc => Algorithm::Pnmpc,
            AlgorithmName::Capnmpc => Algorithm::CapNmpc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "defaults::algorithm")]
    pub algorithm: AlgorithmName,
    #[serde(default = "defaults::particles")]
    pub particles: usize,
    #[serde(default = "defaults::horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::step_cap")]
    pub step_cap: usize,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default)]
    pub barrier: Barrier,
    /// Covariance form. Mutually exclusive with `weights`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
    /// Weight form `(Q, R)`. Mutually exclusive with `noise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub vehicle: Vehicle,
    #[serde(default)]
    pub track: Track,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x_p: f64,
    pub y_p: f64,
    pub nu: f64,
    /// Heading in degrees.
    pub psi_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Barrier {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    /// Diagonal over `[x_p, y_p, ν, ψ, a, δ_f]`.
    pub q_wbar: Vec<f64>,
    /// Diagonal over `[x_p, y_p, ν, ψ]`; zero marks an unobserved component.
    pub q_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// Tracking weights over `[x_p, y_p, ν, ψ]`.
    pub q: Vec<f64>,
    /// Input weights over `[a, δ_f]`.
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    /// Constraint-measurement variances, one per constraint (four input bounds, then the corridor).
    pub q_eta: Vec<f64>,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_min_deg: f64,
    pub steer_max_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vehicle {
    pub l_r: f64,
    pub l_f: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Track {
    pub x_start: f64,
    pub x_end: f64,
    pub step: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub corridor_halfwidth: f64,
}

mod defaults {
    use super::AlgorithmName;

    pub fn algorithm() -> AlgorithmName {
        AlgorithmName::Capnmpc
    }
    pub fn particles() -> usize {
        100
    }
    pub fn horizon() -> usize {
        4
    }
    pub fn step_cap() -> usize {
        1000
    }
    pub fn epsilon() -> f64 {
        capnmpc::DEFAULT_EPSILON
    }
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            x_p: -0.5,
            y_p: -0.5,
            nu: 3.0,
            psi_deg: 45.0,
        }
    }
}

impl Default for Barrier {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 3.0,
        }
    }
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            q_wbar: vec![0.0, 0.0, 0.0, 0.0, 0.8, 0.4],
            q_v: vec![0.01, 0.01, 0.0, 0.0],
        }
    }
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            q_eta: vec![0.01; 5],
            accel_min: -3.0,
            accel_max: 3.0,
            steer_min_deg: -35.0,
            steer_max_deg: 35.0,
        }
    }
}

impl Default for Vehicle {
    fn default() -> Self {
        let p = BicycleParams::default();
        Self {
            l_r: p.l_r,
            l_f: p.l_f,
            dt: p.dt,
        }
    }
}

impl Default for Track {
    fn default() -> Self {
        let t = TrackSpec::default();
        Self {
            x_start: t.x_start,
            x_end: t.x_end,
            step: t.step,
            amplitude: t.amplitude,
            frequency: t.frequency,
            corridor_halfwidth: t.halfwidth,
        }
    }
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub algorithm: Option<AlgorithmName>,
    pub particles: Option<usize>,
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
}

fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Validation {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn check_len(key: &str, v: &[f64], len: usize) -> Result<(), CliError> {
    if v.len() != len {
        return Err(invalid(
            key,
            format!("expected {len} entries, got {}", v.len()),
        ));
    }
    Ok(())
}

fn check_all(key: &str, v: &[f64], ok: impl Fn(f64) -> bool, what: &str) -> Result<(), CliError> {
    match v.iter().position(|&x| !ok(x)) {
        Some(i) => Err(invalid(
            &format!("{key}[{i}]"),
            format!("must be {what}, got {}", v[i]),
        )),
        None => Ok(()),
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be finite, got {v}")))
    }
}

impl RunConfig {
    /// Parses TOML text without validating it. A config with neither `[noise]`
    /// nor `[weights]` gets the default covariances.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Parse {
                origin: origin.to_string(),
                message: "file is empty".into(),
            });
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if cfg.noise.is_none() && cfg.weights.is_none() {
            cfg.noise = Some(Noise::default());
        }
        Ok(cfg)
    }

    /// Reads and validates a config file, or the shipped one for `"default"`.
    pub fn load(source: &str) -> Result<Self, CliError> {
        let cfg = if source == "default" {
            Self::from_toml(DEFAULT_CONFIG, "default")?
        } else {
            let path = Path::new(source);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingFile {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Self::from_toml(&text, source)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.algorithm {
            self.algorithm = v;
        }
        if let Some(v) = o.particles {
            self.particles = v;
        }
        if let Some(v) = o.horizon {
            self.horizon = v;
        }
        if let Some(v) = o.dt {
            self.vehicle.dt = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if self.particles == 0 {
            return Err(invalid("particles", "must be >= 1"));
        }
        if self.step_cap == 0 {
            return Err(invalid("step_cap", "must be >= 1"));
        }
        positive("epsilon", self.epsilon)?;
        let s = &self.initial_state;
        finite("initial_state.x_p", s.x_p)?;
        finite("initial_state.y_p", s.y_p)?;
        finite("initial_state.nu", s.nu)?;
        finite("initial_state.psi_deg", s.psi_deg)?;
        positive("barrier.alpha", self.barrier.alpha)?;
        positive("barrier.beta", self.barrier.beta)?;

        // The track reference carries positions only, so exactly x_p and y_p are observed.
        match (&self.noise, &self.weights) {
            (Some(_), Some(_)) => return Err(invalid(
                "noise/weights",
                "give either the covariance form [noise] or the weight form [weights], not both",
            )),
            (Some(n), None) => {
                check_len("noise.q_wbar", &n.q_wbar, 6)?;
                check_all(
                    "noise.q_wbar",
                    &n.q_wbar[..4],
                    |v| v >= 0.0 && v.is_finite(),
                    "finite and >= 0",
                )?;
                check_all(
                    "noise.q_wbar",
                    &n.q_wbar[4..],
                    |v| v > 0.0 && v.is_finite(),
                    "finite and > 0",
                )?;
                check_len("noise.q_v", &n.q_v, 4)?;
                check_all(
                    "noise.q_v",
                    &n.q_v[..2],
                    |v| v > 0.0 && v.is_finite(),
                    "finite and > 0",
                )?;
                check_all(
                    "noise.q_v",
                    &n.q_v[2..],
                    |v| v == 0.0,
                    "0 (only positions are tracked)",
                )?;
            }
            (None, Some(w)) => {
                check_len("weights.q", &w.q, 4)?;
                check_all(
                    "weights.q",
                    &w.q[..2],
                    |v| v > 0.0 && v.is_finite(),
                    "finite and > 0",
                )?;
                check_all(
                    "weights.q",
                    &w.q[2..],
                    |v| v == 0.0,
                    "0 (only positions are tracked)",
                )?;
                check_len("weights.r", &w.r, 2)?;
                check_all(
                    "weights.r",
                    &w.r,
                    |v| v > 0.0 && v.is_finite(),
                    "finite and > 0",
                )?;
            }
            (None, None) => return Err(invalid("noise", "missing covariance or weight form")),
        }

        let c = &self.constraints;
        check_len("constraints.q_eta", &c.q_eta, 5)?;
        check_all(
            "constraints.q_eta",
            &c.q_eta,
            |v| v > 0.0 && v.is_finite(),
            "finite and > 0",
        )?;
        finite("constraints.accel_min", c.accel_min)?;
        finite("constraints.accel_max", c.accel_max)?;
        if c.accel_min >= c.accel_max {
            return Err(invalid("constraints.accel_min", "must be below accel_max"));
        }
        for (key, v) in [
            ("constraints.steer_min_deg", c.steer_min_deg),
            ("constraints.steer_max_deg", c.steer_max_deg),
        ] {
            if v.is_nan() || v.abs() >= 90.0 {
                return Err(invalid(
                    key,
                    format!("must lie in (-90, 90) degrees, got {v}"),
                ));
            }
        }
        if c.steer_min_deg >= c.steer_max_deg {
            return Err(invalid(
                "constraints.steer_min_deg",
                "must be below steer_max_deg",
            ));
        }

        positive("vehicle.l_r", self.vehicle.l_r)?;
        positive("vehicle.l_f", self.vehicle.l_f)?;
        positive("vehicle.dt", self.vehicle.dt)?;

        let t = &self.track;
        finite("track.x_start", t.x_start)?;
        finite("track.x_end", t.x_end)?;
        finite("track.amplitude", t.amplitude)?;
        finite("track.frequency", t.frequency)?;
        positive("track.step", t.step)?;
        positive("track.corridor_halfwidth", t.corridor_halfwidth)?;
        if t.x_end <= t.x_start + t.step {
            return Err(invalid("track.x_end", "track needs at least two points"));
        }
        Ok(())
    }

    /// Resolved TOML echo; parsing it reproduces this config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the TOML echo, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Benchmark for this config. Call [`RunConfig::validate`] first.
    pub fn benchmark(&self) -> Result<Benchmark, CliError> {
        let (noise, q_weights, r_weights) = match (&self.noise, &self.weights) {
            (Some(n), _) => {
                let q = n
                    .q_v
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 })
                    .collect();
                let r = n.q_wbar[4..].iter().map(|v| 1.0 / v).collect();
                let spec = NoiseSpec {
                    q_wbar: n.q_wbar.clone(),
                    q_v: n.q_v.clone(),
                    q_eta: self.constraints.q_eta.clone(),
                    epsilon: self.epsilon,
                };
                (spec, q, r)
            }
            (None, Some(w)) => {
                let spec = NoiseSpec::from_weights(
                    &w.q,
                    &w.r,
                    self.constraints.q_eta.clone(),
                    self.epsilon,
                )
                .map_err(|e| invalid("weights", e.to_string()))?;
                (spec, w.q.clone(), w.r.clone())
            }
            (None, None) => return Err(invalid("noise", "missing covariance or weight form")),
        };
        let s = &self.initial_state;
        let c = &self.constraints;
        let t = &self.track;
        Ok(Benchmark {
            params: BicycleParams::new(self.vehicle.l_r, self.vehicle.l_f, self.vehicle.dt)
                .map_err(|e| invalid("vehicle", e.to_string()))?,
            track: TrackSpec {
                x_start: t.x_start,
                x_end: t.x_end,
                step: t.step,
                amplitude: t.amplitude,
                frequency: t.frequency,
                halfwidth: t.corridor_halfwidth,
            },
            x0: [s.x_p, s.y_p, s.nu, s.psi_deg.to_radians()],
            u_lo: [c.accel_min, c.steer_min_deg.to_radians()],
            u_hi: [c.accel_max, c.steer_max_deg.to_radians()],
            barrier: BarrierConfig::new(self.barrier.alpha, self.barrier.beta)
                .map_err(|e| invalid("barrier", e.to_string()))?,
            noise,
            q_weights,
            r_weights,
            horizon: self.horizon,
            particles: self.particles,
            step_cap: self.step_cap,
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            algorithm: defaults::algorithm(),
            particles: defaults::particles(),
            horizon: defaults::horizon(),
            seed: 0,
            step_cap: defaults::step_cap(),
            epsilon: DEFAULT_EPSILON,
            initial_state: InitialState::default(),
            barrier: Barrier::default(),
            noise: Some(Noise::default()),
            weights: None,
            constraints: Constraints::default(),
            vehicle: Vehicle::default(),
            track: Track::default(),
        }
    }
}
