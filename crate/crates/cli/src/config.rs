//! Experiment configuration: one TOML document, every field defaulted.
//!
//! See `configs/SCHEMA.md` for the key reference.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use softpos_core::estimation::{self, ProcessModel};
use softpos_core::lqg::{self, LoopSensor, LqWeights};
use softpos_core::plantsim::{self, SensorSpec, Trajectory};
use softpos_core::sysid::RealizationOptions;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; every random stream is derived from it by label.
    pub seed: u64,
    pub estimation: EstimationSection,
    pub sensors: Vec<SensorSection>,
    pub simulate: SimulateSection,
    pub fusion: FusionSection,
    pub plant: PlantSection,
    pub identify: IdentifySection,
    pub design: DesignSection,
    pub closedloop: ClosedLoopSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            estimation: EstimationSection::default(),
            sensors: vec![SensorSection::xbox(), SensorSection::v2()],
            simulate: SimulateSection::default(),
            fusion: FusionSection::default(),
            plant: PlantSection::default(),
            identify: IdentifySection::default(),
            design: DesignSection::default(),
            closedloop: ClosedLoopSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    /// σ_a², mm²/s⁴.
    pub accel_variance: f64,
    /// Nominal sensing rate, Hz. ΔT = 1 / frame_rate.
    pub frame_rate: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self { accel_variance: estimation::ACCEL_VARIANCE, frame_rate: 15.0 }
    }
}

fn default_rate() -> f64 {
    15.0
}
fn default_warmup() -> f64 {
    plantsim::DEFAULT_WARMUP_S
}
fn default_warmup_scale() -> f64 {
    plantsim::DEFAULT_WARMUP_SCALE
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub name: String,
    pub id: u32,
    /// True noise variance of the simulated sensor, mm².
    pub noise_variance: f64,
    /// Variance assumed by the sensor's Kalman filter, mm².
    pub filter_variance: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_warmup_scale")]
    pub warmup_scale: f64,
}

impl SensorSection {
    pub fn xbox() -> Self {
        let s = SensorSpec::xbox();
        Self::from_spec(&s, estimation::XBOX_FILTER_VARIANCE)
    }

    pub fn v2() -> Self {
        let s = SensorSpec::v2();
        Self::from_spec(&s, estimation::V2_FILTER_VARIANCE)
    }

    fn from_spec(s: &SensorSpec, filter_variance: f64) -> Self {
        Self {
            name: s.name.clone(),
            id: s.sensor_id,
            noise_variance: s.noise_variance,
            filter_variance,
            rate: s.rate,
            warmup_s: s.warmup_s,
            warmup_scale: s.warmup_scale,
        }
    }

    pub fn spec(&self) -> SensorSpec {
        SensorSpec {
            name: self.name.clone(),
            sensor_id: self.id,
            noise_variance: self.noise_variance,
            rate: self.rate,
            warmup_s: self.warmup_s,
            warmup_scale: self.warmup_scale,
        }
    }

    /// Column name of the raw stream in a sensors file.
    pub fn column(&self) -> String {
        format!("z_{}", self.name)
    }
}

/// Serde mirror of [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Constant { value: f64 },
    Step { from: f64, to: f64, at: f64 },
    Ramp { start: f64, slope: f64, t0: f64 },
    Sinusoid { offset: f64, amplitude: f64, period: f64, phase: f64 },
    HeadRaise { base: f64, lift: f64, start: f64, duration: f64 },
}

impl TrajectoryConfig {
    pub fn to_core(self) -> Trajectory {
        match self {
            Self::Constant { value } => Trajectory::Constant { value },
            Self::Step { from, to, at } => Trajectory::Step { from, to, at },
            Self::Ramp { start, slope, t0 } => Trajectory::Ramp { start, slope, t0 },
            Self::Sinusoid { offset, amplitude, period, phase } => {
                Trajectory::Sinusoid { offset, amplitude, period, phase }
            }
            Self::HeadRaise { base, lift, start, duration } => Trajectory::HeadRaise { base, lift, start, duration },
        }
    }

    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let vals: Vec<(&str, f64)> = match *self {
            Self::Constant { value } => vec![("value", value)],
            Self::Step { from, to, at } => vec![("from", from), ("to", to), ("at", at)],
            Self::Ramp { start, slope, t0 } => vec![("start", start), ("slope", slope), ("t0", t0)],
            Self::Sinusoid { offset, amplitude, period, phase } => {
                if !(period > 0.0) {
                    return Err(invalid(format!("{path}.period"), format!("must be > 0, got {period}")));
                }
                vec![("offset", offset), ("amplitude", amplitude), ("phase", phase)]
            }
            Self::HeadRaise { base, lift, start, duration } => {
                if !(duration >= 0.0) {
                    return Err(invalid(format!("{path}.duration"), format!("must be >= 0, got {duration}")));
                }
                vec![("base", base), ("lift", lift), ("start", start)]
            }
        };
        for (k, v) in vals {
            if !v.is_finite() {
                return Err(invalid(format!("{path}.{k}"), format!("must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Length of the sensor recording, s.
    pub horizon_s: f64,
    /// Head-position ground truth, mm.
    pub truth: TrajectoryConfig,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { horizon_s: 600.0, truth: TrajectoryConfig::Constant { value: 800.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub rate: f64,
    pub staleness_ticks: f64,
    /// Samples before this time are excluded from the variance summary, s.
    pub warmup_s: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { rate: 15.0, staleness_ticks: 3.0, warmup_s: plantsim::DEFAULT_WARMUP_S }
    }
}

/// Identification experiment on the built-in bladder plant.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub samples: usize,
    /// Excitation amplitude, drive units.
    pub amplitude: f64,
    pub hold: usize,
    pub snr_db: f64,
    /// When set, used as the innovation variance instead of `snr_db`.
    pub innovation_variance: Option<f64>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self { samples: 10_000, amplitude: 1e5, hold: 1, snr_db: 30.0, innovation_variance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    /// Fraction of samples used for training.
    pub split: f64,
    pub orders: Vec<usize>,
    pub past_lags: usize,
    pub future_horizon: usize,
    pub refine: bool,
    /// Overrides the automatic order choice.
    pub order: Option<usize>,
}

impl Default for IdentifySection {
    fn default() -> Self {
        let o = RealizationOptions::default();
        Self {
            split: 0.6,
            orders: vec![2, 4, 6, 8],
            past_lags: o.past_lags,
            future_horizon: o.future_horizon,
            refine: o.refine,
            order: None,
        }
    }
}

impl IdentifySection {
    pub fn options(&self) -> RealizationOptions {
        RealizationOptions { past_lags: self.past_lags, future_horizon: self.future_horizon, refine: self.refine }
    }
}

/// A weight given either as a scalar multiple of the identity or in full.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Weight {
    pub fn to_matrix(&self, path: &str, dim: usize) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            Weight::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            Weight::Matrix(rows) => rows_to_matrix(path, rows, dim, dim),
        }
    }
}

fn rows_to_matrix(path: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(path, format!("expected a {r}x{c} matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub q: Weight,
    pub r: Weight,
    /// Cross weight; omitted means zero.
    pub n: Option<Vec<Vec<f64>>>,
    pub qe: Weight,
    pub re: Weight,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            q: Weight::Scalar(lqg::NOMINAL_Q),
            r: Weight::Scalar(lqg::NOMINAL_R),
            n: None,
            qe: Weight::Scalar(lqg::NOMINAL_QE),
            re: Weight::Scalar(lqg::NOMINAL_RE),
        }
    }
}

/// Matrices of a design resolved against a model's dimensions.
pub struct ResolvedWeights {
    pub weights: LqWeights,
    pub qe: DMatrix<f64>,
    pub re: DMatrix<f64>,
}

impl DesignSection {
    pub fn resolve(&self, nx: usize, nu: usize, ny: usize) -> Result<ResolvedWeights, ConfigError> {
        let q = self.q.to_matrix("design.q", nx)?;
        let r = self.r.to_matrix("design.r", nu)?;
        let n = match &self.n {
            Some(rows) => Some(rows_to_matrix("design.n", rows, nx, nu)?),
            None => None,
        };
        let weights = LqWeights::new(q, r, n).map_err(|e| invalid("design", e.to_string()))?;
        let qe = self.qe.to_matrix("design.qe", nx)?;
        let re = self.re.to_matrix("design.re", ny)?;
        let qe_ok = softpos_core::linalg::is_psd(&qe, 1e-9) && (&qe - qe.transpose()).amax() <= 1e-9 * qe.amax().max(1.0);
        if !qe_ok {
            return Err(invalid("design.qe", "must be symmetric positive semi-definite"));
        }
        if re.clone().cholesky().is_none() {
            return Err(invalid("design.re", "must be positive definite"));
        }
        Ok(ResolvedWeights { weights, qe, re })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopSection {
    pub horizon_s: f64,
    /// Head-position reference, mm.
    pub reference: TrajectoryConfig,
    pub u_limit: Option<f64>,
    pub noiseless: bool,
    pub innovation_variance: f64,
    /// Half-width of the tracking band, mm.
    pub band: f64,
    /// Time inside the band that counts as settled, s.
    pub dwell: f64,
}

impl Default for ClosedLoopSection {
    fn default() -> Self {
        Self {
            horizon_s: 120.0,
            reference: TrajectoryConfig::Step { from: 0.0, to: 10.0, at: 0.0 },
            u_limit: None,
            noiseless: false,
            innovation_variance: plantsim::PLANT_INNOVATION_VARIANCE,
            band: lqg::TRACKING_BAND,
            dwell: lqg::SETTLING_DWELL,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be a finite number > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be a finite number >= 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let line = inner.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = inner.message().trim().to_string();
            let path = if path == "." { "(root)".to_string() } else { path };
            match line {
                Some(l) => invalid(path, format!("{msg} (line {l})")),
                None => invalid(path, msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        non_negative("estimation.accel_variance", self.estimation.accel_variance)?;
        positive("estimation.frame_rate", self.estimation.frame_rate)?;

        if self.sensors.is_empty() {
            return Err(invalid("sensors", "at least one sensor is required"));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            let p = |k: &str| format!("sensors[{i}].{k}");
            let valid_name = !s.name.is_empty() && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid_name {
                return Err(invalid(p("name"), "must be non-empty ASCII letters, digits or '_'"));
            }
            positive(&p("noise_variance"), s.noise_variance)?;
            positive(&p("filter_variance"), s.filter_variance)?;
            positive(&p("rate"), s.rate)?;
            non_negative(&p("warmup_s"), s.warmup_s)?;
            if !(s.warmup_scale >= 1.0 && s.warmup_scale.is_finite()) {
                return Err(invalid(p("warmup_scale"), format!("must be >= 1, got {}", s.warmup_scale)));
            }
            for (j, o) in self.sensors[..i].iter().enumerate() {
                if o.name == s.name {
                    return Err(invalid(p("name"), format!("duplicates sensors[{j}].name")));
                }
                if o.id == s.id {
                    return Err(invalid(p("id"), format!("duplicates sensors[{j}].id")));
                }
            }
            if (s.rate - self.sensors[0].rate).abs() > 1e-12 {
                return Err(invalid(p("rate"), "all sensors must share one rate in a sensors file"));
            }
        }

        positive("simulate.horizon_s", self.simulate.horizon_s)?;
        self.simulate.truth.validate("simulate.truth")?;

        positive("fusion.rate", self.fusion.rate)?;
        positive("fusion.staleness_ticks", self.fusion.staleness_ticks)?;
        non_negative("fusion.warmup_s", self.fusion.warmup_s)?;

        if self.plant.samples < 100 {
            return Err(invalid("plant.samples", format!("must be >= 100, got {}", self.plant.samples)));
        }
        positive("plant.amplitude", self.plant.amplitude)?;
        if self.plant.hold == 0 {
            return Err(invalid("plant.hold", "must be >= 1"));
        }
        if !self.plant.snr_db.is_finite() {
            return Err(invalid("plant.snr_db", "must be finite"));
        }
        if let Some(v) = self.plant.innovation_variance {
            non_negative("plant.innovation_variance", v)?;
        }

        let id = &self.identify;
        if !(id.split > 0.0 && id.split < 1.0) {
            return Err(invalid("identify.split", format!("must lie in (0, 1), got {}", id.split)));
        }
        if id.orders.is_empty() {
            return Err(invalid("identify.orders", "must list at least one order"));
        }
        for (i, &o) in id.orders.iter().enumerate() {
            if o == 0 || o > id.future_horizon {
                return Err(invalid(
                    format!("identify.orders[{i}]"),
                    format!("must lie in 1..={}, got {o}", id.future_horizon),
                ));
            }
        }
        if let Some(o) = id.order {
            if !id.orders.contains(&o) {
                return Err(invalid("identify.order", format!("{o} is not in identify.orders")));
            }
        }
        if id.past_lags == 0 {
            return Err(invalid("identify.past_lags", "must be >= 1"));
        }
        if id.future_horizon == 0 {
            return Err(invalid("identify.future_horizon", "must be >= 1"));
        }

        let cl = &self.closedloop;
        positive("closedloop.horizon_s", cl.horizon_s)?;
        cl.reference.validate("closedloop.reference")?;
        if let Some(u) = cl.u_limit {
            positive("closedloop.u_limit", u)?;
        }
        non_negative("closedloop.innovation_variance", cl.innovation_variance)?;
        positive("closedloop.band", cl.band)?;
        non_negative("closedloop.dwell", cl.dwell)?;
        Ok(())
    }

    /// Motion model of the local filters.
    pub fn process(&self) -> ProcessModel {
        ProcessModel::from_accel_variance(1.0 / self.estimation.frame_rate, self.estimation.accel_variance)
            .expect("validated")
    }

    pub fn loop_sensors(&self) -> Vec<LoopSensor> {
        self.sensors.iter().map(|s| LoopSensor { spec: s.spec(), filter_variance: s.filter_variance }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn shipped_default_matches_builtin() {
        let text = include_str!("../configs/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = ExperimentConfig::from_toml("[fusion]\nrate = 15.0\nwarmup = 3\n").unwrap_err();
        let ConfigError::Invalid { path, message } = err else { panic!() };
        assert!(path.starts_with("fusion"), "{path}");
        assert!(message.contains("warmup"), "{message}");
        assert!(message.contains("line 3"), "{message}");
    }

    #[test]
    fn range_error_names_its_path() {
        let doc = "[[sensors]]\nname = \"a\"\nid = 1\nnoise_variance = 1.0\nfilter_variance = -2.0\n";
        let err = ExperimentConfig::from_toml(doc).unwrap_err();
        assert_eq!(err.to_string(), "sensors[0].filter_variance: must be a finite number > 0, got -2");
    }

    #[test]
    fn trajectory_tables_parse() {
        let doc = "[closedloop]\nreference = { kind = \"head_raise\", base = 0, lift = 5, start = 1, duration = 2 }\n";
        let cfg = ExperimentConfig::from_toml(doc).unwrap();
        assert_eq!(
            cfg.closedloop.reference,
            TrajectoryConfig::HeadRaise { base: 0.0, lift: 5.0, start: 1.0, duration: 2.0 }
        );
        assert!(ExperimentConfig::from_toml("[simulate]\ntruth = { kind = \"warp\" }\n").is_err());
    }

    #[test]
    fn weights_accept_scalar_or_matrix() {
        let doc = "[design]\nq = [[2.0, 0.0], [0.0, 3.0]]\nr = 0.5\n";
        let cfg = ExperimentConfig::from_toml(doc).unwrap();
        let w = cfg.design.resolve(2, 1, 1).unwrap();
        assert_eq!(w.weights.q[(1, 1)], 3.0);
        assert_eq!(w.weights.r[(0, 0)], 0.5);
        assert!(w.weights.n.iter().all(|v| *v == 0.0));
        assert!(cfg.design.resolve(3, 1, 1).is_err());
    }

    #[test]
    fn order_must_be_in_sweep() {
        assert!(ExperimentConfig::from_toml("[identify]\norder = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[identify]\norders = [0]\n").is_err());
    }

    #[test]
    fn duplicate_sensor_ids_rejected() {
        let s = "[[sensors]]\nname = \"a\"\nid = 1\nnoise_variance = 1.0\nfilter_variance = 2.0\n";
        let doc = format!("{s}{}", s.replace("\"a\"", "\"b\""));
        let err = ExperimentConfig::from_toml(&doc).unwrap_err().to_string();
        assert!(err.starts_with("sensors[1].id"), "{err}");
    }
}
