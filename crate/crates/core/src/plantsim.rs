//! Ground-truth generators: the identified bladder plant, head-motion
//! trajectories and synthetic depth sensors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, PbhReport};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: String, got: String },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("sample period must be positive, got {0}")]
    BadSamplePeriod(f64),
    #[error("model is not control-ready: stabilizable = {}, detectable = {} (failing modes: {:?} / {:?})",
        .stabilizable.passed, .detectable.passed, .stabilizable.failing, .detectable.failing)]
    NotControlReady { stabilizable: PbhReport, detectable: PbhReport },
    #[error("invalid sensor spec: {0}")]
    BadSensor(String),
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("noise-gain computation failed (unstable noise model)")]
    NoiseGain,
}

/// Discrete innovations-form LTI model
///
/// ```text
/// x(k+1) = A x(k) + B u(k) + K e(k)
/// y(k)   = C x(k) + D u(k) + e(k)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub ts: f64,
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        let check = |what, m: &DMatrix<f64>, r: usize, c: usize| {
            if m.nrows() != r || m.ncols() != c {
                Err(PlantError::Dimension { what, expected: format!("{r}x{c}"), got: shape(m) })
            } else if m.iter().any(|v| !v.is_finite()) {
                Err(PlantError::NonFinite(what))
            } else {
                Ok(())
            }
        };
        check("A", &a, n, n)?;
        let m = b.ncols();
        let p = c.nrows();
        check("B", &b, n, m)?;
        check("C", &c, p, n)?;
        check("D", &d, p, m)?;
        check("K", &k, n, p)?;
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(PlantError::BadSamplePeriod(ts));
        }
        Ok(Self { a, b, c, d, k, ts })
    }

    /// Single-input single-output model from row-major slices.
    pub fn siso(a: &[f64], b: &[f64], c: &[f64], d: f64, k: &[f64], ts: f64) -> Result<Self, PlantError> {
        let n = b.len();
        if a.len() != n * n {
            return Err(PlantError::Dimension { what: "A", expected: format!("{}", n * n), got: a.len().to_string() });
        }
        Self::new(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_column_slice(n, 1, b),
            DMatrix::from_row_slice(1, c.len(), c),
            DMatrix::from_element(1, 1, d),
            DMatrix::from_column_slice(k.len(), 1, k),
            ts,
        )
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn stabilizable(&self) -> PbhReport {
        linalg::stabilizable(&self.a, &self.b)
    }

    pub fn detectable(&self) -> PbhReport {
        linalg::detectable(&self.a, &self.c)
    }

    /// PBH checks required before control design.
    pub fn check_control_ready(&self) -> Result<(), PlantError> {
        let stabilizable = self.stabilizable();
        let detectable = self.detectable();
        if stabilizable.passed && detectable.passed {
            Ok(())
        } else {
            Err(PlantError::NotControlReady { stabilizable, detectable })
        }
    }

    pub fn poles(&self) -> Vec<nalgebra::Complex<f64>> {
        linalg::eigenvalues(&self.a).unwrap_or_default()
    }

    /// `C (I − A)⁻¹ B + D`, or `None` if `A` has an eigenvalue at 1.
    pub fn dc_gain(&self) -> Option<DMatrix<f64>> {
        let n = self.n();
        let inv = (DMatrix::identity(n, n) - &self.a).try_inverse()?;
        Some(&self.c * inv * &self.b + &self.d)
    }

    /// Stationary output variance per unit innovation variance,
    /// `1 + C X Cᵀ` with `X = A X Aᵀ + K Kᵀ` (SISO).
    pub fn noise_gain_sq(&self) -> Option<f64> {
        if linalg::spectral_radius(&self.a) >= 1.0 {
            return None;
        }
        let x = linalg::dlyap(&self.a, &(&self.k * self.k.transpose()))?;
        Some(1.0 + (&self.c * x * self.c.transpose())[(0, 0)])
    }

    /// Markov parameters `D, CB, CAB, …` of the input path (SISO), `len` terms.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut h = Vec::with_capacity(len);
        if len == 0 {
            return h;
        }
        h.push(self.d[(0, 0)]);
        let mut ak_b = self.b.clone();
        for _ in 1..len {
            h.push((&self.c * &ak_b)[(0, 0)]);
            ak_b = &self.a * ak_b;
        }
        h
    }
}

/// The identified second-order bladder model, `Ts = 1/15 s`.
pub fn bladder_plant() -> StateSpaceModel {
    StateSpaceModel::siso(
        &[0.0, 1.0, -0.9883, 1.988],
        &[-3.03e-7, -4.254e-7],
        &[1.0, 0.0],
        0.0,
        &[0.9253, 0.9604],
        1.0 / 15.0,
    )
    .expect("built-in plant is well formed")
}

/// Innovation variance used for the built-in plant when none is configured, mm².
pub const PLANT_INNOVATION_VARIANCE: f64 = 1.437e-3;

/// Stateful simulator for step-by-step use (closed loop).
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: StateSpaceModel,
    pub x: DVector<f64>,
}

impl Plant {
    pub fn new(model: StateSpaceModel, x0: DVector<f64>) -> Result<Self, PlantError> {
        if x0.len() != model.n() {
            return Err(PlantError::Dimension { what: "x0", expected: model.n().to_string(), got: x0.len().to_string() });
        }
        Ok(Self { model, x: x0 })
    }

    /// Output at the current state, without advancing.
    pub fn output(&self, u: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        &self.model.c * &self.x + &self.model.d * u + e
    }

    /// Emits `y(k)` and advances to `x(k+1)`.
    pub fn step(&mut self, u: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        let y = self.output(u, e);
        self.x = &self.model.a * &self.x + &self.model.b * u + &self.model.k * e;
        y
    }
}

/// Simulates the innovations recursion. `u` is `N × m` and `e` is `N × p`,
/// one row per sample; the output is `N × p`.
pub fn simulate_lti(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<DMatrix<f64>, PlantError> {
    if u.ncols() != model.m() {
        return Err(PlantError::Dimension { what: "u columns", expected: model.m().to_string(), got: u.ncols().to_string() });
    }
    if e.ncols() != model.p() {
        return Err(PlantError::Dimension { what: "e columns", expected: model.p().to_string(), got: e.ncols().to_string() });
    }
    if u.nrows() != e.nrows() {
        return Err(PlantError::Dimension { what: "u/e length", expected: u.nrows().to_string(), got: e.nrows().to_string() });
    }
    let mut plant = Plant::new(model.clone(), x0.clone())?;
    let n = u.nrows();
    let mut y = DMatrix::zeros(n, model.p());
    for k in 0..n {
        let yk = plant.step(&u.row(k).transpose(), &e.row(k).transpose());
        y.row_mut(k).copy_from(&yk.transpose());
    }
    Ok(y)
}

/// SISO convenience wrapper around [`simulate_lti`] starting from rest.
pub fn simulate_siso(model: &StateSpaceModel, u: &[f64], e: &[f64]) -> Result<Vec<f64>, PlantError> {
    let um = DMatrix::from_column_slice(u.len(), 1, u);
    let em = DMatrix::from_column_slice(e.len(), 1, e);
    let y = simulate_lti(model, &um, &em, &DVector::zeros(model.n()))?;
    Ok(y.as_slice().to_vec())
}

/// `n` independent N(0, variance) draws from the stream `seed`, one per
/// sample in time order.
pub fn gaussian_sequence(seed: u64, n: usize, variance: f64) -> Vec<f64> {
    let sd = variance.max(0.0).sqrt();
    let mut rng = seed::rng(seed);
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Output of [`simulate_with_snr`].
#[derive(Debug, Clone)]
pub struct NoisyResponse {
    pub y: Vec<f64>,
    /// Noise-free response to `u`.
    pub y_clean: Vec<f64>,
    pub e: Vec<f64>,
    /// Innovation variance actually used.
    pub lambda: f64,
}

/// How the innovation variance of a simulated record is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Fixed innovation variance.
    Variance(f64),
    /// Ratio (dB) of the deterministic output variance to the stationary
    /// noise-output variance `λ · (1 + C X Cᵀ)`.
    SnrDb(f64),
}

/// Drives a SISO model with `u` plus innovations at the requested level.
pub fn simulate_with_snr(
    model: &StateSpaceModel,
    u: &[f64],
    level: NoiseLevel,
    seed: u64,
) -> Result<NoisyResponse, PlantError> {
    let zeros = vec![0.0; u.len()];
    let y_clean = simulate_siso(model, u, &zeros)?;
    let lambda = match level {
        NoiseLevel::Variance(v) => v,
        NoiseLevel::SnrDb(snr) => {
            let g = model.noise_gain_sq().ok_or(PlantError::NoiseGain)?;
            let mean = y_clean.iter().sum::<f64>() / y_clean.len().max(1) as f64;
            let var = y_clean.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / y_clean.len().max(1) as f64;
            var / (10f64.powf(snr / 10.0) * g)
        }
    };
    let e = gaussian_sequence(seed, u.len(), lambda);
    let noise_only = simulate_siso(model, &zeros, &e)?;
    let y = y_clean.iter().zip(&noise_only).map(|(a, b)| a + b).collect();
    Ok(NoisyResponse { y, y_clean, e, lambda })
}

/// Synthetic depth sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub name: String,
    pub sensor_id: u32,
    /// mm².
    pub noise_variance: f64,
    /// Hz.
    pub rate: f64,
    /// Startup transient, s.
    pub warmup_s: f64,
    /// Variance multiplier during the startup transient.
    pub warmup_scale: f64,
}

/// Measured noise floor of the Kinect Xbox, mm².
pub const XBOX_NOISE_VARIANCE: f64 = 22.7057;
/// Measured noise floor of the Kinect v2, mm².
pub const V2_NOISE_VARIANCE: f64 = 11.4707;
pub const DEFAULT_WARMUP_S: f64 = 30.0;
pub const DEFAULT_WARMUP_SCALE: f64 = 4.0;

impl SensorSpec {
    pub fn new(
        name: impl Into<String>,
        sensor_id: u32,
        noise_variance: f64,
        rate: f64,
        warmup_s: f64,
        warmup_scale: f64,
    ) -> Result<Self, PlantError> {
        let s = Self { name: name.into(), sensor_id, noise_variance, rate, warmup_s, warmup_scale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return Err(PlantError::BadSensor(format!("noise_variance must be > 0, got {}", self.noise_variance)));
        }
        if !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(PlantError::BadSensor(format!("rate must be > 0, got {}", self.rate)));
        }
        if !(self.warmup_s >= 0.0) || !self.warmup_s.is_finite() {
            return Err(PlantError::BadSensor(format!("warmup_s must be >= 0, got {}", self.warmup_s)));
        }
        if !(self.warmup_scale >= 1.0) || !self.warmup_scale.is_finite() {
            return Err(PlantError::BadSensor(format!("warmup_scale must be >= 1, got {}", self.warmup_scale)));
        }
        Ok(())
    }

    pub fn xbox() -> Self {
        Self {
            name: "xbox".into(),
            sensor_id: 1,
            noise_variance: XBOX_NOISE_VARIANCE,
            rate: 15.0,
            warmup_s: DEFAULT_WARMUP_S,
            warmup_scale: DEFAULT_WARMUP_SCALE,
        }
    }

    pub fn v2() -> Self {
        Self {
            name: "v2".into(),
            sensor_id: 2,
            noise_variance: V2_NOISE_VARIANCE,
            rate: 15.0,
            warmup_s: DEFAULT_WARMUP_S,
            warmup_scale: DEFAULT_WARMUP_SCALE,
        }
    }

    /// Copy with the startup transient switched off.
    pub fn without_warmup(&self) -> Self {
        Self { warmup_s: 0.0, warmup_scale: 1.0, ..self.clone() }
    }

    /// Noise variance in effect at time `t`.
    pub fn variance_at(&self, t: f64) -> f64 {
        if t < self.warmup_s {
            self.noise_variance * self.warmup_scale
        } else {
            self.noise_variance
        }
    }

    /// Number of samples in `[0, horizon)`.
    pub fn sample_count(&self, horizon: f64) -> usize {
        (horizon * self.rate - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub z: f64,
}

/// Samples `truth` at `j / rate` for `t < horizon` and adds Gaussian noise.
/// The noise variance is taken from the spec as is, so a zero variance (test
/// use only) returns the truth exactly.
pub fn sample_sensor(
    truth: &Trajectory,
    spec: &SensorSpec,
    horizon: f64,
    seed: u64,
) -> Result<Vec<Measurement>, PlantError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(PlantError::BadHorizon(horizon));
    }
    if !(spec.rate > 0.0) {
        return Err(PlantError::BadSensor(format!("rate must be > 0, got {}", spec.rate)));
    }
    let n = spec.sample_count(horizon);
    let mut rng = seed::rng(seed);
    Ok((0..n)
        .map(|j| {
            let t = j as f64 / spec.rate;
            let sd = spec.variance_at(t).max(0.0).sqrt();
            let w: f64 = rng.sample(StandardNormal);
            Measurement { t, z: truth.eval(t) + sd * w }
        })
        .collect())
}

/// Head-position reference or ground truth, mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Constant { value: f64 },
    /// `from` before `at`, `to` from `at` on.
    Step { from: f64, to: f64, at: f64 },
    /// `start` until `t0`, then rising at `slope` mm/s.
    Ramp { start: f64, slope: f64, t0: f64 },
    Sinusoid { offset: f64, amplitude: f64, period: f64, phase: f64 },
    /// Smooth raised-cosine lift from `base` to `base + lift` over
    /// `[start, start + duration]`.
    HeadRaise { base: f64, lift: f64, start: f64, duration: f64 },
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Trajectory::Constant { value } => value,
            Trajectory::Step { from, to, at } => {
                if t >= at {
                    to
                } else {
                    from
                }
            }
            Trajectory::Ramp { start, slope, t0 } => start + slope * (t - t0).max(0.0),
            Trajectory::Sinusoid { offset, amplitude, period, phase } => {
                offset + amplitude * (2.0 * std::f64::consts::PI * t / period + phase).sin()
            }
            Trajectory::HeadRaise { base, lift, start, duration } => {
                if t <= start {
                    base
                } else if duration <= 0.0 || t >= start + duration {
                    base + lift
                } else {
                    let s = (t - start) / duration;
                    base + lift * 0.5 * (1.0 - (std::f64::consts::PI * s).cos())
                }
            }
        }
    }
}

pub fn evaluate_trajectory(traj: &Trajectory, t: f64) -> f64 {
    traj.eval(t)
}
