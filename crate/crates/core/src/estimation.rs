//! Constant-velocity Kalman filter for scalar depth measurements.
//!
//! State is `[d, v]` (position in mm, velocity in mm/s). The process model
//! is a white random acceleration with standard deviation `sigma_a`, the
//! measurement is position only (`H = [1 0]`). All 2×2 algebra is written
//! out in closed form.

use nalgebra::Matrix2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("sample interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("acceleration deviation must be non-negative and finite, got {0}")]
    BadAcceleration(f64),
    #[error("measurement variance must be positive and finite, got {0}")]
    BadMeasurementVariance(f64),
    #[error("non-finite measurement {0}; frame dropped")]
    NonFiniteMeasurement(f64),
    #[error("empty measurement sequence")]
    Empty,
}

/// Head distance/velocity estimate at step `k`, wall time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    /// Position, mm.
    pub d: f64,
    /// Velocity, mm/s.
    pub v: f64,
    pub k: u64,
    /// Seconds.
    pub t: f64,
}

impl KinematicState {
    pub fn new(d: f64, v: f64, k: u64, t: f64) -> Self {
        Self { d, v, k, t }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.v.is_finite() && self.t.is_finite()
    }
}

/// Symmetric 2×2 covariance, upper triangle only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Covariance2 {
    pub p11: f64,
    pub p12: f64,
    pub p22: f64,
}

impl Covariance2 {
    pub const ZERO: Covariance2 = Covariance2 { p11: 0.0, p12: 0.0, p22: 0.0 };

    pub fn new(p11: f64, p12: f64, p22: f64) -> Self {
        Self { p11, p12, p22 }
    }

    pub fn diag(p11: f64, p22: f64) -> Self {
        Self { p11, p12: 0.0, p22 }
    }

    pub fn det(&self) -> f64 {
        self.p11 * self.p22 - self.p12 * self.p12
    }

    pub fn trace(&self) -> f64 {
        self.p11 + self.p22
    }

    /// Largest absolute entry.
    pub fn scale(&self) -> f64 {
        self.p11.abs().max(self.p12.abs()).max(self.p22.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.p11.is_finite() && self.p12.is_finite() && self.p22.is_finite()
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.p11 + self.p22);
        let h = 0.5 * (self.p11 - self.p22);
        let r = (h * h + self.p12 * self.p12).sqrt();
        (m - r, m + r)
    }

    /// PSD check with tolerance `rel_tol` of the matrix scale on the
    /// diagonal and on the determinant.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let s = self.scale();
        self.is_finite()
            && self.p11 >= -rel_tol * s
            && self.p22 >= -rel_tol * s
            && self.det() >= -rel_tol * s * s
    }

    pub fn inverse(&self) -> Option<Covariance2> {
        let det = self.det();
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        Some(Covariance2::new(self.p22 / det, -self.p12 / det, self.p11 / det))
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.p11, self.p12, self.p12, self.p22)
    }

    /// Symmetrises `(M + Mᵀ)/2` on the way in.
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self {
            p11: m[(0, 0)],
            p12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            p22: m[(1, 1)],
        }
    }

    pub fn sub(&self, o: &Covariance2) -> Covariance2 {
        Covariance2::new(self.p11 - o.p11, self.p12 - o.p12, self.p22 - o.p22)
    }

    pub fn add(&self, o: &Covariance2) -> Covariance2 {
        Covariance2::new(self.p11 + o.p11, self.p12 + o.p12, self.p22 + o.p22)
    }

    pub fn scaled(&self, s: f64) -> Covariance2 {
        Covariance2::new(self.p11 * s, self.p12 * s, self.p22 * s)
    }

    /// `P · [a, b]ᵀ`
    pub fn mul_vec(&self, a: f64, b: f64) -> (f64, f64) {
        (self.p11 * a + self.p12 * b, self.p12 * a + self.p22 * b)
    }
}

/// Random-acceleration motion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessModel {
    /// Sample interval ΔT, s.
    pub dt: f64,
    /// Acceleration standard deviation, mm/s².
    pub sigma_a: f64,
}

/// Nominal vision frame interval, s.
pub const FRAME_INTERVAL: f64 = 1.0 / 15.0;
/// Acceleration variance σ_a², mm²/s⁴.
pub const ACCEL_VARIANCE: f64 = 2000.0;
/// Measurement variance assumed by the Kinect Xbox filter, mm².
pub const XBOX_FILTER_VARIANCE: f64 = 70.0;
/// Measurement variance assumed by the Kinect v2 filter, mm².
pub const V2_FILTER_VARIANCE: f64 = 60.0;

impl ProcessModel {
    pub fn new(dt: f64, sigma_a: f64) -> Result<Self, EstimationError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(EstimationError::BadInterval(dt));
        }
        if !(sigma_a >= 0.0) || !sigma_a.is_finite() {
            return Err(EstimationError::BadAcceleration(sigma_a));
        }
        Ok(Self { dt, sigma_a })
    }

    pub fn from_accel_variance(dt: f64, variance: f64) -> Result<Self, EstimationError> {
        if !(variance >= 0.0) {
            return Err(EstimationError::BadAcceleration(variance));
        }
        Self::new(dt, variance.sqrt())
    }

    /// 15 Hz frames, σ_a² = 2000.
    pub fn nominal() -> Self {
        Self { dt: FRAME_INTERVAL, sigma_a: ACCEL_VARIANCE.sqrt() }
    }

    /// Same acceleration model over an arbitrary interval `dt ≥ 0`. Used for
    /// propagating estimates to a common time, where a zero step is legal.
    pub fn over(&self, dt: f64) -> ProcessModel {
        debug_assert!(dt >= 0.0);
        ProcessModel { dt, sigma_a: self.sigma_a }
    }
}

/// Scalar position sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementModel {
    /// Noise variance, mm².
    pub r: f64,
    pub sensor_id: u32,
}

impl MeasurementModel {
    pub fn new(r: f64, sensor_id: u32) -> Result<Self, EstimationError> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(EstimationError::BadMeasurementVariance(r));
        }
        Ok(Self { r, sensor_id })
    }
}

/// `F = [[1, ΔT], [0, 1]]`
pub fn transition_matrix(model: &ProcessModel) -> Matrix2<f64> {
    Matrix2::new(1.0, model.dt, 0.0, 1.0)
}

/// `Q = σ_a² · W Wᵀ` with `W = [ΔT²/2, ΔT]ᵀ`.
pub fn process_noise(model: &ProcessModel) -> Covariance2 {
    let dt = model.dt;
    let s2 = model.sigma_a * model.sigma_a;
    let w1 = 0.5 * dt * dt;
    let w2 = dt;
    Covariance2::new(s2 * w1 * w1, s2 * w1 * w2, s2 * w2 * w2)
}

/// Time update: `x⁻ = F x`, `P⁻ = F P Fᵀ + Q`. Advances `k` by one and `t`
/// by `ΔT`.
pub fn predict(
    state: &KinematicState,
    cov: &Covariance2,
    model: &ProcessModel,
) -> (KinematicState, Covariance2) {
    let dt = model.dt;
    let q = process_noise(model);
    let x = KinematicState {
        d: state.d + dt * state.v,
        v: state.v,
        k: state.k + 1,
        t: state.t + dt,
    };
    let p = Covariance2 {
        p11: cov.p11 + 2.0 * dt * cov.p12 + dt * dt * cov.p22 + q.p11,
        p12: cov.p12 + dt * cov.p22 + q.p12,
        p22: cov.p22 + q.p22,
    };
    (x, p)
}

/// Measurement update with `H = [1 0]`. Returns the posterior and the
/// innovation `z − d⁻`.
pub fn update(
    state: &KinematicState,
    cov: &Covariance2,
    z: f64,
    meas: &MeasurementModel,
) -> Result<(KinematicState, Covariance2, f64), EstimationError> {
    if !z.is_finite() {
        return Err(EstimationError::NonFiniteMeasurement(z));
    }
    let s = cov.p11 + meas.r;
    let k1 = cov.p11 / s;
    let k2 = cov.p12 / s;
    let innovation = z - state.d;
    let x = KinematicState {
        d: state.d + k1 * innovation,
        v: state.v + k2 * innovation,
        ..*state
    };
    // (I − K H) P⁻, written out; the result is symmetric by construction.
    let p = Covariance2 {
        p11: cov.p11 - k1 * cov.p11,
        p12: cov.p12 - k1 * cov.p12,
        p22: cov.p22 - k2 * cov.p12,
    };
    Ok((x, p, innovation))
}

/// Prior anchored on the first sample: `x0 = [z0, 0]`,
/// `P0 = diag(r, (2 σ_a ΔT)²)`.
pub fn initial_estimate(
    z0: f64,
    t0: f64,
    process: &ProcessModel,
    meas: &MeasurementModel,
) -> (KinematicState, Covariance2) {
    let vel_sd = 2.0 * process.sigma_a * process.dt;
    (
        KinematicState::new(z0, 0.0, 0, t0),
        Covariance2::diag(meas.r, vel_sd * vel_sd),
    )
}

/// One filter output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    pub state: KinematicState,
    pub cov: Covariance2,
    /// `None` when the sample was dropped and only a prediction was made.
    pub innovation: Option<f64>,
}

/// Runs the filter over `z`. The first sample is an update of the supplied
/// prior; every later sample is predict-then-update. Non-finite samples are
/// treated as dropped frames and get a prediction-only step.
pub fn filter_sequence(
    z: &[f64],
    process: &ProcessModel,
    meas: &MeasurementModel,
    x0: KinematicState,
    p0: Covariance2,
) -> Result<Vec<FilterStep>, EstimationError> {
    if z.is_empty() {
        return Err(EstimationError::Empty);
    }
    let mut out = Vec::with_capacity(z.len());
    let (mut x, mut p) = (x0, p0);
    for (i, &zi) in z.iter().enumerate() {
        if i > 0 {
            (x, p) = predict(&x, &p, process);
        }
        let innovation = match update(&x, &p, zi, meas) {
            Ok((xu, pu, nu)) => {
                (x, p) = (xu, pu);
                Some(nu)
            }
            Err(EstimationError::NonFiniteMeasurement(_)) => None,
            Err(e) => return Err(e),
        };
        out.push(FilterStep { state: x, cov: p, innovation });
    }
    Ok(out)
}

/// Streaming wrapper around [`predict`]/[`update`] for one sensor site.
///
/// The first finite sample initialises the filter via
/// [`initial_estimate`]; samples before that produce nothing.
#[derive(Debug, Clone)]
pub struct LocalFilter {
    pub process: ProcessModel,
    pub meas: MeasurementModel,
    current: Option<(KinematicState, Covariance2)>,
}

impl LocalFilter {
    pub fn new(process: ProcessModel, meas: MeasurementModel) -> Self {
        Self { process, meas, current: None }
    }

    pub fn estimate(&self) -> Option<(KinematicState, Covariance2)> {
        self.current
    }

    /// Consumes the sample taken at time `t` (one frame after the previous
    /// call). `None` or a non-finite value is a dropped frame.
    pub fn step(&mut self, t: f64, z: Option<f64>) -> Option<FilterStep> {
        let z = z.filter(|v| v.is_finite());
        match (self.current, z) {
            (None, None) => None,
            (None, Some(z0)) => {
                let (x0, p0) = initial_estimate(z0, t, &self.process, &self.meas);
                let (x, p, nu) = update(&x0, &p0, z0, &self.meas).ok()?;
                self.current = Some((x, p));
                Some(FilterStep { state: x, cov: p, innovation: Some(nu) })
            }
            (Some((x, p)), z) => {
                let (mut xp, mut pp) = predict(&x, &p, &self.process);
                xp.t = t;
                let mut innovation = None;
                if let Some(z) = z {
                    if let Ok((xu, pu, nu)) = update(&xp, &pp, z, &self.meas) {
                        (xp, pp) = (xu, pu);
                        innovation = Some(nu);
                    }
                }
                self.current = Some((xp, pp));
                Some(FilterStep { state: xp, cov: pp, innovation })
            }
        }
    }
}
