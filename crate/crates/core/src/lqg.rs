//! LQ regulator and steady-state observer design, and closed-loop
//! simulation of the fused-sensing head positioner.
//!
//! The regulator minimises
//!
//! ```text
//! J = Σ_k x(k)ᵀ Q x(k) + 2 x(k)ᵀ N u(k) + u(k)ᵀ R u(k)
//! ```
//!
//! with `u = −Kopt x̂ + Nr r`. The observer is the predictor-form Kalman
//! filter `x̂' = A x̂ − Kobs (C x̂ − y) + B u`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::estimation::{LocalFilter, MeasurementModel, ProcessModel};
use crate::exec::Exec;
use crate::fusion::{fuse, LocalTrack};
use crate::linalg::{self, PbhReport};
use crate::plantsim::{Plant, PlantError, SensorSpec, StateSpaceModel, Trajectory};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqgError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: String, got: String },
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} must be positive semi-definite")]
    NotPsd(&'static str),
    #[error("{0} must be positive definite")]
    NotPd(&'static str),
    #[error(
        "Riccati iteration failed ({reason}); stabilizable: {} (failing modes {:?}), detectable: {} (failing modes {:?})",
        .stabilizable.passed, .stabilizable.failing, .detectable.passed, .detectable.failing
    )]
    NoConvergence { reason: String, stabilizable: PbhReport, detectable: PbhReport },
    #[error("{what} residual {residual:e} exceeds bound {bound:e}")]
    Residual { what: &'static str, residual: f64, bound: f64 },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("{which} loop is not Schur-stable (spectral radius {radius})")]
    Unstable { which: &'static str, radius: f64 },
    #[error("closed-loop DC gain is zero; the output cannot track a reference")]
    ZeroDcGain,
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid closed-loop configuration: {0}")]
    Config(String),
}

fn dims(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn expect(what: &'static str, m: &DMatrix<f64>, r: usize, c: usize) -> Result<(), LqgError> {
    if m.nrows() == r && m.ncols() == c {
        Ok(())
    } else {
        Err(LqgError::Dimension { what, expected: format!("{r}x{c}"), got: dims(m) })
    }
}

fn check_symmetric(what: &'static str, m: &DMatrix<f64>) -> Result<(), LqgError> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        Err(LqgError::NotSymmetric(what))
    } else {
        Ok(())
    }
}

/// Quadratic cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LqWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n: DMatrix<f64>,
}

impl LqWeights {
    /// `n = None` means the zero cross weight.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, n: Option<DMatrix<f64>>) -> Result<Self, LqgError> {
        let (nx, nu) = (q.nrows(), r.nrows());
        expect("Q", &q, nx, nx)?;
        expect("R", &r, nu, nu)?;
        let n = n.unwrap_or_else(|| DMatrix::zeros(nx, nu));
        expect("N", &n, nx, nu)?;
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        if !linalg::is_psd(&q, 1e-9) {
            return Err(LqgError::NotPsd("Q"));
        }
        if r.clone().cholesky().is_none() {
            return Err(LqgError::NotPd("R"));
        }
        Ok(Self { q, r, n })
    }

    /// `Q = q·I`, `R = r·I`, `N = 0`.
    pub fn diagonal(nx: usize, nu: usize, q: f64, r: f64) -> Result<Self, LqgError> {
        Self::new(DMatrix::identity(nx, nx) * q, DMatrix::identity(nu, nu) * r, None)
    }

    /// State weight 1.0566·I and input weight 0.058006 for the bladder plant.
    pub fn nominal() -> Self {
        Self::diagonal(2, 1, NOMINAL_Q, NOMINAL_R).expect("valid weights")
    }
}

pub const NOMINAL_Q: f64 = 1.0566;
pub const NOMINAL_R: f64 = 0.058006;
pub const NOMINAL_QE: f64 = 0.4511;
pub const NOMINAL_RE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DareMethod {
    Iteration,
    Doubling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub iterations: usize,
    pub method: DareMethod,
    pub residual: f64,
}

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 100_000;

fn riccati_terms(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    // returns (AᵀPB + N, (R + BᵀPB)⁻¹)
    let g = r + b.transpose() * p * b;
    let ginv = linalg::symmetrize(&g).try_inverse()?;
    Some((a.transpose() * p * b + n, ginv))
}

/// `‖AᵀPA − P − (AᵀPB+N)(R+BᵀPB)⁻¹(BᵀPA+Nᵀ) + Q‖_F`
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_terms(a, b, r, n, p) {
        Some((l, ginv)) => (a.transpose() * p * a - p - &l * ginv * l.transpose() + q).norm(),
        None => f64::INFINITY,
    }
}

fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let (l, ginv) = riccati_terms(a, b, r, n, p)?;
    Some(linalg::symmetrize(&(a.transpose() * p * a - &l * ginv * l.transpose() + q)))
}

/// One Newton-Kleinman step in correction form: solve the Lyapunov equation
/// of the loop closed with the gain implied by `p` for the update `ΔP`
/// driven by the residual, which keeps rounding relative to `ΔP` rather than
/// `P` when the closed loop is far from normal.
fn newton_correction(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let (l, ginv) = riccati_terms(a, b, r, n, p)?;
    let res = a.transpose() * p * a - p - &l * ginv * l.transpose() + q;
    let k = gain_from(a, b, r, n, p)?;
    let acl = a - b * &k;
    if linalg::spectral_radius(&acl) >= 1.0 {
        return None;
    }
    linalg::dlyap(&acl.transpose(), &linalg::symmetrize(&res))
}

fn gain_from(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let g = r + b.transpose() * p * b;
    let rhs = b.transpose() * p * a + n.transpose();
    g.lu().solve(&rhs)
}

/// Structured doubling on the cross-term-free form.
fn doubling(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, usize)> {
    let nx = a.nrows();
    let rinv = r.clone().try_inverse()?;
    let mut ak = a - b * &rinv * n.transpose();
    let mut gk = linalg::symmetrize(&(b * &rinv * b.transpose()));
    let mut hk = linalg::symmetrize(&(q - n * &rinv * n.transpose()));
    let eye = DMatrix::<f64>::identity(nx, nx);
    for it in 1..=100 {
        let w = (&eye + &gk * &hk).try_inverse()?;
        let a_next = &ak * &w * &ak;
        let g_next = linalg::symmetrize(&(&gk + &ak * &w * &gk * ak.transpose()));
        let h_next = linalg::symmetrize(&(&hk + ak.transpose() * &hk * &w * &ak));
        let scale = h_next.amax();
        if !(scale < 1e150) {
            return None;
        }
        let delta = (&h_next - &hk).amax();
        let scale = scale.max(f64::MIN_POSITIVE);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-14 * scale {
            return Some((hk, it));
        }
    }
    None
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Stabilizing solution of the discrete algebraic Riccati equation
///
/// ```text
/// P = AᵀPA − (AᵀPB + N)(R + BᵀPB)⁻¹(BᵀPA + Nᵀ) + Q
/// ```
///
/// by fixed-point iteration from `P₀ = Q` (Newton-polished), falling back to
/// structured doubling. `n = None` is the zero cross weight.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: Option<&DMatrix<f64>>,
) -> Result<DareSolution, LqgError> {
    let nx = a.nrows();
    let nu = b.ncols();
    expect("A", a, nx, nx)?;
    expect("B", b, nx, nu)?;
    expect("Q", q, nx, nx)?;
    expect("R", r, nu, nu)?;
    let zero = DMatrix::zeros(nx, nu);
    let n = n.unwrap_or(&zero);
    expect("N", n, nx, nu)?;
    check_symmetric("Q", q)?;
    check_symmetric("R", r)?;
    if r.clone().cholesky().is_none() {
        return Err(LqgError::NotPd("R"));
    }

    let mut p = linalg::symmetrize(q);
    let mut iterations = 0;
    let mut failure = None;
    let mut converged = false;
    while iterations < DARE_MAX_ITER {
        iterations += 1;
        let Some(next) = riccati_step(a, b, q, r, n, &p) else {
            failure = Some("singular R + BᵀPB".to_string());
            break;
        };
        if !next.iter().all(|v| v.is_finite()) {
            failure = Some("iterate diverged".to_string());
            break;
        }
        if !linalg::is_psd(&next, 1e-9) {
            failure = Some("indefinite iterate".to_string());
            break;
        }
        let delta = (&next - &p).amax();
        let scale = next.amax();
        if scale > 1e150 {
            failure = Some("iterate diverged".to_string());
            break;
        }
        p = next;
        if delta <= DARE_TOL * scale || scale == 0.0 {
            converged = true;
            break;
        }
    }
    let mut res = dare_residual(a, b, q, r, n, &p);
    if converged && !res.is_finite() {
        converged = false;
        failure = Some("non-finite residual".to_string());
    }
    if converged {
        // The residual bottoms out at rounding level before P does, so steps
        // are judged by the size of the correction; the residual only guards
        // against a step that makes things clearly worse.
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            let Some(dp) = newton_correction(a, b, q, r, n, &p) else { break };
            let size = dp.amax();
            if !(size < 0.5 * last) {
                break;
            }
            let pn = linalg::symmetrize(&(&p + dp));
            let rn = dare_residual(a, b, q, r, n, &pn);
            if !linalg::is_psd(&pn, 1e-9) || !(rn <= 10.0 * res.max(f64::EPSILON * pn.norm())) {
                break;
            }
            p = pn;
            res = rn;
            last = size;
            if size <= f64::EPSILON * p.amax() {
                break;
            }
        }
        return Ok(DareSolution { p, iterations, method: DareMethod::Iteration, residual: res });
    }
    let reason = failure.unwrap_or_else(|| format!("no convergence in {DARE_MAX_ITER} iterations"));
    if let Some((p, it)) = doubling(a, b, q, r, n) {
        let residual = dare_residual(a, b, q, r, n, &p);
        let stabilizing = gain_from(a, b, r, n, &p).is_some_and(|k| linalg::spectral_radius(&(a - b * k)) < 1.0);
        if linalg::is_psd(&p, 1e-9) && residual <= 1e-6 * (1.0 + p.norm()) && stabilizing {
            return Ok(DareSolution { p, iterations: iterations + it, method: DareMethod::Doubling, residual });
        }
    }
    Err(LqgError::NoConvergence {
        reason,
        stabilizable: linalg::stabilizable(a, b),
        detectable: linalg::detectable(a, &sqrt_psd(q)),
    })
}

/// Discrete regulator gain `Kopt = (R + BᵀPB)⁻¹(BᵀPA + Nᵀ)`.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, LqgError> {
    let zero = DMatrix::zeros(a.nrows(), b.ncols());
    gain_from(a, b, r, n.unwrap_or(&zero), p).ok_or(LqgError::Singular("R + BᵀPB"))
}

/// Steady-state observer gain `Kobs = AΣCᵀ(CΣCᵀ + Re)⁻¹` from the filter
/// Riccati equation. Returns the gain and the filter solution `Σ`.
pub fn observer_gain(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qe: &DMatrix<f64>,
    re: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DareSolution), LqgError> {
    if !linalg::is_psd(qe, 1e-9) {
        return Err(LqgError::NotPsd("Qe"));
    }
    let sol = solve_dare(&a.transpose(), &c.transpose(), qe, re, None)?;
    let s = &sol.p;
    let den = c * s * c.transpose() + re;
    let k = den
        .lu()
        .solve(&(c * s * a.transpose()))
        .ok_or(LqgError::Singular("C Σ Cᵀ + Re"))?
        .transpose();
    Ok((k, sol))
}

/// `x̂' = A x̂ − Kobs (C x̂ − y) + B u`
pub fn observer_step(
    model: &StateSpaceModel,
    kobs: &DMatrix<f64>,
    xhat: &DVector<f64>,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    &model.a * xhat - kobs * (&model.c * xhat - y) + &model.b * u
}

/// Reference gain making the DC gain from `r` to `y` the identity:
/// `Nr = (C (I − A + B Kopt)⁻¹ B)⁻¹`.
pub fn reference_feedforward(model: &StateSpaceModel, kopt: &DMatrix<f64>) -> Result<DMatrix<f64>, LqgError> {
    let n = model.n();
    let m = DMatrix::identity(n, n) - &model.a + &model.b * kopt;
    let inv = m.try_inverse().ok_or(LqgError::Singular("I − A + B Kopt"))?;
    let dc = &model.c * inv * &model.b;
    if dc.nrows() != dc.ncols() {
        return Err(LqgError::Dimension { what: "DC gain", expected: "square".into(), got: dims(&dc) });
    }
    if dc.iter().all(|v| *v == 0.0) {
        return Err(LqgError::ZeroDcGain);
    }
    dc.try_inverse().ok_or(LqgError::ZeroDcGain)
}

/// Complete LQG controller with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgDesign {
    pub weights: LqWeights,
    pub qe: DMatrix<f64>,
    pub re: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub kopt: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub kobs: DMatrix<f64>,
    pub nr: DMatrix<f64>,
    pub regulator_residual: f64,
    pub observer_residual: f64,
    pub regulator_method: DareMethod,
    pub observer_method: DareMethod,
    pub rho_regulator: f64,
    pub rho_observer: f64,
}

fn residual_bound(p: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + p.norm())
}

/// Designs regulator, observer and reference gain, rejecting models that
/// fail the PBH checks and designs that miss the residual or stability
/// requirements.
pub fn design(
    model: &StateSpaceModel,
    weights: &LqWeights,
    qe: &DMatrix<f64>,
    re: &DMatrix<f64>,
) -> Result<LqgDesign, LqgError> {
    model.check_control_ready()?;
    let (n, m, p) = (model.n(), model.m(), model.p());
    expect("Q", &weights.q, n, n)?;
    expect("R", &weights.r, m, m)?;
    expect("Qe", qe, n, n)?;
    expect("Re", re, p, p)?;
    let reg = solve_dare(&model.a, &model.b, &weights.q, &weights.r, Some(&weights.n))?;
    let bound = residual_bound(&reg.p);
    if !(reg.residual < bound) {
        return Err(LqgError::Residual { what: "regulator DARE", residual: reg.residual, bound });
    }
    let kopt = lqr_gain(&model.a, &model.b, &reg.p, &weights.r, Some(&weights.n))?;
    let (kobs, obs) = observer_gain(&model.a, &model.c, qe, re)?;
    let bound = residual_bound(&obs.p);
    if !(obs.residual < bound) {
        return Err(LqgError::Residual { what: "observer DARE", residual: obs.residual, bound });
    }
    let rho_regulator = linalg::spectral_radius(&(&model.a - &model.b * &kopt));
    let rho_observer = linalg::spectral_radius(&(&model.a - &kobs * &model.c));
    if !(rho_regulator < 1.0) {
        return Err(LqgError::Unstable { which: "regulator", radius: rho_regulator });
    }
    if !(rho_observer < 1.0) {
        return Err(LqgError::Unstable { which: "observer", radius: rho_observer });
    }
    let nr = reference_feedforward(model, &kopt)?;
    Ok(LqgDesign {
        weights: weights.clone(),
        qe: qe.clone(),
        re: re.clone(),
        p: reg.p,
        kopt,
        sigma: obs.p,
        kobs,
        nr,
        regulator_residual: reg.residual,
        observer_residual: obs.residual,
        regulator_method: reg.method,
        observer_method: obs.method,
        rho_regulator,
        rho_observer,
    })
}

/// Plant-plus-observer matrix in `(x, x̂)` coordinates:
/// `[[A, −B K], [L C, A − L C − B K]]`.
pub fn augmented_closed_loop(model: &StateSpaceModel, d: &LqgDesign) -> DMatrix<f64> {
    let n = model.n();
    let bk = &model.b * &d.kopt;
    let lc = &d.kobs * &model.c;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&model.a);
    m.view_mut((0, n), (n, n)).copy_from(&(-&bk));
    m.view_mut((n, 0), (n, n)).copy_from(&lc);
    m.view_mut((n, n), (n, n)).copy_from(&(&model.a - &lc - &bk));
    m
}

/// Sensor chain used inside the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSensor {
    pub spec: SensorSpec,
    /// Measurement variance assumed by the local Kalman filter, mm².
    pub filter_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub horizon_s: f64,
    pub reference: Trajectory,
    pub sensors: Vec<LoopSensor>,
    /// Motion model of the local filters; its interval is replaced by the
    /// plant sample period.
    pub process: ProcessModel,
    /// Variance of the plant innovations e(k).
    pub innovation_variance: f64,
    /// Symmetric actuator clip; `None` leaves `u` unbounded.
    pub u_limit: Option<f64>,
    /// Zero all sensor and plant noise.
    pub noiseless: bool,
    pub seed: u64,
}

/// Per-tick record of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_meas: Vec<f64>,
    /// One vector per tick.
    pub xhat: Vec<Vec<f64>>,
    pub u: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Runs the loop: sensors → local filters → fusion → observer → regulator →
/// plant, one tick per plant sample.
pub fn closed_loop(model: &StateSpaceModel, d: &LqgDesign, cfg: &ClosedLoopConfig) -> Result<Trace, LqgError> {
    if model.m() != 1 || model.p() != 1 {
        return Err(LqgError::Config("closed-loop simulation supports SISO plants only".into()));
    }
    for (which, radius) in [("regulator", d.rho_regulator), ("observer", d.rho_observer)] {
        if !(radius < 1.0) {
            return Err(LqgError::Unstable { which, radius });
        }
    }
    if !(cfg.horizon_s > 0.0) || !cfg.horizon_s.is_finite() {
        return Err(LqgError::Config(format!("horizon must be positive, got {}", cfg.horizon_s)));
    }
    if cfg.sensors.is_empty() {
        return Err(LqgError::Config("at least one sensor is required".into()));
    }
    let ts = model.ts;
    let steps = (cfg.horizon_s / ts - 1e-9).ceil() as usize;
    let process = ProcessModel::new(ts, cfg.process.sigma_a).map_err(|e| LqgError::Config(e.to_string()))?;
    let mut filters = Vec::with_capacity(cfg.sensors.len());
    let mut rngs = Vec::with_capacity(cfg.sensors.len());
    for s in &cfg.sensors {
        let meas = MeasurementModel::new(s.filter_variance, s.spec.sensor_id).map_err(|e| LqgError::Config(e.to_string()))?;
        filters.push(LocalFilter::new(process, meas));
        rngs.push(seed::rng(seed::derive(cfg.seed, &format!("closedloop/sensor/{}", s.spec.name))));
    }
    let mut e_rng = seed::rng(seed::derive(cfg.seed, "closedloop/innovation"));
    let lambda_sd = if cfg.noiseless { 0.0 } else { cfg.innovation_variance.max(0.0).sqrt() };

    let n = model.n();
    let mut plant = Plant::new(model.clone(), DVector::zeros(n))?;
    let mut xhat = DVector::zeros(n);
    let mut tr = Trace::default();
    let nr = d.nr[(0, 0)];
    for k in 0..steps {
        let t = k as f64 * ts;
        let r = cfg.reference.eval(t);
        let mut u = nr * r - (&d.kopt * &xhat)[0];
        if let Some(lim) = cfg.u_limit {
            u = u.clamp(-lim, lim);
        }
        let e = lambda_sd * e_rng.sample::<f64, _>(StandardNormal);
        let uv = DVector::from_element(1, u);
        let ev = DVector::from_element(1, e);
        let y_true = plant.output(&uv, &ev)[0];

        let mut tracks = Vec::with_capacity(filters.len());
        for ((f, s), rng) in filters.iter_mut().zip(&cfg.sensors).zip(&mut rngs) {
            let w: f64 = rng.sample(StandardNormal);
            let sd = if cfg.noiseless { 0.0 } else { s.spec.variance_at(t).sqrt() };
            if let Some(step) = f.step(t, Some(y_true + sd * w)) {
                tracks.push(LocalTrack::new(s.spec.sensor_id, k as u64, step.state, step.cov));
            }
        }
        let fused = fuse(&tracks).map_err(|e| LqgError::Config(e.to_string()))?;
        let y_meas = fused.state.d;

        tr.t.push(t);
        tr.r.push(r);
        tr.y_true.push(y_true);
        tr.y_meas.push(y_meas);
        tr.xhat.push(xhat.iter().copied().collect());
        tr.u.push(u);

        xhat = observer_step(model, &d.kobs, &xhat, &DVector::from_element(1, y_meas), &uv);
        plant.step(&uv, &ev);
    }
    Ok(tr)
}

/// Step-tracking figures of merit for `y_true − r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingMetrics {
    /// Tolerance band half-width, mm.
    pub band: f64,
    /// Time the error must stay inside the band to count as settled, s.
    pub dwell: f64,
    pub settled: bool,
    /// From the reference step to the start of the first dwell window spent
    /// inside the band, s. NaN if the output never settles.
    pub settling_time: f64,
    /// Largest excursion beyond the final reference in the step direction,
    /// mm, never negative.
    pub overshoot: f64,
    /// Statistics of the error after settling (last half of the run if the
    /// output never settles).
    pub ss_mean: f64,
    pub ss_std: f64,
    pub ss_p95_abs: f64,
    pub ss_max_abs: f64,
}

impl TrackingMetrics {
    pub fn compute(trace: &Trace, band: f64, dwell: f64) -> Self {
        let n = trace.len();
        let nan = f64::NAN;
        if n == 0 {
            return Self {
                band,
                dwell,
                settled: false,
                settling_time: nan,
                overshoot: nan,
                ss_mean: nan,
                ss_std: nan,
                ss_p95_abs: nan,
                ss_max_abs: nan,
            };
        }
        let err: Vec<f64> = trace.y_true.iter().zip(&trace.r).map(|(y, r)| y - r).collect();
        let r_end = *trace.r.last().unwrap();
        let i_step = trace.r.iter().position(|&r| r != trace.r[0]).unwrap_or(0);
        let t_step = trace.t[i_step];
        let dir = (r_end - trace.y_true[0]).signum();
        let overshoot = trace.y_true[i_step..]
            .iter()
            .map(|y| if dir == 0.0 { (y - r_end).abs() } else { dir * (y - r_end) })
            .fold(0.0f64, f64::max);

        let t_end = *trace.t.last().unwrap();
        let mut settle = None;
        // scan backwards: run[i] = first index after i that leaves the band
        let mut next_out = n;
        let mut first_out_after = vec![n; n];
        for i in (0..n).rev() {
            if err[i].abs() > band {
                next_out = i;
            }
            first_out_after[i] = next_out;
        }
        for (i, &stop) in first_out_after.iter().enumerate().skip(i_step) {
            if trace.t[i] + dwell > t_end + 1e-9 {
                break;
            }
            if stop == n || trace.t[stop] > trace.t[i] + dwell + 1e-9 {
                settle = Some(i);
                break;
            }
        }
        let ss_start = settle.unwrap_or(n / 2);
        let ss = &err[ss_start..];
        let m = ss.len() as f64;
        let mean = ss.iter().sum::<f64>() / m;
        let std = (ss.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        let mut abs: Vec<f64> = ss.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| a.total_cmp(b));
        let p95 = abs[((0.95 * (abs.len() - 1) as f64).round() as usize).min(abs.len() - 1)];
        Self {
            band,
            dwell,
            settled: settle.is_some(),
            settling_time: settle.map_or(nan, |i| trace.t[i] - t_step),
            overshoot,
            ss_mean: mean,
            ss_std: std,
            ss_p95_abs: p95,
            ss_max_abs: *abs.last().unwrap(),
        }
    }
}

/// Tracking band, mm.
pub const TRACKING_BAND: f64 = 2.0;
/// Dwell inside the band that counts as settled, s.
pub const SETTLING_DWELL: f64 = 10.0;

/// Runs `closed_loop` for each seed and returns the metrics in seed order.
pub fn monte_carlo(
    model: &StateSpaceModel,
    d: &LqgDesign,
    cfg: &ClosedLoopConfig,
    seeds: &[u64],
    exec: Exec,
) -> Vec<Result<TrackingMetrics, LqgError>> {
    exec.map(seeds, |&s| {
        let c = ClosedLoopConfig { seed: s, ..cfg.clone() };
        closed_loop(model, d, &c).map(|t| TrackingMetrics::compute(&t, TRACKING_BAND, SETTLING_DWELL))
    })
}

/// Finite-horizon quadratic cost of `u = −K x` from `x0`, noise free.
pub fn finite_horizon_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &LqWeights,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let mut x = x0.clone();
    let mut j = 0.0;
    for _ in 0..horizon {
        let u = -(k * &x);
        j += (x.transpose() * &w.q * &x)[0] + 2.0 * (x.transpose() * &w.n * &u)[0] + (u.transpose() * &w.r * &u)[0];
        x = a * &x + b * &u;
        if !j.is_finite() {
            return f64::INFINITY;
        }
    }
    j
}
