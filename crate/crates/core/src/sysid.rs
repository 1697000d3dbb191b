//! Prediction-error identification.
//!
//! - [`design_input`]: held uniform white excitation.
//! - [`estimate_armax`]: ARMAX by pseudo-linear regression followed by
//!   Gauss-Newton on the one-step prediction-error cost.
//! - [`realize_statespace`]: subspace realization of an innovations model
//!   (past/future block-Hankel regression, SVD truncation, state regression),
//!   optionally refined by prediction-error minimisation.
//! - [`order_sweep`]: per-order fit table with MSE, fit and FPE on the train
//!   and test partitions.
//!
//! Polynomial convention, in the backward shift `q⁻¹`:
//!
//! ```text
//! A(q) y(k) = B(q) u(k) + C(q) e(k)
//! A = 1 + a1 q⁻¹ + … ,  B = b1 q⁻¹ + … ,  C = 1 + c1 q⁻¹ + …
//! ```

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::linalg;
use crate::lqg;
use crate::plantsim::StateSpaceModel;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysIdError {
    #[error("invalid dataset: {0}")]
    BadDataset(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("not enough data: need at least {needed} samples, have {got}")]
    TooShort { needed: usize, got: usize },
    #[error("regressor is rank deficient (insufficient excitation) in columns {columns:?}")]
    RankDeficient { columns: Vec<String> },
    #[error("noise model C(q) is not invertible (roots {roots:?})")]
    UnstableNoiseModel { roots: Vec<Complex<f64>> },
    #[error("order {order} exceeds the numerical rank of the data (sigma_n/sigma_1 = {ratio:e}); try a lower order")]
    OrderExceedsRank { order: usize, ratio: f64 },
    #[error("invalid order: {0}")]
    BadOrder(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Input/output record with a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct IdDataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub ts: f64,
    /// Fraction of samples in the training partition.
    pub split: f64,
}

impl IdDataset {
    pub fn new(u: Vec<f64>, y: Vec<f64>, ts: f64, split: f64) -> Result<Self, SysIdError> {
        if u.len() != y.len() {
            return Err(SysIdError::LengthMismatch(u.len(), y.len()));
        }
        if u.len() < 10 {
            return Err(SysIdError::TooShort { needed: 10, got: u.len() });
        }
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(SysIdError::BadDataset(format!("sample period must be positive, got {ts}")));
        }
        if !(split > 0.0 && split < 1.0) {
            return Err(SysIdError::BadDataset(format!("split must lie in (0, 1), got {split}")));
        }
        if u.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(SysIdError::BadDataset("non-finite sample".into()));
        }
        Ok(Self { u, y, ts, split })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_train(&self) -> usize {
        ((self.len() as f64) * self.split).round() as usize
    }

    pub fn train(&self) -> (&[f64], &[f64]) {
        let n = self.n_train();
        (&self.u[..n], &self.y[..n])
    }

    pub fn test(&self) -> (&[f64], &[f64]) {
        let n = self.n_train();
        (&self.u[n..], &self.y[n..])
    }
}

/// Uniform white excitation on `[−A, A]`, each level held for `hold`
/// samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSignalSpec {
    pub amplitude: f64,
    pub length: usize,
    pub seed: u64,
    pub hold: usize,
}

pub fn design_input(spec: &InputSignalSpec) -> Vec<f64> {
    let hold = spec.hold.max(1);
    let mut rng = seed::rng(spec.seed);
    let mut out = Vec::with_capacity(spec.length);
    while out.len() < spec.length {
        let level = rng.gen_range(-spec.amplitude..=spec.amplitude);
        let take = hold.min(spec.length - out.len());
        out.extend(std::iter::repeat_n(level, take));
    }
    out
}

/// Peak over RMS.
pub fn crest_factor(u: &[f64]) -> f64 {
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / u.len().max(1) as f64).sqrt();
    if rms == 0.0 {
        f64::NAN
    } else {
        peak / rms
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaxModel {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Innovation variance estimate.
    pub lambda: f64,
}

impl ArmaxModel {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Self {
        Self { a, b, c, lambda: 0.0 }
    }

    pub fn max_lag(&self) -> usize {
        self.a.len().max(self.b.len()).max(self.c.len())
    }

    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len()
    }

    /// Roots of `z^nc C(z⁻¹)`.
    pub fn c_roots(&self) -> Vec<Complex<f64>> {
        linalg::monic_roots(&self.c)
    }

    pub fn c_is_stable(&self) -> bool {
        self.c_roots().iter().all(|r| r.norm() < 1.0)
    }

    fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_params(), self.a.iter().chain(&self.b).chain(&self.c).copied())
    }

    fn with_theta(&self, th: &DVector<f64>) -> Self {
        let (na, nb) = (self.a.len(), self.b.len());
        Self {
            a: th.rows(0, na).iter().copied().collect(),
            b: th.rows(na, nb).iter().copied().collect(),
            c: th.rows(na + nb, self.c.len()).iter().copied().collect(),
            lambda: self.lambda,
        }
    }

    /// Innovations state-space form in observability-canonical coordinates
    /// (`C = [1 0 … 0]`). The order is the maximum polynomial degree.
    pub fn to_statespace(&self, ts: f64) -> Result<StateSpaceModel, SysIdError> {
        let n = self.max_lag();
        if n == 0 {
            return Err(SysIdError::BadOrder("static model has no state".into()));
        }
        let coef = |v: &[f64], i: usize| if i < v.len() { v[i] } else { 0.0 };
        let a: Vec<f64> = (0..n).map(|i| coef(&self.a, i)).collect();
        // K path numerator is C(q) − A(q).
        let kn: Vec<f64> = (0..n).map(|i| coef(&self.c, i) - a[i]).collect();
        let bn: Vec<f64> = (0..n).map(|i| coef(&self.b, i)).collect();
        let markov = |num: &[f64]| -> Vec<f64> {
            let mut h = vec![0.0; n];
            for k in 0..n {
                h[k] = num[k] - (0..k).map(|i| a[i] * h[k - 1 - i]).sum::<f64>();
            }
            h
        };
        let mut am = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            am[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            am[(n - 1, j)] = -a[n - 1 - j];
        }
        let mut cm = DMatrix::zeros(1, n);
        cm[(0, 0)] = 1.0;
        StateSpaceModel::new(
            am,
            DMatrix::from_vec(n, 1, markov(&bn)),
            cm,
            DMatrix::zeros(1, 1),
            DMatrix::from_vec(n, 1, markov(&kn)),
            ts,
        )
        .map_err(|e| SysIdError::Numerical(e.to_string()))
    }
}

/// ARMAX(n, n, n) polynomials of a SISO innovations model.
pub fn statespace_to_armax(model: &StateSpaceModel) -> Result<ArmaxModel, SysIdError> {
    let n = model.n();
    if model.m() != 1 || model.p() != 1 {
        return Err(SysIdError::BadOrder("only SISO models convert to ARMAX".into()));
    }
    let roots = linalg::eigenvalues(&model.a).ok_or_else(|| SysIdError::Numerical("eigenvalues of A".into()))?;
    let a = linalg::monic_from_roots(&roots);
    let mut hb = Vec::with_capacity(n);
    let mut hk = Vec::with_capacity(n);
    let mut ak = DMatrix::identity(n, n);
    for _ in 0..n {
        hb.push((&model.c * &ak * &model.b)[(0, 0)]);
        hk.push((&model.c * &ak * &model.k)[(0, 0)]);
        ak = &model.a * ak;
    }
    let num = |h: &[f64]| -> Vec<f64> {
        (0..n).map(|k| h[k] + (0..k).map(|i| a[i] * h[k - 1 - i]).sum::<f64>()).collect()
    };
    let b = num(&hb);
    let c = num(&hk).iter().zip(&a).map(|(m, ai)| m + ai).collect();
    Ok(ArmaxModel { a, b, c, lambda: 0.0 })
}

fn lag(v: &[f64], k: usize, i: usize) -> f64 {
    if k >= i {
        v[k - i]
    } else {
        0.0
    }
}

/// Residuals of the pseudo-linear predictor without stability checks.
fn armax_residuals(m: &ArmaxModel, u: &[f64], y: &[f64]) -> Vec<f64> {
    let mut eps = vec![0.0; y.len()];
    for k in 0..y.len() {
        let mut yh = 0.0;
        for (i, ai) in m.a.iter().enumerate() {
            yh -= ai * lag(y, k, i + 1);
        }
        for (i, bi) in m.b.iter().enumerate() {
            yh += bi * lag(u, k, i + 1);
        }
        for (i, ci) in m.c.iter().enumerate() {
            yh += ci * lag(&eps, k, i + 1);
        }
        eps[k] = y[k] - yh;
    }
    eps
}

/// One-step-ahead predictions of `y` from the past of `y` and `u`, zero
/// initial conditions.
pub fn predict_armax_series(m: &ArmaxModel, u: &[f64], y: &[f64]) -> Result<Vec<f64>, SysIdError> {
    if u.len() != y.len() {
        return Err(SysIdError::LengthMismatch(u.len(), y.len()));
    }
    if y.len() <= m.max_lag() {
        return Err(SysIdError::TooShort { needed: m.max_lag() + 1, got: y.len() });
    }
    if !m.c_is_stable() {
        return Err(SysIdError::UnstableNoiseModel { roots: m.c_roots() });
    }
    let eps = armax_residuals(m, u, y);
    Ok(y.iter().zip(&eps).map(|(y, e)| y - e).collect())
}

/// [`predict_armax_series`] over the full dataset.
pub fn predict_armax(m: &ArmaxModel, ds: &IdDataset) -> Result<Vec<f64>, SysIdError> {
    predict_armax_series(m, &ds.u, &ds.y)
}

/// `½ Σ ε²` over samples past the startup transient.
fn armax_cost(m: &ArmaxModel, u: &[f64], y: &[f64]) -> f64 {
    let l = m.max_lag();
    let eps = armax_residuals(m, u, y);
    let v = 0.5 * eps[l..].iter().map(|e| e * e).sum::<f64>();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn column_names(na: usize, nb: usize, nc: usize) -> Vec<String> {
    (1..=na)
        .map(|i| format!("y(k-{i})"))
        .chain((1..=nb).map(|i| format!("u(k-{i})")))
        .chain((1..=nc).map(|i| format!("e(k-{i})")))
        .collect()
}

/// Columns that are (numerically) in the span of the columns before them.
fn deficient_columns(phi: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..phi.ncols() {
        let col = phi.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            bad.push(j);
            continue;
        }
        let mut r = col / norm;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r);
                r -= q * proj;
            }
        }
        let rn = r.norm();
        if rn < 1e-8 {
            bad.push(j);
        } else {
            basis.push(r / rn);
        }
    }
    bad
}

/// Least squares with column equilibration.
fn scaled_lstsq(phi: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale: Vec<f64> = phi.column_iter().map(|c| c.norm().max(f64::MIN_POSITIVE)).collect();
    let mut p = phi.clone();
    for (j, s) in scale.iter().enumerate() {
        p.column_mut(j).scale_mut(1.0 / s);
    }
    let sol = linalg::lstsq(&p, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Some(DVector::from_iterator(scale.len(), sol.iter().zip(&scale).map(|(x, s)| x / s)))
}

fn regressors(u: &[f64], y: &[f64], eps: &[f64], na: usize, nb: usize, nc: usize) -> DMatrix<f64> {
    let n = y.len();
    DMatrix::from_fn(n, na + nb + nc, |k, j| {
        if j < na {
            -lag(y, k, j + 1)
        } else if j < na + nb {
            lag(u, k, j - na + 1)
        } else {
            lag(eps, k, j - na - nb + 1)
        }
    })
}

/// Mirrors roots of `C` that lie on or outside the unit circle.
fn reflect_c(c: &[f64]) -> (Vec<f64>, bool) {
    let roots = linalg::monic_roots(c);
    if roots.iter().all(|r| r.norm() < 1.0) {
        return (c.to_vec(), false);
    }
    let fixed: Vec<Complex<f64>> = roots
        .into_iter()
        .map(|r| {
            let m = r.norm();
            if m >= 1.0 {
                // keep a margin so the predictor stays well damped
                let target = (1.0 / m).min(0.999);
                r / m * target
            } else {
                r
            }
        })
        .collect();
    (linalg::monic_from_roots(&fixed), true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaxEstimate {
    pub model: ArmaxModel,
    /// Accepted cost after each iteration, starting with the initial fit.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a trial iterate had an unstable C(q) and its roots were
    /// reflected inside the unit circle.
    pub reflected: bool,
}

const PEM_TOL: f64 = 1e-9;
const PEM_MAX_ITER: usize = 100;

/// Gauss-Newton on the prediction-error cost starting from `init`.
fn gauss_newton(init: ArmaxModel, u: &[f64], y: &[f64], history: &mut Vec<f64>, reflected: &mut bool) -> (ArmaxModel, usize, bool) {
    let (na, nb, nc) = (init.a.len(), init.b.len(), init.c.len());
    let l = init.max_lag();
    let n = y.len();
    let mut model = init;
    let mut cost = armax_cost(&model, u, y);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < PEM_MAX_ITER {
        iterations += 1;
        let eps = armax_residuals(&model, u, y);
        let phi = regressors(u, y, &eps, na, nb, nc);
        // ψ = φ filtered through 1/C(q)
        let mut psi = phi.clone();
        for k in 0..n {
            for (i, ci) in model.c.iter().enumerate() {
                if k > i {
                    for j in 0..psi.ncols() {
                        psi[(k, j)] -= ci * psi[(k - 1 - i, j)];
                    }
                }
            }
        }
        let psi_t = psi.rows(l, n - l).into_owned();
        let rhs = DVector::from_column_slice(&eps[l..]);
        let Some(step) = scaled_lstsq(&psi_t, &rhs) else { break };
        let theta = model.theta();
        let mut mu = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial = model.with_theta(&(&theta + &step * mu));
            let (c, r) = reflect_c(&trial.c);
            if r {
                *reflected = true;
                trial.c = c;
            }
            let tc = armax_cost(&trial, u, y);
            if tc < cost {
                accepted = Some((trial, tc));
                break;
            }
            mu *= 0.5;
        }
        let Some((next, next_cost)) = accepted else {
            converged = true;
            break;
        };
        let rel = (cost - next_cost) / cost.max(f64::MIN_POSITIVE);
        model = next;
        cost = next_cost;
        history.push(cost);
        if rel < PEM_TOL {
            converged = true;
            break;
        }
    }
    (model, iterations, converged)
}

fn estimate_armax_series(u: &[f64], y: &[f64], na: usize, nb: usize, nc: usize) -> Result<ArmaxEstimate, SysIdError> {
    let d = na + nb + nc;
    if d == 0 {
        return Err(SysIdError::BadOrder("na, nb and nc are all zero".into()));
    }
    if y.len() < 10 * d {
        return Err(SysIdError::TooShort { needed: 10 * d, got: y.len() });
    }
    let l = na.max(nb).max(nc);
    let n = y.len();
    let names = column_names(na, nb, nc);

    // ARX start
    let zeros = vec![0.0; n];
    let phi = regressors(u, y, &zeros, na, nb, 0).rows(l, n - l).into_owned();
    let bad = deficient_columns(&phi);
    if !bad.is_empty() {
        return Err(SysIdError::RankDeficient { columns: bad.iter().map(|&j| names[j].clone()).collect() });
    }
    let rhs = DVector::from_column_slice(&y[l..]);
    let th = scaled_lstsq(&phi, &rhs).ok_or_else(|| SysIdError::Numerical("ARX least squares".into()))?;
    let mut model = ArmaxModel {
        a: th.rows(0, na).iter().copied().collect(),
        b: th.rows(na, nb).iter().copied().collect(),
        c: vec![0.0; nc],
        lambda: 0.0,
    };
    let mut cost = armax_cost(&model, u, y);
    let mut history = vec![cost];
    let mut reflected = false;
    let mut iterations = 0;

    if nc > 0 {
        // pseudo-linear regression passes
        for _ in 0..20 {
            iterations += 1;
            let eps = armax_residuals(&model, u, y);
            let phi = regressors(u, y, &eps, na, nb, nc).rows(l, n - l).into_owned();
            let Some(th) = scaled_lstsq(&phi, &rhs) else { break };
            let mut trial = model.with_theta(&th);
            let (c, r) = reflect_c(&trial.c);
            if r {
                reflected = true;
                trial.c = c;
            }
            let tc = armax_cost(&trial, u, y);
            if !(tc < cost) {
                break;
            }
            let rel = (cost - tc) / cost.max(f64::MIN_POSITIVE);
            model = trial;
            cost = tc;
            history.push(cost);
            if rel < 1e-6 {
                break;
            }
        }
    }
    let (model, gn_iter, converged) = gauss_newton(model, u, y, &mut history, &mut reflected);
    iterations += gn_iter;
    let cost = *history.last().unwrap();
    let n_eff = (n - l) as f64;
    let model = ArmaxModel { lambda: 2.0 * cost / n_eff, ..model };
    if !model.c_is_stable() {
        return Err(SysIdError::UnstableNoiseModel { roots: model.c_roots() });
    }
    Ok(ArmaxEstimate { model, cost_history: history, iterations, converged, reflected })
}

/// Fits ARMAX(na, nb, nc) on the training partition.
pub fn estimate_armax(ds: &IdDataset, na: usize, nb: usize, nc: usize) -> Result<ArmaxEstimate, SysIdError> {
    let (u, y) = ds.train();
    estimate_armax_series(u, y, na, nb, nc)
}

/// Options for [`realize_statespace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationOptions {
    /// Past window (lags of y and u) in the block-Hankel regression.
    pub past_lags: usize,
    /// Future horizon.
    pub future_horizon: usize,
    /// Polish with a prediction-error fit of the equivalent ARMAX model.
    pub refine: bool,
}

impl Default for RealizationOptions {
    fn default() -> Self {
        Self { past_lags: 20, future_horizon: 20, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub model: StateSpaceModel,
    /// Singular values of the projected future outputs, the order cue.
    pub singular_values: Vec<f64>,
    pub refined: bool,
}

const RANK_TOL: f64 = 1e-10;

fn std_or_one(v: &[f64]) -> f64 {
    let s = mean_var(v).1.sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Subspace realization of an order-`n` innovations model from the training
/// partition.
pub fn realize_statespace(ds: &IdDataset, n: usize, opts: &RealizationOptions) -> Result<Realization, SysIdError> {
    let (u, y) = ds.train();
    realize_series(u, y, ds.ts, n, opts)
}

fn realize_series(u: &[f64], y: &[f64], ts: f64, n: usize, opts: &RealizationOptions) -> Result<Realization, SysIdError> {
    let (p, f) = (opts.past_lags, opts.future_horizon);
    if n == 0 {
        return Err(SysIdError::BadOrder("order must be at least 1".into()));
    }
    if n > f {
        return Err(SysIdError::BadOrder(format!("order {n} exceeds the future horizon {f}")));
    }
    let len = y.len();
    if len < 20 * n || len < p + f + 2 * (2 * p + f) {
        return Err(SysIdError::TooShort { needed: (20 * n).max(p + f + 2 * (2 * p + f)), got: len });
    }
    let (su, sy) = (std_or_one(u), std_or_one(y));
    let us: Vec<f64> = u.iter().map(|v| v / su).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / sy).collect();

    let cols = len - p - f + 1;
    // rows: past y (p), past u (p), future u (f); target: future y (f)
    let z = DMatrix::from_fn(2 * p + f, cols, |r, c| {
        let j = c + p;
        if r < p {
            ys[j - 1 - r]
        } else if r < 2 * p {
            us[j - 1 - (r - p)]
        } else {
            us[j + (r - 2 * p)]
        }
    });
    let yf = DMatrix::from_fn(f, cols, |r, c| ys[c + p + r]);
    let lt = linalg::lstsq(&z.transpose(), &yf.transpose()).ok_or_else(|| SysIdError::Numerical("projection".into()))?;
    let lw = lt.transpose().columns(0, 2 * p).into_owned();
    let yhat = &lw * z.rows(0, 2 * p);
    let svd = yhat.svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    // nalgebra sorts singular values in decreasing order
    let ratio = if sv[0] > 0.0 { sv[n - 1] / sv[0] } else { 0.0 };
    if !(ratio >= RANK_TOL) {
        return Err(SysIdError::OrderExceedsRank { order: n, ratio });
    }
    let vt = svd.v_t.ok_or_else(|| SysIdError::Numerical("SVD".into()))?;
    let mut x = vt.rows(0, n).into_owned();
    for (i, s) in sv.iter().take(n).enumerate() {
        x.row_mut(i).scale_mut(s.sqrt());
    }

    // state regression over consecutive columns
    let m = cols - 1;
    let xk = x.columns(0, m).into_owned();
    let xk1 = x.columns(1, m).into_owned();
    let uk = DMatrix::from_fn(1, m, |_, c| us[c + p]);
    let yk = DMatrix::from_fn(1, m, |_, c| ys[c + p]);
    let mut reg = DMatrix::zeros(n + 1, m);
    reg.rows_mut(0, n).copy_from(&xk);
    reg.row_mut(n).copy_from(&uk);
    let ab = linalg::lstsq(&reg.transpose(), &xk1.transpose())
        .ok_or_else(|| SysIdError::Numerical("state regression".into()))?
        .transpose();
    let a = ab.columns(0, n).into_owned();
    let b = ab.column(n).into_owned();
    let c = linalg::lstsq(&xk.transpose(), &yk.transpose())
        .ok_or_else(|| SysIdError::Numerical("output regression".into()))?
        .transpose();
    let w = &xk1 - &a * &xk - &b * &uk;
    let v = &yk - &c * &xk;
    let mf = m as f64;
    let qw = linalg::symmetrize(&(&w * w.transpose() / mf));
    let s = &w * v.transpose() / mf;
    let rv = (&v * v.transpose() / mf)[(0, 0)];
    let k = innovation_gain(&a, &c, &qw, rv, &s);

    let scaled = StateSpaceModel::new(a, DMatrix::from_column_slice(n, 1, b.as_slice()), c, DMatrix::zeros(1, 1), k, ts)
        .map_err(|e| SysIdError::Numerical(e.to_string()))?;
    let (model, refined) = canonicalize_and_refine(&scaled, &us, &ys, opts.refine);

    // undo the normalisation y = sy·ys, u = su·us; in canonical form the
    // state absorbs sy so that C stays [1 0 …]
    let model = if is_canonical(&model) {
        StateSpaceModel { b: model.b * (sy / su), ..model }
    } else {
        StateSpaceModel { b: model.b / su, c: model.c * sy, k: model.k / sy, ..model }
    };
    Ok(Realization { model, singular_values: sv, refined })
}

fn is_canonical(m: &StateSpaceModel) -> bool {
    m.p() == 1 && m.c[(0, 0)] == 1.0 && m.c.iter().skip(1).all(|&v| v == 0.0)
}

/// Steady-state Kalman gain of `x' = A x + w`, `y = C x + v` with
/// `cov(w) = Q`, `cov(v) = R`, `cov(w, v) = S`.
fn innovation_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: f64, s: &DMatrix<f64>) -> DMatrix<f64> {
    let rm = DMatrix::from_element(1, 1, r.max(f64::MIN_POSITIVE));
    let dare = lqg::solve_dare(&a.transpose(), &c.transpose(), q, &rm, Some(s));
    if let Ok(sol) = dare {
        let sig = sol.p;
        let g = a * &sig * c.transpose() + s;
        let den = (c * &sig * c.transpose())[(0, 0)] + r;
        if den > 0.0 {
            let k = g / den;
            if k.iter().all(|v| v.is_finite()) {
                return k;
            }
        }
    }
    s / r.max(f64::MIN_POSITIVE)
}

/// Moves a SISO model to observability-canonical coordinates and, if asked,
/// polishes it by ARMAX Gauss-Newton. Works on normalised data; returns the
/// input model unchanged if the observability matrix is ill-conditioned.
fn canonicalize_and_refine(model: &StateSpaceModel, u: &[f64], y: &[f64], refine: bool) -> (StateSpaceModel, bool) {
    let n = model.n();
    let mut obs = DMatrix::zeros(n, n);
    let mut row = model.c.clone();
    for i in 0..n {
        obs.row_mut(i).copy_from(&row);
        row = &row * &model.a;
    }
    let sv = obs.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < 1e12) {
        return (model.clone(), false);
    }
    let Some(tinv) = obs.clone().try_inverse() else {
        return (model.clone(), false);
    };
    let canon = StateSpaceModel {
        a: &obs * &model.a * &tinv,
        b: &obs * &model.b,
        c: &model.c * &tinv,
        k: &obs * &model.k,
        ..model.clone()
    };
    // clean up round-off in the structural entries
    let mut canon = canon;
    canon.c.fill(0.0);
    canon.c[(0, 0)] = 1.0;
    for i in 0..n - 1 {
        for j in 0..n {
            canon.a[(i, j)] = if j == i + 1 { 1.0 } else { 0.0 };
        }
    }
    if !refine {
        return (canon, false);
    }
    let Ok(start) = statespace_to_armax(&canon) else {
        return (canon, false);
    };
    if !start.c_is_stable() {
        return (canon, false);
    }
    let c0 = armax_cost(&start, u, y);
    let mut hist = vec![c0];
    let mut refl = false;
    let (refined, _, _) = gauss_newton(start, u, y, &mut hist, &mut refl);
    let c1 = armax_cost(&refined, u, y);
    if c1 < c0 && refined.c_is_stable() {
        if let Ok(m) = refined.to_statespace(model.ts) {
            return (m, true);
        }
    }
    (canon, false)
}

/// One-step-ahead predictions of an innovations model from `x0 = 0`:
/// `ŷ = C x̂ + D u`, `x̂' = A x̂ + B u + K (y − ŷ)`.
pub fn predict_statespace(model: &StateSpaceModel, u: &[f64], y: &[f64]) -> Result<Vec<f64>, SysIdError> {
    if u.len() != y.len() {
        return Err(SysIdError::LengthMismatch(u.len(), y.len()));
    }
    let mut x = DVector::zeros(model.n());
    let mut out = Vec::with_capacity(y.len());
    for (&uk, &yk) in u.iter().zip(y) {
        let yh = (&model.c * &x)[0] + model.d[(0, 0)] * uk;
        out.push(yh);
        x = &model.a * &x + model.b.column(0) * uk + model.k.column(0) * (yk - yh);
    }
    Ok(out)
}

/// Goodness-of-fit summary for one partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub mse: f64,
    /// `None` when the output is constant and the prediction is not exact.
    pub fit_pct: Option<f64>,
    pub fpe: f64,
    /// Number of estimated parameters.
    pub d: usize,
    pub n: usize,
}

impl FitReport {
    /// Fit for display: clamped to `[0, 100]`.
    pub fn fit_display(&self) -> Option<f64> {
        self.fit_pct.map(|f| f.clamp(0.0, 100.0))
    }
}

pub fn fit_metrics(y: &[f64], yhat: &[f64], d: usize) -> Result<FitReport, SysIdError> {
    if y.len() != yhat.len() {
        return Err(SysIdError::LengthMismatch(y.len(), yhat.len()));
    }
    let n = y.len();
    if n <= d {
        return Err(SysIdError::TooShort { needed: d + 1, got: n });
    }
    let nf = n as f64;
    let err2: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let mse = err2 / nf;
    let (mean, _) = mean_var(y);
    let dev2: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let fit_pct = if dev2 > 0.0 {
        Some(100.0 * (1.0 - err2.sqrt() / dev2.sqrt()))
    } else if err2 == 0.0 {
        Some(100.0)
    } else {
        None
    };
    let r = d as f64 / nf;
    let fpe = mse * (1.0 + r) / (1.0 - r);
    Ok(FitReport { mse, fit_pct, fpe, d, n })
}

/// One row of an order sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub order: usize,
    pub outcome: Result<SweepFit, SysIdError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFit {
    pub train: FitReport,
    pub test: FitReport,
    pub realization: Realization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSweep {
    pub rows: Vec<SweepRow>,
}

/// Parameters per order for a SISO innovations model in canonical form.
pub fn param_count(order: usize) -> usize {
    3 * order
}

/// Realizes each order on the training partition and scores it on both
/// partitions. Test predictions come from running the predictor over the
/// whole record, so the test segment starts from a warmed-up state.
pub fn order_sweep(ds: &IdDataset, orders: &[usize], opts: &RealizationOptions, exec: Exec) -> OrderSweep {
    let n_train = ds.n_train();
    let rows = exec.map(orders, |&order| {
        let outcome = (|| {
            let realization = realize_statespace(ds, order, opts)?;
            let yhat = predict_statespace(&realization.model, &ds.u, &ds.y)?;
            let d = param_count(order);
            let train = fit_metrics(&ds.y[..n_train], &yhat[..n_train], d)?;
            let test = fit_metrics(&ds.y[n_train..], &yhat[n_train..], d)?;
            Ok(SweepFit { train, test, realization })
        })();
        SweepRow { order, outcome }
    });
    OrderSweep { rows }
}

impl OrderSweep {
    /// Smallest order whose test FPE is within 1% of the best test FPE.
    pub fn selected_order(&self) -> Option<usize> {
        let ok: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|f| (r.order, f.test.fpe)))
            .filter(|(_, f)| f.is_finite())
            .collect();
        let best = ok.iter().map(|(_, f)| *f).fold(f64::INFINITY, f64::min);
        ok.iter().filter(|(_, f)| *f <= best * 1.01).map(|(o, _)| *o).min()
    }

    pub fn row(&self, order: usize) -> Option<&SweepFit> {
        self.rows.iter().find(|r| r.order == order).and_then(|r| r.outcome.as_ref().ok())
    }

    /// Aligned text table with training and testing columns.
    pub fn to_text(&self) -> String {
        let fit = |f: &FitReport| f.fit_display().map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} | {:^34} | {:^34}", "", "Training", "Testing");
        let _ = writeln!(
            s,
            "{:<4} | {:>12} {:>8} {:>12} | {:>12} {:>8} {:>12}",
            "MO", "MSE", "Fit(%)", "FPE", "MSE", "Fit(%)", "FPE"
        );
        for r in &self.rows {
            match &r.outcome {
                Ok(f) => {
                    let _ = writeln!(
                        s,
                        "{:<4} | {:>12.6e} {:>8} {:>12.6e} | {:>12.6e} {:>8} {:>12.6e}",
                        r.order,
                        f.train.mse,
                        fit(&f.train),
                        f.train.fpe,
                        f.test.mse,
                        fit(&f.test),
                        f.test.fpe
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "{:<4} | failed: {e}", r.order);
                }
            }
        }
        if let Some(o) = self.selected_order() {
            let _ = writeln!(s, "selected order: {o}");
        }
        s
    }

    /// CSV with one row per order; failed rows carry the error text.
    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.17e}"));
        let mut s = String::from("order,train_mse,train_fit_pct,train_fpe,test_mse,test_fit_pct,test_fpe,error\n");
        for r in &self.rows {
            match &r.outcome {
                Ok(f) => {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},{},",
                        r.order,
                        num(Some(f.train.mse)),
                        num(f.train.fit_pct),
                        num(Some(f.train.fpe)),
                        num(Some(f.test.mse)),
                        num(f.test.fit_pct),
                        num(Some(f.test.fpe))
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "{},,,,,,,\"{}\"", r.order, e.to_string().replace('"', "'"));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::{self, bladder_plant, NoiseLevel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ugwn(n: usize, seed: u64) -> Vec<f64> {
        design_input(&InputSignalSpec { amplitude: 1.0, length: n, seed, hold: 1 })
    }

    fn arx_data(a: &[f64], b: &[f64], c: &[f64], u: &[f64], e: &[f64]) -> Vec<f64> {
        let m = ArmaxModel::new(a.to_vec(), b.to_vec(), c.to_vec());
        let mut y = vec![0.0; u.len()];
        for k in 0..u.len() {
            let mut v = e[k];
            for (i, ai) in m.a.iter().enumerate() {
                v -= ai * lag(&y, k, i + 1);
            }
            for (i, bi) in m.b.iter().enumerate() {
                v += bi * lag(u, k, i + 1);
            }
            for (i, ci) in m.c.iter().enumerate() {
                v += ci * lag(e, k, i + 1);
            }
            y[k] = v;
        }
        y
    }

    #[test]
    fn input_statistics() {
        let u = design_input(&InputSignalSpec { amplitude: 1.0, length: 100_000, seed: 3, hold: 1 });
        let (m, v) = mean_var(&u);
        assert!(m.abs() < 0.01);
        assert!((v.sqrt() / (1.0 / 3f64.sqrt()) - 1.0).abs() < 0.01);
        assert!((crest_factor(&u) - 3f64.sqrt()).abs() < 0.01);
        assert!(u.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn hold_reduces_high_frequency_power() {
        let n = 4096;
        let power_above = |u: &[f64], frac: f64| {
            // periodogram bins above frac·Nyquist
            let k0 = ((n / 2) as f64 * frac) as usize;
            (k0..n / 2)
                .map(|k| {
                    let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let (re, im) = u.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, x)| {
                        (re + x * (w * t as f64).cos(), im - x * (w * t as f64).sin())
                    });
                    re * re + im * im
                })
                .sum::<f64>()
        };
        let u1 = design_input(&InputSignalSpec { amplitude: 1.0, length: n, seed: 8, hold: 1 });
        let u5 = design_input(&InputSignalSpec { amplitude: 1.0, length: n, seed: 8, hold: 5 });
        assert!(power_above(&u5, 0.2) < 0.5 * power_above(&u1, 0.2));
        assert_eq!(u5[0], u5[4]);
        assert_eq!(u5.len(), n);
    }

    #[test]
    fn predictor_examples() {
        let u = ugwn(50, 1);
        let y = ugwn(50, 2);
        let delay = ArmaxModel::new(vec![], vec![1.0], vec![]);
        let yh = predict_armax_series(&delay, &u, &y).unwrap();
        assert_eq!(yh[0], 0.0);
        for k in 1..50 {
            assert!((yh[k] - u[k - 1]).abs() < 1e-15);
        }

        let u = ugwn(200, 4);
        let y = arx_data(&[-0.5], &[1.0], &[], &u, &vec![0.0; 200]);
        let m = ArmaxModel::new(vec![-0.5], vec![1.0], vec![]);
        let yh = predict_armax_series(&m, &u, &y).unwrap();
        for k in 1..200 {
            assert!((y[k] - yh[k]).abs() < 1e-12);
        }

        let w = plantsim::gaussian_sequence(5, 5000, 2.0);
        let trivial = ArmaxModel::new(vec![0.0], vec![0.0], vec![]);
        let yh = predict_armax_series(&trivial, &vec![0.0; 5000], &w).unwrap();
        let r = fit_metrics(&w, &yh, 0).unwrap();
        assert_relative_eq!(r.mse, w.iter().map(|v| v * v).sum::<f64>() / 5000.0, epsilon = 1e-12);

        let unstable = ArmaxModel::new(vec![0.1], vec![1.0], vec![1.5]);
        assert!(matches!(predict_armax_series(&unstable, &u, &y), Err(SysIdError::UnstableNoiseModel { .. })));
    }

    #[test]
    fn arx_recovered_exactly() {
        let n = 2000;
        let u = ugwn(n, 10);
        let y = arx_data(&[-1.5, 0.7], &[1.0, 0.5], &[], &u, &vec![0.0; n]);
        let ds = IdDataset::new(u, y, 1.0, 0.6).unwrap();
        let est = estimate_armax(&ds, 2, 2, 0).unwrap();
        for (got, want) in est.model.a.iter().zip([-1.5, 0.7]) {
            assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in est.model.b.iter().zip([1.0, 0.5]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn armax_recovered_at_20db() {
        let n = 10_000;
        let (a, b, c) = ([-1.5, 0.7], [1.0, 0.5], [0.5]);
        let u = ugwn(n, 20);
        let clean = arx_data(&a, &b, &[], &u, &vec![0.0; n]);
        let (_, var_clean) = mean_var(&clean);
        // noise-path gain of C/A for unit innovations
        let mut imp = vec![0.0; 4000];
        imp[0] = 1.0;
        let h = arx_data(&a, &[], &c, &vec![0.0; 4000], &imp);
        let g: f64 = h.iter().map(|v| v * v).sum();
        let lambda = var_clean / (100.0 * g);
        let e = plantsim::gaussian_sequence(21, n, lambda);
        let y = arx_data(&a, &b, &c, &u, &e);
        let ds = IdDataset::new(u, y, 1.0, 0.999).unwrap();
        let est = estimate_armax(&ds, 2, 2, 1).unwrap();
        let got = est.model.a.iter().chain(&est.model.b).chain(&est.model.c);
        for (g, w) in got.zip(a.iter().chain(&b).chain(&c)) {
            assert!(((g - w) / w).abs() < 0.05, "{g} vs {w}");
        }
        for w in est.cost_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        assert_relative_eq!(est.model.lambda, lambda, max_relative = 0.1);
    }

    #[test]
    fn zero_data_rejected() {
        let ds = IdDataset::new(vec![0.0; 100], vec![0.0; 100], 1.0, 0.6).unwrap();
        match estimate_armax(&ds, 2, 2, 1) {
            Err(SysIdError::RankDeficient { columns }) => {
                assert_eq!(columns, vec!["y(k-1)", "y(k-2)", "u(k-1)", "u(k-2)"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn armax_statespace_round_trip() {
        let p = bladder_plant();
        let arm = statespace_to_armax(&p).unwrap();
        assert_relative_eq!(arm.a[0], -1.988, epsilon = 1e-12);
        assert_relative_eq!(arm.a[1], 0.9883, epsilon = 1e-12);
        assert_relative_eq!(arm.c[0], -1.0627, epsilon = 1e-12);
        let back = arm.to_statespace(p.ts).unwrap();
        assert_relative_eq!(back.a, p.a, epsilon = 1e-12);
        assert_relative_eq!(back.b, p.b, epsilon = 1e-18);
        assert_relative_eq!(back.k, p.k, epsilon = 1e-12);
        // predictors agree
        let u = ugwn(300, 3).iter().map(|v| v * 1e5).collect::<Vec<_>>();
        let r = plantsim::simulate_with_snr(&p, &u, NoiseLevel::Variance(1e-3), 4).unwrap();
        let a = predict_statespace(&p, &u, &r.y).unwrap();
        let b = predict_armax_series(&arm, &u, &r.y).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    fn bladder_dataset(snr: f64, n: usize, seed: u64) -> IdDataset {
        let p = bladder_plant();
        let u = design_input(&InputSignalSpec { amplitude: 1e5, length: n, seed, hold: 1 });
        let r = plantsim::simulate_with_snr(&p, &u, NoiseLevel::SnrDb(snr), seed + 1).unwrap();
        IdDataset::new(u, r.y, p.ts, 0.6).unwrap()
    }

    #[test]
    fn realization_recovers_poles() {
        let ds = bladder_dataset(40.0, 10_000, 30);
        let r = realize_statespace(&ds, 2, &RealizationOptions::default()).unwrap();
        let mut poles = r.model.poles();
        poles.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        let truth = [Complex::new(0.994, -0.016248), Complex::new(0.994, 0.016248)];
        for (p, t) in poles.iter().zip(&truth) {
            assert!((p - t).norm() < 1e-2, "{p} vs {t}");
        }
        assert!(r.singular_values[1] / r.singular_values[2] > 100.0);
    }

    #[test]
    fn realization_noise_free() {
        let p = bladder_plant();
        let u = design_input(&InputSignalSpec { amplitude: 1e5, length: 3000, seed: 5, hold: 1 });
        let y = plantsim::simulate_siso(&p, &u, &vec![0.0; 3000]).unwrap();
        let ds = IdDataset::new(u, y, p.ts, 0.6).unwrap();
        let sweep = order_sweep(&ds, &[2, 4], &RealizationOptions::default(), Exec::Sequential);
        let f = sweep.row(2).unwrap();
        assert!(f.train.fit_pct.unwrap() >= 99.9);
        assert!(f.test.fit_pct.unwrap() >= 99.9);
        // order 4 exceeds the rank of noise-free order-2 data
        assert!(matches!(sweep.rows[1].outcome, Err(SysIdError::OrderExceedsRank { .. })) || sweep.row(4).unwrap().test.fit_pct.unwrap() >= 99.9);
    }

    #[test]
    fn white_output_gives_small_b() {
        let u = design_input(&InputSignalSpec { amplitude: 1.0, length: 4000, seed: 6, hold: 1 });
        let y = plantsim::gaussian_sequence(7, 4000, 1.0);
        let ds = IdDataset::new(u, y, 1.0, 0.6).unwrap();
        let r = realize_statespace(&ds, 1, &RealizationOptions { refine: false, ..Default::default() }).unwrap();
        let h = r.model.impulse_response(10);
        let gain: f64 = h.iter().map(|v| v.abs()).sum();
        assert!(gain < 0.2, "input path gain {gain}");
    }

    #[test]
    fn realization_is_self_consistent() {
        let ds = bladder_dataset(30.0, 3000, 40);
        let r = realize_statespace(&ds, 2, &RealizationOptions::default()).unwrap();
        let (u, y) = ds.train();
        let yhat = predict_statespace(&r.model, u, y).unwrap();
        let e: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
        let resim = plantsim::simulate_siso(&r.model, u, &e).unwrap();
        let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in resim.iter().zip(y) {
            assert!((a - b).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn rank_guard() {
        let u = vec![0.0; 1000];
        let y = vec![0.0; 1000];
        let ds = IdDataset::new(u, y, 1.0, 0.6).unwrap();
        assert!(matches!(
            realize_statespace(&ds, 2, &RealizationOptions::default()),
            Err(SysIdError::OrderExceedsRank { .. })
        ));
        let short = IdDataset::new(vec![1.0; 30], vec![1.0; 30], 1.0, 0.6).unwrap();
        assert!(matches!(realize_statespace(&short, 2, &RealizationOptions::default()), Err(SysIdError::TooShort { .. })));
    }

    #[test]
    fn fit_metric_examples() {
        let y = [1.0, 2.0, 4.0, 3.0];
        let r = fit_metrics(&y, &y, 1).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.fit_pct, Some(100.0));
        let m = [2.5; 4];
        assert_relative_eq!(fit_metrics(&y, &m, 0).unwrap().fit_pct.unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(fit_metrics(&[1.0; 3], &[1.0; 3], 0).unwrap().fit_pct, Some(100.0));
        assert_eq!(fit_metrics(&[1.0; 3], &[1.5; 3], 0).unwrap().fit_pct, None);
        assert!(fit_metrics(&y, &y, 4).is_err());
        // Table-I scale: FPE/MSE → 1 as d/N → 0
        let n = 100_000;
        let mse = 0.001437;
        let fpe = mse * (1.0 + 6.0 / n as f64) / (1.0 - 6.0 / n as f64);
        assert!((fpe - 0.001437).abs() < 1e-6);
    }

    #[test]
    fn sweep_rendering() {
        let ds = bladder_dataset(30.0, 2000, 50);
        let s = order_sweep(&ds, &[2], &RealizationOptions::default(), Exec::Sequential);
        assert_eq!(s.rows.len(), 1);
        let txt = s.to_text();
        assert!(txt.contains("MO") && txt.contains("Fit(%)") && txt.contains("FPE"));
        assert_eq!(s.to_csv().lines().count(), 2);
        assert_eq!(s.selected_order(), Some(2));
    }

    proptest! {
        #[test]
        fn fpe_dominates_mse(y in prop::collection::vec(-10.0f64..10.0, 20..60), d in 0usize..10, off in -5.0f64..5.0) {
            let yh: Vec<f64> = y.iter().map(|v| v * 0.9 + 0.1).collect();
            let r = fit_metrics(&y, &yh, d).unwrap();
            prop_assert!(r.fpe >= r.mse);
            let ys: Vec<f64> = y.iter().map(|v| v + off).collect();
            let yhs: Vec<f64> = yh.iter().map(|v| v + off).collect();
            let r2 = fit_metrics(&ys, &yhs, d).unwrap();
            if let (Some(a), Some(b)) = (r.fit_pct, r2.fit_pct) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
