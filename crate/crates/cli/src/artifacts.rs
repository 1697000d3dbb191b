//! JSON documents passed between subcommands.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use softpos_core::lqg::{DareMethod, LqWeights, LqgDesign, TrackingMetrics};
use softpos_core::plantsim::StateSpaceModel;

pub const MODEL_FORMAT: &str = "softpos-model/1";
pub const DESIGN_FORMAT: &str = "softpos-design/1";

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(what: &str, rows: &Rows) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(format!("{what}: ragged matrix"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!("{what}: non-finite entry"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    /// Sample period, s.
    pub ts: f64,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    pub k: Rows,
    /// Informational; ignored when the file is read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ModelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelReport {
    pub order: usize,
    /// `[re, im]` pairs.
    pub poles: Vec<[f64; 2]>,
    pub singular_values: Vec<f64>,
    pub refined: bool,
    pub train_mse: f64,
    pub train_fit_pct: Option<f64>,
    pub test_mse: f64,
    pub test_fit_pct: Option<f64>,
    pub test_fpe: f64,
}

impl ModelFile {
    pub fn from_model(m: &StateSpaceModel, report: Option<ModelReport>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            ts: m.ts,
            a: to_rows(&m.a),
            b: to_rows(&m.b),
            c: to_rows(&m.c),
            d: to_rows(&m.d),
            k: to_rows(&m.k),
            report,
        }
    }

    pub fn to_model(&self) -> Result<StateSpaceModel, String> {
        if self.format != MODEL_FORMAT {
            return Err(format!("unsupported model format {:?}", self.format));
        }
        StateSpaceModel::new(
            from_rows("a", &self.a)?,
            from_rows("b", &self.b)?,
            from_rows("c", &self.c)?,
            from_rows("d", &self.d)?,
            from_rows("k", &self.k)?,
            self.ts,
        )
        .map_err(|e| e.to_string())
    }
}

pub fn poles_of(m: &StateSpaceModel) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = m.poles().iter().map(|z| [z.re, z.im]).collect();
    p.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    p
}

fn method_name(m: DareMethod) -> String {
    match m {
        DareMethod::Iteration => "iteration",
        DareMethod::Doubling => "doubling",
    }
    .into()
}

fn method_from(s: &str) -> Result<DareMethod, String> {
    match s {
        "iteration" => Ok(DareMethod::Iteration),
        "doubling" => Ok(DareMethod::Doubling),
        _ => Err(format!("unknown DARE method {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub format: String,
    pub q: Rows,
    pub r: Rows,
    pub n: Rows,
    pub qe: Rows,
    pub re: Rows,
    /// Regulator Riccati solution.
    pub p: Rows,
    pub kopt: Rows,
    /// Observer Riccati solution.
    pub sigma: Rows,
    pub kobs: Rows,
    pub nr: Rows,
    pub regulator_residual: f64,
    pub observer_residual: f64,
    pub regulator_method: String,
    pub observer_method: String,
    pub rho_regulator: f64,
    pub rho_observer: f64,
    /// Poles of `A − B Kopt`, `[re, im]`.
    pub regulator_poles: Vec<[f64; 2]>,
    /// Poles of `A − Kobs C`.
    pub observer_poles: Vec<[f64; 2]>,
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = softpos_core::linalg::eigenvalues(m).unwrap_or_default().iter().map(|z| [z.re, z.im]).collect();
    p.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    p
}

impl DesignFile {
    pub fn from_design(model: &StateSpaceModel, d: &LqgDesign) -> Self {
        Self {
            format: DESIGN_FORMAT.into(),
            q: to_rows(&d.weights.q),
            r: to_rows(&d.weights.r),
            n: to_rows(&d.weights.n),
            qe: to_rows(&d.qe),
            re: to_rows(&d.re),
            p: to_rows(&d.p),
            kopt: to_rows(&d.kopt),
            sigma: to_rows(&d.sigma),
            kobs: to_rows(&d.kobs),
            nr: to_rows(&d.nr),
            regulator_residual: d.regulator_residual,
            observer_residual: d.observer_residual,
            regulator_method: method_name(d.regulator_method),
            observer_method: method_name(d.observer_method),
            rho_regulator: d.rho_regulator,
            rho_observer: d.rho_observer,
            regulator_poles: sorted_eigs(&(&model.a - &model.b * &d.kopt)),
            observer_poles: sorted_eigs(&(&model.a - &d.kobs * &model.c)),
        }
    }

    pub fn to_design(&self) -> Result<LqgDesign, String> {
        if self.format != DESIGN_FORMAT {
            return Err(format!("unsupported design format {:?}", self.format));
        }
        let weights = LqWeights::new(from_rows("q", &self.q)?, from_rows("r", &self.r)?, Some(from_rows("n", &self.n)?))
            .map_err(|e| e.to_string())?;
        Ok(LqgDesign {
            weights,
            qe: from_rows("qe", &self.qe)?,
            re: from_rows("re", &self.re)?,
            p: from_rows("p", &self.p)?,
            kopt: from_rows("kopt", &self.kopt)?,
            sigma: from_rows("sigma", &self.sigma)?,
            kobs: from_rows("kobs", &self.kobs)?,
            nr: from_rows("nr", &self.nr)?,
            regulator_residual: self.regulator_residual,
            observer_residual: self.observer_residual,
            regulator_method: method_from(&self.regulator_method)?,
            observer_method: method_from(&self.observer_method)?,
            rho_regulator: self.rho_regulator,
            rho_observer: self.rho_observer,
        })
    }

    /// Checks that the gains fit the model's dimensions.
    pub fn check_against(&self, model: &StateSpaceModel, d: &LqgDesign) -> Result<(), String> {
        let (n, m, p) = (model.n(), model.m(), model.p());
        let shapes = [
            ("kopt", &d.kopt, m, n),
            ("kobs", &d.kobs, n, p),
            ("nr", &d.nr, m, p),
        ];
        for (what, mat, r, c) in shapes {
            if mat.shape() != (r, c) {
                return Err(format!("design {what} is {}x{}, model needs {r}x{c}", mat.nrows(), mat.ncols()));
            }
        }
        Ok(())
    }
}

/// Fusion variance summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuseSummary {
    pub warmup_s: f64,
    pub ticks: usize,
    pub fused_ticks: usize,
    pub gap_ticks: usize,
    pub rejected_ticks: usize,
    pub post_warmup_samples: usize,
    pub sensors: Vec<SensorSummary>,
    pub fused_variance: f64,
    pub fused_std: f64,
    /// RMS error against the `truth` column when the input has one.
    pub fused_rmse_vs_truth: Option<f64>,
    pub dominance_checks: usize,
    pub dominance_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorSummary {
    pub name: String,
    pub sensor_id: u32,
    pub raw_variance: f64,
    pub filtered_variance: f64,
    pub variance_reduction_pct: f64,
    /// Fused variance relative to this sensor's raw variance.
    pub fused_reduction_pct: f64,
}

/// Closed-loop figures of merit. NaN-valued metrics are written as null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub horizon_s: f64,
    pub samples: usize,
    pub band: f64,
    pub dwell: f64,
    pub settled: bool,
    pub settling_time_s: Option<f64>,
    pub overshoot: Option<f64>,
    pub ss_mean: Option<f64>,
    pub ss_std: Option<f64>,
    pub ss_p95_abs: Option<f64>,
    pub ss_max_abs: Option<f64>,
    /// 95th percentile of the steady-state error inside the band.
    pub within_band: bool,
    pub u_min: f64,
    pub u_max: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl MetricsFile {
    pub fn new(seed: u64, horizon_s: f64, samples: usize, m: &TrackingMetrics, u: &[f64]) -> Self {
        Self {
            seed,
            horizon_s,
            samples,
            band: m.band,
            dwell: m.dwell,
            settled: m.settled,
            settling_time_s: finite(m.settling_time),
            overshoot: finite(m.overshoot),
            ss_mean: finite(m.ss_mean),
            ss_std: finite(m.ss_std),
            ss_p95_abs: finite(m.ss_p95_abs),
            ss_max_abs: finite(m.ss_max_abs),
            within_band: m.ss_p95_abs <= m.band,
            u_min: u.iter().copied().fold(f64::INFINITY, f64::min),
            u_max: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use softpos_core::lqg;
    use softpos_core::plantsim::bladder_plant;

    #[test]
    fn model_round_trip() {
        let m = bladder_plant();
        let f = ModelFile::from_model(&m, None);
        let text = serde_json::to_string(&f).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn design_round_trip() {
        let m = bladder_plant();
        let d = lqg::design(
            &m,
            &LqWeights::nominal(),
            &(DMatrix::identity(2, 2) * lqg::NOMINAL_QE),
            &DMatrix::from_element(1, 1, lqg::NOMINAL_RE),
        )
        .unwrap();
        let f = DesignFile::from_design(&m, &d);
        let back: DesignFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        let d2 = back.to_design().unwrap();
        assert_eq!(d2, d);
        back.check_against(&m, &d2).unwrap();
    }

    #[test]
    fn wrong_format_rejected() {
        let mut f = ModelFile::from_model(&bladder_plant(), None);
        f.format = "other".into();
        assert!(f.to_model().is_err());
        assert!(from_rows("x", &vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
