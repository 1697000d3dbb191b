//! The five subcommands. Each reads its inputs, writes its artifacts into the
//! output directory and returns a short human-readable summary.

use std::path::{Path, PathBuf};

use serde::Serialize;
use softpos_core::estimation::{LocalFilter, MeasurementModel};
use softpos_core::fusion::{self, FusionConfig, LocalTrack, SiteInput, TickOutcome};
use softpos_core::lqg::{self, ClosedLoopConfig, LqgDesign, LqgError, TrackingMetrics};
use softpos_core::plantsim::{self, bladder_plant, NoiseLevel, PlantError, StateSpaceModel};
use softpos_core::sysid::{self, IdDataset, InputSignalSpec, SysIdError};
use softpos_core::{seed, Exec};

use crate::artifacts::{poles_of, DesignFile, FuseSummary, MetricsFile, ModelFile, ModelReport, SensorSummary};
use crate::config::ExperimentConfig;
use crate::timeseries::{SeriesError, TimeSeriesFile};
use crate::CliError;

pub const SENSORS_FILE: &str = "sensors.csv";
pub const PLANT_IO_FILE: &str = "plant_io.csv";
pub const FUSED_FILE: &str = "fused.csv";
pub const FUSE_SUMMARY_FILE: &str = "fuse_summary.json";
pub const MODEL_FILE: &str = "model.json";
pub const SWEEP_CSV_FILE: &str = "order_sweep.csv";
pub const SWEEP_TXT_FILE: &str = "order_sweep.txt";
pub const DESIGN_FILE: &str = "design.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn series_err(path: &Path, e: SeriesError) -> CliError {
    match e {
        SeriesError::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

fn write_series(dir: &Path, name: &str, f: &TimeSeriesFile) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    f.write(&p).map_err(|e| series_err(&p, e))?;
    Ok(p)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|source| CliError::Io { path: p.clone(), source })?;
    Ok(p)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<PathBuf, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    write_text(dir, name, &s)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn read_series(path: &Path) -> Result<TimeSeriesFile, CliError> {
    TimeSeriesFile::read(path).map_err(|e| series_err(path, e))
}

fn lqg_err(e: LqgError) -> CliError {
    match e {
        LqgError::Config(m) => CliError::Config(m),
        LqgError::Dimension { .. } => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn plant_err(e: PlantError) -> CliError {
    match e {
        PlantError::BadSensor(_) | PlantError::BadHorizon(_) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn sysid_err(e: SysIdError) -> CliError {
    match e {
        SysIdError::BadDataset(_) | SysIdError::LengthMismatch(..) | SysIdError::TooShort { .. } => {
            CliError::Data(e.to_string())
        }
        other => CliError::Numerical(other.to_string()),
    }
}

/// Truth plus one raw stream per sensor, and an excitation record of the
/// built-in plant for identification.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    let truth = cfg.simulate.truth.to_core();
    let horizon = cfg.simulate.horizon_s;
    let spec0 = cfg.sensors[0].spec();
    let n = spec0.sample_count(horizon);
    let t: Vec<f64> = (0..n).map(|j| j as f64 / spec0.rate).collect();
    let mut sensors = TimeSeriesFile::new(t.clone()).map_err(|e| CliError::Data(e.to_string()))?;
    sensors.push("truth", t.iter().map(|&t| truth.eval(t)).collect()).expect("fresh column");
    for s in &cfg.sensors {
        let sd = seed::derive(cfg.seed, &format!("simulate/sensor/{}", s.name));
        let m = plantsim::sample_sensor(&truth, &s.spec(), horizon, sd).map_err(plant_err)?;
        sensors.push(s.column(), m.iter().map(|m| m.z).collect()).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let p1 = write_series(out, SENSORS_FILE, &sensors)?;

    let plant = bladder_plant();
    let u = sysid::design_input(&InputSignalSpec {
        amplitude: cfg.plant.amplitude,
        length: cfg.plant.samples,
        seed: seed::derive(cfg.seed, "simulate/input"),
        hold: cfg.plant.hold,
    });
    let level = match cfg.plant.innovation_variance {
        Some(v) => NoiseLevel::Variance(v),
        None => NoiseLevel::SnrDb(cfg.plant.snr_db),
    };
    let resp = plantsim::simulate_with_snr(&plant, &u, level, seed::derive(cfg.seed, "simulate/innovation"))
        .map_err(plant_err)?;
    let tp: Vec<f64> = (0..u.len()).map(|k| k as f64 * plant.ts).collect();
    let mut io = TimeSeriesFile::new(tp).map_err(|e| CliError::Data(e.to_string()))?;
    io.push("u", u).expect("fresh column");
    io.push("y", resp.y).expect("fresh column");
    let p2 = write_series(out, PLANT_IO_FILE, &io)?;
    Ok(format!(
        "wrote {} ({} rows, {} sensors)\nwrote {} ({} rows, innovation variance {:e})",
        p1.display(),
        sensors.len(),
        cfg.sensors.len(),
        p2.display(),
        io.len(),
        resp.lambda
    ))
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

struct LocalSeries {
    t: Vec<f64>,
    tracks: Vec<LocalTrack>,
}

impl LocalSeries {
    /// Latest track at or before `t`.
    fn at(&self, t: f64) -> Option<&LocalTrack> {
        let i = self.t.partition_point(|&x| x <= t + fusion::TIME_TOLERANCE);
        i.checked_sub(1).map(|i| &self.tracks[i])
    }
}

/// Local filters plus track fusion over a sensors file. Columns `z_<name>`
/// are matched against the configured sensors; sensors without a column are
/// left out.
pub fn fuse(cfg: &ExperimentConfig, input: &Path, out: &Path) -> Result<(String, FuseSummary), CliError> {
    let data = read_series(input)?;
    let sensors: Vec<_> = cfg.sensors.iter().filter(|s| data.column(&s.column()).is_some()).collect();
    if sensors.is_empty() {
        let want: Vec<String> = cfg.sensors.iter().map(|s| s.column()).collect();
        return Err(CliError::Data(format!("{}: none of the columns {want:?} present", input.display())));
    }
    let process = cfg.process();
    let mut locals = Vec::with_capacity(sensors.len());
    let mut sites = Vec::with_capacity(sensors.len());
    for s in &sensors {
        let meas = MeasurementModel::new(s.filter_variance, s.id).map_err(|e| CliError::Config(e.to_string()))?;
        let z = data.column(&s.column()).expect("filtered above");
        let samples: Vec<(f64, Option<f64>)> =
            data.t.iter().zip(z).map(|(&t, &z)| (t, z.is_finite().then_some(z))).collect();
        let mut f = LocalFilter::new(process, meas);
        let mut ls = LocalSeries { t: Vec::new(), tracks: Vec::new() };
        for &(t, z) in &samples {
            if let Some(step) = f.step(t, z) {
                let mut state = step.state;
                state.t = t;
                ls.t.push(t);
                ls.tracks.push(LocalTrack::new(s.id, ls.tracks.len() as u64, state, step.cov));
            }
        }
        locals.push(ls);
        sites.push(SiteInput { meas, process, samples });
    }
    let fcfg = FusionConfig { rate: cfg.fusion.rate, staleness_ticks: cfg.fusion.staleness_ticks, model: process };
    let ticks = fusion::run_threaded(sites, fcfg).map_err(|e| CliError::Numerical(format!("fusion: {e}")))?;

    let mut rows_t = Vec::new();
    let mut local_cols: Vec<[Vec<f64>; 3]> = vec![Default::default(); sensors.len()];
    let mut fused_cols: [Vec<f64>; 5] = Default::default();
    let (mut gaps, mut rejected, mut checks, mut violations) = (0, 0, 0, 0);
    for tick in &ticks {
        let f = match tick {
            TickOutcome::Fused(f) => f,
            TickOutcome::Gap { .. } => {
                gaps += 1;
                continue;
            }
            TickOutcome::Rejected { .. } => {
                rejected += 1;
                continue;
            }
        };
        let mut aligned = Vec::with_capacity(sensors.len());
        for ls in &locals {
            match ls.at(f.t) {
                Some(tr) => aligned.push(fusion::align(tr, f.t, &process).map_err(|e| CliError::Numerical(e.to_string()))?),
                None => break,
            }
        }
        if aligned.len() != sensors.len() {
            continue;
        }
        for a in &aligned {
            if f.contributors.contains(&a.sensor_id) {
                checks += 1;
                if !f.dominated_by(&a.cov, 1e-9) {
                    violations += 1;
                }
            }
        }
        rows_t.push(f.t);
        for (cols, a) in local_cols.iter_mut().zip(&aligned) {
            cols[0].push(a.state.d);
            cols[1].push(a.state.v);
            cols[2].push(a.cov.p11);
        }
        for (col, v) in fused_cols
            .iter_mut()
            .zip([f.state.d, f.state.v, f.cov.p11, f.cov.p22, f.contributors.len() as f64])
        {
            col.push(v);
        }
    }

    let mut file = TimeSeriesFile::new(rows_t.clone()).map_err(|e| CliError::Numerical(e.to_string()))?;
    for (s, cols) in sensors.iter().zip(local_cols) {
        let [d, v, p] = cols;
        file.push(format!("d_{}", s.name), d).expect("unique");
        file.push(format!("v_{}", s.name), v).expect("unique");
        file.push(format!("p11_{}", s.name), p).expect("unique");
    }
    for (name, col) in ["d_fused", "v_fused", "p11_fused", "p22_fused", "n_sensors"].into_iter().zip(fused_cols) {
        file.push(name, col).expect("unique");
    }
    let p_out = write_series(out, FUSED_FILE, &file)?;

    let warm = cfg.fusion.warmup_s;
    let post: Vec<usize> = (0..data.len()).filter(|&i| data.t[i] >= warm).collect();
    let fused_d = file.column("d_fused").expect("written");
    let fused_post: Vec<f64> =
        rows_t.iter().zip(fused_d).filter(|(t, _)| **t >= warm).map(|(_, d)| *d).collect();
    let (_, fused_var) = mean_var(&fused_post);
    let mut summaries = Vec::new();
    for (s, ls) in sensors.iter().zip(&locals) {
        let z = data.column(&s.column()).expect("present");
        let raw: Vec<f64> = post.iter().map(|&i| z[i]).filter(|v| v.is_finite()).collect();
        let filt: Vec<f64> =
            ls.t.iter().zip(&ls.tracks).filter(|(t, _)| **t >= warm).map(|(_, tr)| tr.state.d).collect();
        let (_, rv) = mean_var(&raw);
        let (_, fv) = mean_var(&filt);
        summaries.push(SensorSummary {
            name: s.name.clone(),
            sensor_id: s.id,
            raw_variance: rv,
            filtered_variance: fv,
            variance_reduction_pct: 100.0 * (1.0 - fv / rv),
            fused_reduction_pct: 100.0 * (1.0 - fused_var / rv),
        });
    }
    let fused_rmse_vs_truth = data.column("truth").and_then(|truth| {
        let e2: Vec<f64> = rows_t
            .iter()
            .zip(fused_d)
            .filter(|(t, _)| **t >= warm)
            .filter_map(|(t, d)| {
                let i = data.t.partition_point(|&x| x < t - fusion::TIME_TOLERANCE);
                (i < data.len() && (data.t[i] - t).abs() <= fusion::TIME_TOLERANCE).then(|| (d - truth[i]).powi(2))
            })
            .collect();
        (!e2.is_empty()).then(|| (e2.iter().sum::<f64>() / e2.len() as f64).sqrt())
    });
    let summary = FuseSummary {
        warmup_s: warm,
        ticks: ticks.len(),
        fused_ticks: file.len(),
        gap_ticks: gaps,
        rejected_ticks: rejected,
        post_warmup_samples: fused_post.len(),
        sensors: summaries,
        fused_variance: fused_var,
        fused_std: fused_var.sqrt(),
        fused_rmse_vs_truth,
        dominance_checks: checks,
        dominance_violations: violations,
    };
    let p_sum = write_json(out, FUSE_SUMMARY_FILE, &summary)?;

    let mut msg = format!("wrote {} ({} rows)\nwrote {}\n", p_out.display(), file.len(), p_sum.display());
    for s in &summary.sensors {
        msg.push_str(&format!(
            "{}: raw variance {:.4} mm², filtered {:.4} mm², reduction {:.2}%\n",
            s.name, s.raw_variance, s.filtered_variance, s.variance_reduction_pct
        ));
    }
    msg.push_str(&format!(
        "fused std {:.4} mm over {} post-warm-up ticks; covariance dominance {}/{} ticks",
        summary.fused_std,
        summary.post_warmup_samples,
        checks - violations,
        checks
    ));
    Ok((msg, summary))
}

/// Order sweep over a `t, u, y` record and export of the chosen model.
pub fn identify(cfg: &ExperimentConfig, input: &Path, out: &Path) -> Result<String, CliError> {
    let data = read_series(input)?;
    let bad = |e: SeriesError| CliError::Data(format!("{}: {e}", input.display()));
    let u = data.require("u").map_err(bad)?.to_vec();
    let y = data.require("y").map_err(bad)?.to_vec();
    if data.len() < 2 {
        return Err(CliError::Data(format!("{}: need at least two rows", input.display())));
    }
    let ts = data.t[1] - data.t[0];
    for (i, w) in data.t.windows(2).enumerate() {
        if ((w[1] - w[0]) - ts).abs() > 1e-6 * ts {
            return Err(CliError::Data(format!(
                "{}: line {}: samples are not uniformly spaced",
                input.display(),
                i + 3
            )));
        }
    }
    let ds = IdDataset::new(u, y, ts, cfg.identify.split).map_err(sysid_err)?;
    let sweep = sysid::order_sweep(&ds, &cfg.identify.orders, &cfg.identify.options(), Exec::default());
    write_text(out, SWEEP_CSV_FILE, &sweep.to_csv())?;
    write_text(out, SWEEP_TXT_FILE, &sweep.to_text())?;
    let order = match cfg.identify.order.or_else(|| sweep.selected_order()) {
        Some(o) => o,
        None => {
            let errs: Vec<String> = sweep
                .rows
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("order {}: {e}", r.order)))
                .collect();
            return Err(CliError::Numerical(format!("no order could be realized ({})", errs.join("; "))));
        }
    };
    let row = sweep.rows.iter().find(|r| r.order == order).expect("order is in the sweep");
    let fit = row.outcome.as_ref().map_err(|e| CliError::Numerical(format!("order {order}: {e}")))?;
    let model = &fit.realization.model;
    let report = ModelReport {
        order,
        poles: poles_of(model),
        singular_values: fit.realization.singular_values.clone(),
        refined: fit.realization.refined,
        train_mse: fit.train.mse,
        train_fit_pct: fit.train.fit_pct,
        test_mse: fit.test.mse,
        test_fit_pct: fit.test.fit_pct,
        test_fpe: fit.test.fpe,
    };
    let p = write_json(out, MODEL_FILE, &ModelFile::from_model(model, Some(report)))?;
    Ok(format!(
        "{}\nselected order {order}; test fit {}\nwrote {}",
        sweep.to_text().trim_end(),
        fit.test.fit_pct.map_or("n/a".into(), |f| format!("{f:.2}%")),
        p.display()
    ))
}

/// Loads a model file, or the built-in bladder plant when no path is given.
pub fn load_model(path: Option<&Path>) -> Result<StateSpaceModel, CliError> {
    let Some(path) = path else {
        return Ok(bladder_plant());
    };
    let text = read_text(path)?;
    let f: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    f.to_model().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn design_from_config(cfg: &ExperimentConfig, model: &StateSpaceModel) -> Result<LqgDesign, CliError> {
    let w = cfg.design.resolve(model.n(), model.m(), model.p()).map_err(|e| CliError::Config(e.to_string()))?;
    lqg::design(model, &w.weights, &w.qe, &w.re).map_err(lqg_err)
}

pub fn design(cfg: &ExperimentConfig, model_path: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let model = load_model(model_path)?;
    let d = design_from_config(cfg, &model)?;
    let file = DesignFile::from_design(&model, &d);
    let p = write_json(out, DESIGN_FILE, &file)?;
    Ok(format!(
        "regulator residual {:e} ({:?}), observer residual {:e} ({:?})\nspectral radius: regulator {:.6}, observer {:.6}\nwrote {}",
        d.regulator_residual,
        d.regulator_method,
        d.observer_residual,
        d.observer_method,
        d.rho_regulator,
        d.rho_observer,
        p.display()
    ))
}

pub fn closed_loop_config(cfg: &ExperimentConfig) -> ClosedLoopConfig {
    let cl = &cfg.closedloop;
    ClosedLoopConfig {
        horizon_s: cl.horizon_s,
        reference: cl.reference.to_core(),
        sensors: cfg.loop_sensors(),
        process: cfg.process(),
        innovation_variance: cl.innovation_variance,
        u_limit: cl.u_limit,
        noiseless: cl.noiseless,
        seed: cfg.seed,
    }
}

pub fn closedloop(
    cfg: &ExperimentConfig,
    model_path: Option<&Path>,
    design_path: Option<&Path>,
    out: &Path,
) -> Result<(String, MetricsFile), CliError> {
    let model = load_model(model_path)?;
    let d = match design_path {
        Some(p) => {
            let text = read_text(p)?;
            let f: DesignFile =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let d = f.to_design().map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            f.check_against(&model, &d).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            d
        }
        None => design_from_config(cfg, &model)?,
    };
    let clc = closed_loop_config(cfg);
    let trace = lqg::closed_loop(&model, &d, &clc).map_err(lqg_err)?;
    if trace.y_true.iter().chain(&trace.u).any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("closed-loop trace became non-finite".into()));
    }
    let metrics = TrackingMetrics::compute(&trace, cfg.closedloop.band, cfg.closedloop.dwell);

    let mut file = TimeSeriesFile::new(trace.t.clone()).map_err(|e| CliError::Numerical(e.to_string()))?;
    file.push("r", trace.r.clone()).expect("unique");
    file.push("y_true", trace.y_true.clone()).expect("unique");
    file.push("y_meas", trace.y_meas.clone()).expect("unique");
    file.push("u", trace.u.clone()).expect("unique");
    for i in 0..model.n() {
        file.push(format!("xhat_{}", i + 1), trace.xhat.iter().map(|x| x[i]).collect()).expect("unique");
    }
    let p1 = write_series(out, TRACE_FILE, &file)?;
    let mf = MetricsFile::new(cfg.seed, cfg.closedloop.horizon_s, trace.len(), &metrics, &trace.u);
    let p2 = write_json(out, METRICS_FILE, &mf)?;
    let st = mf.settling_time_s.map_or("not settled".to_string(), |s| format!("{s:.2} s"));
    Ok((
        format!(
            "settling time {st}; overshoot {:.3} mm; steady-state error mean {:.3} mm, std {:.3} mm, p95 |e| {:.3} mm\nwrote {}\nwrote {}",
            metrics.overshoot,
            metrics.ss_mean,
            metrics.ss_std,
            metrics.ss_p95_abs,
            p1.display(),
            p2.display()
        ),
        mf,
    ))
}
