use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use softpos_core::estimation::ProcessModel;
use softpos_core::lqg::{self, ClosedLoopConfig, LoopSensor, LqWeights};
use softpos_core::plantsim::{self, bladder_plant, NoiseLevel, SensorSpec, Trajectory};
use softpos_core::sysid::{self, IdDataset, InputSignalSpec, RealizationOptions};
use softpos_core::Exec;

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn order_sweep(c: &mut Criterion) {
    let p = bladder_plant();
    let u = sysid::design_input(&InputSignalSpec { amplitude: 1e5, length: 4000, seed: 1, hold: 1 });
    let r = plantsim::simulate_with_snr(&p, &u, NoiseLevel::SnrDb(30.0), 2).unwrap();
    let ds = IdDataset::new(u, r.y, p.ts, 0.6).unwrap();
    let orders = [2, 4, 6, 8];
    let opts = RealizationOptions::default();
    let mut g = c.benchmark_group("order_sweep");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sysid::order_sweep(&ds, &orders, &opts, exec))
        });
    }
    g.finish();
}

fn closed_loop_batch(c: &mut Criterion) {
    let m = bladder_plant();
    let d = lqg::design(
        &m,
        &LqWeights::nominal(),
        &(DMatrix::identity(2, 2) * lqg::NOMINAL_QE),
        &DMatrix::from_element(1, 1, lqg::NOMINAL_RE),
    )
    .unwrap();
    let cfg = ClosedLoopConfig {
        horizon_s: 60.0,
        reference: Trajectory::Step { from: 0.0, to: 10.0, at: 0.0 },
        sensors: vec![
            LoopSensor { spec: SensorSpec::xbox(), filter_variance: 70.0 },
            LoopSensor { spec: SensorSpec::v2(), filter_variance: 60.0 },
        ],
        process: ProcessModel::nominal(),
        innovation_variance: plantsim::PLANT_INNOVATION_VARIANCE,
        u_limit: None,
        noiseless: false,
        seed: 0,
    };
    let seeds: Vec<u64> = (0..32).collect();
    let mut g = c.benchmark_group("closed_loop_monte_carlo");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| lqg::monte_carlo(&m, &d, &cfg, &seeds, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, order_sweep, closed_loop_batch);
criterion_main!(benches);
