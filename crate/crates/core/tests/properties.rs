use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use softpos_core::estimation::{self, Covariance2, KinematicState, MeasurementModel, ProcessModel};
use softpos_core::fusion::{self, LocalTrack};
use softpos_core::linalg;
use softpos_core::lqg::{self, LqWeights};
use softpos_core::sysid::{self, ArmaxModel};

fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

fn arb_system() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (
        prop::collection::vec(-1.2f64..1.2, 4),
        prop::collection::vec(-1.0f64..1.0, 2),
        prop::collection::vec(-1.0f64..1.0, 4),
        0.05f64..5.0,
    )
        .prop_filter("actuated", |(_, b, _, _)| b[0].abs() + b[1].abs() > 0.2)
        .prop_map(|(a, b, q, r)| {
            let mq = m(2, 2, &q);
            (m(2, 2, &a), m(2, 1, &b), &mq * mq.transpose() + DMatrix::identity(2, 2) * 0.05, m(1, 1, &[r]))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dare_solution_is_stabilizing_psd_fixed_point((a, b, q, r) in arb_system()) {
        prop_assume!(linalg::stabilizable(&a, &b).passed);
        let sol = lqg::solve_dare(&a, &b, &q, &r, None).unwrap();
        prop_assert!(linalg::is_psd(&sol.p, 1e-9));
        prop_assert!(sol.residual <= 1e-8 * (1.0 + sol.p.norm()), "residual {}", sol.residual);
        let k = lqg::lqr_gain(&a, &b, &sol.p, &r, None).unwrap();
        prop_assert!(linalg::spectral_radius(&(&a - &b * &k)) < 1.0);
    }

    #[test]
    fn optimal_cost_equals_quadratic_form((a, b, q, r) in arb_system(), x0 in prop::collection::vec(-1.0f64..1.0, 2)) {
        prop_assume!(linalg::stabilizable(&a, &b).passed);
        let sol = lqg::solve_dare(&a, &b, &q, &r, None).unwrap();
        let k = lqg::lqr_gain(&a, &b, &sol.p, &r, None).unwrap();
        prop_assume!(linalg::spectral_radius(&(&a - &b * &k)) < 0.97);
        let w = LqWeights::new(q, r, None).unwrap();
        let x0 = DVector::from_vec(x0);
        let j = lqg::finite_horizon_cost(&a, &b, &w, &k, &x0, 2000);
        let want = (x0.transpose() * &sol.p * &x0)[0];
        prop_assert!((j - want).abs() <= 1e-8 * want.max(1e-12), "{j} vs {want}");
    }

    #[test]
    fn filter_covariance_stays_psd(
        zs in prop::collection::vec(prop::option::of(-1e3f64..1e3), 1..200),
        sigma_a in 0.0f64..100.0,
        r in 0.1f64..200.0,
    ) {
        let process = ProcessModel::new(estimation::FRAME_INTERVAL, sigma_a).unwrap();
        let mut f = estimation::LocalFilter::new(process, MeasurementModel::new(r, 1).unwrap());
        for (i, z) in zs.iter().enumerate() {
            if let Some(step) = f.step(i as f64 * process.dt, *z) {
                prop_assert!(step.cov.is_psd(1e-9));
                prop_assert!(step.state.is_finite());
                // a measurement can only shrink position variance below r
                if z.is_some() {
                    prop_assert!(step.cov.p11 <= r * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn fusion_shrinks_every_contributor(
        p in prop::collection::vec((0.1f64..100.0, -0.9f64..0.9, 0.1f64..100.0), 1..5),
        d in prop::collection::vec(-1e3f64..1e3, 5),
    ) {
        let tracks: Vec<LocalTrack> = p
            .iter()
            .enumerate()
            .map(|(i, &(p11, rho, p22))| {
                let cov = Covariance2::new(p11, rho * (p11 * p22).sqrt(), p22);
                LocalTrack::new(i as u32 + 1, 0, KinematicState::new(d[i], 0.0, 0, 1.0), cov)
            })
            .collect();
        let f = fusion::fuse(&tracks).unwrap();
        for t in &tracks {
            prop_assert!(f.dominated_by(&t.cov, 1e-9));
        }
        // information weights sum to the identity, so a common position is kept
        let same: Vec<LocalTrack> = tracks.iter().map(|t| LocalTrack { state: KinematicState { d: d[0], ..t.state }, ..*t }).collect();
        let g = fusion::fuse(&same).unwrap();
        prop_assert!((g.state.d - d[0]).abs() <= 1e-9 * (1.0 + d[0].abs()));
        prop_assert!(g.state.v.abs() <= 1e-9 * (1.0 + d[0].abs()));
    }

    #[test]
    fn armax_statespace_round_trip(
        a1 in -0.9f64..0.9, a2 in -0.5f64..0.5,
        b1 in -2.0f64..2.0, b2 in -2.0f64..2.0,
        c1 in -0.8f64..0.8,
    ) {
        let arm = ArmaxModel::new(vec![a1, a2], vec![b1, b2], vec![c1, 0.0]);
        let ss = arm.to_statespace(0.1).unwrap();
        let back = sysid::statespace_to_armax(&ss).unwrap();
        let ss2 = back.to_statespace(0.1).unwrap();
        // same impulse response either way
        let h1 = ss.impulse_response(30);
        let h2 = ss2.impulse_response(30);
        for (x, y) in h1.iter().zip(&h2) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
