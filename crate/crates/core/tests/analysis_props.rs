use proptest::prelude::*;
use qcm_core::analysis::{backflow_detect, long_time_state, relative_entropy};
use qcm_core::dynamics::propagate_master;
use qcm_core::linalg::{ComplexMatrix, DensityMatrix, C64};
use qcm_core::models::{dephasing_coherent, dephasing_incoherent, named_state};
use qcm_core::{TimeGrid, TimeSeries};

fn full_rank_qubit() -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0f64..1.0, 8).prop_map(|x| {
        let a = ComplexMatrix::from_fn(2, 2, |i, j| {
            C64::new(x[2 * (2 * i + j)], x[2 * (2 * i + j) + 1])
        });
        let m = &a * a.adjoint() + ComplexMatrix::identity(2, 2) * C64::new(0.05, 0.0);
        let t = m.trace();
        DensityMatrix::single(m / t).unwrap()
    })
}

proptest! {
    #[test]
    fn klein_inequality(rho in full_rank_qubit(), sigma in full_rank_qubit()) {
        prop_assert!(relative_entropy(&rho, &sigma).unwrap() >= -1e-12);
        prop_assert!(relative_entropy(&rho, &rho).unwrap().abs() < 1e-10);
    }

    #[test]
    fn backflow_ignores_offsets(values in prop::collection::vec(-1.0f64..1.0, 2..60), c in -100.0f64..100.0) {
        let grid = TimeGrid::new(0.1, values.len() - 1).unwrap();
        let a = TimeSeries::new(grid).with_real("E", values.clone()).unwrap();
        let b = TimeSeries::new(grid).with_real("E", values.iter().map(|v| v + c).collect()).unwrap();
        let ra = backflow_detect(&a, "E", 1e-9).unwrap();
        let rb = backflow_detect(&b, "E", 1e-9).unwrap();
        prop_assert_eq!(ra.detected(), rb.detected());
        prop_assert_eq!(ra.pairs, rb.pairs);
        prop_assert!((ra.max_rise - rb.max_rise).abs() < 1e-9);
    }
}

fn entropy_rise(m: &qcm_core::models::ModelSpec) -> qcm_core::analysis::BackflowReport {
    let grid = TimeGrid::new(0.01, 2000).unwrap();
    let states = propagate_master(&m.bundle().total, m.initial_state(), &grid).unwrap();
    let reference = long_time_state(&m.bundle().total, m.initial_state(), 400.0)
        .unwrap()
        .partial_trace(&[0])
        .unwrap();
    let e = states
        .iter()
        .map(|s| relative_entropy(&s.partial_trace(&[0]).unwrap(), &reference).unwrap())
        .collect();
    backflow_detect(&TimeSeries::new(grid).with_real("E", e).unwrap(), "E", 1e-9).unwrap()
}

#[test]
fn backflow_tracks_coherent_oscillation() {
    let rho = named_state("x_plus").unwrap();
    for (delta, expected) in [(0.1, false), (1.0, true), (6.0, true)] {
        let r = entropy_rise(&dephasing_coherent(1.0, delta, &rho).unwrap());
        assert_eq!(
            r.detected(),
            expected,
            "delta = {delta}, max rise {}",
            r.max_rise
        );
    }
}

#[test]
fn incoherent_backflow_needs_comparable_rates() {
    // The incoherent coherence oscillates iff (γ+β)² < 8γβ.
    let rho = named_state("x_plus").unwrap();
    for (beta, expected) in [(0.1, false), (1.0, true), (10.0, false)] {
        let r = entropy_rise(&dephasing_incoherent(1.0, beta, &rho).unwrap());
        assert_eq!(
            r.detected(),
            expected,
            "beta = {beta}, max rise {}",
            r.max_rise
        );
    }
}
