use proptest::prelude::*;
use qcm_core::dynamics::{propagate_master, waiting_time_density};
use qcm_core::linalg::{
    devectorize, max_abs_diff, validate_state, ComplexMatrix, DensityMatrix, Tolerances, C64,
};
use qcm_core::models::{
    build_model, depolarizing, named_state, ClosedForm, ModelSpec, Params, MODEL_NAMES,
};
use qcm_core::TimeGrid;

fn params() -> Params {
    [
        ("gamma", 1.0),
        ("delta", 6.0),
        ("beta", 0.7),
        ("lambda", 2.0),
        ("p", 0.3),
        ("m", 3.0),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), *v))
    .collect()
}

fn models() -> Vec<ModelSpec> {
    let rho = named_state("y_plus").unwrap();
    MODEL_NAMES
        .iter()
        .map(|n| build_model(n, &params(), &rho).unwrap())
        .collect()
}

fn hermitian(n: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(-1.0f64..1.0, 2 * n * n).prop_map(move |xs| {
        let a = ComplexMatrix::from_fn(n, n, |i, j| {
            C64::new(xs[2 * (i * n + j)], xs[2 * (i * n + j) + 1])
        });
        &a + a.adjoint()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generators_annihilate_trace(rho4 in hermitian(4), rho8 in hermitian(8), rho6 in hermitian(6)) {
        for m in models() {
            let rho = match m.factorization().total() {
                4 => &rho4,
                6 => &rho6,
                8 => &rho8,
                d => panic!("unexpected dimension {d}"),
            };
            let out = devectorize(&m.bundle().total.apply_vec(&qcm_core::linalg::vectorize(rho))).unwrap();
            prop_assert!(out.trace().norm() < 1e-12, "{}", m.name());
        }
    }
}

#[test]
fn semigroup_keeps_states_valid() {
    for m in models() {
        for t in [0.1, 1.0, 10.0] {
            let rho = m
                .bundle()
                .total
                .exp(t)
                .unwrap()
                .apply_state(m.initial_state())
                .unwrap();
            let report = validate_state(&rho, Tolerances::default());
            assert!(report.passed(), "{} at t = {t}: {report}", m.name());
        }
    }
}

#[test]
fn total_is_no_jump_plus_jump() {
    for m in models() {
        let b = m.bundle();
        assert!(
            b.total.max_abs_diff(&(&b.no_jump + &b.jump)) < 1e-14,
            "{}",
            m.name()
        );
    }
}

#[test]
fn measurement_output_is_a_reset_product() {
    for m in models() {
        let b = m.bundle();
        let rho = m
            .bundle()
            .total
            .exp(0.8)
            .unwrap()
            .apply_state(m.initial_state())
            .unwrap();
        let out = b.measurement_map.apply(&rho).unwrap();
        let reset = m.ancilla().reset_state();
        let system = out.partial_trace(&[0]).unwrap();
        let ancilla = out.partial_trace(&[1]).unwrap();
        assert_eq!(ancilla.matrix(), reset.matrix(), "{}", m.name());
        let rebuilt = match m.intercollision() {
            Some(ic) => DensityMatrix::product(&[&system, &reset, &DensityMatrix::basis(ic.b0, 2)]),
            None => DensityMatrix::product(&[&system, &reset]),
        };
        assert!(
            max_abs_diff(out.matrix(), rebuilt.matrix()) < 1e-14,
            "{}",
            m.name()
        );
    }
}

#[test]
fn closed_form_waiting_times() {
    let grid = TimeGrid::new(0.01, 1000).unwrap();
    let rho = named_state("x_plus").unwrap();
    for (name, cf) in [
        (
            "dephasing_coherent",
            ClosedForm::CoherentWtd {
                gamma: 1.0,
                delta: 6.0,
            },
        ),
        (
            "depolarizing",
            ClosedForm::CoherentWtd {
                gamma: 1.0,
                delta: 6.0,
            },
        ),
        (
            "tripartite_dephasing",
            ClosedForm::CoherentWtd {
                gamma: 1.0,
                delta: 6.0,
            },
        ),
    ] {
        let m = build_model(name, &params(), &rho).unwrap();
        let w = waiting_time_density(m.ancilla(), &grid).unwrap();
        for (j, x) in w.real("w").unwrap().iter().enumerate() {
            assert!(
                (x - cf.eval_real(grid.time(j)).unwrap()).abs() < 1e-8,
                "{name} at step {j}"
            );
        }
    }
    let m = build_model("erlang_chain", &params(), &rho).unwrap();
    let w = waiting_time_density(m.ancilla(), &grid).unwrap();
    for (j, x) in w.real("w").unwrap().iter().enumerate() {
        let t: f64 = grid.time(j);
        // m = 3: Gamma(4, 1) density t³ e^{−t} / 3!.
        assert!(
            (x - t.powi(3) * (-t).exp() / 6.0).abs() < 1e-8,
            "erlang at step {j}"
        );
    }
}

#[test]
fn depolarizing_relaxes_to_the_maximally_mixed_state() {
    // The slowest mode of the coherent ancilla decays at γ/4, so the
    // deviation is still ~1e-2 at 20/γ; 80/γ brings it below 1e-6.
    let m = depolarizing(1.0, 6.0, 0.5, &named_state("x_plus").unwrap()).unwrap();
    let grid = TimeGrid::new(1.0, 80).unwrap();
    let states = propagate_master(&m.bundle().total, m.initial_state(), &grid).unwrap();
    let s = states.last().unwrap().partial_trace(&[0]).unwrap();
    assert!(max_abs_diff(s.matrix(), DensityMatrix::maximally_mixed(2).matrix()) < 1e-6);
}
