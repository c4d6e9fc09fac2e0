use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qcm_core::models::{named_state, ClosedForm};
use qcm_core::verify::{ks_distance, TabulatedCdf};
use qcm_core::TimeSeries;

fn qcm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcm"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn read_series(path: &Path) -> TimeSeries {
    TimeSeries::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const DEPHASING: &str = "model.name = dephasing_coherent\nmodel.gamma = 1\nmodel.delta = 6\n";

#[test]
fn evolve_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "a.cfg",
        &format!(
            "{DEPHASING}grid.h = 0.001\ngrid.t_max = 5\nobs = coherence\nout.prefix = out/a\n"
        ),
    );
    let out = qcm(&["evolve", "a.cfg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let master = read_series(&dir.path().join("out/a_master.csv"));
    let nm = read_series(&dir.path().join("out/a_nonmarkovian.csv"));
    let (a, b) = (master.complex("c").unwrap(), nm.complex("c").unwrap());
    let err = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.re - y.re).abs())
        .fold(0.0, f64::max);
    assert!(err < 5e-4, "{err}");
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "a.cfg",
        &format!("{DEPHASING}grid.h = 0.1\ngrid.t_max = 3\nobs = coherence, purity\n"),
    );
    assert!(qcm(&["evolve", "a.cfg"], dir.path()).status.success());
    let text = std::fs::read_to_string(dir.path().join("qcm_master.csv")).unwrap();
    let parsed = TimeSeries::from_csv(&text).unwrap();
    assert_eq!(parsed.to_csv(), text);
    assert_eq!(parsed.grid().len(), 31);
}

#[test]
fn zero_length_grid_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "a.cfg", &format!("{DEPHASING}grid.t_max = 0\n"));
    assert!(qcm(&["evolve", "a.cfg"], dir.path()).status.success());
    let text = std::fs::read_to_string(dir.path().join("qcm_master.csv")).unwrap();
    assert_eq!(
        text,
        "t,re_c,im_c,re_p_plus,im_p_plus,re_p_minus,im_p_minus\n"
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcm(&["evolve", "--model", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(
        msg.contains("dephasing_coherent") && msg.contains("tripartite_classical"),
        "{msg}"
    );
    assert_eq!(
        qcm(&["evolve", "missing.cfg"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        qcm(&["wtd", "--model", "dephasing_coherent"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        qcm(
            &[
                "trajectories",
                "--model",
                "dephasing_coherent",
                "--set",
                "model.gamma=1",
                "--set",
                "model.delta=1"
            ],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(qcm(&["verify"], dir.path()).status.code(), Some(2));
    assert_eq!(qcm(&["frobnicate"], dir.path()).status.code(), Some(2));
    let ok = qcm(
        &[
            "verify",
            "--model",
            "depolarizing",
            "--set",
            "model.gamma=1",
            "--set",
            "model.delta=2",
            "--set",
            "model.p=0.5",
        ],
        dir.path(),
    );
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    assert!(String::from_utf8_lossy(&ok.stdout).contains("criterion.model.passed=true"));
}

#[test]
fn kernel_and_wtd_match_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "a.cfg",
        &format!("{DEPHASING}grid.h = 0.01\ngrid.t_max = 10\n"),
    );
    assert!(qcm(&["kernel", "a.cfg"], dir.path()).status.success());
    assert!(qcm(&["wtd", "a.cfg"], dir.path()).status.success());
    let k = read_series(&dir.path().join("qcm_kernel.csv"));
    let w = read_series(&dir.path().join("qcm_wtd.csv"));
    let (k_exact, w_exact) = (
        ClosedForm::CoherentKernel {
            gamma: 1.0,
            delta: 6.0,
        },
        ClosedForm::CoherentWtd {
            gamma: 1.0,
            delta: 6.0,
        },
    );
    for (j, t) in k.grid().times().into_iter().enumerate() {
        assert!((k.real("k").unwrap()[j] - k_exact.eval_real(t).unwrap()).abs() < 1e-8);
        assert!((w.real("w").unwrap()[j] - w_exact.eval_real(t).unwrap()).abs() < 1e-8);
    }

    write_config(
        dir.path(),
        "e.cfg",
        "model.name = erlang_chain\nmodel.gamma = 1\nmodel.m = 2\nout.prefix = e\n",
    );
    assert!(qcm(&["wtd", "e.cfg"], dir.path()).status.success());
    let e = read_series(&dir.path().join("e_wtd.csv"));
    for (j, t) in e.grid().times().into_iter().enumerate() {
        assert!((e.real("w").unwrap()[j] - t * t * (-t).exp() / 2.0).abs() < 1e-8);
    }
}

#[test]
fn trajectory_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "t.cfg",
        &format!("{DEPHASING}grid.h = 1\ngrid.t_max = 200\ntraj.n = 250\ntraj.seed = 5\ntraj.record = 3\nobs = coherence\n"),
    );
    let out = qcm(&["trajectories", "t.cfg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // First 40 gaps per trajectory from the jump listing.
    let text = std::fs::read_to_string(dir.path().join("qcm_jumps.csv")).unwrap();
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); 250];
    for line in text.lines().skip(1) {
        let (i, t) = line.split_once(',').unwrap();
        per[i.parse::<usize>().unwrap()].push(t.parse().unwrap());
    }
    let mut gaps = Vec::new();
    for times in &per {
        assert!(times.len() > 40);
        let mut prev = 0.0;
        for &t in &times[..40] {
            gaps.push(t - prev);
            prev = t;
        }
    }
    let w_exact = ClosedForm::CoherentWtd {
        gamma: 1.0,
        delta: 6.0,
    };
    let top = gaps.iter().cloned().fold(0.0, f64::max) + 1.0;
    let cdf = TabulatedCdf::from_density(|t| w_exact.eval_real(t).unwrap(), 1e-3, top);
    let d = ks_distance(&mut gaps, |t| cdf.eval(t));
    assert!(d < 0.02, "KS {d}");

    // The recorded realization: coherence is ±c₀ and flips exactly at jumps.
    let single = read_series(&dir.path().join("qcm_traj3.csv"));
    let c0 = named_state("x_plus").unwrap().element(0, 1).re;
    let jumps = &per[3];
    for (j, t) in single.grid().times().into_iter().enumerate() {
        let flips = jumps.iter().filter(|&&s| s <= t).count();
        let expected = if flips % 2 == 0 { c0 } else { -c0 };
        assert!(
            (single.complex("c").unwrap()[j].re - expected).abs() < 1e-10,
            "t = {t}"
        );
    }
    let mean = read_series(&dir.path().join("qcm_mean.csv"));
    assert!(mean.real("se_re_c").is_ok());
}

#[test]
fn backflow_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.cfg",
        &format!("{DEPHASING}grid.h = 0.01\ngrid.t_max = 10\n"),
    );
    let out = qcm(&["backflow", "c.cfg"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("backflow.detected=true"), "{text}");
    let e = read_series(&dir.path().join("qcm_entropy.csv"));
    assert!((e.real("E").unwrap()[0] - 1.0).abs() < 1e-12);

    write_config(
        dir.path(),
        "i.cfg",
        "model.name = dephasing_incoherent\nmodel.gamma = 1\nmodel.beta = 10\n",
    );
    let text =
        String::from_utf8_lossy(&qcm(&["backflow", "i.cfg"], dir.path()).stdout).into_owned();
    assert!(text.contains("backflow.detected=false"), "{text}");

    write_config(dir.path(), "d.cfg", "model.name = depolarizing\nmodel.gamma = 1\nmodel.delta = 6\nmodel.p = 0.5\nmodel.rho0 = plus\n");
    assert!(qcm(&["backflow", "d.cfg"], dir.path()).status.success());
    let e = read_series(&dir.path().join("qcm_entropy.csv"));
    // |+⟩⟨+| against I/2.
    assert!((e.real("E").unwrap()[0] - 1.0).abs() < 1e-9);
}
