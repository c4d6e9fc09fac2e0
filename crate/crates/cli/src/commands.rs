use std::fmt::Write as _;
use std::path::PathBuf;

use qcm_core::analysis::{
    backflow_detect, extract, long_time_state, relative_entropy, stationary_state, ObservableSet,
};
use qcm_core::dynamics::{
    memory_kernel, propagate_master, solve_nonmarkovian, waiting_time_density,
};
use qcm_core::linalg::{DensityMatrix, C64};
use qcm_core::models::{build_model, named_state, ModelSpec};
use qcm_core::trajectories::{ensemble_fold, RunningStats, TrajectoryConfig};
use qcm_core::verify::{self, CriterionReport};
use qcm_core::{Error, TimeGrid, TimeSeries};

use crate::config::{RawConfig, RunConfig};
use crate::output::{output_path, series_csv, write_atomic};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn model_of(cfg: &RunConfig) -> CliResult<ModelSpec> {
    let rho = named_state(&cfg.rho0).map_err(|e| CliError::Config(e.to_string()))?;
    build_model(&cfg.model, &cfg.params, &rho).map_err(|e| CliError::Config(e.to_string()))
}

fn grid_of(cfg: &RunConfig) -> CliResult<TimeGrid> {
    TimeGrid::covering(cfg.t_max, cfg.h).map_err(|e| CliError::Config(e.to_string()))
}

/// The reference `ρ_∞` of the system: the unique stationary marginal when the
/// embedding has one, the long-time marginal otherwise.
pub fn reference_state(m: &ModelSpec) -> CliResult<DensityMatrix> {
    let full = match stationary_state(&m.bundle().total) {
        Ok(s) => s,
        Err(Error::DegenerateStationary { .. }) => {
            long_time_state(&m.bundle().total, m.initial_state(), 400.0 / m.gamma())?
        }
        Err(e) => return Err(e.into()),
    };
    Ok(full.partial_trace(&[0])?)
}

/// Observables on the composite state; the second set keeps only those that
/// live on the system factor.
fn observables(cfg: &RunConfig, m: &ModelSpec) -> CliResult<(ObservableSet, ObservableSet)> {
    let mut full = ObservableSet::new();
    let mut system = ObservableSet::new();
    for name in &cfg.observables {
        let (f, s) = match name.as_str() {
            "coherence" => (
                full.element("c", &[0], 0, 1),
                system.element("c", &[0], 0, 1),
            ),
            "populations" => (
                full.element("p_plus", &[0], 0, 0)
                    .element("p_minus", &[0], 1, 1),
                system
                    .element("p_plus", &[0], 0, 0)
                    .element("p_minus", &[0], 1, 1),
            ),
            "purity" => (full.purity("purity", &[0]), system.purity("purity", &[0])),
            "entropy" => {
                let r = reference_state(m)?;
                (
                    full.relative_entropy("E", &[0], r.clone()),
                    system.relative_entropy("E", &[0], r),
                )
            }
            "ancilla" => {
                let mut f = full;
                for l in 0..m.ancilla().dim() {
                    f = f.element(format!("a{l}"), &[1], l, l);
                }
                (f, system)
            }
            "auxiliary" => {
                if !m.is_tripartite() {
                    return Err(CliError::Config(format!(
                        "model `{}` has no auxiliary factor",
                        m.name()
                    )));
                }
                (full.qubit("b", &[2]), system)
            }
            other => return Err(CliError::Config(format!("unknown observable `{other}`"))),
        };
        full = f;
        system = s;
    }
    Ok((full, system))
}

fn write_series(cfg: &RunConfig, suffix: &str, series: &TimeSeries) -> CliResult<PathBuf> {
    let path = output_path(&cfg.prefix, suffix);
    write_atomic(&path, series_csv(series).as_bytes())?;
    Ok(path)
}

pub fn cmd_evolve(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let m = model_of(cfg)?;
    let grid = grid_of(cfg)?;
    let (full_obs, sys_obs) = observables(cfg, &m)?;
    let states = propagate_master(&m.bundle().total, m.initial_state(), &grid)?;
    let mut written = vec![write_series(
        cfg,
        "master",
        &extract(&states, &grid, &full_obs)?,
    )?];
    if m.is_tripartite() {
        eprintln!("note: `{}` has a non-semigroup inter-collision map; only the embedding route is written", m.name());
        return Ok(written);
    }
    if sys_obs.is_empty() {
        eprintln!("note: no system observables selected; skipping the convolution route");
        return Ok(written);
    }
    let kernel = memory_kernel(m.ancilla(), &grid)?;
    let nm = solve_nonmarkovian(
        m.system_generator(),
        &m.collision_generator(),
        &kernel,
        m.system_initial_state(),
        &grid,
    )?;
    written.push(write_series(
        cfg,
        "nonmarkovian",
        &extract(&nm, &grid, &sys_obs)?,
    )?);
    Ok(written)
}

struct TrajectoryOutput {
    values: Vec<f64>,
    jumps: Vec<f64>,
    single: Option<TimeSeries>,
}

pub fn cmd_trajectories(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let Some(traj) = &cfg.trajectories else {
        return Err(CliError::Config(
            "the trajectories command needs traj.n / traj.seed".into(),
        ));
    };
    let m = model_of(cfg)?;
    let grid = grid_of(cfg)?;
    let (obs, _) = observables(cfg, &m)?;
    let complex = obs.is_complex();
    let width: usize = complex.iter().map(|&c| if c { 2 } else { 1 }).sum();
    let mut tcfg = TrajectoryConfig::new(grid, traj.seed, m.gamma());
    tcfg.tolerances = cfg.tolerances;

    let flatten = |row: &[C64], out: &mut Vec<f64>| {
        for (z, &c) in row.iter().zip(&complex) {
            out.push(z.re);
            if c {
                out.push(z.im);
            }
        }
    };
    let mut stats = RunningStats::new(grid.len() * width);
    let mut jumps = String::from("trajectory_index,jump_time\n");
    let mut singles = Vec::new();
    ensemble_fold(
        &m,
        traj.n_traj,
        &tcfg,
        |rec| {
            let mut values = Vec::with_capacity(grid.len() * width);
            let mut rows = Vec::with_capacity(grid.len());
            for s in &rec.states {
                let row = obs.evaluate(s)?;
                flatten(&row, &mut values);
                rows.push(row);
            }
            let single = if traj.record.contains(&rec.trajectory_index) {
                Some(obs.to_series(&grid, &rows)?)
            } else {
                None
            };
            Ok(TrajectoryOutput {
                values,
                jumps: rec.jump_times,
                single,
            })
        },
        |out| {
            stats.push(&out.values);
            // The sink sees trajectories in index order.
            let index = stats.count() - 1;
            for t in &out.jumps {
                let _ = writeln!(jumps, "{index},{t:.16e}");
            }
            if let Some(s) = out.single {
                singles.push((index, s));
            }
            Ok(())
        },
    )?;

    let mean = stats.mean();
    let se = stats.stderr();
    let column = |data: &[f64], k: usize| -> Vec<f64> {
        (0..grid.len()).map(|j| data[j * width + k]).collect()
    };
    let mut series = TimeSeries::new(grid);
    let mut k = 0;
    let mut errors = Vec::new();
    for (o, &c) in obs.selections.iter().zip(&complex) {
        if c {
            let re = column(mean, k);
            let im = column(mean, k + 1);
            series.push_complex(
                o.name(),
                re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect(),
            )?;
            errors.push((format!("se_re_{}", o.name()), column(&se, k)));
            errors.push((format!("se_im_{}", o.name()), column(&se, k + 1)));
            k += 2;
        } else {
            series.push_real(o.name(), column(mean, k))?;
            errors.push((format!("se_{}", o.name()), column(&se, k)));
            k += 1;
        }
    }
    for (name, v) in errors {
        series.push_real(name, v)?;
    }

    let mut written = vec![write_series(cfg, "mean", &series)?];
    let jumps_path = output_path(&cfg.prefix, "jumps");
    write_atomic(&jumps_path, jumps.as_bytes())?;
    written.push(jumps_path);
    for (index, s) in singles {
        written.push(write_series(cfg, &format!("traj{index}"), &s)?);
    }
    Ok(written)
}

pub fn cmd_kernel(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let m = model_of(cfg)?;
    let series = memory_kernel(m.ancilla(), &grid_of(cfg)?)?;
    Ok(vec![write_series(cfg, "kernel", &series)?])
}

pub fn cmd_wtd(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let m = model_of(cfg)?;
    let series = waiting_time_density(m.ancilla(), &grid_of(cfg)?)?;
    Ok(vec![write_series(cfg, "wtd", &series)?])
}

/// Writes the entropy series and returns the `key=value` report.
pub fn cmd_backflow(cfg: &RunConfig) -> CliResult<(Vec<PathBuf>, Vec<String>)> {
    let m = model_of(cfg)?;
    let grid = grid_of(cfg)?;
    let reference = reference_state(&m)?;
    let states = propagate_master(&m.bundle().total, m.initial_state(), &grid)?;
    let e = states
        .iter()
        .map(|s| relative_entropy(&s.partial_trace(&[0])?, &reference))
        .collect::<qcm_core::Result<Vec<_>>>()?;
    let series = TimeSeries::new(grid).with_real("E", e)?;
    let path = write_series(cfg, "entropy", &series)?;
    let mut report = vec![
        format!("backflow.model={}", m.name()),
        format!("backflow.E0={:.16e}", series.real("E")?[0]),
    ];
    if grid.len() >= 2 {
        let r = backflow_detect(&series, "E", 1e-9)?;
        report.push(format!("backflow.detected={}", r.detected()));
        report.push(format!("backflow.max_rise={:.6e}", r.max_rise));
        for (a, b) in &r.pairs {
            report.push(format!("backflow.pair={a:.6},{b:.6}"));
        }
    } else {
        report.push("backflow.detected=false".into());
    }
    Ok((vec![path], report))
}

/// CSV output of a fixed trajectory run on `threads` workers.
fn trajectory_bytes(threads: usize, seed: u64) -> CliResult<Vec<(String, Vec<u8>)>> {
    static RUN: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let dir = std::env::temp_dir().join(format!(
        "qcm-determinism-{}-{}",
        std::process::id(),
        RUN.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    ));
    let mut raw = RawConfig::parse(
        "model.name = dephasing_coherent\nmodel.gamma = 1\nmodel.delta = 6\n\
         grid.h = 0.05\ngrid.t_max = 10\ntraj.n = 300\ntraj.record = 0, 7",
    )
    .map_err(|e| CliError::Config(e.0))?;
    raw.set("traj.seed", &seed.to_string());
    raw.set("out.prefix", &dir.join("run").to_string_lossy());
    let cfg = raw.resolve().map_err(|e| CliError::Config(e.0))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let paths = pool.install(|| cmd_trajectories(&cfg))?;
    let mut out = Vec::new();
    for p in paths {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, std::fs::read(&p)?));
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(out)
}

/// Library-level determinism plus byte-identical CSVs across repeated runs
/// and worker counts.
pub fn criterion_13(seed: u64) -> CriterionReport {
    let mut r = verify::criterion_13_core(seed);
    let outcome = (|| -> CliResult<(bool, bool)> {
        let a = trajectory_bytes(1, seed)?;
        let b = trajectory_bytes(1, seed)?;
        let c = trajectory_bytes(4, seed)?;
        Ok((a == b, a == c))
    })();
    match outcome {
        Ok((repeat, threads)) => {
            r.metrics
                .push(("csv_repeat_identical".into(), repeat.to_string()));
            r.metrics
                .push(("csv_threads_identical".into(), threads.to_string()));
            if !(repeat && threads) {
                r.passed = false;
                r.notes.push("CSV outputs differ".into());
            }
        }
        Err(e) => {
            r.passed = false;
            r.notes.push(format!("error: {e}"));
        }
    }
    r
}

/// The full numbered suite, with the CSV-level determinism check.
pub fn verify_all(seed: u64) -> Vec<CriterionReport> {
    verify::run_all(seed)
        .into_iter()
        .map(|r| if r.id == "13" { criterion_13(seed) } else { r })
        .collect()
}

pub fn cmd_verify_config(cfg: &RunConfig) -> CliResult<Vec<CriterionReport>> {
    Ok(vec![verify::model_checks(&model_of(cfg)?)])
}

pub fn print_reports(reports: &[CriterionReport]) -> CliResult<()> {
    for r in reports {
        println!("{r}");
    }
    println!();
    for r in reports {
        for line in r.key_values() {
            println!("{line}");
        }
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.id.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} of {} failed ({})",
            failed.len(),
            reports.len(),
            failed.join(", ")
        )))
    }
}
