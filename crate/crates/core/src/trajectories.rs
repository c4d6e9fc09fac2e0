//! Quantum-jump unraveling of an embedding: detection times are drawn from the
//! no-jump survival probability, the measurement map is applied at each
//! detection, and the state evolves under the normalized no-jump propagator in
//! between.
//!
//! Randomness: trajectory `i` of a run with seed `s` draws from ChaCha20 keyed
//! by `s` on stream `i`; the `n`-th uniform drives the `n`-th jump search. A
//! trajectory therefore never depends on which thread ran it or on the other
//! trajectories.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::generators::GeneratorBundle;
use crate::linalg::{
    expm_apply, validate_state, ComplexMatrix, ComplexVector, DensityMatrix, SuperOp, Tolerances,
    C64,
};
use crate::models::ModelSpec;
use crate::series::TimeGrid;

/// Below this survival the conditioned state is numerically meaningless.
const SURVIVAL_FLOOR: f64 = 1e-280;
/// Slack for rounding noise in the survival monotonicity check.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub grid: TimeGrid,
    pub seed: u64,
    pub trajectory_index: u64,
    /// Bisection tolerance for jump times.
    pub root_tol: f64,
    /// Keep pre- and post-jump states of every detection.
    pub record_events: bool,
    pub tolerances: Tolerances,
}

impl TrajectoryConfig {
    /// Samples on `grid`, jump times resolved to `1e-9/γ`.
    pub fn new(grid: TimeGrid, seed: u64, gamma: f64) -> Self {
        Self {
            grid,
            seed,
            trajectory_index: 0,
            root_tol: 1e-9 / gamma,
            record_events: false,
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.trajectory_index = index;
        self
    }

    pub fn recording_events(mut self, on: bool) -> Self {
        self.record_events = on;
        self
    }

    pub fn t_max(&self) -> f64 {
        self.grid.t_max()
    }

    fn check(&self) -> Result<()> {
        if !(self.root_tol > 0.0 && self.root_tol < self.grid.h()) {
            return Err(Error::InvalidParameter(format!(
                "root tolerance {} must be positive and below the sample step {}",
                self.root_tol,
                self.grid.h()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub before: DensityMatrix,
    pub after: DensityMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory_index: u64,
    pub jump_times: Vec<f64>,
    /// Conditioned state at every grid point.
    pub states: Vec<DensityMatrix>,
    /// Empty unless the configuration asked for events.
    pub events: Vec<JumpEvent>,
}

impl TrajectoryRecord {
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Gaps between consecutive detections, the first measured from `t = 0`.
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.jump_times
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    }
}

fn trace_of(v: &ComplexVector, d: usize) -> f64 {
    (0..d).map(|i| v[i + i * d].re).sum()
}

fn normalized(v: &ComplexVector, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    let p = trace_of(v, rho.dim());
    if p.is_nan() || p <= SURVIVAL_FLOOR {
        return Err(Error::SurvivalUnderflow { t });
    }
    DensityMatrix::from_vector(&(v / C64::new(p, 0.0)), rho.factorization().clone())
}

/// `P₀(t|ρ) = Tr[exp(tD)ρ]`.
pub fn survival(bundle: &GeneratorBundle, rho: &DensityMatrix, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("negative time {t}")));
    }
    Ok(trace_of(
        &expm_apply(bundle.no_jump.liouville(), t, &rho.vectorize()),
        rho.dim(),
    ))
}

/// Root-finding controls for [`sample_jump_time`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpSearch {
    /// First bracketing step; later steps double.
    pub initial_step: f64,
    pub root_tol: f64,
}

/// `exp(h·2^k·D)` for every `k` the bracketing and bisection can reach.
struct DyadicSteps {
    h: f64,
    k_min: i32,
    ops: Vec<ComplexMatrix>,
}

impl DyadicSteps {
    fn new(d: &SuperOp, h: f64, root_tol: f64, t_max: f64) -> Result<Self> {
        let k_min = (root_tol / h).log2().floor() as i32 - 1;
        let k_max = (t_max / h).log2().ceil().max(0.0) as i32 + 1;
        let ops = (k_min..=k_max)
            .map(|k| Ok(d.exp(h * 2f64.powi(k))?.liouville().clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { h, k_min, ops })
    }

    /// `exp(dt·D)v`, spending cached steps greedily from the largest.
    fn apply(&self, d_op: &ComplexMatrix, dt: f64, v: &ComplexVector) -> ComplexVector {
        let mut v = v.clone();
        let mut rest = dt;
        for (i, e) in self.ops.iter().enumerate().rev() {
            let s = self.h * 2f64.powi(self.k_min + i as i32);
            while rest >= s {
                v = e * v;
                rest -= s;
            }
        }
        if rest > 0.0 {
            v = expm_apply(d_op, rest, &v);
        }
        v
    }

    fn get(&self, h: f64, k: i32) -> Option<&ComplexMatrix> {
        if h != self.h || k < self.k_min {
            return None;
        }
        self.ops.get((k - self.k_min) as usize)
    }
}

fn advance(
    d_op: &ComplexMatrix,
    steps: Option<&DyadicSteps>,
    h: f64,
    k: Option<i32>,
    dt: f64,
    v: &ComplexVector,
) -> ComplexVector {
    match (steps, k) {
        (Some(s), Some(k)) => match s.get(h, k) {
            Some(e) => e * v,
            None => expm_apply(d_op, dt, v),
        },
        _ => expm_apply(d_op, dt, v),
    }
}

/// Solves `P₀(t|ρ) = r` on `(0, t_window]`. Returns `None` when the survival
/// stays above `r` over the whole window.
pub fn sample_jump_time(
    bundle: &GeneratorBundle,
    rho: &DensityMatrix,
    r: f64,
    t_window: f64,
    search: JumpSearch,
) -> Result<Option<f64>> {
    Ok(search_jump(bundle, None, rho, r, t_window, search)?.map(|(t, _)| t))
}

fn search_jump(
    bundle: &GeneratorBundle,
    steps: Option<&DyadicSteps>,
    rho: &DensityMatrix,
    r: f64,
    t_window: f64,
    search: JumpSearch,
) -> Result<Option<(f64, ComplexVector)>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "uniform draw must lie in (0, 1), got {r}"
        )));
    }
    let d_op = bundle.no_jump.liouville();
    let d = rho.dim();
    let h = search.initial_step;
    let (mut t_lo, mut v_lo, mut p_lo) = (0.0, rho.vectorize(), trace_of(&rho.vectorize(), d));
    // Steps are h·2^k; `k` is dropped once the window clips a step.
    let mut k = Some(0);
    let mut step = h;
    loop {
        if t_lo >= t_window {
            return Ok(None);
        }
        if t_lo + step > t_window {
            step = t_window - t_lo;
            k = None;
        }
        let v_hi = advance(d_op, steps, h, k, step, &v_lo);
        let p_hi = trace_of(&v_hi, d);
        if p_hi > p_lo + MONOTONE_SLACK {
            return Err(Error::NonMonotoneSurvival { t: t_lo + step });
        }
        if p_hi <= r {
            break;
        }
        (t_lo, v_lo, p_lo) = (t_lo + step, v_hi, p_hi);
        step *= 2.0;
        k = k.map(|k| k + 1);
    }
    let mut width = step;
    while width > search.root_tol {
        width *= 0.5;
        k = k.map(|k| k - 1);
        let v_mid = advance(d_op, steps, h, k, width, &v_lo);
        let p_mid = trace_of(&v_mid, d);
        if p_mid > p_lo + MONOTONE_SLACK {
            return Err(Error::NonMonotoneSurvival { t: t_lo + width });
        }
        if p_mid > r {
            (t_lo, v_lo, p_lo) = (t_lo + width, v_mid, p_mid);
        }
    }
    Ok(Some((
        t_lo + 0.5 * width,
        expm_apply(d_op, 0.5 * width, &v_lo),
    )))
}

/// Normalized post-detection state `Jρ / Tr[Jρ]`.
pub fn apply_jump(bundle: &GeneratorBundle, rho: &DensityMatrix) -> Result<DensityMatrix> {
    bundle.measurement_map.apply(rho)
}

/// `exp(tD)ρ / Tr[exp(tD)ρ]`.
pub fn conditional_evolve(
    bundle: &GeneratorBundle,
    rho: &DensityMatrix,
    t: f64,
) -> Result<DensityMatrix> {
    let v = expm_apply(bundle.no_jump.liouville(), t, &rho.vectorize());
    normalized(&v, rho, t)
}

/// One realization from the model's initial state.
pub fn run_trajectory(model: &ModelSpec, cfg: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    cfg.check()?;
    let steps = DyadicSteps::new(
        &model.bundle().no_jump,
        cfg.grid.h(),
        cfg.root_tol,
        cfg.t_max(),
    )?;
    run_with_steps(model, cfg, &steps)
}

fn run_with_steps(
    model: &ModelSpec,
    cfg: &TrajectoryConfig,
    steps: &DyadicSteps,
) -> Result<TrajectoryRecord> {
    cfg.check()?;
    let bundle = model.bundle();
    let grid = &cfg.grid;
    let t_max = grid.t_max();
    let search = JumpSearch {
        initial_step: grid.h(),
        root_tol: cfg.root_tol,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.trajectory_index);

    let mut rho = model.initial_state().clone();
    let mut t = 0.0;
    let mut next_sample = 0usize;
    let mut record = TrajectoryRecord {
        trajectory_index: cfg.trajectory_index,
        jump_times: Vec::new(),
        states: Vec::with_capacity(grid.len()),
        events: Vec::new(),
    };
    loop {
        let r: f64 = rng.sample(Open01);
        let jump = search_jump(bundle, Some(steps), &rho, r, t_max - t, search)?;
        let t_next = jump.as_ref().map(|(tau, _)| t + tau);
        // Samples strictly before the jump (all remaining ones if none).
        let last = match t_next {
            Some(tn) => (0..grid.len()).take_while(|&j| grid.time(j) < tn).last(),
            None => Some(grid.n_steps()),
        };
        if let Some(last) = last.filter(|&l| l >= next_sample) {
            let first_dt = grid.time(next_sample) - t;
            let mut v = steps.apply(bundle.no_jump.liouville(), first_dt, &rho.vectorize());
            for j in next_sample..=last {
                if j > next_sample {
                    v = steps.get(grid.h(), 0).expect("unit step is cached") * &v;
                }
                let state = normalized(&v, &rho, grid.time(j))?;
                let report = validate_state(&state, cfg.tolerances);
                if !report.passed() {
                    return Err(Error::InvalidState { step: j, report });
                }
                v = state.vectorize();
                record.states.push(state);
            }
            next_sample = last + 1;
        }
        let (Some(tn), Some((_, v_jump))) = (t_next, jump) else {
            break;
        };
        let before = normalized(&v_jump, &rho, tn)?;
        let after = apply_jump(bundle, &before)?;
        record.jump_times.push(tn);
        if cfg.record_events {
            record.events.push(JumpEvent {
                time: tn,
                before,
                after: after.clone(),
            });
        }
        rho = after;
        t = tn;
    }
    debug_assert_eq!(record.states.len(), grid.len());
    Ok(record)
}

/// Number of trajectories handed to the worker pool at a time.
pub const BATCH_SIZE: usize = 64;

/// Runs trajectories `0..n_traj`, maps each record in parallel, and feeds the
/// mapped values to `sink` strictly in index order.
pub fn ensemble_fold<T, M, S>(
    model: &ModelSpec,
    n_traj: usize,
    cfg: &TrajectoryConfig,
    map: M,
    sink: S,
) -> Result<()>
where
    T: Send,
    M: Fn(TrajectoryRecord) -> Result<T> + Sync,
    S: FnMut(T) -> Result<()>,
{
    cfg.check()?;
    let steps = DyadicSteps::new(
        &model.bundle().no_jump,
        cfg.grid.h(),
        cfg.root_tol,
        cfg.t_max(),
    )?;
    let run = |i: usize| -> Result<T> {
        let c = TrajectoryConfig {
            trajectory_index: i as u64,
            ..cfg.clone()
        };
        map(run_with_steps(model, &c, &steps)?)
    };
    in_batches(n_traj, run, sink)
}

/// Runs `run(0..n)` in batches of [`BATCH_SIZE`] (in parallel when enabled)
/// and feeds the results to `sink` in index order.
fn in_batches<T, R, S>(n: usize, run: R, mut sink: S) -> Result<()>
where
    T: Send,
    R: Fn(usize) -> Result<T> + Sync,
    S: FnMut(T) -> Result<()>,
{
    let mut start = 0;
    while start < n {
        let end = (start + BATCH_SIZE).min(n);
        #[cfg(feature = "parallel")]
        let batch: Vec<Result<T>> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(&run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let batch: Vec<Result<T>> = (start..end).map(&run).collect();
        for value in batch {
            sink(value?)?;
        }
        start = end;
    }
    Ok(())
}

/// The first `n_gaps` detection gaps of trajectories `0..n_traj`, without
/// sampling states on the grid. Each list is what [`run_trajectory`] would
/// report, truncated; it is shorter when the window ends first.
pub fn first_gaps(
    model: &ModelSpec,
    n_traj: usize,
    n_gaps: usize,
    cfg: &TrajectoryConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.check()?;
    let bundle = model.bundle();
    let steps = DyadicSteps::new(&bundle.no_jump, cfg.grid.h(), cfg.root_tol, cfg.t_max())?;
    let search = JumpSearch {
        initial_step: cfg.grid.h(),
        root_tol: cfg.root_tol,
    };
    let run = |i: usize| -> Result<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut rho = model.initial_state().clone();
        let (mut t, mut gaps) = (0.0, Vec::with_capacity(n_gaps));
        while gaps.len() < n_gaps {
            let r: f64 = rng.sample(Open01);
            let Some((tau, v)) =
                search_jump(bundle, Some(&steps), &rho, r, cfg.t_max() - t, search)?
            else {
                break;
            };
            // Same arithmetic as the full run, so the gaps agree bit for bit.
            let tn = t + tau;
            gaps.push(tn - t);
            rho = apply_jump(bundle, &normalized(&v, &rho, tn)?)?;
            t = tn;
        }
        Ok(gaps)
    };
    let mut out = Vec::with_capacity(n_traj);
    in_batches(n_traj, run, |g| {
        out.push(g);
        Ok(())
    })?;
    Ok(out)
}

/// Running mean and variance (Welford) of a fixed-length real vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "sample length");
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean; zero for fewer than two samples.
    pub fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub grid: TimeGrid,
    pub n_traj: usize,
    pub mean: Vec<DensityMatrix>,
    /// Per element: standard error of the real part in `re`, of the imaginary
    /// part in `im`.
    pub stderr: Vec<ComplexMatrix>,
}

/// Mean conditioned state over trajectories `0..n_traj`.
pub fn ensemble_average(
    model: &ModelSpec,
    n_traj: usize,
    cfg: &TrajectoryConfig,
) -> Result<EnsembleResult> {
    if n_traj == 0 {
        return Err(Error::InvalidParameter(
            "need at least one trajectory".into(),
        ));
    }
    let d = model.factorization().total();
    let per_state = 2 * d * d;
    let samples = cfg.grid.len();
    let mut stats = RunningStats::new(per_state * samples);
    ensemble_fold(
        model,
        n_traj,
        cfg,
        |rec| {
            let mut flat = Vec::with_capacity(per_state * samples);
            for s in &rec.states {
                for z in s.matrix().iter() {
                    flat.push(z.re);
                    flat.push(z.im);
                }
            }
            Ok(flat)
        },
        |flat| {
            stats.push(&flat);
            Ok(())
        },
    )?;
    let unpack = |v: &[f64], j: usize| {
        let chunk = &v[j * per_state..(j + 1) * per_state];
        ComplexMatrix::from_iterator(d, d, chunk.chunks(2).map(|p| C64::new(p[0], p[1])))
    };
    let se = stats.stderr();
    let mean = (0..samples)
        .map(|j| DensityMatrix::new(unpack(stats.mean(), j), model.factorization().clone()))
        .collect::<Result<Vec<_>>>()?;
    let stderr = (0..samples).map(|j| unpack(&se, j)).collect();
    Ok(EnsembleResult {
        grid: cfg.grid,
        n_traj,
        mean,
        stderr,
    })
}

/// Largest deviation of a state from the product of its marginals on the
/// given blocks of factors, in Frobenius norm.
pub fn separability_deviation(rho: &DensityMatrix, blocks: &[Vec<usize>]) -> Result<f64> {
    let fact = rho.factorization();
    let mut covered: Vec<usize> = blocks.iter().flatten().copied().collect();
    covered.sort_unstable();
    if covered != (0..fact.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidParameter(
            "blocks must partition the factors".into(),
        ));
    }
    let marginals = blocks
        .iter()
        .map(|b| Ok((rho.partial_trace(b)?, fact.select(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = fact.total();
    let multi: Vec<Vec<usize>> = (0..n).map(|i| fact.multi_index(i)).collect();
    let mut dev = 0.0;
    for r in 0..n {
        for c in 0..n {
            let mut prod = C64::new(1.0, 0.0);
            for (block, (m, sub)) in blocks.iter().zip(&marginals) {
                let ri = sub.flat_index(&block.iter().map(|&k| multi[r][k]).collect::<Vec<_>>());
                let ci = sub.flat_index(&block.iter().map(|&k| multi[c][k]).collect::<Vec<_>>());
                prod *= m.element(ri, ci);
            }
            dev += (rho.element(r, c) - prod).norm_sqr();
        }
    }
    Ok(dev.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparabilityReport {
    pub per_sample: Vec<f64>,
}

impl SeparabilityReport {
    pub fn max_deviation(&self) -> f64 {
        self.per_sample.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn check_separability(
    record: &TrajectoryRecord,
    blocks: &[Vec<usize>],
) -> Result<SeparabilityReport> {
    let per_sample = record
        .states
        .iter()
        .map(|s| separability_deviation(s, blocks))
        .collect::<Result<_>>()?;
    Ok(SeparabilityReport { per_sample })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{ancilla_generator, AncillaSpec};
    use crate::linalg::{ket_bra, max_abs_diff, Factorization};
    use crate::models::{dephasing_coherent, named_state, sigma_z, tripartite_dephasing};

    fn model() -> ModelSpec {
        dephasing_coherent(1.0, 6.0, &named_state("x_plus").unwrap()).unwrap()
    }

    fn search() -> JumpSearch {
        JumpSearch {
            initial_step: 0.05,
            root_tol: 1e-10,
        }
    }

    /// A bundle whose no-jump part is pure decay of a single level.
    fn decay_bundle(gamma: f64) -> GeneratorBundle {
        let spec = AncillaSpec::new(
            0,
            vec![0.0, gamma],
            SuperOp::zeros(Factorization::single(2)),
        )
        .unwrap();
        let k = crate::generators::KrausSet::new(vec![crate::linalg::identity(1)]).unwrap();
        let ls = SuperOp::zeros(Factorization::single(1));
        let b = crate::generators::build_bipartite(&ls, &spec, &k).unwrap();
        assert!(
            b.no_jump.max_abs_diff(
                &ancilla_generator(&spec)
                    .no_jump
                    .with_factorization(Factorization::new(vec![1, 2]).unwrap())
                    .unwrap()
            ) < 1e-15
        );
        b
    }

    #[test]
    fn first_gaps_match_full_runs() {
        let m = model();
        let cfg = TrajectoryConfig::new(TimeGrid::new(0.1, 150).unwrap(), 9, 1.0);
        let short = first_gaps(&m, 5, 4, &cfg).unwrap();
        for (i, g) in short.iter().enumerate() {
            let full = run_trajectory(&m, &cfg.clone().with_index(i as u64))
                .unwrap()
                .gaps();
            assert_eq!(g.len(), full.len().min(4));
            assert_eq!(g.as_slice(), &full[..g.len()]);
        }
    }

    #[test]
    fn dyadic_apply_matches_expm() {
        let m = model();
        let d = &m.bundle().no_jump;
        let steps = DyadicSteps::new(d, 0.05, 1e-9, 10.0).unwrap();
        let v = m.initial_state().vectorize();
        for dt in [0.0, 1e-11, 0.037, 0.05, 1.3, 7.77] {
            let a = steps.apply(d.liouville(), dt, &v);
            let b = expm_apply(d.liouville(), dt, &v);
            assert!((a - b).camax() < 1e-13, "dt = {dt}");
        }
    }

    #[test]
    fn survival_basics() {
        let m = model();
        assert!((survival(m.bundle(), m.initial_state(), 0.0).unwrap() - 1.0).abs() < 1e-15);
        let p1 = survival(m.bundle(), m.initial_state(), 0.5).unwrap();
        let p2 = survival(m.bundle(), m.initial_state(), 1.0).unwrap();
        assert!(p2 <= p1 && p1 <= 1.0);
        assert!(survival(m.bundle(), m.initial_state(), -1.0).is_err());
    }

    #[test]
    fn pure_decay_jump_time() {
        let gamma = 2.0;
        let b = decay_bundle(gamma);
        let rho =
            DensityMatrix::new(ket_bra(0, 0, 2), Factorization::new(vec![1, 2]).unwrap()).unwrap();
        for r in [0.9, 0.5, 0.01] {
            let t = sample_jump_time(&b, &rho, r, 100.0, search())
                .unwrap()
                .unwrap();
            assert!((t + r.ln() / gamma).abs() < 1e-9, "r={r}");
        }
        let t = sample_jump_time(&b, &rho, 1.0 - 1e-9, 100.0, search())
            .unwrap()
            .unwrap();
        assert!(t > 0.0 && t < 1e-8);
        assert_eq!(
            sample_jump_time(&b, &rho, 0.01, 1.0, search()).unwrap(),
            None
        );
        assert!(sample_jump_time(&b, &rho, 1.0, 1.0, search()).is_err());
    }

    #[test]
    fn dark_state_never_jumps() {
        let b = decay_bundle(1.0);
        let rho =
            DensityMatrix::new(ket_bra(1, 1, 2), Factorization::new(vec![1, 2]).unwrap()).unwrap();
        assert!((survival(&b, &rho, 50.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            sample_jump_time(&b, &rho, 0.5, 50.0, search()).unwrap(),
            None
        );
    }

    #[test]
    fn non_monotone_survival_is_reported() {
        let b = decay_bundle(1.0);
        let mut bad = b.clone();
        bad.no_jump = b.no_jump.scaled(C64::new(-1.0, 0.0));
        let rho =
            DensityMatrix::new(ket_bra(0, 0, 2), Factorization::new(vec![1, 2]).unwrap()).unwrap();
        assert!(matches!(
            sample_jump_time(&bad, &rho, 0.5, 10.0, search()),
            Err(Error::NonMonotoneSurvival { .. })
        ));
    }

    #[test]
    fn jump_on_product_state() {
        let m = model();
        let rs = named_state("y_plus").unwrap();
        let rho = DensityMatrix::product(&[&rs, &DensityMatrix::basis(0, 2)]);
        let post = apply_jump(m.bundle(), &rho).unwrap();
        assert!(
            max_abs_diff(
                post.partial_trace(&[1]).unwrap().matrix(),
                &ket_bra(1, 1, 2)
            ) < 1e-15
        );
        let flipped = sigma_z() * rs.matrix() * sigma_z();
        assert!(max_abs_diff(post.partial_trace(&[0]).unwrap().matrix(), &flipped) < 1e-15);
    }

    #[test]
    fn conditional_evolution_freezes_system() {
        let m = model();
        for t in [0.0, 0.3, 2.0] {
            let out = conditional_evolve(m.bundle(), m.initial_state(), t).unwrap();
            let sys = out.partial_trace(&[0]).unwrap();
            assert!(max_abs_diff(sys.matrix(), m.system_initial_state().matrix()) < 1e-12);
        }
    }

    #[test]
    fn conditional_evolution_underflow() {
        let b = decay_bundle(1.0);
        let rho =
            DensityMatrix::new(ket_bra(0, 0, 2), Factorization::new(vec![1, 2]).unwrap()).unwrap();
        assert!(matches!(
            conditional_evolve(&b, &rho, 1000.0),
            Err(Error::SurvivalUnderflow { .. })
        ));
    }

    #[test]
    fn trajectory_structure() {
        let m = model();
        let grid = TimeGrid::new(0.05, 200).unwrap();
        let cfg = TrajectoryConfig::new(grid, 7, 1.0).recording_events(true);
        let rec = run_trajectory(&m, &cfg).unwrap();
        assert_eq!(rec.states.len(), grid.len());
        assert!(rec.jump_count() > 0);
        assert!(rec.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(rec.events.len(), rec.jump_count());
        // Coherence flips sign across each jump and is otherwise constant.
        for (j, s) in rec.states.iter().enumerate() {
            let t = grid.time(j);
            let flips = rec.jump_times.iter().filter(|&&tj| tj <= t).count();
            let sign = if flips % 2 == 0 { 1.0 } else { -1.0 };
            let c = s.partial_trace(&[0]).unwrap().element(0, 1);
            assert!((c.re - 0.5 * sign).abs() < 1e-10, "t={t}");
        }
        for e in &rec.events {
            // ⟨++|ρ|−+⟩ vanishes right after a detection.
            assert!(e.after.element(0, 2).norm() < 1e-15);
        }
        let sep = check_separability(&rec, &[vec![0], vec![1]]).unwrap();
        assert!(sep.max_deviation() < 1e-10);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let m = model();
        let grid = TimeGrid::new(0.1, 50).unwrap();
        let cfg = TrajectoryConfig::new(grid, 99, 1.0).with_index(3);
        assert_eq!(
            run_trajectory(&m, &cfg).unwrap(),
            run_trajectory(&m, &cfg).unwrap()
        );
        let other = run_trajectory(&m, &cfg.clone().with_index(4)).unwrap();
        assert_ne!(
            other.jump_times,
            run_trajectory(&m, &cfg).unwrap().jump_times
        );
    }

    #[test]
    fn root_tolerance_checked() {
        let m = model();
        let mut cfg = TrajectoryConfig::new(TimeGrid::new(0.1, 5).unwrap(), 1, 1.0);
        cfg.root_tol = 0.5;
        assert!(run_trajectory(&m, &cfg).is_err());
    }

    #[test]
    fn single_trajectory_ensemble() {
        let m = model();
        let grid = TimeGrid::new(0.1, 30).unwrap();
        let cfg = TrajectoryConfig::new(grid, 5, 1.0);
        let rec = run_trajectory(&m, &cfg).unwrap();
        let ens = ensemble_average(&m, 1, &cfg).unwrap();
        for (a, b) in ens.mean.iter().zip(&rec.states) {
            assert!(max_abs_diff(a.matrix(), b.matrix()) < 1e-15);
        }
        assert!(ens
            .stderr
            .iter()
            .all(|s| s.iter().all(|z| z.re == 0.0 && z.im == 0.0)));
        assert!(ensemble_average(&m, 0, &cfg).is_err());
    }

    #[test]
    fn running_stats() {
        let mut s = RunningStats::new(2);
        for x in [[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]] {
            s.push(&x);
        }
        assert_eq!(s.mean(), &[3.0, 2.0]);
        let se = s.stderr();
        assert!((se[0] - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(se[1], 0.0);
    }

    #[test]
    fn separability_negative_control() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::pure(&[
            C64::new(h, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(h, 0.0),
        ])
        .with_factorization(Factorization::new(vec![2, 2]).unwrap())
        .unwrap();
        assert!(separability_deviation(&bell, &[vec![0], vec![1]]).unwrap() > 0.1);
        assert!(separability_deviation(&bell, &[vec![0]]).is_err());
    }

    #[test]
    fn tripartite_separates_ancilla() {
        let m = tripartite_dephasing(1.0, 6.0, 2.0, &named_state("x_plus").unwrap()).unwrap();
        let grid = TimeGrid::new(0.05, 100).unwrap();
        let rec = run_trajectory(&m, &TrajectoryConfig::new(grid, 11, 1.0)).unwrap();
        assert!(
            check_separability(&rec, &[vec![0, 2], vec![1]])
                .unwrap()
                .max_deviation()
                < 1e-10
        );
        // S and B do become correlated between collisions.
        assert!(
            check_separability(&rec, &[vec![0], vec![1], vec![2]])
                .unwrap()
                .max_deviation()
                > 1e-3
        );
    }
}
