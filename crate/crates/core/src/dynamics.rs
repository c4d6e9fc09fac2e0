//! Deterministic propagation: exact master-equation evolution, memory kernel
//! and waiting-time density of an ancilla, their Laplace transforms, the
//! convolution solver for the reduced non-Markovian equation and the
//! inter-collision propagator of the tripartite embedding.

use crate::error::{Error, Result};
use crate::generators::{ancilla_generator, AncillaSpec, GeneratorBundle};
use crate::linalg::{
    identity, ket_bra, kron, max_abs_diff, partial_trace_matrix, resolvent_solve, validate_state,
    vectorize, ComplexMatrix, ComplexVector, DensityMatrix, Factorization, SuperOp, Tolerances,
    C64,
};
use crate::series::{TimeGrid, TimeSeries};

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `ρ(t_j) = E_h^j ρ₀` with `E_h = exp(hL)`; every state is validated.
pub fn propagate_master(
    l: &SuperOp,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    propagate_master_with(l, rho0, grid, Tolerances::default())
}

pub fn propagate_master_with(
    l: &SuperOp,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    tol: Tolerances,
) -> Result<Vec<DensityMatrix>> {
    if rho0.factorization() != l.factorization() {
        return Err(Error::DimensionMismatch {
            expected: l.hilbert_dim(),
            found: rho0.dim(),
        });
    }
    let step = l.exp(grid.h())?;
    let mut out = Vec::with_capacity(grid.len());
    let mut v = rho0.vectorize();
    for j in 0..grid.len() {
        if j > 0 {
            v = step.apply_vec(&v);
        }
        let rho = DensityMatrix::from_vector(&v, rho0.factorization().clone())?;
        let report = validate_state(&rho, tol);
        if !report.passed() {
            return Err(Error::InvalidState { step: j, report });
        }
        out.push(rho);
    }
    Ok(out)
}

/// `v(t_j) = exp(t_j M) v₀` on every grid point.
fn orbit(m: &SuperOp, v0: ComplexVector, grid: &TimeGrid) -> Result<Vec<ComplexVector>> {
    let step = m.exp(grid.h())?;
    let mut out = Vec::with_capacity(grid.len());
    let mut v = v0;
    for j in 0..grid.len() {
        if j > 0 {
            v = step.apply_vec(&v);
        }
        out.push(v.clone());
    }
    Ok(out)
}

/// `k(t) = γ⟨a₀|exp(t𝕃_a)𝕃_a[ρ̄_a]|a₀⟩`, channel `k`.
pub fn memory_kernel(spec: &AncillaSpec, grid: &TimeGrid) -> Result<TimeSeries> {
    let full = ancilla_generator(spec).full;
    let v0 = full.apply_vec(&spec.reset_state().vectorize());
    let idx = spec.reset_element_index();
    let g = spec.gamma();
    let k = orbit(&full, v0, grid)?
        .iter()
        .map(|v| g * v[idx].re)
        .collect();
    TimeSeries::new(*grid).with_real("k", k)
}

/// `f(t) = γ⟨a₀|exp(t𝕃_a)ρ̄_a|a₀⟩`, whose derivative is the memory kernel.
pub fn kernel_primitive(spec: &AncillaSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    let full = ancilla_generator(spec).full;
    let idx = spec.reset_element_index();
    let g = spec.gamma();
    Ok(orbit(&full, spec.reset_state().vectorize(), grid)?
        .iter()
        .map(|v| g * v[idx].re)
        .collect())
}

/// `w(t) = γ⟨a₀|exp(tD_a)ρ̄_a|a₀⟩` and the survival `P₀(t) = Tr exp(tD_a)ρ̄_a`,
/// channels `w` and `P0`.
pub fn waiting_time_density(spec: &AncillaSpec, grid: &TimeGrid) -> Result<TimeSeries> {
    let d_a = ancilla_generator(spec).no_jump;
    let idx = spec.reset_element_index();
    let da = spec.dim();
    let g = spec.gamma();
    let states = orbit(&d_a, spec.reset_state().vectorize(), grid)?;
    let w = states.iter().map(|v| g * v[idx].re).collect();
    let p0 = states
        .iter()
        .map(|v| (0..da).map(|i| v[i + i * da].re).sum())
        .collect();
    TimeSeries::new(*grid)
        .with_real("w", w)?
        .with_real("P0", p0)
}

/// Waiting-time density computed in the full embedding space from a
/// post-detection state: `w(t) = Tr[J exp(tD)ρ]`, `P₀(t) = Tr[exp(tD)ρ]`.
pub fn waiting_time_density_full(
    bundle: &GeneratorBundle,
    rho: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<TimeSeries> {
    if rho.factorization() != bundle.no_jump.factorization() {
        return Err(Error::DimensionMismatch {
            expected: bundle.no_jump.hilbert_dim(),
            found: rho.dim(),
        });
    }
    let states = orbit(&bundle.no_jump, rho.vectorize(), grid)?;
    let d = rho.dim();
    let tr = |v: &ComplexVector| (0..d).map(|i| v[i + i * d].re).sum::<f64>();
    let w = states
        .iter()
        .map(|v| tr(&bundle.jump.apply_vec(v)))
        .collect();
    let p0 = states.iter().map(tr).collect();
    TimeSeries::new(*grid)
        .with_real("w", w)?
        .with_real("P0", p0)
}

/// `w(u) = γ⟨a₀|(u − D_a)⁻¹ρ̄_a|a₀⟩`.
pub fn laplace_wtd(spec: &AncillaSpec, u: C64) -> Result<C64> {
    let d_a = ancilla_generator(spec).no_jump;
    let x = resolvent_solve(u, d_a.liouville(), &spec.reset_state().vectorize())?;
    Ok(x[spec.reset_element_index()] * spec.gamma())
}

/// `k(u) = u·γ⟨a₀|(u − 𝕃_a)⁻¹ρ̄_a|a₀⟩`.
pub fn laplace_kernel(spec: &AncillaSpec, u: C64) -> Result<C64> {
    let full = ancilla_generator(spec).full;
    let x = resolvent_solve(u, full.liouville(), &spec.reset_state().vectorize())?;
    Ok(x[spec.reset_element_index()] * spec.gamma() * u)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenewalSample {
    pub u: C64,
    pub kernel_over_u: C64,
    pub wtd_ratio: C64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenewalReport {
    pub samples: Vec<RenewalSample>,
    pub tol: f64,
}

impl RenewalReport {
    pub fn max_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_residual() < self.tol
    }
}

/// Checks `k(u)/u = w(u)/(1 − w(u))` with both sides from separate resolvent
/// solves.
pub fn verify_renewal_relation(
    spec: &AncillaSpec,
    u_samples: &[C64],
    tol: f64,
) -> Result<RenewalReport> {
    let mut samples = Vec::with_capacity(u_samples.len());
    for &u in u_samples {
        if u.re <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Laplace variable needs Re(u) > 0, got {u}"
            )));
        }
        let kernel_over_u = laplace_kernel(spec, u)? / u;
        let w = laplace_wtd(spec, u)?;
        let wtd_ratio = w / (C64::new(1.0, 0.0) - w);
        samples.push(RenewalSample {
            u,
            kernel_over_u,
            wtd_ratio,
            residual: (kernel_over_u - wtd_ratio).norm(),
        });
    }
    Ok(RenewalReport { samples, tol })
}

fn check_kernel_grid(kernel: &TimeSeries, grid: &TimeGrid) -> Result<Vec<f64>> {
    let kg = kernel.grid();
    if kg.n_steps() < grid.n_steps() || (kg.h() - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(Error::GridMismatch(format!(
            "kernel sampled with h = {} over {} steps, solver grid has h = {} over {} steps",
            kg.h(),
            kg.n_steps(),
            grid.h(),
            grid.n_steps()
        )));
    }
    Ok(kernel.real("k")?[..grid.len()].to_vec())
}

/// Solver for `dρ/dt = L_s ρ + ∫₀ᵗ k(t−t′) C_s e^{(t−t′)L_s} ρ(t′) dt′`.
///
/// Trapezoidal quadrature of the memory integral with precomputed
/// `M_j = k_j C_s e^{j h L_s}`, and the implicit trapezoid rule in `t`. The
/// implicit equation is linear in `ρ_{n+1}` and is solved exactly:
///
/// `(I − (h/2)L_s − (h²/4)M₀) ρ_{n+1} = ρ_n + (h/2)(L_s ρ_n + I_n) + (h/2)S_{n+1}`
///
/// with `S_{n+1} = h[½M_{n+1}ρ₀ + Σ_{j=1}^{n} M_{n+1−j}ρ_j]`.
pub fn solve_nonmarkovian(
    l_s: &SuperOp,
    c_s: &SuperOp,
    kernel: &TimeSeries,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    let fact = rho0.factorization().clone();
    let columns = solve_columns(
        l_s,
        c_s,
        kernel,
        &ComplexMatrix::from_column_slice(rho0.dim().pow(2), 1, rho0.vectorize().as_slice()),
        grid,
    )?;
    columns
        .into_iter()
        .map(|c| DensityMatrix::from_vector(&c.column(0).into_owned(), fact.clone()))
        .collect()
}

/// The solution map `ρ₀ ↦ ρ(t_j)` of [`solve_nonmarkovian`] at the requested
/// grid indices.
pub fn solve_nonmarkovian_map(
    l_s: &SuperOp,
    c_s: &SuperOp,
    kernel: &TimeSeries,
    grid: &TimeGrid,
    steps: &[usize],
) -> Result<Vec<SuperOp>> {
    if let Some(&bad) = steps.iter().find(|&&s| s > grid.n_steps()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: grid.len(),
        });
    }
    let n = l_s.hilbert_dim().pow(2);
    let all = solve_columns(l_s, c_s, kernel, &identity(n), grid)?;
    steps
        .iter()
        .map(|&s| SuperOp::new(all[s].clone(), l_s.factorization().clone()))
        .collect()
}

fn solve_columns(
    l_s: &SuperOp,
    c_s: &SuperOp,
    kernel: &TimeSeries,
    x0: &ComplexMatrix,
    grid: &TimeGrid,
) -> Result<Vec<ComplexMatrix>> {
    let n = l_s.liouville().nrows();
    if c_s.liouville().nrows() != n || x0.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c_s.liouville().nrows().min(x0.nrows()),
        });
    }
    let k = check_kernel_grid(kernel, grid)?;
    let h = grid.h();
    let steps = grid.n_steps();
    let ls = l_s.liouville();
    let cs = c_s.liouville();
    let free = l_s.is_zero();

    // M_j (only when L_s ≠ 0; otherwise M_j = k_j C_s and the sum is scalar).
    let mut m_ops: Vec<ComplexMatrix> = Vec::new();
    if !free {
        let step = l_s.exp(h)?;
        let mut e = identity(n);
        for &kj in k.iter().take(steps + 1) {
            m_ops.push(cs * &e * real(kj));
            e = step.liouville() * e;
        }
    }
    let m0 = if free {
        cs * real(k[0])
    } else {
        m_ops[0].clone()
    };
    let lhs = identity(n) - ls * real(h / 2.0) - &m0 * real(h * h / 4.0);
    let lu = lhs.lu();
    if lu.try_inverse().is_none() {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }

    let mut xs: Vec<ComplexMatrix> = Vec::with_capacity(steps + 1);
    xs.push(x0.clone());
    let mut memory = ComplexMatrix::zeros(n, x0.ncols());
    for step_n in 0..steps {
        let next = step_n + 1;
        // S_{n+1}
        let s = if free {
            let mut acc = &xs[0] * real(0.5 * k[next]);
            let out = acc.as_mut_slice();
            for (j, x) in xs.iter().enumerate().skip(1) {
                let kj = k[next - j];
                for (a, b) in out.iter_mut().zip(x.as_slice()) {
                    *a += b * kj;
                }
            }
            cs * acc * real(h)
        } else {
            let mut acc = &m_ops[next] * &xs[0] * real(0.5);
            for (j, x) in xs.iter().enumerate().skip(1) {
                acc += &m_ops[next - j] * x;
            }
            acc * real(h)
        };
        let xn = &xs[step_n];
        let rhs = xn + (ls * xn + &memory) * real(h / 2.0) + &s * real(h / 2.0);
        let x_next = lu.solve(&rhs).ok_or(Error::Singular {
            condition: f64::INFINITY,
        })?;
        if x_next
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite);
        }
        memory = s + &m0 * &x_next * real(h / 2.0);
        xs.push(x_next);
    }
    Ok(xs)
}

fn check_sb(l_sb: &SuperOp, b0: usize) -> Result<(usize, usize)> {
    let dims = l_sb.factorization().dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: dims.len(),
        });
    }
    if b0 >= dims[1] {
        return Err(Error::IndexOutOfRange {
            index: b0,
            len: dims[1],
        });
    }
    Ok((dims[0], dims[1]))
}

/// Reduced map of a superoperator `Φ` on S⊗B: `ρ_s ↦ Tr_b Φ[ρ_s ⊗ |b₀⟩⟨b₀|]`.
fn reduce_on_system<F>(
    fact: &Factorization,
    ds: usize,
    db: usize,
    b0: usize,
    mut map: F,
) -> Result<SuperOp>
where
    F: FnMut(&ComplexVector) -> Result<ComplexVector>,
{
    let pb = ket_bra(b0, b0, db);
    SuperOp::from_action(Factorization::single(ds), |rho_s| {
        let out = map(&vectorize(&kron(rho_s, &pb)))?;
        let m = crate::linalg::devectorize(&out)?;
        Ok(partial_trace_matrix(&m, fact, &[0])?.0)
    })
}

/// `G(t) = Tr_b[exp(tL_sb)(· ⊗ |b₀⟩⟨b₀|)]`.
pub fn intercollision_propagator(l_sb: &SuperOp, b0: usize, t: f64) -> Result<SuperOp> {
    let (ds, db) = check_sb(l_sb, b0)?;
    let e = l_sb.exp(t)?;
    reduce_on_system(l_sb.factorization(), ds, db, b0, |v| Ok(e.apply_vec(v)))
}

/// `G(t_j)` on every grid point, stepping with `exp(hL_sb)`.
pub fn intercollision_series(l_sb: &SuperOp, b0: usize, grid: &TimeGrid) -> Result<Vec<SuperOp>> {
    let (ds, db) = check_sb(l_sb, b0)?;
    let step = l_sb.exp(grid.h())?;
    let mut e = SuperOp::identity(l_sb.factorization().clone());
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        if j > 0 {
            e = step.compose(&e);
        }
        out.push(reduce_on_system(l_sb.factorization(), ds, db, b0, |v| {
            Ok(e.apply_vec(v))
        })?);
    }
    Ok(out)
}

/// `Ĝ(u) = Tr_b[(u − L_sb)⁻¹(· ⊗ |b₀⟩⟨b₀|)]`.
pub fn g_laplace(l_sb: &SuperOp, b0: usize, u: C64) -> Result<SuperOp> {
    let (ds, db) = check_sb(l_sb, b0)?;
    reduce_on_system(l_sb.factorization(), ds, db, b0, |v| {
        resolvent_solve(u, l_sb.liouville(), v)
    })
}

/// `K(u) = −{Tr_b[R(u)P]}⁻¹ Tr_b[R(u) L_sb P]` with `R(u) = (u − L_sb)⁻¹` and
/// `P = · ⊗ |b₀⟩⟨b₀|`, so that `Ĝ(u) = 1/(u + K(u))`. With no S–B coupling
/// this is `−L_s`.
pub fn gkernel_laplace(l_sb: &SuperOp, b0: usize, u: C64) -> Result<SuperOp> {
    let (ds, db) = check_sb(l_sb, b0)?;
    let g = g_laplace(l_sb, b0, u)?;
    let b = reduce_on_system(l_sb.factorization(), ds, db, b0, |v| {
        resolvent_solve(u, l_sb.liouville(), &l_sb.apply_vec(v))
    })?;
    let g_inv = g.liouville().clone().try_inverse().ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = crate::linalg::one_norm(g.liouville()) * crate::linalg::one_norm(&g_inv);
    if !condition.is_finite() || condition > 1e13 {
        return Err(Error::Singular { condition });
    }
    SuperOp::new(-(g_inv * b.liouville()), Factorization::single(ds))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GKernelReport {
    /// `(u, max |Ĝ(u)(u + K(u)) − I|)`.
    pub samples: Vec<(C64, f64)>,
    pub tol: f64,
}

impl GKernelReport {
    pub fn max_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_residual() < self.tol
    }
}

/// Checks `Ĝ(u)(u + K(u)) = I` at each sample.
pub fn verify_gkernel(
    l_sb: &SuperOp,
    b0: usize,
    u_samples: &[C64],
    tol: f64,
) -> Result<GKernelReport> {
    let mut samples = Vec::with_capacity(u_samples.len());
    for &u in u_samples {
        let g = g_laplace(l_sb, b0, u)?;
        let k = gkernel_laplace(l_sb, b0, u)?;
        let n = k.liouville().nrows();
        let prod = g.liouville() * (identity(n) * u + k.liouville());
        samples.push((u, max_abs_diff(&prod, &identity(n))));
    }
    Ok(GKernelReport { samples, tol })
}
