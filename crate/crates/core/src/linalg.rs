//! Dense complex linear algebra on small Hilbert and Liouville spaces.
//!
//! Conventions used throughout the crate:
//!
//! * vectorization is column stacking, so the sandwich map `ρ ↦ AρB` has the
//!   Liouville matrix `Bᵀ ⊗ A`;
//! * multipartite basis states are ordered row-major over the factorization
//!   (first factor slowest), i.e. `|ij⟩` has flat index `i·d_B + j`.
//!
//! All dimensions are small (Hilbert ≤ 8, Liouville ≤ 64), so everything is
//! dense and direct.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const IM: C64 = C64::new(0.0, 1.0);

/// Ordered subsystem dimensions of a composite Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Factorization {
    dims: Vec<usize>,
}

impl Factorization {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("empty factorization".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: d,
            });
        }
        Ok(Self { dims })
    }

    pub fn single(dim: usize) -> Self {
        Self::new(vec![dim]).expect("dimension must be positive")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Total Hilbert-space dimension.
    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// Factorization of the listed factors, in the listed order.
    pub fn select(&self, factors: &[usize]) -> Result<Self> {
        let dims = factors
            .iter()
            .map(|&k| {
                self.dims.get(k).copied().ok_or(Error::IndexOutOfRange {
                    index: k,
                    len: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    fn check_indices(&self, factors: &[usize]) -> Result<()> {
        for (pos, &k) in factors.iter().enumerate() {
            if k >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: self.len(),
                });
            }
            if factors[..pos].contains(&k) {
                return Err(Error::InvalidParameter(format!("factor {k} listed twice")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

/// `|i⟩⟨j|` in dimension `dim`.
pub fn ket_bra(i: usize, j: usize, dim: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim, dim);
    m[(i, j)] = ONE;
    m
}

pub fn from_real_rows(rows: &[&[f64]]) -> ComplexMatrix {
    let n = rows.len();
    ComplexMatrix::from_fn(n, n, |r, c| C64::new(rows[r][c], 0.0))
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

pub fn kron_all(factors: &[&ComplexMatrix]) -> ComplexMatrix {
    let mut it = factors.iter();
    let first = match it.next() {
        Some(m) => (*m).clone(),
        None => return identity(1),
    };
    it.fold(first, |acc, m| acc.kronecker(*m))
}

/// Column-stacking vectorization.
pub fn vectorize(m: &ComplexMatrix) -> ComplexVector {
    ComplexVector::from_column_slice(m.as_slice())
}

pub fn devectorize(v: &ComplexVector) -> Result<ComplexMatrix> {
    let d = perfect_sqrt(v.len()).ok_or(Error::NotPerfectSquare(v.len()))?;
    Ok(ComplexMatrix::from_column_slice(d, d, v.as_slice()))
}

fn perfect_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Liouville matrix of `ρ ↦ AρB`.
pub fn sandwich_matrix(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    kron(&b.transpose(), a)
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    hermiticity_deviation(m) <= tol
}

pub fn hermiticity_deviation(m: &ComplexMatrix) -> f64 {
    (m - m.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn one_norm(m: &ComplexMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigenvalues of the hermitian part `(M + M†)/2`, ascending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_hermitian_eigenvalue(m: &ComplexMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Partial trace of a matrix on a composite space, keeping the listed factors
/// (in increasing factor order).
pub fn partial_trace_matrix(
    m: &ComplexMatrix,
    fact: &Factorization,
    keep: &[usize],
) -> Result<(ComplexMatrix, Factorization)> {
    if m.nrows() != fact.total() || m.ncols() != fact.total() {
        return Err(Error::DimensionMismatch {
            expected: fact.total(),
            found: m.nrows(),
        });
    }
    if keep.is_empty() {
        return Err(Error::InvalidParameter(
            "partial trace must keep at least one factor".into(),
        ));
    }
    fact.check_indices(keep)?;
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    let kept = fact.select(&keep)?;
    let traced: Vec<usize> = (0..fact.len()).filter(|k| !keep.contains(k)).collect();

    let n = fact.total();
    let index: Vec<Vec<usize>> = (0..n).map(|i| fact.multi_index(i)).collect();
    let kept_index: Vec<usize> = index
        .iter()
        .map(|mi| kept.flat_index(&keep.iter().map(|&k| mi[k]).collect::<Vec<_>>()))
        .collect();

    let mut out = ComplexMatrix::zeros(kept.total(), kept.total());
    for i in 0..n {
        for j in 0..n {
            if traced.iter().all(|&k| index[i][k] == index[j][k]) {
                out[(kept_index[i], kept_index[j])] += m[(i, j)];
            }
        }
    }
    Ok((out, kept))
}

// Padé coefficients and θ thresholds for degrees 3, 5, 7, 9, 13 (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(f64, usize); 4] = [
    (1.495585217958292e-2, 3),
    (2.53939833006323e-1, 5),
    (9.504178996162932e-1, 7),
    (2.097847961257068e0, 9),
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn matrix_exp(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    assert!(m.is_square(), "matrix_exp requires a square matrix");
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = m.nrows();
    let norm = one_norm(m);
    if norm == 0.0 {
        return Ok(identity(n));
    }
    for &(theta, degree) in &THETA {
        if norm <= theta {
            return Ok(pade_low(m, degree));
        }
    }
    let s = ((norm / THETA13).log2().ceil()).max(0.0) as i32;
    let scaled = m * C64::new(2f64.powi(-s), 0.0);
    let mut r = pade13(&scaled);
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn pade_solve(u: ComplexMatrix, v: ComplexMatrix) -> ComplexMatrix {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular within the θ bound")
}

fn pade_low(a: &ComplexMatrix, degree: usize) -> ComplexMatrix {
    let b: &[f64] = match degree {
        3 => &PADE3,
        5 => &PADE5,
        7 => &PADE7,
        9 => &PADE9,
        _ => unreachable!(),
    };
    let n = a.nrows();
    let a2 = a * a;
    let mut power = identity(n);
    let mut u_even = ComplexMatrix::zeros(n, n);
    let mut v = ComplexMatrix::zeros(n, n);
    for k in 0..=degree / 2 {
        u_even += &power * real(b[2 * k + 1]);
        v += &power * real(b[2 * k]);
        power = &power * &a2;
    }
    pade_solve(a * u_even, v)
}

fn pade13(a: &ComplexMatrix) -> ComplexMatrix {
    let b = &PADE13;
    let n = a.nrows();
    let id = identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * real(b[13]) + &a4 * real(b[11]) + &a2 * real(b[9]);
    let u = a
        * (&a6 * inner_u
            + &a6 * real(b[7])
            + &a4 * real(b[5])
            + &a2 * real(b[3])
            + &id * real(b[1]));
    let inner_v = &a6 * real(b[12]) + &a4 * real(b[10]) + &a2 * real(b[8]);
    let v =
        &a6 * inner_v + &a6 * real(b[6]) + &a4 * real(b[4]) + &a2 * real(b[2]) + id * real(b[0]);
    pade_solve(u, v)
}

/// `exp(t·M) v` without forming the exponential: truncated Taylor series on
/// substeps with `‖t·M/s‖₁ ≤ 1/2`.
pub fn expm_apply(m: &ComplexMatrix, t: f64, v: &ComplexVector) -> ComplexVector {
    let norm = one_norm(m) * t.abs();
    if norm == 0.0 {
        return v.clone();
    }
    let steps = (norm / 0.5).ceil().max(1.0) as usize;
    let scaled = m * real(t / steps as f64);
    let mut out = v.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..=40 {
            term = &scaled * term * real(1.0 / k as f64);
            acc += &term;
            if term.norm() <= f64::EPSILON * 1e-2 * acc.norm() {
                break;
            }
        }
        out = acc;
    }
    out
}

/// Solves `(u·I − M) x = v` directly.
///
/// Fails with [`Error::Singular`] when the one-norm condition estimate exceeds
/// 1e13 or the residual after one refinement step is above `1e-10·‖v‖`.
pub fn resolvent_solve(u: C64, m: &ComplexMatrix, v: &ComplexVector) -> Result<ComplexVector> {
    let n = m.nrows();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    let a = ComplexMatrix::identity(n, n) * u - m;
    let lu = a.clone().lu();
    let inverse = lu.try_inverse().ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(&a) * one_norm(&inverse);
    if !condition.is_finite() || condition > 1e13 {
        return Err(Error::Singular { condition });
    }
    let mut x = lu.solve(v).ok_or(Error::Singular { condition })?;
    let r = v - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let residual = (v - &a * &x).norm();
    if residual > 1e-10 * v.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Singular { condition });
    }
    Ok(x)
}

pub fn resolvent_apply(u: C64, m: &SuperOp, v: &ComplexVector) -> Result<ComplexVector> {
    resolvent_solve(u, m.liouville(), v)
}

/// Choi matrix `Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)` (input factor first).
pub fn choi_matrix(map: &SuperOp) -> ComplexMatrix {
    let d = map.hilbert_dim();
    let l = map.liouville();
    ComplexMatrix::from_fn(d * d, d * d, |r, c| {
        let (i, p) = (r / d, r % d);
        let (j, q) = (c / d, c % d);
        l[(p + q * d, i + j * d)]
    })
}

pub fn is_completely_positive(map: &SuperOp, tol: f64) -> bool {
    min_hermitian_eigenvalue(&choi_matrix(map)) >= -tol
}

/// Acceptance thresholds for [`validate_state`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub herm: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm: 1e-9,
            trace: 1e-9,
            psd: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            herm: tol,
            trace: tol,
            psd: tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateReport {
    pub hermiticity_deviation: f64,
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
    pub hermitian: bool,
    pub unit_trace: bool,
    pub positive: bool,
}

impl StateReport {
    pub fn passed(&self) -> bool {
        self.hermitian && self.unit_trace && self.positive
    }
}

impl fmt::Display for StateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "herm_dev={:.3e} ({}) trace_dev={:.3e} ({}) min_eig={:.3e} ({})",
            self.hermiticity_deviation,
            pass_word(self.hermitian),
            self.trace_deviation,
            pass_word(self.unit_trace),
            self.min_eigenvalue,
            pass_word(self.positive)
        )
    }
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn validate_state(rho: &DensityMatrix, tol: Tolerances) -> StateReport {
    let m = rho.matrix();
    let herm = hermiticity_deviation(m);
    let trace = (m.trace() - ONE).norm();
    let min_eig = min_hermitian_eigenvalue(m);
    StateReport {
        hermiticity_deviation: herm,
        trace_deviation: trace,
        min_eigenvalue: min_eig,
        hermitian: herm <= tol.herm,
        unit_trace: trace <= tol.trace,
        positive: min_eig >= -tol.psd,
    }
}

/// A (possibly unnormalized) operator on a factorized Hilbert space.
///
/// Construction only checks dimensions; use [`validate_state`] for the
/// physical invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
    factorization: Factorization,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix, factorization: Factorization) -> Result<Self> {
        let d = factorization.total();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows(),
            });
        }
        if matrix
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            matrix,
            factorization,
        })
    }

    pub fn single(matrix: ComplexMatrix) -> Result<Self> {
        let d = matrix.nrows();
        Self::new(matrix, Factorization::single(d))
    }

    pub fn pure(ket: &[C64]) -> Self {
        let v = ComplexVector::from_column_slice(ket);
        let m = &v * v.adjoint() / C64::new(v.norm_squared(), 0.0);
        Self::single(m).expect("pure state from finite ket")
    }

    /// `|i⟩⟨i|` in dimension `dim`.
    pub fn basis(i: usize, dim: usize) -> Self {
        Self::single(ket_bra(i, i, dim)).expect("basis projector")
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::single(identity(dim) / C64::new(dim as f64, 0.0)).expect("maximally mixed")
    }

    /// Tensor product, concatenating factorizations.
    pub fn product(parts: &[&DensityMatrix]) -> Self {
        let mats: Vec<&ComplexMatrix> = parts.iter().map(|p| &p.matrix).collect();
        let dims: Vec<usize> = parts
            .iter()
            .flat_map(|p| p.factorization.dims().iter().copied())
            .collect();
        Self {
            matrix: kron_all(&mats),
            factorization: Factorization::new(dims).expect("nonempty product"),
        }
    }

    pub fn from_vector(v: &ComplexVector, factorization: Factorization) -> Result<Self> {
        Self::new(devectorize(v)?, factorization)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn vectorize(&self) -> ComplexVector {
        vectorize(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr.norm() <= f64::MIN_POSITIVE {
            return Err(Error::ZeroJumpProbability);
        }
        Ok(Self {
            matrix: &self.matrix / tr,
            factorization: self.factorization.clone(),
        })
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let (m, f) = partial_trace_matrix(&self.matrix, &self.factorization, keep)?;
        Ok(Self {
            matrix: m,
            factorization: f,
        })
    }

    pub fn with_factorization(self, factorization: Factorization) -> Result<Self> {
        Self::new(self.matrix, factorization)
    }
}

pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    rho.partial_trace(keep)
}

/// A Liouville-space superoperator (`d² × d²` for a `d`-dimensional Hilbert
/// space) tagged with the factorization of that Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOp {
    liouville: ComplexMatrix,
    factorization: Factorization,
}

impl SuperOp {
    pub fn new(liouville: ComplexMatrix, factorization: Factorization) -> Result<Self> {
        let d = factorization.total();
        if liouville.nrows() != d * d || liouville.ncols() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: liouville.nrows(),
            });
        }
        Ok(Self {
            liouville,
            factorization,
        })
    }

    pub fn zeros(factorization: Factorization) -> Self {
        let n = factorization.total().pow(2);
        Self {
            liouville: ComplexMatrix::zeros(n, n),
            factorization,
        }
    }

    pub fn identity(factorization: Factorization) -> Self {
        let n = factorization.total().pow(2);
        Self {
            liouville: identity(n),
            factorization,
        }
    }

    /// `ρ ↦ AρB`.
    pub fn sandwich(
        a: &ComplexMatrix,
        b: &ComplexMatrix,
        factorization: Factorization,
    ) -> Result<Self> {
        Self::new(sandwich_matrix(a, b), factorization)
    }

    /// `ρ ↦ {A, ρ}₊`.
    pub fn anticommutator(a: &ComplexMatrix, factorization: Factorization) -> Result<Self> {
        let id = identity(a.nrows());
        Self::new(
            sandwich_matrix(a, &id) + sandwich_matrix(&id, a),
            factorization,
        )
    }

    /// Builds the superoperator column by column from its action on `|i⟩⟨j|`.
    pub fn from_action<F>(factorization: Factorization, mut action: F) -> Result<Self>
    where
        F: FnMut(&ComplexMatrix) -> Result<ComplexMatrix>,
    {
        let d = factorization.total();
        let mut l = ComplexMatrix::zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let image = action(&ket_bra(i, j, d))?;
                if image.shape() != (d, d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: image.nrows(),
                    });
                }
                l.set_column(i + j * d, &vectorize(&image));
            }
        }
        Self::new(l, factorization)
    }

    pub fn liouville(&self) -> &ComplexMatrix {
        &self.liouville
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn hilbert_dim(&self) -> usize {
        self.factorization.total()
    }

    pub fn is_zero(&self) -> bool {
        self.liouville.iter().all(|z| *z == ZERO)
    }

    pub fn apply_vec(&self, v: &ComplexVector) -> ComplexVector {
        &self.liouville * v
    }

    pub fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        devectorize(&self.apply_vec(&vectorize(m))).expect("square image")
    }

    pub fn apply_state(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        if rho.factorization() != &self.factorization {
            return Err(Error::DimensionMismatch {
                expected: self.hilbert_dim(),
                found: rho.dim(),
            });
        }
        DensityMatrix::new(self.apply(rho.matrix()), self.factorization.clone())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            liouville: &self.liouville * &other.liouville,
            factorization: self.factorization.clone(),
        }
    }

    pub fn scaled(&self, factor: C64) -> SuperOp {
        SuperOp {
            liouville: &self.liouville * factor,
            factorization: self.factorization.clone(),
        }
    }

    pub fn exp(&self, t: f64) -> Result<SuperOp> {
        Ok(SuperOp {
            liouville: matrix_exp(&(&self.liouville * real(t)))?,
            factorization: self.factorization.clone(),
        })
    }

    pub fn with_factorization(self, factorization: Factorization) -> Result<Self> {
        Self::new(self.liouville, factorization)
    }

    pub fn max_abs_diff(&self, other: &SuperOp) -> f64 {
        max_abs_diff(&self.liouville, &other.liouville)
    }

    /// Lifts a superoperator acting on the listed factors of `full` (in the
    /// listed order) to the whole space, acting as identity elsewhere.
    pub fn lift(&self, factors: &[usize], full: &Factorization) -> Result<SuperOp> {
        full.check_indices(factors)?;
        let sub = full.select(factors)?;
        if sub.total() != self.hilbert_dim() {
            return Err(Error::DimensionMismatch {
                expected: sub.total(),
                found: self.hilbert_dim(),
            });
        }
        let n = full.total();
        let ds = sub.total();
        let index: Vec<Vec<usize>> = (0..n).map(|i| full.multi_index(i)).collect();
        let sub_of =
            |mi: &[usize]| sub.flat_index(&factors.iter().map(|&k| mi[k]).collect::<Vec<_>>());
        let replace = |mi: &[usize], s: usize| {
            let smi = sub.multi_index(s);
            let mut out = mi.to_vec();
            for (pos, &k) in factors.iter().enumerate() {
                out[k] = smi[pos];
            }
            full.flat_index(&out)
        };
        let mut l = ComplexMatrix::zeros(n * n, n * n);
        for j in 0..n {
            for i in 0..n {
                let col_sub = sub_of(&index[i]) + sub_of(&index[j]) * ds;
                for q in 0..ds {
                    for p in 0..ds {
                        let value = self.liouville[(p + q * ds, col_sub)];
                        if value != ZERO {
                            let row = replace(&index[i], p) + replace(&index[j], q) * n;
                            l[(row, i + j * n)] = value;
                        }
                    }
                }
            }
        }
        SuperOp::new(l, full.clone())
    }
}

impl Add for &SuperOp {
    type Output = SuperOp;
    fn add(self, rhs: &SuperOp) -> SuperOp {
        assert_eq!(
            self.factorization, rhs.factorization,
            "factorization mismatch in SuperOp add"
        );
        SuperOp {
            liouville: &self.liouville + &rhs.liouville,
            factorization: self.factorization.clone(),
        }
    }
}

impl Sub for &SuperOp {
    type Output = SuperOp;
    fn sub(self, rhs: &SuperOp) -> SuperOp {
        assert_eq!(
            self.factorization, rhs.factorization,
            "factorization mismatch in SuperOp sub"
        );
        SuperOp {
            liouville: &self.liouville - &rhs.liouville,
            factorization: self.factorization.clone(),
        }
    }
}

impl Neg for &SuperOp {
    type Output = SuperOp;
    fn neg(self) -> SuperOp {
        self.scaled(-ONE)
    }
}

impl Mul for &SuperOp {
    type Output = SuperOp;
    fn mul(self, rhs: &SuperOp) -> SuperOp {
        self.compose(rhs)
    }
}
