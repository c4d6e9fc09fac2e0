//! Observables derived from state series: matrix elements, purity, relative
//! entropy to a reference state, and detection of non-monotone (back-flow)
//! behaviour.

use crate::error::{Error, Result};
use crate::linalg::{devectorize, ComplexMatrix, DensityMatrix, SuperOp, C64};
use crate::series::{TimeGrid, TimeSeries};

/// Eigenvalue floor below which `log₂` is not taken.
pub const ENTROPY_FLOOR: f64 = 1e-12;
const SUPPORT_WEIGHT: f64 = 1e-10;

fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `Tr ρ(log₂ρ − log₂σ)` in bits.
pub fn relative_entropy(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: rho.dim(),
        });
    }
    let own: f64 = hermitian_part(rho.matrix())
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&p| p > ENTROPY_FLOOR)
        .map(|&p| p * p.log2())
        .sum();
    let eig = hermitian_part(sigma.matrix()).symmetric_eigen();
    let mut cross = 0.0;
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let weight = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
        if s <= ENTROPY_FLOOR {
            if weight > SUPPORT_WEIGHT {
                return Err(Error::SupportViolation {
                    eigenvalue: s,
                    weight,
                });
            }
            continue;
        }
        cross += weight * s.log2();
    }
    Ok(own - cross)
}

/// The unique state annihilated by `L`, from the null space of its Liouville
/// matrix. Fails with [`Error::DegenerateStationary`] unless the null space is
/// one-dimensional.
pub fn stationary_state(l: &SuperOp) -> Result<DensityMatrix> {
    let svd = l.liouville().clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let scale = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(1.0);
    let null: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < 1e-10 * scale)
        .map(|(i, _)| i)
        .collect();
    if null.len() != 1 {
        return Err(Error::DegenerateStationary {
            nullity: null.len(),
        });
    }
    let v = v_t.row(null[0]).adjoint();
    let m = devectorize(&v)?;
    let tr = m.trace();
    if tr.norm() < 1e-14 {
        return Err(Error::DegenerateStationary { nullity: 1 });
    }
    DensityMatrix::new(hermitian_part(&(m / tr)), l.factorization().clone())
}

/// `exp(TL)ρ₀`, the long-time route for generators whose stationary state
/// depends on the initial condition.
pub fn long_time_state(l: &SuperOp, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    l.exp(t)?.apply_state(rho0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackflowReport {
    /// `(t₁, t₂)` with `t₁` the preceding minimum and `t₂` the peak of each
    /// rise exceeding the tolerance.
    pub pairs: Vec<(f64, f64)>,
    pub max_rise: f64,
    pub tol: f64,
}

impl BackflowReport {
    pub fn detected(&self) -> bool {
        !self.pairs.is_empty()
    }
}

/// Scans a real channel for rises above its running minimum.
pub fn backflow_detect(series: &TimeSeries, channel: &str, tol: f64) -> Result<BackflowReport> {
    let x = series.real(channel)?;
    let grid = series.grid();
    Ok(backflow_scan(x, grid, tol))
}

fn backflow_scan(x: &[f64], grid: &TimeGrid, tol: f64) -> BackflowReport {
    let mut pairs = Vec::new();
    let mut max_rise: f64 = 0.0;
    let Some(&first) = x.first() else {
        return BackflowReport {
            pairs,
            max_rise,
            tol,
        };
    };
    let (mut min, mut argmin) = (first, 0usize);
    // Current episode: (start, peak index, peak rise).
    let mut episode: Option<(usize, usize, f64)> = None;
    for (j, &v) in x.iter().enumerate().skip(1) {
        if v < min {
            if let Some((s, p, _)) = episode.take() {
                pairs.push((grid.time(s), grid.time(p)));
            }
            min = v;
            argmin = j;
            continue;
        }
        let rise = v - min;
        max_rise = max_rise.max(rise);
        if rise > tol {
            match &mut episode {
                Some((_, p, r)) if rise > *r => {
                    *p = j;
                    *r = rise;
                }
                Some(_) => {}
                None => episode = Some((argmin, j, rise)),
            }
        }
    }
    if let Some((s, p, _)) = episode {
        pairs.push((grid.time(s), grid.time(p)));
    }
    BackflowReport {
        pairs,
        max_rise,
        tol,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// `⟨row|ρ_K|col⟩` of the marginal on factors `keep` (complex channel).
    Element {
        name: String,
        keep: Vec<usize>,
        row: usize,
        col: usize,
    },
    /// `Tr ρ_K²` (real channel).
    Purity { name: String, keep: Vec<usize> },
    /// `E(ρ_K ‖ σ)` in bits (real channel).
    RelativeEntropy {
        name: String,
        keep: Vec<usize>,
        reference: DensityMatrix,
    },
}

impl Observable {
    pub fn name(&self) -> &str {
        match self {
            Observable::Element { name, .. }
            | Observable::Purity { name, .. }
            | Observable::RelativeEntropy { name, .. } => name,
        }
    }

    fn keep(&self) -> &[usize] {
        match self {
            Observable::Element { keep, .. }
            | Observable::Purity { keep, .. }
            | Observable::RelativeEntropy { keep, .. } => keep,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservableSet {
    pub selections: Vec<Observable>,
}

impl ObservableSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn element(
        mut self,
        name: impl Into<String>,
        keep: &[usize],
        row: usize,
        col: usize,
    ) -> Self {
        self.selections.push(Observable::Element {
            name: name.into(),
            keep: keep.to_vec(),
            row,
            col,
        });
        self
    }

    pub fn purity(mut self, name: impl Into<String>, keep: &[usize]) -> Self {
        self.selections.push(Observable::Purity {
            name: name.into(),
            keep: keep.to_vec(),
        });
        self
    }

    pub fn relative_entropy(
        mut self,
        name: impl Into<String>,
        keep: &[usize],
        reference: DensityMatrix,
    ) -> Self {
        self.selections.push(Observable::RelativeEntropy {
            name: name.into(),
            keep: keep.to_vec(),
            reference,
        });
        self
    }

    /// Populations and the `⟨0|ρ|1⟩` coherence of a qubit factor.
    pub fn qubit(self, prefix: &str, keep: &[usize]) -> Self {
        self.element(format!("{prefix}00"), keep, 0, 0)
            .element(format!("{prefix}11"), keep, 1, 1)
            .element(format!("{prefix}01"), keep, 0, 1)
    }

    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    /// Checks indices against a state layout.
    pub fn validate(&self, sample: &DensityMatrix) -> Result<()> {
        for obs in &self.selections {
            let marginal = sample.factorization().select(obs.keep())?;
            match obs {
                Observable::Element { row, col, .. } => {
                    for &i in [row, col] {
                        if i >= marginal.total() {
                            return Err(Error::IndexOutOfRange {
                                index: i,
                                len: marginal.total(),
                            });
                        }
                    }
                }
                Observable::RelativeEntropy { reference, .. }
                    if reference.dim() != marginal.total() =>
                {
                    return Err(Error::DimensionMismatch {
                        expected: marginal.total(),
                        found: reference.dim(),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Values of every selection on one state, in declaration order.
    pub fn evaluate(&self, rho: &DensityMatrix) -> Result<Vec<C64>> {
        self.selections
            .iter()
            .map(|obs| {
                let full: Vec<usize> = (0..rho.factorization().len()).collect();
                let marginal = if obs.keep() == full.as_slice() {
                    rho.clone()
                } else {
                    rho.partial_trace(obs.keep())?
                };
                Ok(match obs {
                    Observable::Element { row, col, .. } => {
                        if *row >= marginal.dim() || *col >= marginal.dim() {
                            return Err(Error::IndexOutOfRange {
                                index: (*row).max(*col),
                                len: marginal.dim(),
                            });
                        }
                        marginal.element(*row, *col)
                    }
                    Observable::Purity { .. } => C64::new(marginal.purity(), 0.0),
                    Observable::RelativeEntropy { reference, .. } => {
                        C64::new(relative_entropy(&marginal, reference)?, 0.0)
                    }
                })
            })
            .collect()
    }

    /// Whether the channel of each selection is complex.
    pub fn is_complex(&self) -> Vec<bool> {
        self.selections
            .iter()
            .map(|o| matches!(o, Observable::Element { .. }))
            .collect()
    }

    /// Assembles per-sample values into a series (complex selections become
    /// complex channels).
    pub fn to_series(&self, grid: &TimeGrid, values: &[Vec<C64>]) -> Result<TimeSeries> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        let mut series = TimeSeries::new(*grid);
        for (k, (obs, complex)) in self.selections.iter().zip(self.is_complex()).enumerate() {
            let column: Vec<C64> = values.iter().map(|row| row[k]).collect();
            if complex {
                series.push_complex(obs.name(), column)?;
            } else {
                series.push_real(obs.name(), column.iter().map(|z| z.re).collect())?;
            }
        }
        Ok(series)
    }
}

/// Observable channels along a series of states.
pub fn extract(
    states: &[DensityMatrix],
    grid: &TimeGrid,
    obs: &ObservableSet,
) -> Result<TimeSeries> {
    if let Some(first) = states.first() {
        obs.validate(first)?;
    }
    let values = states
        .iter()
        .map(|s| obs.evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    obs.to_series(grid, &values)
}
