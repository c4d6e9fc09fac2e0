//! Built-in collisional models and their closed-form reference curves.
//!
//! Basis convention for every qubit: `|+⟩` is index 0, `|−⟩` is index 1, and
//! `σ = |−⟩⟨+|`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::generators::{
    build_bipartite, build_tripartite, hamiltonian_term, hamiltonian_term_on, lindblad_term,
    AncillaSpec, GeneratorBundle, KrausSet,
};
use crate::linalg::{
    from_real_rows, identity, ket_bra, kron, validate_state, ComplexMatrix, DensityMatrix,
    Factorization, SuperOp, Tolerances, C64, IM, ZERO,
};

pub type Params = BTreeMap<String, f64>;

pub const MODEL_NAMES: [&str; 6] = [
    "dephasing_coherent",
    "dephasing_incoherent",
    "erlang_chain",
    "depolarizing",
    "tripartite_dephasing",
    "tripartite_classical",
];

pub const STATE_NAMES: [&str; 6] = ["x_plus", "x_minus", "y_plus", "plus", "minus", "mixed"];

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn sigma_x() -> ComplexMatrix {
    from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
}

pub fn sigma_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, -IM, IM, ZERO])
}

pub fn sigma_z() -> ComplexMatrix {
    from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
}

/// `σ = |−⟩⟨+|`.
pub fn sigma_minus() -> ComplexMatrix {
    ket_bra(1, 0, 2)
}

/// Named single-qubit states; `x_plus` is `(|+⟩ + |−⟩)/√2`.
pub fn named_state(name: &str) -> Result<DensityMatrix> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = match name {
        "x_plus" => DensityMatrix::pure(&[real(h), real(h)]),
        "x_minus" => DensityMatrix::pure(&[real(h), real(-h)]),
        "y_plus" => DensityMatrix::pure(&[real(h), C64::new(0.0, h)]),
        "plus" => DensityMatrix::basis(0, 2),
        "minus" => DensityMatrix::basis(1, 2),
        "mixed" => DensityMatrix::maximally_mixed(2),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unknown state `{name}`; valid states: {}",
                STATE_NAMES.join(", ")
            )))
        }
    };
    Ok(s)
}

/// S⊗B coupling and the reset level of the auxiliary factor.
#[derive(Clone, Debug)]
pub struct Intercollision {
    pub generator: SuperOp,
    pub b0: usize,
}

/// A fully assembled model: generators, initial state and parameters.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    name: String,
    parameters: Params,
    ancilla: AncillaSpec,
    kraus: KrausSet,
    system_generator: SuperOp,
    intercollision: Option<Intercollision>,
    bundle: GeneratorBundle,
    system_initial: DensityMatrix,
    initial_state: DensityMatrix,
}

impl ModelSpec {
    fn bipartite(
        name: &str,
        parameters: Params,
        ancilla: AncillaSpec,
        kraus: KrausSet,
        rho0_s: &DensityMatrix,
    ) -> Result<Self> {
        let rho0_s = system_state(rho0_s)?;
        let system_generator = SuperOp::zeros(Factorization::single(2));
        let bundle = build_bipartite(&system_generator, &ancilla, &kraus)?;
        let initial_state = DensityMatrix::product(&[&rho0_s, &ancilla.reset_state()]);
        Ok(Self {
            name: name.to_string(),
            parameters,
            ancilla,
            kraus,
            system_generator,
            intercollision: None,
            bundle,
            system_initial: rho0_s,
            initial_state,
        })
    }

    fn tripartite(
        name: &str,
        parameters: Params,
        ancilla: AncillaSpec,
        lambda: f64,
        rho0_s: &DensityMatrix,
    ) -> Result<Self> {
        let rho0_s = system_state(rho0_s)?;
        let kraus = KrausSet::new(vec![sigma_x()])?;
        let b0 = 0;
        let sb = Factorization::new(vec![2, 2])?;
        let l_sb = hamiltonian_term_on(&(kron(&sigma_z(), &sigma_x()) * real(lambda / 2.0)), sb)?;
        let bundle = build_tripartite(&l_sb, &ancilla, &kraus, b0)?;
        let initial_state = DensityMatrix::product(&[
            &rho0_s,
            &ancilla.reset_state(),
            &DensityMatrix::basis(b0, 2),
        ]);
        Ok(Self {
            name: name.to_string(),
            parameters,
            ancilla,
            kraus,
            system_generator: SuperOp::zeros(Factorization::single(2)),
            intercollision: Some(Intercollision {
                generator: l_sb,
                b0,
            }),
            bundle,
            system_initial: rho0_s,
            initial_state,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parameters(&self) -> &Params {
        &self.parameters
    }

    pub fn parameter(&self, key: &str) -> Option<f64> {
        self.parameters.get(key).copied()
    }

    pub fn ancilla(&self) -> &AncillaSpec {
        &self.ancilla
    }

    pub fn kraus(&self) -> &KrausSet {
        &self.kraus
    }

    pub fn gamma(&self) -> f64 {
        self.ancilla.gamma()
    }

    /// `L_s` (zero for the bipartite built-ins; the tripartite models carry
    /// their free system dynamics in the S⊗B coupling instead).
    pub fn system_generator(&self) -> &SuperOp {
        &self.system_generator
    }

    pub fn collision_generator(&self) -> SuperOp {
        self.kraus.collision_generator()
    }

    pub fn intercollision(&self) -> Option<&Intercollision> {
        self.intercollision.as_ref()
    }

    pub fn is_tripartite(&self) -> bool {
        self.intercollision.is_some()
    }

    pub fn bundle(&self) -> &GeneratorBundle {
        &self.bundle
    }

    pub fn factorization(&self) -> &Factorization {
        self.bundle.factorization()
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.initial_state
    }

    pub fn system_initial_state(&self) -> &DensityMatrix {
        &self.system_initial
    }

    /// Post-detection state of the embedding for a given system state.
    pub fn reset_embedding(&self, rho_s: &DensityMatrix) -> DensityMatrix {
        let ra = self.ancilla.reset_state();
        match &self.intercollision {
            Some(ic) => DensityMatrix::product(&[rho_s, &ra, &DensityMatrix::basis(ic.b0, 2)]),
            None => DensityMatrix::product(&[rho_s, &ra]),
        }
    }

    /// `ρ_s ↦ Tr_{a(b)}[exp(tL)(ρ_s ⊗ ρ̄_a (⊗ |b₀⟩⟨b₀|))]`.
    pub fn embedding_reduced_map(&self, t: f64) -> Result<SuperOp> {
        let e = self.bundle.total.exp(t)?;
        SuperOp::from_action(Factorization::single(2), |rho_s| {
            let lifted = match &self.intercollision {
                Some(ic) => crate::linalg::kron_all(&[
                    rho_s,
                    self.ancilla.reset_state().matrix(),
                    &ket_bra(ic.b0, ic.b0, 2),
                ]),
                None => kron(rho_s, self.ancilla.reset_state().matrix()),
            };
            let out = e.apply(&lifted);
            Ok(crate::linalg::partial_trace_matrix(&out, self.factorization(), &[0])?.0)
        })
    }
}

fn system_state(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: rho.dim(),
        });
    }
    let report = validate_state(rho, Tolerances::default());
    if !report.passed() {
        return Err(Error::InvalidParameter(format!(
            "initial system state is not a density matrix: {report}"
        )));
    }
    rho.clone().with_factorization(Factorization::single(2))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {x}"
        )))
    }
}

fn non_negative(name: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be non-negative, got {x}"
        )))
    }
}

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Two-level ancilla driven by `(Δ/2)σ_x`, detected on `|+⟩ → |−⟩` at rate γ.
pub fn coherent_ancilla(gamma: f64, delta: f64) -> Result<AncillaSpec> {
    positive("gamma", gamma)?;
    non_negative("delta", delta)?;
    AncillaSpec::new(
        0,
        vec![0.0, gamma],
        hamiltonian_term(&(sigma_x() * real(delta / 2.0)))?,
    )
}

/// Two-level ancilla re-excited incoherently `|−⟩ → |+⟩` at rate β, detected on
/// `|+⟩ → |−⟩` at rate γ.
pub fn incoherent_ancilla(gamma: f64, beta: f64) -> Result<AncillaSpec> {
    positive("gamma", gamma)?;
    positive("beta", beta)?;
    AncillaSpec::new(
        0,
        vec![0.0, gamma],
        lindblad_term(&sigma_minus().adjoint(), beta)?,
    )
}

/// `(m+1)`-level ring `a₀ → a₁ → … → a_m → a₀`, all at rate γ; the detected
/// link is `a₀ → a₁`.
pub fn erlang_ancilla(gamma: f64, m: usize) -> Result<AncillaSpec> {
    positive("gamma", gamma)?;
    if m == 0 {
        return Err(Error::InvalidParameter("erlang chain needs m >= 1".into()));
    }
    let d = m + 1;
    let fact = Factorization::single(d);
    let mut ring = SuperOp::zeros(fact);
    for l in 1..=m {
        let next = (l + 1) % d;
        ring = &ring + &lindblad_term(&ket_bra(next, l, d), gamma)?;
    }
    let mut rates = vec![0.0; d];
    rates[1] = gamma;
    AncillaSpec::new(0, rates, ring)
}

pub fn dephasing_coherent(gamma: f64, delta: f64, rho0_s: &DensityMatrix) -> Result<ModelSpec> {
    let ancilla = coherent_ancilla(gamma, delta)?;
    let kraus = KrausSet::new(vec![sigma_z()])?;
    ModelSpec::bipartite(
        "dephasing_coherent",
        params(&[("gamma", gamma), ("delta", delta)]),
        ancilla,
        kraus,
        rho0_s,
    )
}

pub fn dephasing_incoherent(gamma: f64, beta: f64, rho0_s: &DensityMatrix) -> Result<ModelSpec> {
    let ancilla = incoherent_ancilla(gamma, beta)?;
    let kraus = KrausSet::new(vec![sigma_z()])?;
    ModelSpec::bipartite(
        "dephasing_incoherent",
        params(&[("gamma", gamma), ("beta", beta)]),
        ancilla,
        kraus,
        rho0_s,
    )
}

pub fn erlang_chain(
    gamma: f64,
    m: usize,
    kraus: KrausSet,
    rho0_s: &DensityMatrix,
) -> Result<ModelSpec> {
    let ancilla = erlang_ancilla(gamma, m)?;
    ModelSpec::bipartite(
        "erlang_chain",
        params(&[("gamma", gamma), ("m", m as f64)]),
        ancilla,
        kraus,
        rho0_s,
    )
}

pub fn depolarizing(gamma: f64, delta: f64, p: f64, rho0_s: &DensityMatrix) -> Result<ModelSpec> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p must lie in (0, 1), got {p}"
        )));
    }
    let ancilla = coherent_ancilla(gamma, delta)?;
    let kraus = KrausSet::new(vec![
        sigma_x() * real(p.sqrt()),
        sigma_y() * real((1.0 - p).sqrt()),
    ])?;
    ModelSpec::bipartite(
        "depolarizing",
        params(&[("gamma", gamma), ("delta", delta), ("p", p)]),
        ancilla,
        kraus,
        rho0_s,
    )
}

pub fn tripartite_dephasing(
    gamma: f64,
    delta: f64,
    lambda: f64,
    rho0_s: &DensityMatrix,
) -> Result<ModelSpec> {
    non_negative("lambda", lambda)?;
    let ancilla = coherent_ancilla(gamma, delta)?;
    ModelSpec::tripartite(
        "tripartite_dephasing",
        params(&[("gamma", gamma), ("delta", delta), ("lambda", lambda)]),
        ancilla,
        lambda,
        rho0_s,
    )
}

pub fn tripartite_classical(
    gamma: f64,
    beta: f64,
    lambda: f64,
    rho0_s: &DensityMatrix,
) -> Result<ModelSpec> {
    non_negative("lambda", lambda)?;
    let ancilla = incoherent_ancilla(gamma, beta)?;
    ModelSpec::tripartite(
        "tripartite_classical",
        params(&[("gamma", gamma), ("beta", beta), ("lambda", lambda)]),
        ancilla,
        lambda,
        rho0_s,
    )
}

fn require(name: &str, p: &Params, key: &str) -> Result<f64> {
    p.get(key).copied().ok_or_else(|| {
        Error::InvalidParameter(format!("model `{name}` requires parameter `{key}`"))
    })
}

/// Builds a model by name. Parameter keys: `gamma`, `delta`, `beta`, `lambda`,
/// `p`, `m`. The erlang chain uses the σ_z collision.
pub fn build_model(name: &str, p: &Params, rho0_s: &DensityMatrix) -> Result<ModelSpec> {
    let req = |key| require(name, p, key);
    match name {
        "dephasing_coherent" => dephasing_coherent(req("gamma")?, req("delta")?, rho0_s),
        "dephasing_incoherent" => dephasing_incoherent(req("gamma")?, req("beta")?, rho0_s),
        "erlang_chain" => {
            let m = req("m")?;
            if m.fract() != 0.0 || m < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "m must be a positive integer, got {m}"
                )));
            }
            erlang_chain(
                req("gamma")?,
                m as usize,
                KrausSet::new(vec![sigma_z()])?,
                rho0_s,
            )
        }
        "depolarizing" => depolarizing(req("gamma")?, req("delta")?, req("p")?, rho0_s),
        "tripartite_dephasing" => {
            tripartite_dephasing(req("gamma")?, req("delta")?, req("lambda")?, rho0_s)
        }
        "tripartite_classical" => {
            tripartite_classical(req("gamma")?, req("beta")?, req("lambda")?, rho0_s)
        }
        _ => Err(Error::InvalidParameter(format!(
            "unknown model `{name}`; valid models: {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

/// Closed-form reference curves. Time-domain forms take `t`, the `*Laplace`
/// forms take `u`. `CoherentCoherence` is the coherence in units of its
/// initial value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosedForm {
    CoherentWtd { gamma: f64, delta: f64 },
    CoherentKernel { gamma: f64, delta: f64 },
    CoherentCoherence { gamma: f64, delta: f64 },
    IncoherentWtdLaplace { gamma: f64, beta: f64 },
    ErlangWtdLaplace { gamma: f64, m: u32 },
    CosineDecoherence { lambda: f64 },
}

/// `sinh(x·s)/s`, continuous at `s = 0`.
fn sinh_over(x: f64, s: C64) -> C64 {
    if s.norm() < 1e-150 {
        real(x)
    } else {
        (s * x).sinh() / s
    }
}

impl ClosedForm {
    pub const NAMES: [&'static str; 6] =
        ["w_exact", "k_exact", "c53", "w58_u", "erlang_u", "d_cos"];

    pub fn from_name(name: &str, p: &Params) -> Result<Self> {
        let req = |key| require(name, p, key);
        Ok(match name {
            "w_exact" => ClosedForm::CoherentWtd {
                gamma: req("gamma")?,
                delta: req("delta")?,
            },
            "k_exact" => ClosedForm::CoherentKernel {
                gamma: req("gamma")?,
                delta: req("delta")?,
            },
            "c53" => ClosedForm::CoherentCoherence {
                gamma: req("gamma")?,
                delta: req("delta")?,
            },
            "w58_u" => ClosedForm::IncoherentWtdLaplace {
                gamma: req("gamma")?,
                beta: req("beta")?,
            },
            "erlang_u" => ClosedForm::ErlangWtdLaplace {
                gamma: req("gamma")?,
                m: req("m")? as u32,
            },
            "d_cos" => ClosedForm::CosineDecoherence {
                lambda: req("lambda")?,
            },
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown closed form `{name}`; valid: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    /// Evaluation in complex arithmetic.
    pub fn eval(&self, x: C64) -> C64 {
        match *self {
            ClosedForm::CoherentWtd { gamma, delta } => {
                let t = x.re;
                let s = real(gamma * gamma - 4.0 * delta * delta).sqrt();
                let f = sinh_over(t / 4.0, s);
                real(4.0 * gamma * delta * delta * (-gamma * t / 2.0).exp()) * f * f
            }
            ClosedForm::CoherentKernel { gamma, delta } => {
                let t = x.re;
                let s = real(gamma * gamma - 16.0 * delta * delta).sqrt();
                real(2.0 * gamma * delta * delta * (-0.75 * gamma * t).exp())
                    * sinh_over(t / 4.0, s)
            }
            ClosedForm::CoherentCoherence { gamma, delta } => {
                let t = x.re;
                let (g2, d2) = (gamma * gamma, delta * delta);
                let den = g2 + 2.0 * d2;
                let phi = real((gamma / 4.0).powi(2) - d2).sqrt();
                let cosh = (phi * t).cosh();
                real((-gamma * t).exp() * 2.0 * d2 / den)
                    + real((-gamma * t / 4.0).exp())
                        * (cosh * (g2 / den)
                            + sinh_over(t, phi) * (gamma * (g2 + 8.0 * d2) / (4.0 * den)))
            }
            ClosedForm::IncoherentWtdLaplace { gamma, beta } => {
                real(gamma) / (x + gamma) * (real(beta) / (x + beta))
            }
            ClosedForm::ErlangWtdLaplace { gamma, m } => (real(gamma) / (x + gamma)).powu(m + 1),
            ClosedForm::CosineDecoherence { lambda } => real((lambda * x.re).cos()),
        }
    }

    /// Real-valued evaluation; fails if the imaginary residue exceeds 1e-12.
    pub fn eval_real(&self, x: f64) -> Result<f64> {
        let z = self.eval(real(x));
        if z.im.abs() > 1e-12 * z.re.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "closed form has imaginary residue {:.3e}",
                z.im
            )));
        }
        Ok(z.re)
    }
}

/// Identity on the system; handy as a neutral Kraus set.
pub fn identity_kraus() -> KrausSet {
    KrausSet::new(vec![identity(2)]).expect("identity is complete")
}
