//! Browser demo bindings. The plain functions are usable and tested natively;
//! the `#[wasm_bindgen]` wrappers pack their results into flat `Float64Array`s.

use qcm_core::analysis::{long_time_state, relative_entropy};
use qcm_core::dynamics::{memory_kernel, propagate_master, waiting_time_density};
use qcm_core::models::{dephasing_coherent, dephasing_incoherent, named_state, ModelSpec};
use qcm_core::trajectories::{run_trajectory, TrajectoryConfig};
use qcm_core::TimeGrid;
use wasm_bindgen::prelude::*;

/// Sample times plus two curves on them.
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub t: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Curves {
    /// `[t…, first…, second…]`.
    pub fn packed(&self) -> Vec<f64> {
        [self.t.as_slice(), &self.first, &self.second].concat()
    }
}

/// `coherent` takes the drive Δ as `param`, `incoherent` the return rate β.
pub fn dephasing_model(kind: &str, gamma: f64, param: f64) -> Result<ModelSpec, String> {
    let rho = named_state("x_plus").map_err(|e| e.to_string())?;
    match kind {
        "coherent" => dephasing_coherent(gamma, param, &rho),
        "incoherent" => dephasing_incoherent(gamma, param, &rho),
        other => return Err(format!("unknown ancilla `{other}` (coherent, incoherent)")),
    }
    .map_err(|e| e.to_string())
}

fn grid(t_max: f64, n: usize) -> Result<TimeGrid, String> {
    if n == 0 || !(t_max > 0.0 && t_max.is_finite()) {
        return Err("need t_max > 0 and at least one step".into());
    }
    TimeGrid::new(t_max / n as f64, n).map_err(|e| e.to_string())
}

/// Waiting-time density `w(t)` and memory kernel `k(t)`.
pub fn waiting_time_curves(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
) -> Result<Curves, String> {
    let m = dephasing_model(kind, gamma, param)?;
    let g = grid(t_max, n)?;
    let w = waiting_time_density(m.ancilla(), &g).map_err(|e| e.to_string())?;
    let k = memory_kernel(m.ancilla(), &g).map_err(|e| e.to_string())?;
    Ok(Curves {
        t: g.times(),
        first: w.real("w").map_err(|e| e.to_string())?.to_vec(),
        second: k.real("k").map_err(|e| e.to_string())?.to_vec(),
    })
}

/// Coherence `Re⟨+|ρ_s|−⟩` and relative entropy (bits) to the long-time state.
pub fn coherence_curves(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
) -> Result<Curves, String> {
    let m = dephasing_model(kind, gamma, param)?;
    let g = grid(t_max, n)?;
    let l = &m.bundle().total;
    let err = |e: qcm_core::Error| e.to_string();
    let reference = long_time_state(l, m.initial_state(), 400.0 / gamma)
        .and_then(|s| s.partial_trace(&[0]))
        .map_err(err)?;
    let mut c = Vec::with_capacity(g.len());
    let mut e = Vec::with_capacity(g.len());
    for s in propagate_master(l, m.initial_state(), &g).map_err(err)? {
        let s = s.partial_trace(&[0]).map_err(err)?;
        c.push(s.element(0, 1).re);
        e.push(relative_entropy(&s, &reference).map_err(err)?);
    }
    Ok(Curves {
        t: g.times(),
        first: c,
        second: e,
    })
}

/// One realization: coherence on the grid and the detection times.
pub fn sample_trajectory(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
    seed: u64,
) -> Result<(Curves, Vec<f64>), String> {
    let m = dephasing_model(kind, gamma, param)?;
    let g = grid(t_max, n)?;
    let rec =
        run_trajectory(&m, &TrajectoryConfig::new(g, seed, gamma)).map_err(|e| e.to_string())?;
    let c = rec
        .states
        .iter()
        .map(|s| s.partial_trace(&[0]).map(|s| s.element(0, 1).re))
        .collect::<qcm_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    Ok((
        Curves {
            t: g.times(),
            first: c,
            second: Vec::new(),
        },
        rec.jump_times,
    ))
}

#[wasm_bindgen]
pub fn waiting_time(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    waiting_time_curves(kind, gamma, param, t_max, n)
        .map(|c| c.packed())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn coherence(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    coherence_curves(kind, gamma, param, t_max, n)
        .map(|c| c.packed())
        .map_err(|e| JsError::new(&e))
}

/// `[t…, c…, jump times…]`; the grid has `n + 1` points.
#[wasm_bindgen]
pub fn trajectory(
    kind: &str,
    gamma: f64,
    param: f64,
    t_max: f64,
    n: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let (c, jumps) = sample_trajectory(kind, gamma, param, t_max, n, seed as u64)
        .map_err(|e| JsError::new(&e))?;
    Ok([c.t, c.first, jumps].concat())
}
