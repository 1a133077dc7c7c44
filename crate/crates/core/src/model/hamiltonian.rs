use crate::error::{Error, Result};

use super::ModelSpec;

/// Frozen arguments of the Hamiltonian apart from the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianPoint {
    pub t: f64,
    pub x: f64,
    pub y_psi: f64,
    pub y_phi: f64,
    pub y_varphi: f64,
    pub regime: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianEval {
    pub value: f64,
    /// Partial in the state at fixed mean-field arguments.
    pub h_x: f64,
    pub h_u: f64,
}

#[inline]
pub(crate) fn hamiltonian_value(spec: &ModelSpec, pt: &HamiltonianPoint, u: f64) -> f64 {
    let c = spec.coeffs();
    let r = spec.r(pt.regime);
    c.running_cost(pt.t, pt.x, pt.y_varphi, u) * r
        + c.drift(pt.t, pt.x, pt.y_psi, u) * r * pt.p
        + c.diffusion(pt.t, pt.x, pt.y_phi, u) * r * pt.q
}

/// `h·r(i) + b·r(i)·p + σ·r(i)·q` and its partials in `x` and `u`.
pub fn hamiltonian(spec: &ModelSpec, pt: &HamiltonianPoint, u: f64) -> Result<HamiltonianEval> {
    let a = spec.action_set();
    if !a.contains(u) {
        return Err(Error::OutsideActionSet { u, lo: a.lo(), hi: a.hi() });
    }
    spec.generator().check_state(pt.regime)?;
    let c = spec.coeffs();
    let r = spec.r(pt.regime);
    let h = c.running_cost_grad(pt.t, pt.x, pt.y_varphi, u);
    let b = c.drift_grad(pt.t, pt.x, pt.y_psi, u);
    let s = c.diffusion_grad(pt.t, pt.x, pt.y_phi, u);
    Ok(HamiltonianEval {
        value: hamiltonian_value(spec, pt, u),
        h_x: (h.x + b.x * pt.p + s.x * pt.q) * r,
        h_u: (h.v + b.v * pt.p + s.v * pt.q) * r,
    })
}

const GOLDEN_TOL: f64 = 1e-10;
const QUAD_REL_TOL: f64 = 1e-10;

/// Minimizer of the Hamiltonian over the action set, assuming convexity in
/// the control.
///
/// Quadratic (or affine) dependence on `v` is detected from five samples and
/// solved in closed form; otherwise golden-section search runs to an
/// argument tolerance of `1e-10`. Exact ties resolve toward the midpoint.
pub fn minimize_hamiltonian(spec: &ModelSpec, pt: &HamiltonianPoint) -> Result<f64> {
    spec.generator().check_state(pt.regime)?;
    let a = spec.action_set();
    let (lo, hi) = (a.lo(), a.hi());
    let mid = a.midpoint();
    if hi == lo {
        return Ok(lo);
    }
    let eval = |v: f64| -> Result<f64> {
        let h = hamiltonian_value(spec, pt, v);
        if h.is_finite() {
            Ok(h)
        } else {
            Err(Error::NonFiniteHamiltonian { v })
        }
    };
    let half = 0.5 * (hi - lo);
    let probes = [lo, mid - 0.5 * half, mid, mid + 0.5 * half, hi];
    let mut vals = [0.0; 5];
    for (slot, &v) in vals.iter_mut().zip(&probes) {
        *slot = eval(v)?;
    }
    let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // H(v) = H(mid) + B (v - mid) + A (v - mid)^2 through lo, mid, hi.
    let curv = (vals[0] - 2.0 * vals[2] + vals[4]) / (2.0 * half * half);
    let slope = (vals[4] - vals[0]) / (2.0 * half);
    let quad = |v: f64| vals[2] + slope * (v - mid) + curv * (v - mid) * (v - mid);
    let is_quadratic = [1usize, 3].iter().all(|&k| (quad(probes[k]) - vals[k]).abs() <= QUAD_REL_TOL * scale);

    if is_quadratic {
        if curv * half * half > 1e-14 * scale {
            return Ok((mid - slope / (2.0 * curv)).clamp(lo, hi));
        }
        if (slope * half).abs() <= 1e-14 * scale {
            return Ok(mid);
        }
        return Ok(if slope > 0.0 { lo } else { hi });
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a0, mut b0) = (lo, hi);
    let mut c0 = b0 - inv_phi * (b0 - a0);
    let mut d0 = a0 + inv_phi * (b0 - a0);
    let mut fc = eval(c0)?;
    let mut fd = eval(d0)?;
    while b0 - a0 > GOLDEN_TOL {
        if fc <= fd {
            b0 = d0;
            d0 = c0;
            fd = fc;
            c0 = b0 - inv_phi * (b0 - a0);
            fc = eval(c0)?;
        } else {
            a0 = c0;
            c0 = d0;
            fc = fd;
            d0 = a0 + inv_phi * (b0 - a0);
            fd = eval(d0)?;
        }
    }
    let mut best = 0.5 * (a0 + b0);
    let mut best_val = eval(best)?;
    for (v, h) in [(lo, vals[0]), (hi, vals[4])] {
        if h < best_val {
            best = v;
            best_val = h;
        }
    }
    Ok(best)
}
