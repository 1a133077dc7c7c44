//! Randomized spot checks of the standing assumptions. Nothing here is a
//! proof: convexity is probed with midpoint tests, boundedness by the largest
//! observed derivative, sign conditions pointwise.

use rand::Rng;
use serde::Serialize;

use super::hamiltonian::{hamiltonian_value, HamiltonianPoint};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::rng::{module, Driver, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub passed: bool,
    pub detail: String,
    /// Sample point exhibiting a failure, when one was found.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Largest `|∂|` observed per named partial derivative.
    pub max_abs_derivatives: Vec<(String, f64)>,
    pub documented_deviations: Vec<String>,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

const BOX: f64 = 3.0;
const CONVEX_TOL: f64 = 1e-9;

fn midpoint_violation(f_mid: f64, f_a: f64, f_b: f64) -> bool {
    let avg = 0.5 * (f_a + f_b);
    f_mid > avg + CONVEX_TOL * (1.0 + avg.abs())
}

fn pass(id: &str, detail: impl Into<String>) -> AssumptionCheck {
    AssumptionCheck { id: id.into(), passed: true, detail: detail.into(), witness: None }
}

fn fail(id: &str, detail: impl Into<String>, witness: Vec<f64>) -> AssumptionCheck {
    AssumptionCheck { id: id.into(), passed: false, detail: detail.into(), witness: Some(witness) }
}

/// Runs the spot checks with `sample_budget` random points per test over
/// `t ∈ [0, horizon]`, `x, y ∈ [−3, 3]` and the action set.
pub fn check_assumptions(spec: &ModelSpec, horizon: f64, sample_budget: usize, seed: u64) -> Result<AssumptionReport> {
    if sample_budget < 100 {
        return Err(Error::InvalidArgument(format!("sample_budget must be >= 100, got {sample_budget}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    let c = spec.coeffs();
    let act = spec.action_set();
    let d = spec.regimes();
    let mut rng = StreamKey::new(seed, module::ASSUMPTIONS).rng(Driver::Aux);
    let mut checks = Vec::new();

    let draw = |rng: &mut crate::rng::StreamRng| {
        let t = rng.random::<f64>() * horizon;
        let x = rng.random_range(-BOX..BOX);
        let y = rng.random_range(-BOX..BOX);
        let v = if act.hi() > act.lo() { rng.random_range(act.lo()..=act.hi()) } else { act.lo() };
        (t, x, y, v)
    };

    // finiteness and observed bounds of every partial.
    let names = [
        "b_x", "b_y", "b_v", "sigma_x", "sigma_y", "sigma_v", "h_x", "h_y", "h_v", "g_x", "g_y", "psi_x", "phi_x",
        "varphi_x", "chi_x",
    ];
    let mut max_abs = vec![0.0f64; names.len()];
    let mut nonfinite: Option<Vec<f64>> = None;
    let mut sign_fail: Option<(&str, Vec<f64>)> = None;
    for _ in 0..sample_budget {
        let (t, x, y, v) = draw(&mut rng);
        let b = c.drift_grad(t, x, y, v);
        let s = c.diffusion_grad(t, x, y, v);
        let h = c.running_cost_grad(t, x, y, v);
        let g = c.terminal_cost_grad(x, y);
        let vals =
            [b.x, b.y, b.v, s.x, s.y, s.v, h.x, h.y, h.v, g.x, g.y, c.psi_x(x), c.phi_x(x), c.varphi_x(x), c.chi_x(x)];
        for (m, val) in max_abs.iter_mut().zip(vals) {
            if !val.is_finite() {
                nonfinite.get_or_insert_with(|| vec![t, x, y, v]);
            }
            *m = m.max(val.abs());
        }
        if sign_fail.is_none() {
            for (name, val) in [("b_y", b.y), ("sigma_y", s.y), ("h_y", h.y), ("g_y", g.y)] {
                if val < 0.0 {
                    sign_fail = Some((name, vec![t, x, y, v, val]));
                    break;
                }
            }
        }
    }
    match nonfinite {
        None => checks.push(pass("finite_derivatives", "coefficients and derivatives finite at all samples; r > 0")),
        Some(w) => checks.push(fail("finite_derivatives", "non-finite derivative", w)),
    }
    checks.push(if max_abs.iter().all(|m| m.is_finite()) {
        pass("bounded_derivatives", "derivatives bounded on the sampled box (see max_abs_derivatives)")
    } else {
        fail("bounded_derivatives", "unbounded derivative observed", vec![])
    });

    // ∫|b(s,0,ψ(0),0)|² + |σ(s,0,φ(0),0)|² ds by trapezoid.
    let n = 1000;
    let dt = horizon / n as f64;
    let integrand = |s: f64| c.drift(s, 0.0, c.psi(0.0), 0.0).powi(2) + c.diffusion(s, 0.0, c.phi(0.0), 0.0).powi(2);
    let integral: f64 = (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * integrand(k as f64 * dt)
        })
        .sum::<f64>()
        * dt;
    checks.push(if integral.is_finite() {
        pass("integrable_origin", format!("integral = {integral:.6e}"))
    } else {
        fail("integrable_origin", "integral not finite", vec![integral])
    });

    // g convex in (x, y).
    let mut witness = None;
    for _ in 0..sample_budget {
        let (x1, y1) = (rng.random_range(-BOX..BOX), rng.random_range(-BOX..BOX));
        let (x2, y2) = (rng.random_range(-BOX..BOX), rng.random_range(-BOX..BOX));
        let fm = c.terminal_cost(0.5 * (x1 + x2), 0.5 * (y1 + y2));
        if midpoint_violation(fm, c.terminal_cost(x1, y1), c.terminal_cost(x2, y2)) {
            witness = Some(vec![x1, y1, x2, y2]);
            break;
        }
    }
    checks.push(match witness {
        None => pass("terminal_convexity", "g passed midpoint convexity"),
        Some(w) => fail("terminal_convexity", "g violates midpoint convexity at (x1, y1, x2, y2)", w),
    });

    // Hamiltonian convex in (x, y_psi, y_phi, y_varphi, v) at random (t, i, p, q).
    let mut witness = None;
    for _ in 0..sample_budget {
        let t = rng.random::<f64>() * horizon;
        let regime = rng.random_range(0..d);
        let p = rng.random_range(-2.0..2.0);
        let q = rng.random_range(-2.0..2.0);
        let mut a = [0.0; 5];
        let mut b = [0.0; 5];
        for k in 0..4 {
            a[k] = rng.random_range(-BOX..BOX);
            b[k] = rng.random_range(-BOX..BOX);
        }
        a[4] = rng.random_range(act.lo()..=act.hi());
        b[4] = rng.random_range(act.lo()..=act.hi());
        let h = |z: &[f64; 5]| {
            let pt = HamiltonianPoint { t, x: z[0], y_psi: z[1], y_phi: z[2], y_varphi: z[3], regime, p, q };
            hamiltonian_value(spec, &pt, z[4])
        };
        let m: [f64; 5] = std::array::from_fn(|k| 0.5 * (a[k] + b[k]));
        if midpoint_violation(h(&m), h(&a), h(&b)) {
            let mut w = vec![t, regime as f64, p, q];
            w.extend_from_slice(&a);
            w.extend_from_slice(&b);
            witness = Some(w);
            break;
        }
    }
    checks.push(match witness {
        None => pass("hamiltonian_convexity", "Hamiltonian passed midpoint convexity"),
        Some(w) => {
            fail("hamiltonian_convexity", "Hamiltonian violates midpoint convexity (t, i, p, q, point a, point b)", w)
        }
    });

    // ψ, φ, varphi, χ convex.
    let mut failure: Option<(&str, Vec<f64>)> = None;
    let funcs: [(&str, &dyn Fn(f64) -> f64); 4] =
        [("psi", &|x| c.psi(x)), ("phi", &|x| c.phi(x)), ("varphi", &|x| c.varphi(x)), ("chi", &|x| c.chi(x))];
    'outer: for _ in 0..sample_budget {
        let x1 = rng.random_range(-BOX..BOX);
        let x2 = rng.random_range(-BOX..BOX);
        for (name, f) in &funcs {
            if midpoint_violation(f(0.5 * (x1 + x2)), f(x1), f(x2)) {
                failure = Some((name, vec![x1, x2]));
                break 'outer;
            }
        }
    }
    checks.push(match failure {
        None => pass("functional_convexity", "psi, phi, varphi, chi passed midpoint convexity"),
        Some((name, w)) => fail("functional_convexity", format!("{name} violates midpoint convexity"), w),
    });

    // b_y, σ_y, h_y, g_y nonnegative.
    checks.push(match sign_fail {
        None => pass("nonnegative_measure_derivatives", "b_y, sigma_y, h_y, g_y nonnegative at all samples"),
        Some((name, w)) => fail("nonnegative_measure_derivatives", format!("{name} negative"), w),
    });

    Ok(AssumptionReport {
        checks,
        max_abs_derivatives: names.iter().map(|s| s.to_string()).zip(max_abs).collect(),
        documented_deviations: spec.documented_deviations().to_vec(),
        samples: sample_budget,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::chain::GeneratorMatrix;
    use crate::model::{ActionSet, ClosureModel, Grad3, LqParams};

    fn lq_spec() -> ModelSpec {
        let lq = LqParams { a: -0.5, c: 1.0, b_bar: 0.3, sigma: 0.4, q: 1.0, r_c: 1.0, s: 1.0 };
        ModelSpec::new(
            Arc::new(lq),
            vec![1.0, 2.0],
            GeneratorMatrix::uniform(2, 1.0).unwrap(),
            0,
            ActionSet::new(-10.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn lq_benchmark_passes_every_check() {
        let rep = check_assumptions(&lq_spec(), 1.0, 500, 1).unwrap();
        assert!(rep.all_passed(), "{rep:#?}");
    }

    #[test]
    fn concave_terminal_cost_fails_a4_with_witness() {
        let m = ClosureModel::new().terminal_cost(|x, _| -x * x);
        let spec = ModelSpec::single_regime(Arc::new(m), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let rep = check_assumptions(&spec, 1.0, 200, 2).unwrap();
        let a4 = rep.get("terminal_convexity").unwrap();
        assert!(!a4.passed);
        let w = a4.witness.as_ref().unwrap();
        let (x1, x2) = (w[0], w[2]);
        assert!(-(0.5 * (x1 + x2)).powi(2) > 0.5 * (-x1 * x1 - x2 * x2));
    }

    #[test]
    fn negative_h_y_fails_a7_by_name() {
        let m = ClosureModel::new().running_cost(|_, _, y, _| -y).running_cost_grad(|_, _, _, _| Grad3 {
            x: 0.0,
            y: -1.0,
            v: 0.0,
        });
        let spec = ModelSpec::single_regime(Arc::new(m), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let rep = check_assumptions(&spec, 1.0, 100, 3).unwrap();
        let a7 = rep.get("nonnegative_measure_derivatives").unwrap();
        assert!(!a7.passed);
        assert!(a7.detail.contains("h_y"));
    }

    #[test]
    fn small_budget_rejected() {
        assert!(check_assumptions(&lq_spec(), 1.0, 99, 0).is_err());
    }
}
