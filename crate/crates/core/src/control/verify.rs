//! Numerical check of the sufficient conditions for optimality of `û`.

use serde::{Deserialize, Serialize};

use crate::control::adjoint::{simulate_forward, AdjointTriple};
use crate::control::FeedbackControl;
use crate::error::Result;
use crate::mean_field::{copy_costs, solve_mean_field, unused_curves, MeanFieldCurves, PicardOptions};
use crate::model::{hamiltonian, minimize_hamiltonian, ModelSpec};
use crate::par;
use crate::particle::{InitialLaw, TimeGrid};
use crate::stats::{self, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    /// Copies per cost estimate.
    pub cost_copies: usize,
    /// Paths of the triple used for the integrability diagnostics.
    pub integrability_paths: usize,
    pub picard: PicardOptions,
    pub seed: u64,
    pub max_violation_fraction: f64,
    pub max_kurtosis: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            cost_copies: 20_000,
            integrability_paths: 10_000,
            picard: PicardOptions::default(),
            seed: 0,
            max_violation_fraction: 0.01,
            max_kurtosis: 100.0,
        }
    }
}

/// Sample statistics of per-path integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub mean: f64,
    pub se: f64,
    pub max: f64,
    pub kurtosis: f64,
    pub samples: usize,
}

impl TailStats {
    fn of(xs: &[f64]) -> Self {
        let e = stats::estimate(xs);
        Self {
            mean: e.mean,
            se: e.se,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            kurtosis: stats::kurtosis(xs),
            samples: xs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub id: String,
    pub passed: bool,
    pub detail: String,
    pub stats: Option<TailStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub label: String,
    pub cost: Estimate,
    /// `J(u) − J(û)` under common random numbers.
    pub difference: Estimate,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub hamiltonian_violation_fraction: f64,
    pub conditions: Vec<ConditionResult>,
    pub reference_cost: Estimate,
    pub comparisons: Vec<ComparisonResult>,
    pub all_passed: bool,
}

impl VerificationReport {
    pub fn condition(&self, id: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.id == id)
    }
}

/// Fraction of `(path, step)` samples where `H(û)` exceeds `min_v H` by more
/// than `1e-4·(1 + |H(û)|)`.
pub fn hamiltonian_violation_fraction(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    triple: &AdjointTriple,
    curves: &MeanFieldCurves,
) -> Result<f64> {
    let fp = &triple.forward;
    let steps = fp.grid.n_steps();
    let act = spec.action_set();
    let counts = par::map_range(fp.paths, |j| -> Result<usize> {
        let mut bad = 0;
        for k in 0..=steps {
            let pt = triple.point(curves, k, j);
            let (u, _) = feedback.apply(pt.t, pt.x, pt.regime, &act);
            let h = hamiltonian(spec, &pt, u)?.value;
            let v = minimize_hamiltonian(spec, &pt)?;
            let hmin = hamiltonian(spec, &pt, v)?.value;
            if h - hmin > 1e-4 * (1.0 + h.abs()) {
                bad += 1;
            }
        }
        Ok(bad)
    });
    let mut bad = 0usize;
    for c in counts {
        bad += c?;
    }
    Ok(bad as f64 / (fp.paths * (steps + 1)) as f64)
}

fn integral_condition(id: &str, what: &str, values: &[f64], max_kurtosis: f64) -> ConditionResult {
    if values.is_empty() {
        return ConditionResult {
            id: id.into(),
            passed: true,
            detail: format!("{what}: no comparison paths, integrand vanishes"),
            stats: None,
        };
    }
    let st = TailStats::of(values);
    let finite = values.iter().all(|v| v.is_finite());
    let heavy = st.kurtosis.is_finite() && st.kurtosis > max_kurtosis;
    ConditionResult {
        id: id.into(),
        passed: finite && !heavy,
        detail: format!(
            "{what}: mean {:e} ± {:e}, max {:e}, kurtosis {:.3}{}",
            st.mean,
            st.se,
            st.max,
            st.kurtosis,
            if heavy { " (heavy tail)" } else { "" }
        ),
        stats: Some(st),
    }
}

/// Applies [`integral_condition`] to each comparison control and reports the
/// one with the largest kurtosis.
fn per_control_condition(id: &str, what: &str, samples: &[(String, Vec<f64>)], max_kurtosis: f64) -> ConditionResult {
    let results: Vec<(String, ConditionResult)> =
        samples.iter().map(|(label, v)| (label.clone(), integral_condition(id, what, v, max_kurtosis))).collect();
    let failed = results.iter().filter(|(_, r)| !r.passed).count();
    let worst = results.iter().max_by(|a, b| {
        let k = |r: &ConditionResult| r.stats.map(|s| s.kurtosis).filter(|k| k.is_finite()).unwrap_or(0.0);
        k(&a.1).total_cmp(&k(&b.1))
    });
    match worst {
        None => integral_condition(id, what, &[], max_kurtosis),
        Some((label, r)) => ConditionResult {
            id: id.into(),
            passed: failed == 0,
            detail: format!("{failed} of {} controls flagged; worst tail at {label}: {}", results.len(), r.detail),
            stats: r.stats,
        },
    }
}

/// Runs the Hamiltonian minimum and integrability checks and cost dominance against `comparisons`.
#[allow(clippy::too_many_arguments)]
pub fn verify_sufficient_conditions(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    triple: &AdjointTriple,
    curves: &MeanFieldCurves,
    comparisons: &[FeedbackControl],
    grid: &TimeGrid,
    init: &InitialLaw,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let fp = &triple.forward;
    let steps = grid.n_steps();
    let c = spec.coeffs();
    let d = spec.regimes();
    let gen = spec.generator();
    let measure_free = c.measure_free();

    let fraction = hamiltonian_violation_fraction(spec, feedback, triple, curves)?;
    let mut conditions = vec![ConditionResult {
        id: "hamiltonian_minimum".into(),
        passed: fraction <= opts.max_violation_fraction,
        detail: format!(
            "{:.4}% of samples exceed the minimum (limit {:.4}%)",
            100.0 * fraction,
            100.0 * opts.max_violation_fraction
        ),
        stats: None,
    }];

    let npaths = opts.integrability_paths.min(fp.paths).max(1);
    // ∫ |σ r p|² dt along x̂.
    let p_int: Vec<f64> = par::map_range(npaths, |j| {
        (0..=steps)
            .map(|k| {
                let i = fp.at(k, j);
                let s = c.diffusion(grid.t(k), fp.x[i], curves.m_phi[k], fp.u[i]) * spec.r(fp.regime[i]) * triple.p[i];
                grid.trapezoid_weight(k) * s * s
            })
            .sum()
    });
    conditions.push(integral_condition("p_integrability", "E∫|σ r p|² dt", &p_int, opts.max_kurtosis));

    // Each comparison control gets its own mean-field fixed point.
    let mut comp_curves = Vec::with_capacity(comparisons.len());
    for u in comparisons {
        comp_curves.push(if measure_free {
            unused_curves(*grid)
        } else {
            solve_mean_field(spec, u, grid, init, &opts.picard)?.0
        });
    }

    // q and s integrals along comparison paths on the triple's noise, one sample per
    // comparison control.
    let mut q_int = Vec::with_capacity(comparisons.len());
    let mut s_int = Vec::with_capacity(comparisons.len());
    for (u, cu) in comparisons.iter().zip(&comp_curves) {
        let other = simulate_forward(spec, u, cu, npaths, grid, init, fp.key)?;
        let per_path: Vec<(f64, f64)> = par::map_range(npaths, |j| {
            let (mut a, mut b) = (0.0, 0.0);
            for k in 0..=steps {
                let i = fp.at(k, j);
                let dx = fp.x[i] - other.x[other.at(k, j)];
                let w = grid.trapezoid_weight(k);
                a += w * (dx * triple.q[i]).powi(2);
                if d > 1 {
                    // Instantaneous intensity of jumps into each target from α_{t−}.
                    let from = fp.chains[j].state_before(grid.t(k));
                    let mut quad = 0.0;
                    for t in 0..d {
                        if t != from {
                            let s = triple.s_at(k, j, t);
                            quad += s * s * gen.rate(from, t);
                        }
                    }
                    b += w * (dx * dx * quad).abs();
                }
            }
            (a, b)
        });
        let (a, b): (Vec<f64>, Vec<f64>) = per_path.into_iter().unzip();
        q_int.push((u.label().to_string(), a));
        s_int.push((u.label().to_string(), b));
    }
    conditions.push(per_control_condition("q_integrability", "E∫|(x̂−x)q|² dt", &q_int, opts.max_kurtosis));
    conditions.push(per_control_condition("s_integrability", "E∫|(x̂−x)s*Diag(m)s(x̂−x)| dt", &s_int, opts.max_kurtosis));

    // Cost dominance under common random numbers.
    let base = copy_costs(spec, feedback, curves, opts.cost_copies, grid, init, opts.seed)?;
    let reference_cost = stats::estimate(&base);
    let mut results = Vec::with_capacity(comparisons.len());
    for (u, cu) in comparisons.iter().zip(&comp_curves) {
        let costs = copy_costs(spec, u, cu, opts.cost_copies, grid, init, opts.seed)?;
        let difference = stats::paired_difference(&base, &costs);
        results.push(ComparisonResult {
            label: u.label().to_string(),
            cost: stats::estimate(&costs),
            dominated: difference.mean >= -3.0 * difference.se,
            difference,
        });
    }
    let beaten = results.iter().filter(|r| !r.dominated).count();
    conditions.push(ConditionResult {
        id: "dominance".into(),
        passed: beaten == 0,
        detail: format!("{} of {} comparison controls beat û by more than 3 SE", beaten, results.len()),
        stats: None,
    });
    let all_passed = conditions.iter().all(|c| c.passed);
    Ok(VerificationReport {
        hamiltonian_violation_fraction: fraction,
        conditions,
        reference_cost,
        comparisons: results,
        all_passed,
    })
}
