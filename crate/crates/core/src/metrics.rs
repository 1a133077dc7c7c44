//! Wasserstein-2 distances on ℝ, the empirical coupling bound, and coupled
//! propagation-of-chaos experiments with log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::mean_field::MeanFieldCurves;
use crate::model::ModelSpec;
use crate::par;
use crate::particle::{run_system, AgentDrivers, EmpiricalLaw, InitialLaw, MeanFieldSource, Profile, TimeGrid};
use crate::rng::{derive_seed, module, Driver, StreamKey};
use crate::stats::{self, Estimate};

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact W2 between two empirical laws on ℝ.
///
/// Equal atom counts use the sorted pairing; otherwise the quantile
/// functions are integrated over the merged breakpoints `i/n ∪ j/m`.
pub fn wasserstein2_1d(mu: &EmpiricalLaw, nu: &EmpiricalLaw) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::InvalidArgument("Wasserstein distance of an empty law".into()));
    }
    let a = sorted(mu.atoms());
    let b = sorted(nu.atoms());
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        return Ok((s / a.len() as f64).sqrt());
    }
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut total = 0.0;
    // Breakpoints compared exactly as i·m vs j·n to avoid rounding.
    while i < n && j < m {
        let ni = (i + 1) * m;
        let nj = (j + 1) * n;
        let next = ni.min(nj);
        let w = (next as f64 - prev) / (n * m) as f64;
        total += w * (a[i] - b[j]).powi(2);
        prev = next as f64;
        if ni == next {
            i += 1;
        }
        if nj == next {
            j += 1;
        }
    }
    Ok(total.sqrt())
}

/// Both sides of `W2(μ^n_ξ, μ^n_ζ) ≤ (1/n Σ|ξ_j − ζ_j|²)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn check_coupling_bound(xi: &[f64], zeta: &[f64]) -> Result<CouplingBound> {
    if xi.len() != zeta.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", xi.len(), zeta.len())));
    }
    let lhs = wasserstein2_1d(&EmpiricalLaw::new(xi.to_vec())?, &EmpiricalLaw::new(zeta.to_vec())?)?;
    let rhs = (xi.iter().zip(zeta).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / xi.len() as f64).sqrt();
    Ok(CouplingBound { lhs, rhs, holds: lhs <= rhs + 1e-12 })
}

/// `sup_i E sup_t |x^{i,n}_t − x^i_t|²` at one particle count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosEstimate {
    pub n: usize,
    pub error: f64,
    /// Bootstrap standard error of the max over agents.
    pub se: f64,
    /// Agent-averaged error with its standard error.
    pub mean_error: Estimate,
    pub replications: usize,
}

/// Coupled particle system versus independent copies on `curves`, with
/// shared `(x₀, w, α)` per agent.
#[allow(clippy::too_many_arguments)]
pub fn chaos_error(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    replications: usize,
    seed: u64,
) -> Result<ChaosEstimate> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("chaos error needs n >= 2, got {n}")));
    }
    if replications < 2 {
        return Err(Error::InvalidArgument("chaos error needs at least 2 replications".into()));
    }
    if !curves.converged {
        return Err(Error::InvalidArgument("chaos error requires converged mean-field curves".into()));
    }
    let key = StreamKey::new(derive_seed(seed, &[n as u64]), module::CHAOS);
    let profile = Profile::symmetric(feedback);
    let steps = grid.n_steps();
    let rows = par::map_range(replications, |rep| -> Result<Vec<f64>> {
        let k = key.replication(rep as u64);
        let drivers = AgentDrivers::generate_all(spec, grid, init, k, n);
        let coupled = run_system(spec, profile, grid, &drivers, MeanFieldSource::Empirical, k)?;
        let limit = run_system(spec, profile, grid, &drivers, MeanFieldSource::Curves(curves), k)?;
        Ok((0..n)
            .map(|i| (0..=steps).map(|s| (coupled.state(i, s) - limit.state(i, s)).powi(2)).fold(0.0, f64::max))
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<Vec<f64>>>>()?;
    let max_of_means = |idx: &[usize]| {
        let mut acc = vec![0.0; n];
        for &r in idx {
            for (a, v) in acc.iter_mut().zip(&rows[r]) {
                *a += v;
            }
        }
        acc.iter().fold(0.0f64, |m, &v| m.max(v)) / idx.len() as f64
    };
    let all: Vec<usize> = (0..replications).collect();
    let error = max_of_means(&all);
    let mut rng = StreamKey::new(derive_seed(seed, &[n as u64]), module::BOOTSTRAP).rng(Driver::Aux);
    let se = stats::bootstrap_se(replications, 1000, &mut rng, max_of_means);
    let per_rep: Vec<f64> = rows.iter().map(|r| stats::mean(r)).collect();
    Ok(ChaosEstimate { n, error, se, mean_error: stats::estimate(&per_rep), replications })
}

/// Chaos errors over a ladder of particle counts.
#[allow(clippy::too_many_arguments)]
pub fn chaos_ladder(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    ladder: &[usize],
    grid: &TimeGrid,
    init: &InitialLaw,
    replications: usize,
    seed: u64,
) -> Result<Vec<ChaosEstimate>> {
    ladder.iter().map(|&n| chaos_error(spec, feedback, curves, n, grid, init, replications, seed)).collect()
}

/// Ordinary least squares of `log error` on `log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub n_values: Vec<usize>,
    pub errors: Vec<Estimate>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Delta-method standard error of the slope from the per-point SEs.
    pub slope_se: f64,
}

impl RateFit {
    pub fn fit(n_values: &[usize], errors: &[Estimate]) -> Result<Self> {
        if n_values.len() != errors.len() {
            return Err(Error::InvalidArgument("ladder and errors differ in length".into()));
        }
        if n_values.len() < 2 {
            return Err(Error::InvalidArgument("a rate fit needs at least 2 points".into()));
        }
        if n_values.windows(2).any(|w| w[1] <= w[0]) || n_values[0] == 0 {
            return Err(Error::InvalidArgument("ladder must be positive and strictly increasing".into()));
        }
        if let Some(e) = errors.iter().find(|e| !(e.mean > 0.0) || !e.mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "nonpositive error estimate {}; increase replications",
                e.mean
            )));
        }
        let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.mean.ln()).collect();
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
        let slope_se = xs.iter().zip(errors).map(|(x, e)| ((x - mx) / sxx * e.se / e.mean).powi(2)).sum::<f64>().sqrt();
        Ok(Self { n_values: n_values.to_vec(), errors: errors.to_vec(), slope, intercept, r_squared, slope_se })
    }

    /// `exp(intercept)·n^slope`.
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n.ln()).exp()
    }
}

/// Rate fit of a chaos ladder: at least 3 points spanning a decade.
pub fn fit_chaos_rate(n_values: &[usize], errors: &[Estimate]) -> Result<RateFit> {
    if n_values.len() < 3 {
        return Err(Error::InvalidArgument("a chaos rate fit needs at least 3 ladder points".into()));
    }
    let (lo, hi) = (n_values[0], *n_values.last().unwrap_or(&0));
    if (hi as f64) < 10.0 * lo as f64 {
        return Err(Error::InvalidArgument(format!("ladder {lo}..{hi} spans less than a decade")));
    }
    RateFit::fit(n_values, errors)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::mean_field::unused_curves;
    use crate::model::{ActionSet, ClosureModel};

    fn law(v: &[f64]) -> EmpiricalLaw {
        EmpiricalLaw::new(v.to_vec()).unwrap()
    }

    fn est(v: f64) -> Estimate {
        Estimate { mean: v, se: 0.01 * v }
    }

    #[test]
    fn point_masses_and_identity() {
        assert_eq!(wasserstein2_1d(&law(&[0.0]), &law(&[2.5])).unwrap(), 2.5);
        assert_eq!(wasserstein2_1d(&law(&[1.0, 3.0, 2.0]), &law(&[3.0, 1.0, 2.0])).unwrap(), 0.0);
        assert!(EmpiricalLaw::new(vec![]).is_err());
    }

    #[test]
    fn unequal_counts_use_quantiles() {
        // {0, 1} vs {0.5}: each half moves by 0.5.
        assert!((wasserstein2_1d(&law(&[0.0, 1.0]), &law(&[0.5])).unwrap() - 0.5).abs() < 1e-15);
        // Duplicated atoms describe the same law.
        let a = law(&[0.3, -1.0, 2.0]);
        let b = law(&[0.3, 0.3, -1.0, -1.0, 2.0, 2.0]);
        assert!(wasserstein2_1d(&a, &b).unwrap() < 1e-15);
        // {0,1,2} vs {0,2}: thirds against halves.
        let w = wasserstein2_1d(&law(&[0.0, 1.0, 2.0]), &law(&[0.0, 2.0])).unwrap();
        assert!((w * w - (1.0 / 6.0 + 1.0 / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn coupling_bound_hand_cases() {
        let c = check_coupling_bound(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!((c.lhs, c.rhs, c.holds), (0.0, 1.0, true));
        let xi = [-1.0, 0.2, 0.7, 3.0];
        let zeta: Vec<f64> = xi.iter().map(|x| x + 0.4).collect();
        let c = check_coupling_bound(&xi, &zeta).unwrap();
        assert!((c.lhs - 0.4).abs() < 1e-15 && (c.rhs - 0.4).abs() < 1e-15);
        let c = check_coupling_bound(&xi, &xi).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        assert!(check_coupling_bound(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_power_laws() {
        let ns = [10, 100, 1000, 10000];
        let inv: Vec<Estimate> = ns.iter().map(|&n| est(3.0 / n as f64)).collect();
        let f = fit_chaos_rate(&ns, &inv).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-6);
        assert!((f.predict(50.0) - 3.0 / 50.0).abs() < 1e-12);
        let half: Vec<Estimate> = ns.iter().map(|&n| est(2.0 / (n as f64).sqrt())).collect();
        assert!((fit_chaos_rate(&ns, &half).unwrap().slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_preconditions() {
        assert!(fit_chaos_rate(&[10, 20], &[est(1.0), est(0.5)]).is_err());
        assert!(fit_chaos_rate(&[10, 20, 40], &[est(1.0), est(0.5), est(0.2)]).is_err());
        assert!(RateFit::fit(&[10, 100], &[est(1.0), Estimate { mean: 0.0, se: 0.0 }]).is_err());
        assert!(RateFit::fit(&[100, 10], &[est(1.0), est(1.0)]).is_err());
        assert!(RateFit::fit(&[10, 100], &[est(1.0), est(0.1)]).is_ok());
    }

    #[test]
    fn measure_free_chaos_error_is_exactly_zero() {
        let m = ClosureModel::new().drift(|_, x, _, v| -x + v).diffusion(|_, x, _, _| 0.3 + 0.1 * x.sin());
        let spec = ModelSpec::single_regime(Arc::new(m), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let fb = FeedbackControl::custom(|_, x, _| -0.5 * x, 0.5);
        let e = chaos_error(&spec, &fb, &unused_curves(g), 16, &g, &InitialLaw::Gaussian { mean: 0.0, std: 1.0 }, 4, 9)
            .unwrap();
        assert_eq!(e.error, 0.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn chaos_error_rejects_unconverged_curves() {
        let spec = ModelSpec::single_regime(Arc::new(ClosureModel::new()), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 5).unwrap();
        let c = MeanFieldCurves::constant(g, 0.0, 0.0, 0.0, 0.0);
        assert!(chaos_error(&spec, &FeedbackControl::zero(), &c, 4, &g, &InitialLaw::Point(0.0), 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn metric_axioms(a in prop::collection::vec(-10.0f64..10.0, 1..20),
                         b in prop::collection::vec(-10.0f64..10.0, 1..20),
                         c in prop::collection::vec(-10.0f64..10.0, 1..20)) {
            let (la, lb, lc) = (law(&a), law(&b), law(&c));
            let ab = wasserstein2_1d(&la, &lb).unwrap();
            let ba = wasserstein2_1d(&lb, &la).unwrap();
            let bc = wasserstein2_1d(&lb, &lc).unwrap();
            let ac = wasserstein2_1d(&la, &lc).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn coupling_bound_holds(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
            let (xi, zeta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(check_coupling_bound(&xi, &zeta).unwrap().holds);
        }

        #[test]
        fn translation_moves_by_the_shift(a in prop::collection::vec(-5.0f64..5.0, 1..30), c in -3.0f64..3.0) {
            let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
            let w = wasserstein2_1d(&law(&a), &law(&shifted)).unwrap();
            prop_assert!((w - c.abs()).abs() < 1e-12);
        }
    }
}
