//! Unilateral-deviation experiments for the finite-population game.

use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::metrics::RateFit;
use crate::model::ModelSpec;
use crate::par;
use crate::particle::{agent_cost, run_system, AgentDrivers, InitialLaw, MeanFieldSource, Profile, TimeGrid};
use crate::rng::{derive_seed, module, StreamKey};
use crate::stats::{self, Estimate};

/// Parametric set of Lipschitz deviations around the equilibrium feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationFamily {
    /// The equilibrium feedback itself.
    Identity,
    /// `û + δ0 + δ1·x` for every pair of the grid, the same shift in every
    /// regime.
    AffineGrid { offsets: Vec<f64>, slopes: Vec<f64> },
    /// Independent grid per regime (`(|offsets|·|slopes|)^d` members).
    AffinePerRegime { offsets: Vec<f64>, slopes: Vec<f64> },
}

impl DeviationFamily {
    pub fn name(&self) -> String {
        match self {
            DeviationFamily::Identity => "identity".into(),
            DeviationFamily::AffineGrid { offsets, slopes } => format!("affine_grid({offsets:?}x{slopes:?})"),
            DeviationFamily::AffinePerRegime { offsets, slopes } => {
                format!("affine_per_regime({offsets:?}x{slopes:?})")
            }
        }
    }

    pub fn members(&self, base: &FeedbackControl, regimes: usize) -> Result<Vec<FeedbackControl>> {
        match self {
            DeviationFamily::Identity => Ok(vec![base.clone().with_label("identity")]),
            DeviationFamily::AffineGrid { offsets, slopes } => {
                check_grid(offsets, slopes)?;
                Ok(offsets
                    .iter()
                    .flat_map(|&a| slopes.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| base.shifted(&[a], &[b]))
                    .collect())
            }
            DeviationFamily::AffinePerRegime { offsets, slopes } => {
                check_grid(offsets, slopes)?;
                let pairs: Vec<(f64, f64)> =
                    offsets.iter().flat_map(|&a| slopes.iter().map(move |&b| (a, b))).collect();
                let total = pairs.len().checked_pow(regimes as u32).filter(|&t| t <= 4096).ok_or_else(|| {
                    Error::InvalidArgument(format!("per-regime deviation grid with {} regimes is too large", regimes))
                })?;
                Ok((0..total)
                    .map(|mut code| {
                        let mut d0 = Vec::with_capacity(regimes);
                        let mut d1 = Vec::with_capacity(regimes);
                        for _ in 0..regimes {
                            let (a, b) = pairs[code % pairs.len()];
                            code /= pairs.len();
                            d0.push(a);
                            d1.push(b);
                        }
                        base.shifted(&d0, &d1)
                    })
                    .collect())
            }
        }
    }
}

fn check_grid(offsets: &[f64], slopes: &[f64]) -> Result<()> {
    if offsets.is_empty() || slopes.is_empty() || offsets.iter().chain(slopes).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("deviation grid needs finite, nonempty offsets and slopes".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashGapResult {
    pub n: usize,
    pub deviator: usize,
    pub equilibrium: Estimate,
    pub best_deviation: Estimate,
    pub best_label: String,
    /// `J(equilibrium) − J(best deviation)`; positive when deviating pays.
    pub gap: f64,
    /// Standard error of the paired difference behind `gap`.
    pub gap_se: f64,
    /// `max(0, gap)`.
    pub advantage: f64,
    pub family: String,
    pub members: usize,
    pub replications: usize,
    /// Action-set projections of the deviating agent's control.
    pub deviator_clamped: usize,
}

/// Cost of agent `deviator` under the symmetric profile and under each
/// deviation, on identical drivers per replication.
#[allow(clippy::too_many_arguments)]
pub fn nash_gap(
    spec: &ModelSpec,
    equilibrium: &FeedbackControl,
    family: &DeviationFamily,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    replications: usize,
    seed: u64,
    deviator: usize,
) -> Result<NashGapResult> {
    if n == 0 || deviator >= n {
        return Err(Error::InvalidArgument(format!("deviator {} must be one of {n} agents", deviator + 1)));
    }
    if replications < 2 {
        return Err(Error::InvalidArgument("nash gap needs at least 2 replications".into()));
    }
    let members = family.members(equilibrium, spec.regimes())?;
    let key = StreamKey::new(seed, module::NASH);
    let rows = par::map_range(replications, |rep| -> Result<(f64, Vec<f64>, usize)> {
        let k = key.replication(rep as u64);
        let drivers = AgentDrivers::generate_all(spec, grid, init, k, n);
        let eq = run_system(spec, Profile::symmetric(equilibrium), grid, &drivers, MeanFieldSource::Empirical, k)?;
        let base = agent_cost(&eq, spec, deviator)?;
        let mut devs = Vec::with_capacity(members.len());
        let mut clamped = 0;
        for m in &members {
            let ens = run_system(
                spec,
                Profile::with_deviation(equilibrium, deviator, m),
                grid,
                &drivers,
                MeanFieldSource::Empirical,
                k,
            )?;
            clamped += ens.clamped_for(deviator);
            devs.push(agent_cost(&ens, spec, deviator)?);
        }
        Ok((base, devs, clamped))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let base: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let deviator_clamped = rows.iter().map(|r| r.2).sum();
    if deviator_clamped > 0 {
        log::warn!("deviating agent's control was projected onto the action set {deviator_clamped} times");
    }
    let mut best: Option<(usize, Estimate, Estimate)> = None;
    for (m, _) in members.iter().enumerate() {
        let costs: Vec<f64> = rows.iter().map(|r| r.1[m]).collect();
        let diff = stats::paired_difference(&costs, &base);
        let est = stats::estimate(&costs);
        // Largest J(eq) − J(dev) wins; ties keep the earliest member.
        if best.as_ref().is_none_or(|(_, _, d)| diff.mean > d.mean) {
            best = Some((m, est, diff));
        }
    }
    let (bm, best_est, diff) = best.ok_or_else(|| Error::InvalidArgument("empty deviation family".into()))?;
    Ok(NashGapResult {
        n,
        deviator,
        equilibrium: stats::estimate(&base),
        best_deviation: best_est,
        best_label: members[bm].label().to_string(),
        gap: diff.mean,
        gap_se: diff.se,
        advantage: diff.mean.max(0.0),
        family: family.name(),
        members: members.len(),
        replications,
        deviator_clamped,
    })
}

/// Outcome of a gap ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapScalingOutcome {
    Fit(RateFit),
    /// Fewer than three ladder points with a positive advantage.
    IndistinguishableFromZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScaling {
    pub results: Vec<NashGapResult>,
    pub outcome: GapScalingOutcome,
}

/// Nash gaps over a ladder of `n`, with a log-log fit of the positive
/// advantages.
#[allow(clippy::too_many_arguments)]
pub fn gap_scaling(
    spec: &ModelSpec,
    equilibrium: &FeedbackControl,
    family: &DeviationFamily,
    ladder: &[usize],
    grid: &TimeGrid,
    init: &InitialLaw,
    replications: usize,
    seed: u64,
) -> Result<GapScaling> {
    if ladder.len() < 3 {
        return Err(Error::InvalidArgument("gap scaling needs at least 3 ladder points".into()));
    }
    let results = ladder
        .iter()
        .map(|&n| nash_gap(spec, equilibrium, family, n, grid, init, replications, derive_seed(seed, &[n as u64]), 0))
        .collect::<Result<Vec<_>>>()?;
    let outcome = fit_advantages(&results)?;
    Ok(GapScaling { results, outcome })
}

/// Log-log fit of the positive advantages.
pub fn fit_advantages(results: &[NashGapResult]) -> Result<GapScalingOutcome> {
    let pos: Vec<&NashGapResult> = results.iter().filter(|r| r.advantage > 0.0).collect();
    if pos.len() < 3 {
        return Ok(GapScalingOutcome::IndistinguishableFromZero);
    }
    let ns: Vec<usize> = pos.iter().map(|r| r.n).collect();
    let es: Vec<Estimate> = pos.iter().map(|r| Estimate { mean: r.advantage, se: r.gap_se }).collect();
    Ok(GapScalingOutcome::Fit(RateFit::fit(&ns, &es)?))
}
