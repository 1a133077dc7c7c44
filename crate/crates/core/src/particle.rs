//! Euler–Maruyama simulation of the weakly coupled particle system and of
//! decoupled copies driven by deterministic mean-field curves.
//!
//! Coefficients are frozen at the left end of each step and read the regime
//! as the left limit `α_{t_k-}`, taken from the exact continuous-time chain.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::{sample_chain_unchecked, ChainPath};
use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::mean_field::MeanFieldCurves;
use crate::model::{Coefficients, LinearMeasureCoefficient, ModelSpec};
use crate::par;
use crate::rng::{module, Driver, StreamKey};
use crate::stats::{self, Estimate};

/// Uniform grid `t_k = k·T/n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|k| self.t(k))
    }

    /// Trapezoid weight of point `k` (already multiplied by `dt`).
    #[inline]
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// Law of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point(f64),
    Uniform([f64; 2]),
    Gaussian { mean: f64, std: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialLaw::Point(x) => x.is_finite(),
            InitialLaw::Uniform([a, b]) => a.is_finite() && b.is_finite() && a < b,
            InitialLaw::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid initial law {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Point(x) => x,
            InitialLaw::Uniform([a, b]) => 0.5 * (a + b),
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialLaw::Point(x) => x,
            InitialLaw::Uniform([a, b]) => a + (b - a) * rng.random::<f64>(),
            InitialLaw::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }
}

/// Independent drivers of one agent: initial state, Brownian increments and
/// regime path, each from its own stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDrivers {
    pub x0: f64,
    pub dw: Vec<f64>,
    pub chain: ChainPath,
    /// `α_{t_k-}`, `k = 0..=n_steps`.
    pub regime_left: Vec<usize>,
    /// `α_{t_k}`, `k = 0..=n_steps`.
    pub regime_at: Vec<usize>,
}

impl AgentDrivers {
    pub fn generate(spec: &ModelSpec, grid: &TimeGrid, init: &InitialLaw, key: StreamKey) -> Self {
        let x0 = init.sample(&mut key.rng(Driver::Initial));
        let sq = grid.dt().sqrt();
        let mut rng = key.rng(Driver::Brownian);
        let dw = (0..grid.n_steps())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sq
            })
            .collect();
        let chain = sample_chain_unchecked(
            spec.generator(),
            spec.initial_regime(),
            grid.horizon(),
            &mut key.rng(Driver::Chain),
        );
        let (regime_left, regime_at) = chain.on_grid(grid.dt(), grid.n_steps());
        Self { x0, dw, chain, regime_left, regime_at }
    }

    /// Drivers for agents `0..n` of one replication.
    pub fn generate_all(spec: &ModelSpec, grid: &TimeGrid, init: &InitialLaw, key: StreamKey, n: usize) -> Vec<Self> {
        par::map_range(n, |i| Self::generate(spec, grid, init, key.agent(i as u64)))
    }
}

/// Source of the mean-field arguments during a simulation.
#[derive(Debug, Clone, Copy)]
pub enum MeanFieldSource<'a> {
    /// `(1/n) Σ_j f(x^j)` of the simulated ensemble itself.
    Empirical,
    /// Deterministic curves, making agents independent copies.
    Curves(&'a MeanFieldCurves),
}

/// Feedback assignment: every agent uses `base` except an optional deviator.
#[derive(Debug, Clone, Copy)]
pub struct Profile<'a> {
    pub base: &'a FeedbackControl,
    pub deviator: Option<(usize, &'a FeedbackControl)>,
}

impl<'a> Profile<'a> {
    pub fn symmetric(base: &'a FeedbackControl) -> Self {
        Self { base, deviator: None }
    }

    pub fn with_deviation(base: &'a FeedbackControl, agent: usize, dev: &'a FeedbackControl) -> Self {
        Self { base, deviator: Some((agent, dev)) }
    }

    #[inline]
    pub fn for_agent(&self, i: usize) -> &'a FeedbackControl {
        match self.deviator {
            Some((k, f)) if k == i => f,
            _ => self.base,
        }
    }
}

/// One Euler–Maruyama step.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_step(
    c: &dyn Coefficients,
    t: f64,
    x: f64,
    y_psi: f64,
    y_phi: f64,
    u: f64,
    r: f64,
    dt: f64,
    dw: f64,
) -> f64 {
    x + c.drift(t, x, y_psi, u) * r * dt + c.diffusion(t, x, y_phi, u) * r * dw
}

/// Simulated panel of one replication.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    n: usize,
    /// Time-major `(n_steps + 1) × n`.
    states: Vec<f64>,
    /// Control applied on step `k` (and at `T` for the running cost).
    controls: Vec<f64>,
    /// `α_{t_k}` per agent, time-major.
    regimes: Vec<usize>,
    /// Mean-field arguments of the running and terminal costs.
    y_varphi: Vec<f64>,
    y_chi: f64,
    clamped: Vec<u32>,
    chains: Vec<ChainPath>,
    pub seed: StreamKey,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn state(&self, agent: usize, k: usize) -> f64 {
        self.states[k * self.n + agent]
    }

    pub fn control(&self, agent: usize, k: usize) -> f64 {
        self.controls[k * self.n + agent]
    }

    pub fn regime(&self, agent: usize, k: usize) -> usize {
        self.regimes[k * self.n + agent]
    }

    /// All agents at step `k`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn path(&self, agent: usize) -> Vec<f64> {
        (0..=self.grid.n_steps()).map(|k| self.state(agent, k)).collect()
    }

    pub fn chains(&self) -> &[ChainPath] {
        &self.chains
    }

    /// Number of feedback evaluations projected onto the action set.
    pub fn clamped(&self) -> usize {
        self.clamped.iter().map(|&c| c as usize).sum()
    }

    pub fn clamped_for(&self, agent: usize) -> usize {
        self.clamped[agent] as usize
    }

    pub fn law_at(&self, k: usize) -> EmpiricalLaw {
        EmpiricalLaw { atoms: self.states_at(k).to_vec() }
    }
}

/// Equal-weight atoms at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    atoms: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("empirical law needs at least one atom".into()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("empirical law atoms must be finite".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&x| f(x)).sum::<f64>() / self.atoms.len() as f64
    }
}

/// `(1/n) Σ_j f(x_k^j)`.
pub fn empirical_functionals(ens: &ParticleEnsemble, f: impl Fn(f64) -> f64, k: usize) -> Result<f64> {
    if k > ens.grid.n_steps() {
        return Err(Error::InvalidArgument(format!("step {k} beyond grid of {} steps", ens.grid.n_steps())));
    }
    let xs = ens.states_at(k);
    Ok(xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64)
}

fn mean_of(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64
}

/// Runs the system for pre-generated drivers.
pub fn run_system(
    spec: &ModelSpec,
    profile: Profile<'_>,
    grid: &TimeGrid,
    drivers: &[AgentDrivers],
    source: MeanFieldSource<'_>,
    seed: StreamKey,
) -> Result<ParticleEnsemble> {
    let n = drivers.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    let steps = grid.n_steps();
    if drivers.iter().any(|d| d.dw.len() != steps) {
        return Err(Error::InvalidArgument("driver length does not match the grid".into()));
    }
    if let MeanFieldSource::Curves(c) = source {
        if c.len() != steps + 1 {
            return Err(Error::InvalidArgument("mean-field curves do not match the grid".into()));
        }
    }
    let c = spec.coeffs();
    let act = spec.action_set();
    let dt = grid.dt();
    let mut states = vec![0.0; (steps + 1) * n];
    let mut controls = vec![0.0; (steps + 1) * n];
    let mut regimes = vec![0usize; (steps + 1) * n];
    let mut clamped = vec![0u32; n];
    for (i, d) in drivers.iter().enumerate() {
        states[i] = d.x0;
    }
    let mut y_varphi = vec![0.0; steps + 1];
    for k in 0..=steps {
        let t = grid.t(k);
        let (cur, next) = states.split_at_mut((k + 1) * n);
        let xs = &cur[k * n..];
        let (y_psi, y_phi) = match source {
            MeanFieldSource::Empirical => {
                y_varphi[k] = mean_of(xs, |x| c.varphi(x));
                (mean_of(xs, |x| c.psi(x)), mean_of(xs, |x| c.phi(x)))
            }
            MeanFieldSource::Curves(m) => {
                y_varphi[k] = m.m_varphi[k];
                (m.m_psi[k], m.m_phi[k])
            }
        };
        let us = &mut controls[k * n..(k + 1) * n];
        let rs = &mut regimes[k * n..(k + 1) * n];
        for i in 0..n {
            rs[i] = drivers[i].regime_at[k];
        }
        if k == steps {
            // Control at T enters only the running-cost quadrature.
            for i in 0..n {
                let (u, cl) = profile.for_agent(i).apply(t, xs[i], drivers[i].regime_at[k], &act);
                us[i] = u;
                clamped[i] += cl as u32;
            }
            break;
        }
        let mut out: Vec<(f64, f64, bool)> = vec![(0.0, 0.0, false); n];
        par::for_each_mut(&mut out, |i, slot| {
            let d = &drivers[i];
            let regime = d.regime_left[k];
            let x = xs[i];
            let (u, cl) = profile.for_agent(i).apply(t, x, regime, &act);
            let x1 = euler_step(c, t, x, y_psi, y_phi, u, spec.r(regime), dt, d.dw[k]);
            *slot = (x1, u, cl);
        });
        for (i, (x1, u, cl)) in out.into_iter().enumerate() {
            if !x1.is_finite() {
                return Err(Error::NonFiniteState { step: k + 1, particle: i });
            }
            next[i] = x1;
            us[i] = u;
            clamped[i] += cl as u32;
        }
    }
    let y_chi = match source {
        MeanFieldSource::Empirical => mean_of(&states[steps * n..], |x| c.chi(x)),
        MeanFieldSource::Curves(m) => m.m_chi_t,
    };
    Ok(ParticleEnsemble {
        grid: *grid,
        n,
        states,
        controls,
        regimes,
        y_varphi,
        y_chi,
        clamped,
        chains: drivers.iter().map(|d| d.chain.clone()).collect(),
        seed,
    })
}

/// Closed-loop particle system: one replication with `n` agents.
pub fn simulate_particles(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<ParticleEnsemble> {
    simulate_replication(spec, Profile::symmetric(feedback), n, grid, init, StreamKey::new(seed, module::PARTICLES))
}

/// Particle system for the replication encoded in `key`.
pub fn simulate_replication(
    spec: &ModelSpec,
    profile: Profile<'_>,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    key: StreamKey,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    init.validate()?;
    let drivers = AgentDrivers::generate_all(spec, grid, init, key, n);
    run_system(spec, profile, grid, &drivers, MeanFieldSource::Empirical, key)
}

/// Trapezoidal running cost plus terminal cost of one agent.
pub fn agent_cost(ens: &ParticleEnsemble, spec: &ModelSpec, agent: usize) -> Result<f64> {
    if agent >= ens.n {
        return Err(Error::InvalidArgument(format!("agent {agent} not in ensemble of {}", ens.n)));
    }
    if ens.y_varphi.len() != ens.grid.n_steps() + 1 {
        return Err(Error::InvalidArgument("ensemble does not match its grid".into()));
    }
    let c = spec.coeffs();
    let g = &ens.grid;
    let steps = g.n_steps();
    let mut running = 0.0;
    for k in 0..=steps {
        let x = ens.state(agent, k);
        let u = ens.control(agent, k);
        running += g.trapezoid_weight(k) * c.running_cost(g.t(k), x, ens.y_varphi[k], u) * spec.r(ens.regime(agent, k));
    }
    let terminal = c.terminal_cost(ens.state(agent, steps), ens.y_chi) * spec.r(ens.regime(agent, steps));
    Ok(running + terminal)
}

/// Monte Carlo estimate of `𝓙^agent` over independent replications.
#[allow(clippy::too_many_arguments)]
pub fn agent_cost_mc(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    replications: usize,
    seed: u64,
    agent: usize,
) -> Result<Estimate> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    let key = StreamKey::new(seed, module::PARTICLES);
    let costs = par::map_range(replications, |rep| {
        let ens = simulate_replication(spec, Profile::symmetric(feedback), n, grid, init, key.replication(rep as u64))?;
        agent_cost(&ens, spec, agent)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(stats::estimate(&costs))
}

/// Per-step moments across replications and agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub se_mean: f64,
}

pub fn ensemble_moments(ensembles: &[ParticleEnsemble]) -> Vec<MomentRow> {
    let Some(first) = ensembles.first() else {
        return Vec::new();
    };
    let g = first.grid;
    (0..=g.n_steps())
        .map(|k| {
            let xs: Vec<f64> = ensembles.iter().flat_map(|e| e.states_at(k).iter().copied()).collect();
            let e = stats::estimate(&xs);
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
            MomentRow { t: g.t(k), mean: e.mean, second_moment: m2, se_mean: e.se }
        })
        .collect()
}

/// Interacting system whose drift and diffusion are integrals of kernels
/// against the empirical measure:
/// `dx^i = (∫η_b(t,x^i,y)μ^n(dy)) r dt + (∫η_σ(t,x^i,y)μ^n(dy)) r dw^i`.
/// Cost `O(n²)` per step.
pub fn simulate_kernel_system(
    spec: &ModelSpec,
    drift: &LinearMeasureCoefficient,
    diffusion: &LinearMeasureCoefficient,
    n: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let key = StreamKey::new(seed, module::PARTICLES);
    let drivers = AgentDrivers::generate_all(spec, grid, init, key, n);
    let dt = grid.dt();
    let mut panel = vec![drivers.iter().map(|d| d.x0).collect::<Vec<f64>>()];
    for k in 0..grid.n_steps() {
        let t = grid.t(k);
        let xs = panel.last().expect("panel starts non-empty");
        let next = par::map_range(n, |i| {
            let d = &drivers[i];
            let r = spec.r(d.regime_left[k]);
            let x = xs[i];
            x + drift.against_atoms(t, x, xs) * r * dt + diffusion.against_atoms(t, x, xs) * r * d.dw[k]
        });
        if let Some(i) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1, particle: i });
        }
        panel.push(next);
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::chain::GeneratorMatrix;
    use crate::model::{ActionSet, ClosureModel, LqParams};

    fn closure_spec(m: ClosureModel) -> ModelSpec {
        ModelSpec::single_regime(Arc::new(m), ActionSet::new(-5.0, 5.0).unwrap()).unwrap()
    }

    #[test]
    fn frozen_dynamics_keep_initial_states() {
        let spec = closure_spec(ClosureModel::new());
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let ens = simulate_particles(&spec, &FeedbackControl::zero(), 16, &grid, &init, 4).unwrap();
        for i in 0..16 {
            let p = ens.path(i);
            assert!(p.iter().all(|&x| x == p[0]));
        }
    }

    #[test]
    fn mean_recursion_is_exact_for_mean_drift() {
        let spec = closure_spec(ClosureModel::new().drift(|_, _, y, _| y).psi(|x| x));
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let init = InitialLaw::Uniform([0.0, 2.0]);
        let ens = simulate_particles(&spec, &FeedbackControl::zero(), 50, &grid, &init, 5).unwrap();
        let dt = grid.dt();
        for k in 0..10 {
            let m0 = empirical_functionals(&ens, |x| x, k).unwrap();
            let m1 = empirical_functionals(&ens, |x| x, k + 1).unwrap();
            assert!((m1 - (1.0 + dt) * m0).abs() < 1e-13 * m0.abs().max(1.0));
        }
    }

    #[test]
    fn brownian_variance_at_horizon() {
        let spec = closure_spec(ClosureModel::new().diffusion(|_, _, _, _| 1.0));
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let init = InitialLaw::Point(0.0);
        let key = StreamKey::new(11, module::PARTICLES);
        let xs: Vec<f64> = par::map_range(100_000, |rep| {
            let d = AgentDrivers::generate(&spec, &grid, &init, key.replication(rep as u64));
            let ens = run_system(
                &spec,
                Profile::symmetric(&FeedbackControl::zero()),
                &grid,
                &[d],
                MeanFieldSource::Empirical,
                key,
            )
            .unwrap();
            ens.state(0, 8)
        });
        let n = xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n;
        // Var of the sample second moment of N(0, T) is 2T².
        let se = (2.0 * 4.0 / n).sqrt();
        assert!((var - 2.0).abs() <= 3.0 * se, "{var}");
    }

    #[test]
    fn empirical_functional_cases() {
        let spec = closure_spec(ClosureModel::new());
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let drivers: Vec<AgentDrivers> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&x0| AgentDrivers {
                x0,
                dw: vec![0.0],
                chain: ChainPath::constant(0, 1.0),
                regime_left: vec![0, 0],
                regime_at: vec![0, 0],
            })
            .collect();
        let ens = run_system(
            &spec,
            Profile::symmetric(&FeedbackControl::zero()),
            &grid,
            &drivers,
            MeanFieldSource::Empirical,
            StreamKey::new(0, 0),
        )
        .unwrap();
        assert_eq!(empirical_functionals(&ens, |x| x, 0).unwrap(), 2.0);
        assert_eq!(empirical_functionals(&ens, |_| 7.5, 1).unwrap(), 7.5);
        assert!(empirical_functionals(&ens, |x| x, 2).is_err());
    }

    #[test]
    fn costs_of_constant_integrands() {
        let grid = TimeGrid::new(1.7, 13).unwrap();
        let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let g1 = closure_spec(ClosureModel::new().terminal_cost(|_, _| 1.0).diffusion(|_, _, _, _| 1.0));
        let ens = simulate_particles(&g1, &FeedbackControl::zero(), 4, &grid, &init, 1).unwrap();
        assert_eq!(agent_cost(&ens, &g1, 2).unwrap(), 1.0);
        let h1 = closure_spec(ClosureModel::new().running_cost(|_, _, _, _| 1.0).diffusion(|_, _, _, _| 1.0));
        let ens = simulate_particles(&h1, &FeedbackControl::zero(), 4, &grid, &init, 1).unwrap();
        assert!((agent_cost(&ens, &h1, 0).unwrap() - 1.7).abs() < 1e-14);
        assert!(agent_cost(&ens, &h1, 4).is_err());
    }

    #[test]
    fn deterministic_lq_cost_matches_hand_quadrature() {
        let lq = LqParams { a: -0.8, c: 1.0, b_bar: 0.0, sigma: 0.0, q: 2.0, r_c: 1.0, s: 3.0 };
        let spec = ModelSpec::single_regime(Arc::new(lq), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let grid = TimeGrid::new(1.5, 30).unwrap();
        let ens = simulate_particles(&spec, &FeedbackControl::zero(), 1, &grid, &InitialLaw::Point(1.3), 0).unwrap();
        let dt = grid.dt();
        let mut x = 1.3f64;
        let mut expected = 0.0;
        for k in 0..=30 {
            let w = if k == 0 || k == 30 { 0.5 } else { 1.0 };
            expected += w * dt * 0.5 * 2.0 * x * x;
            if k < 30 {
                x *= 1.0 - 0.8 * dt;
            }
        }
        expected += 0.5 * 3.0 * x * x;
        assert!((agent_cost(&ens, &spec, 0).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn pre_jump_regime_drives_the_whole_step() {
        let gen = GeneratorMatrix::uniform(2, 1.0).unwrap();
        let spec = ModelSpec::new(
            Arc::new(ClosureModel::new().drift(|_, _, _, _| 1.0)),
            vec![1.0, 3.0],
            gen,
            0,
            ActionSet::new(-1.0, 1.0).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let chain = ChainPath { initial_state: 0, jump_times: vec![0.3], jump_targets: vec![1], horizon: 1.0 };
        let (regime_left, regime_at) = chain.on_grid(grid.dt(), 4);
        let d = AgentDrivers { x0: 0.0, dw: vec![0.0; 4], chain, regime_left, regime_at };
        let ens = run_system(
            &spec,
            Profile::symmetric(&FeedbackControl::zero()),
            &grid,
            &[d],
            MeanFieldSource::Empirical,
            StreamKey::new(0, 0),
        )
        .unwrap();
        // Steps [0, .25) and [.25, .5) start in regime 0 (jump at .3 is inside step 2).
        let incs: Vec<f64> = (0..4).map(|k| ens.state(0, k + 1) - ens.state(0, k)).collect();
        assert_eq!(incs, vec![0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn divergence_reports_step_and_particle() {
        let spec = closure_spec(ClosureModel::new().drift(|_, x, _, _| x * x * 1e200));
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let e =
            simulate_particles(&spec, &FeedbackControl::zero(), 3, &grid, &InitialLaw::Point(1e100), 0).unwrap_err();
        assert!(matches!(e, Error::NonFiniteState { step: 1, particle: 0 }));
    }

    #[test]
    fn kernel_system_matches_functional_form_for_separable_kernel() {
        let m = ClosureModel::new().drift(|_, x, y, _| -x + 0.5 * y).psi(|x| x).diffusion(|_, _, _, _| 0.3);
        let spec = closure_spec(m);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let init = InitialLaw::Gaussian { mean: 1.0, std: 0.5 };
        let ens = simulate_particles(&spec, &FeedbackControl::zero(), 40, &grid, &init, 3).unwrap();
        let kb = LinearMeasureCoefficient::new(|_, x, y| -x + 0.5 * y, 1.0);
        let ks = LinearMeasureCoefficient::new(|_, _, _| 0.3, 0.0);
        let panel = simulate_kernel_system(&spec, &kb, &ks, 40, &grid, &init, 3).unwrap();
        for (k, row) in panel.iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                assert!((x - ens.state(i, k)).abs() < 1e-12);
            }
        }
    }
}
