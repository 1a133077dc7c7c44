//! Picard iteration for the limiting McKean–Vlasov equation.
//!
//! The law of the limit is carried only through the curves
//! `t ↦ Eψ(x_t), Eφ(x_t), E varphi(x_t)` and the scalar `Eχ(x_T)`.

use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::par;
use crate::particle::{euler_step, AgentDrivers, InitialLaw, TimeGrid};
use crate::rng::{module, StreamKey};
use crate::stats::{self, Estimate};

const CHUNK: usize = 1024;

/// Candidate law functionals on the grid, with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldCurves {
    pub grid: TimeGrid,
    pub m_psi: Vec<f64>,
    pub m_phi: Vec<f64>,
    pub m_varphi: Vec<f64>,
    pub m_chi_t: f64,
    pub se_psi: Vec<f64>,
    pub se_phi: Vec<f64>,
    pub se_varphi: Vec<f64>,
    pub se_chi_t: f64,
    /// Set only by a converged [`solve_mean_field`].
    pub converged: bool,
}

impl MeanFieldCurves {
    /// Curves constant in time.
    pub fn constant(grid: TimeGrid, psi: f64, phi: f64, varphi: f64, chi: f64) -> Self {
        let n = grid.n_steps() + 1;
        Self {
            grid,
            m_psi: vec![psi; n],
            m_phi: vec![phi; n],
            m_varphi: vec![varphi; n],
            m_chi_t: chi,
            se_psi: vec![0.0; n],
            se_phi: vec![0.0; n],
            se_varphi: vec![0.0; n],
            se_chi_t: 0.0,
            converged: false,
        }
    }

    /// Constant curves at the moments of the initial law, estimated from the
    /// same initial-state streams `phi_map` uses.
    pub fn from_initial_law(
        spec: &ModelSpec,
        grid: TimeGrid,
        init: &InitialLaw,
        copies: usize,
        seed: u64,
    ) -> Result<Self> {
        init.validate()?;
        if copies == 0 {
            return Err(Error::InvalidArgument("need at least one copy".into()));
        }
        let key = StreamKey::new(seed, module::MEAN_FIELD);
        let c = spec.coeffs();
        let x0: Vec<f64> =
            par::map_range(copies, |j| init.sample(&mut key.agent(j as u64).rng(crate::rng::Driver::Initial)));
        let m = |f: &dyn Fn(f64) -> f64| stats::mean(&x0.iter().map(|&x| f(x)).collect::<Vec<_>>());
        Ok(Self::constant(grid, m(&|x| c.psi(x)), m(&|x| c.phi(x)), m(&|x| c.varphi(x)), m(&|x| c.chi(x))))
    }

    pub fn len(&self) -> usize {
        self.m_psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_psi.is_empty()
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        let n = grid.n_steps() + 1;
        if self.grid != *grid || self.m_psi.len() != n || self.m_phi.len() != n || self.m_varphi.len() != n {
            return Err(Error::InvalidArgument("mean-field curves are not defined on the simulation grid".into()));
        }
        let finite = self.m_psi.iter().chain(&self.m_phi).chain(&self.m_varphi).all(|v| v.is_finite());
        if !finite || !self.m_chi_t.is_finite() {
            return Err(Error::InvalidArgument("mean-field curves must be finite".into()));
        }
        Ok(())
    }

    /// Sup over the grid of the largest absolute difference among the curves
    /// (including `Eχ(x_T)`).
    pub fn sup_distance(&self, other: &Self) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        d(&self.m_psi, &other.m_psi)
            .max(d(&self.m_phi, &other.m_phi))
            .max(d(&self.m_varphi, &other.m_varphi))
            .max((self.m_chi_t - other.m_chi_t).abs())
    }

    /// Largest standard error over grid and curves.
    pub fn max_se(&self) -> f64 {
        self.se_psi.iter().chain(&self.se_phi).chain(&self.se_varphi).fold(self.se_chi_t, |a, &b| a.max(b))
    }

    fn damped(&self, target: &Self, theta: f64) -> Self {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - theta) * x + theta * y).collect();
        Self {
            grid: self.grid,
            m_psi: mix(&self.m_psi, &target.m_psi),
            m_phi: mix(&self.m_phi, &target.m_phi),
            m_varphi: mix(&self.m_varphi, &target.m_varphi),
            m_chi_t: (1.0 - theta) * self.m_chi_t + theta * target.m_chi_t,
            se_psi: target.se_psi.clone(),
            se_phi: target.se_phi.clone(),
            se_varphi: target.se_varphi.clone(),
            se_chi_t: target.se_chi_t,
            converged: false,
        }
    }
}

/// Convergence history of [`solve_mean_field`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterates: usize,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    pub damping: f64,
    pub copies: usize,
}

impl PicardReport {
    /// Successive residual ratios `r_{k+1}/r_k`.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

/// One decoupled copy driven by fixed curves: states and applied controls
/// on the grid.
pub(crate) fn copy_trajectory(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    grid: &TimeGrid,
    curves: &MeanFieldCurves,
    d: &AgentDrivers,
    index: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let c = spec.coeffs();
    let act = spec.action_set();
    let dt = grid.dt();
    let steps = grid.n_steps();
    let mut xs = Vec::with_capacity(steps + 1);
    let mut us = Vec::with_capacity(steps + 1);
    let mut clamped = 0;
    let mut x = d.x0;
    xs.push(x);
    for k in 0..steps {
        let t = grid.t(k);
        let regime = d.regime_left[k];
        let (u, cl) = feedback.apply(t, x, regime, &act);
        clamped += cl as usize;
        x = euler_step(c, t, x, curves.m_psi[k], curves.m_phi[k], u, spec.r(regime), dt, d.dw[k]);
        if !x.is_finite() {
            return Err(Error::NonFiniteState { step: k + 1, particle: index });
        }
        xs.push(x);
        us.push(u);
    }
    let (u, cl) = feedback.apply(grid.horizon(), x, d.regime_at[steps], &act);
    us.push(u);
    clamped += cl as usize;
    Ok((xs, us, clamped))
}

/// Cost of one copy along its trajectory, with the curves supplying the
/// mean-field arguments of `h` and `g`.
pub(crate) fn copy_cost(
    spec: &ModelSpec,
    grid: &TimeGrid,
    curves: &MeanFieldCurves,
    xs: &[f64],
    us: &[f64],
    regime_at: &[usize],
) -> f64 {
    let c = spec.coeffs();
    let steps = grid.n_steps();
    let mut j = 0.0;
    for k in 0..=steps {
        j += grid.trapezoid_weight(k)
            * c.running_cost(grid.t(k), xs[k], curves.m_varphi[k], us[k])
            * spec.r(regime_at[k]);
    }
    j + c.terminal_cost(xs[steps], curves.m_chi_t) * spec.r(regime_at[steps])
}

#[derive(Clone)]
struct Sums {
    s: [Vec<f64>; 3],
    s2: [Vec<f64>; 3],
    chi: f64,
    chi2: f64,
}

impl Sums {
    fn zeros(n: usize) -> Self {
        let z = || [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        Self { s: z(), s2: z(), chi: 0.0, chi2: 0.0 }
    }

    fn add(&mut self, o: &Sums) {
        for c in 0..3 {
            for (a, b) in self.s[c].iter_mut().zip(&o.s[c]) {
                *a += b;
            }
            for (a, b) in self.s2[c].iter_mut().zip(&o.s2[c]) {
                *a += b;
            }
        }
        self.chi += o.chi;
        self.chi2 += o.chi2;
    }
}

/// The fixed-point map: law functionals of `copies` independent copies of the
/// decoupled equation driven by `curves_in`.
#[allow(clippy::too_many_arguments)]
pub fn phi_map(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves_in: &MeanFieldCurves,
    copies: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<MeanFieldCurves> {
    if copies < 1000 {
        return Err(Error::InvalidArgument(format!("phi_map needs at least 1000 copies, got {copies}")));
    }
    init.validate()?;
    curves_in.check(grid)?;
    let key = StreamKey::new(seed, module::MEAN_FIELD);
    let n = grid.n_steps() + 1;
    let c = spec.coeffs();
    let partial = par::map_chunks(copies, CHUNK, |range| -> Result<Sums> {
        let mut s = Sums::zeros(n);
        for j in range {
            let d = AgentDrivers::generate(spec, grid, init, key.agent(j as u64));
            let (xs, _, _) = copy_trajectory(spec, feedback, grid, curves_in, &d, j)?;
            for (k, &x) in xs.iter().enumerate() {
                let v = [c.psi(x), c.phi(x), c.varphi(x)];
                for (m, &val) in v.iter().enumerate() {
                    s.s[m][k] += val;
                    s.s2[m][k] += val * val;
                }
            }
            let ch = c.chi(xs[n - 1]);
            s.chi += ch;
            s.chi2 += ch * ch;
        }
        Ok(s)
    });
    let mut tot = Sums::zeros(n);
    for p in partial {
        tot.add(&p?);
    }
    let m = copies as f64;
    let mean_se = |s: f64, s2: f64| {
        let mu = s / m;
        let var = ((s2 - m * mu * mu) / (m - 1.0)).max(0.0);
        (mu, (var / m).sqrt())
    };
    let curve = |i: usize| -> (Vec<f64>, Vec<f64>) { (0..n).map(|k| mean_se(tot.s[i][k], tot.s2[i][k])).unzip() };
    let (m_psi, se_psi) = curve(0);
    let (m_phi, se_phi) = curve(1);
    let (m_varphi, se_varphi) = curve(2);
    let (m_chi_t, se_chi_t) = mean_se(tot.chi, tot.chi2);
    Ok(MeanFieldCurves {
        grid: *grid,
        m_psi,
        m_phi,
        m_varphi,
        m_chi_t,
        se_psi,
        se_phi,
        se_varphi,
        se_chi_t,
        converged: false,
    })
}

/// Options of [`solve_mean_field`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub copies: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub seed: u64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { copies: 20_000, tol: 1e-3, max_iters: 50, damping: 1.0, seed: 0 }
    }
}

/// Picard iteration of [`phi_map`] with common random numbers.
///
/// The image of the initial-law curves is the starting iterate `Q_0`; iteration
/// `k` sets `Q_k = (1-θ)Q_{k-1} + θΦ(Q_{k-1})` and records `sup|Q_k - Q_{k-1}|`.
/// A map that ignores its argument therefore converges at iteration 1.
pub fn solve_mean_field(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    grid: &TimeGrid,
    init: &InitialLaw,
    opts: &PicardOptions,
) -> Result<(MeanFieldCurves, PicardReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", opts.tol)));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    let start = MeanFieldCurves::from_initial_law(spec, *grid, init, opts.copies, opts.seed)?;
    let mut q = phi_map(spec, feedback, &start, opts.copies, grid, init, opts.seed)?;
    let mut residuals = Vec::new();
    let mut converged = false;
    for it in 1..=opts.max_iters {
        let image = phi_map(spec, feedback, &q, opts.copies, grid, init, opts.seed)?;
        let next = q.damped(&image, opts.damping);
        let r = next.sup_distance(&q);
        log::debug!("picard iteration {it}: residual {r:e}");
        residuals.push(r);
        q = next;
        if r <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("picard iteration did not reach tol {} in {} iterations", opts.tol, opts.max_iters);
    }
    q.converged = converged;
    let report = PicardReport {
        iterates: residuals.len(),
        residuals,
        converged,
        tolerance: opts.tol,
        damping: opts.damping,
        copies: opts.copies,
    };
    Ok((q, report))
}

/// Monte Carlo estimate of the limiting cost with the curves supplying the
/// mean-field arguments.
#[allow(clippy::too_many_arguments)]
pub fn limiting_cost(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    copies: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<Estimate> {
    Ok(stats::estimate(&copy_costs(spec, feedback, curves, copies, grid, init, seed)?))
}

/// Per-copy costs under common random numbers keyed by `seed`.
#[allow(clippy::too_many_arguments)]
pub fn copy_costs(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    copies: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    seed: u64,
) -> Result<Vec<f64>> {
    if copies < 2 {
        return Err(Error::InvalidArgument("need at least two copies".into()));
    }
    init.validate()?;
    curves.check(grid)?;
    let key = StreamKey::new(seed, module::MEAN_FIELD);
    par::map_range(copies, |j| {
        let d = AgentDrivers::generate(spec, grid, init, key.agent(j as u64));
        let (xs, us, _) = copy_trajectory(spec, feedback, grid, curves, &d, j)?;
        Ok(copy_cost(spec, grid, curves, &xs, &us, &d.regime_at))
    })
    .into_iter()
    .collect()
}

/// Curves for a measure-free model, where the arguments are never read.
pub fn unused_curves(grid: TimeGrid) -> MeanFieldCurves {
    let mut c = MeanFieldCurves::constant(grid, 0.0, 0.0, 0.0, 0.0);
    c.converged = true;
    c
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{ActionSet, ClosureModel};

    fn spec(m: ClosureModel) -> ModelSpec {
        ModelSpec::single_regime(Arc::new(m), ActionSet::new(-1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn frozen_dynamics_return_initial_moments() {
        let s = spec(ClosureModel::new().psi(|x| x * x));
        let g = TimeGrid::new(1.0, 10).unwrap();
        let init = InitialLaw::Uniform([0.0, 1.0]);
        let start = MeanFieldCurves::constant(g, 5.0, 5.0, 5.0, 5.0);
        let out = phi_map(&s, &FeedbackControl::zero(), &start, 4000, &g, &init, 3).unwrap();
        let first = out.m_psi[0];
        assert!(out.m_psi.iter().all(|&v| v == first));
        assert!((first - 1.0 / 3.0).abs() < 4.0 * out.se_psi[0]);
    }

    #[test]
    fn decay_ode_oracle() {
        let s = spec(ClosureModel::new().drift(|_, x, _, _| -x).psi(|x| x));
        let g = TimeGrid::new(1.0, 50).unwrap();
        let start = MeanFieldCurves::constant(g, 0.0, 0.0, 0.0, 0.0);
        let out = phi_map(&s, &FeedbackControl::zero(), &start, 1000, &g, &InitialLaw::Point(1.0), 0).unwrap();
        for (k, t) in g.points().enumerate() {
            assert!((out.m_psi[k] - (-t).exp()).abs() <= 2.0 * g.dt());
        }
    }

    #[test]
    fn measure_free_converges_at_first_iteration() {
        let s = spec(ClosureModel::new().drift(|_, x, _, _| -x).diffusion(|_, _, _, _| 0.5).psi(|x| x).phi(|x| x));
        let g = TimeGrid::new(1.0, 20).unwrap();
        let opts = PicardOptions { copies: 2000, ..Default::default() };
        let (c, r) = solve_mean_field(&s, &FeedbackControl::zero(), &g, &InitialLaw::Point(1.0), &opts).unwrap();
        assert_eq!(r.iterates, 1);
        assert_eq!(r.residuals, vec![0.0]);
        assert!(r.converged && c.converged);
    }

    #[test]
    fn picard_reports_non_convergence_without_error() {
        let s = spec(ClosureModel::new().drift(|_, _, y, _| 2.0 * y).psi(|x| x));
        let g = TimeGrid::new(1.0, 20).unwrap();
        let opts = PicardOptions { copies: 1000, max_iters: 2, tol: 1e-12, ..Default::default() };
        let (c, r) = solve_mean_field(&s, &FeedbackControl::zero(), &g, &InitialLaw::Point(1.0), &opts).unwrap();
        assert!(!r.converged && !c.converged);
        assert_eq!(r.residuals.len(), 2);
        assert!(r.residuals.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn mean_drift_fixed_point_is_exponential() {
        // m' = m with m(0)=1: Euler fixed point is (1+dt)^k.
        let s = spec(ClosureModel::new().drift(|_, _, y, _| y).psi(|x| x));
        let g = TimeGrid::new(1.0, 20).unwrap();
        let opts = PicardOptions { copies: 1000, tol: 1e-12, max_iters: 40, ..Default::default() };
        let (c, r) = solve_mean_field(&s, &FeedbackControl::zero(), &g, &InitialLaw::Point(1.0), &opts).unwrap();
        assert!(r.converged);
        for k in 0..=20 {
            assert!((c.m_psi[k] - (1.0 + g.dt()).powi(k as i32)).abs() < 1e-10);
        }
    }

    #[test]
    fn limiting_cost_trivial_cases() {
        let g = TimeGrid::new(1.3, 10).unwrap();
        let curves = unused_curves(g);
        let init = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let s = spec(ClosureModel::new().terminal_cost(|_, _| 1.0).diffusion(|_, _, _, _| 1.0));
        let j = limiting_cost(&s, &FeedbackControl::zero(), &curves, 100, &g, &init, 0).unwrap();
        assert_eq!(j.mean, 1.0);
        let s = spec(ClosureModel::new().running_cost(|_, _, _, _| 1.0).diffusion(|_, _, _, _| 1.0));
        let j = limiting_cost(&s, &FeedbackControl::zero(), &curves, 100, &g, &init, 0).unwrap();
        assert!((j.mean - 1.3).abs() < 1e-12);
    }

    #[test]
    fn curves_on_wrong_grid_are_rejected() {
        let s = spec(ClosureModel::new());
        let g = TimeGrid::new(1.0, 10).unwrap();
        let other = unused_curves(TimeGrid::new(1.0, 11).unwrap());
        assert!(phi_map(&s, &FeedbackControl::zero(), &other, 1000, &g, &InitialLaw::Point(0.0), 0).is_err());
        assert!(phi_map(&s, &FeedbackControl::zero(), &unused_curves(g), 999, &g, &InitialLaw::Point(0.0), 0).is_err());
    }
}
