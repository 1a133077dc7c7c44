//! Backward regression (least-squares Monte Carlo) for the adjoint triple
//! `(p, q, s)` along forward paths of the limiting equation under `û`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::chain::{martingale_increments, ChainPath};
use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::mean_field::{copy_trajectory, MeanFieldCurves};
use crate::model::{minimize_hamiltonian, HamiltonianPoint, ModelSpec};
use crate::par;
use crate::particle::{AgentDrivers, InitialLaw, TimeGrid};
use crate::rng::{module, StreamKey};

const MAX_CONDITION: f64 = 1e10;

/// Powers of the standardized state up to `degree`, plus an intercept and a
/// slope per regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    pub degree: usize,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointOptions {
    pub paths: usize,
    #[serde(default)]
    pub basis: RegressionBasis,
    /// Weight of the left end in the θ-scheme for the driver.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Fixed-point passes for the cross-path mean-field terms per step.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    pub seed: u64,
}

fn default_theta() -> f64 {
    0.5
}

fn default_sweeps() -> usize {
    2
}

impl AdjointOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self { paths, basis: RegressionBasis::default(), theta: default_theta(), sweeps: default_sweeps(), seed }
    }
}

/// Forward paths under `û`; arrays are time-major `(n_steps + 1) × paths`
/// (`dw` has `n_steps` rows).
#[derive(Debug, Clone)]
pub struct ForwardPaths {
    pub grid: TimeGrid,
    pub paths: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `α_{t_k}`.
    pub regime: Vec<usize>,
    pub dw: Vec<f64>,
    pub chains: Vec<ChainPath>,
    pub clamped: usize,
    /// Stream key of the drivers, for re-simulating other controls on the
    /// same noise.
    pub key: StreamKey,
}

impl ForwardPaths {
    #[inline]
    pub fn at(&self, k: usize, j: usize) -> usize {
        k * self.paths + j
    }
}

/// Per-step regression diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    /// R² of the conditional-expectation regression for `p`.
    pub r_squared: f64,
    /// Condition number of the normal equations.
    pub condition: f64,
    pub reduced_basis: bool,
    pub mean_p: f64,
    pub mean_q: f64,
    /// Cross-path means `E[b_y r p]`, `E[σ_y r q]`, `E[h_y r]`.
    pub mf_terms: [f64; 3],
}

/// Solution of the adjoint equation along the forward paths.
#[derive(Debug, Clone)]
pub struct AdjointTriple {
    pub forward: ForwardPaths,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `(n_steps + 1) × paths × d`; empty when `d = 1`.
    s: Vec<f64>,
    pub regimes: usize,
    pub basis: RegressionBasis,
    pub diagnostics: Vec<StepDiagnostics>,
    pub basis_reductions: usize,
}

impl AdjointTriple {
    pub fn p_at(&self, k: usize, j: usize) -> f64 {
        self.p[self.forward.at(k, j)]
    }

    pub fn q_at(&self, k: usize, j: usize) -> f64 {
        self.q[self.forward.at(k, j)]
    }

    /// `s_k(j)` component `target` of path `path`.
    pub fn s_at(&self, k: usize, path: usize, target: usize) -> f64 {
        if self.regimes == 1 {
            0.0
        } else {
            self.s[(k * self.forward.paths + path) * self.regimes + target]
        }
    }

    /// Hamiltonian arguments at `(t_k, x̂, α, p̂, q̂)` of one path.
    pub fn point(&self, curves: &MeanFieldCurves, k: usize, j: usize) -> HamiltonianPoint {
        let i = self.forward.at(k, j);
        HamiltonianPoint {
            t: self.forward.grid.t(k),
            x: self.forward.x[i],
            y_psi: curves.m_psi[k],
            y_phi: curves.m_phi[k],
            y_varphi: curves.m_varphi[k],
            regime: self.forward.regime[i],
            p: self.p[i],
            q: self.q[i],
        }
    }
}

/// Simulates `paths` decoupled copies under `feedback` and `curves`.
pub fn simulate_forward(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    paths: usize,
    grid: &TimeGrid,
    init: &InitialLaw,
    key: StreamKey,
) -> Result<ForwardPaths> {
    let per_path = par::map_range(paths, |j| -> Result<_> {
        let d = AgentDrivers::generate(spec, grid, init, key.agent(j as u64));
        let (xs, us, cl) = copy_trajectory(spec, feedback, grid, curves, &d, j)?;
        Ok((xs, us, cl, d))
    });
    let steps = grid.n_steps();
    let mut fp = ForwardPaths {
        grid: *grid,
        paths,
        x: vec![0.0; (steps + 1) * paths],
        u: vec![0.0; (steps + 1) * paths],
        regime: vec![0; (steps + 1) * paths],
        dw: vec![0.0; steps * paths],
        chains: Vec::with_capacity(paths),
        clamped: 0,
        key,
    };
    for (j, r) in per_path.into_iter().enumerate() {
        let (xs, us, cl, d) = r?;
        for k in 0..=steps {
            fp.x[k * paths + j] = xs[k];
            fp.u[k * paths + j] = us[k];
            fp.regime[k * paths + j] = d.regime_at[k];
        }
        for k in 0..steps {
            fp.dw[k * paths + j] = d.dw[k];
        }
        fp.clamped += cl;
        fp.chains.push(d.chain);
    }
    Ok(fp)
}

/// Cross-path regression of several targets on the regime-augmented basis.
struct Regression {
    condition: f64,
    reduced: bool,
}

/// Fits `targets` on `{1, z, …, z^degree}` plus a regime intercept and
/// `z`-slope for every occupied regime but the first, with `z` the
/// standardized state. Writes fitted values into `fitted`.
fn regress(
    xs: &[f64],
    groups: &[Vec<usize>],
    degree: usize,
    targets: &[&[f64]],
    fitted: &mut [Vec<f64>],
) -> Regression {
    let mut out = Regression { condition: 1.0, reduced: false };
    let m = xs.len();
    let mut regime = vec![usize::MAX; m];
    for (i, g) in groups.iter().enumerate() {
        for &j in g {
            regime[j] = i;
        }
    }
    let rows: Vec<usize> = (0..m).filter(|&j| regime[j] != usize::MAX).collect();
    if rows.is_empty() {
        return out;
    }
    let n = rows.len() as f64;
    let mu = rows.iter().map(|&j| xs[j]).sum::<f64>() / n;
    let sd = (rows.iter().map(|&j| (xs[j] - mu).powi(2)).sum::<f64>() / n).sqrt();
    let flat = !(sd > 1e-12 * (1.0 + mu.abs()));
    // Occupied regimes other than the reference get their own columns.
    let reference = groups.iter().position(|g| !g.is_empty()).unwrap_or(0);
    let extra: Vec<usize> = (0..groups.len()).filter(|&i| i != reference && !groups[i].is_empty()).collect();
    let mut deg = if flat { 0 } else { degree.min(rows.len().saturating_sub(1)) };
    loop {
        let slopes = deg > 0;
        let nb = deg + 1 + extra.len() * (1 + slopes as usize);
        let fill = |j: usize, row: &mut [f64]| {
            let z = if deg > 0 { (xs[j] - mu) / sd } else { 0.0 };
            row[0] = 1.0;
            for b in 1..=deg {
                row[b] = row[b - 1] * z;
            }
            let mut col = deg + 1;
            for &i in &extra {
                let on = if regime[j] == i { 1.0 } else { 0.0 };
                row[col] = on;
                col += 1;
                if slopes {
                    row[col] = on * z;
                    col += 1;
                }
            }
        };
        let mut g = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs = vec![DVector::<f64>::zeros(nb); targets.len()];
        let mut row = vec![0.0; nb];
        for &j in &rows {
            fill(j, &mut row);
            for a in 0..nb {
                if row[a] == 0.0 {
                    continue;
                }
                for b in a..nb {
                    g[(a, b)] += row[a] * row[b];
                }
                for (t, v) in targets.iter().zip(rhs.iter_mut()) {
                    v[a] += row[a] * t[j];
                }
            }
        }
        for a in 0..nb {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond > MAX_CONDITION && deg > 0 {
            log::warn!(
                "regression condition number {cond:e} exceeds {MAX_CONDITION:e}; reducing basis degree to {}",
                deg - 1
            );
            out.reduced = true;
            deg -= 1;
            continue;
        }
        out.condition = out.condition.max(cond);
        let chol = g.cholesky();
        for (t, v) in rhs.into_iter().enumerate() {
            let coef = match &chol {
                Some(c) => c.solve(&v),
                None => {
                    // Only regime intercepts are left: fall back to group means.
                    let mut c = DVector::zeros(nb);
                    c[0] = v[0] / n;
                    c
                }
            };
            for &j in &rows {
                fill(j, &mut row);
                fitted[t][j] = row.iter().zip(coef.iter()).map(|(r, c)| r * c).sum();
            }
        }
        break;
    }
    out
}

struct Derivs {
    bx_r: Vec<f64>,
    by_r: Vec<f64>,
    sx_r: Vec<f64>,
    sy_r: Vec<f64>,
    hx_r: Vec<f64>,
    hy_r: Vec<f64>,
    psi_x: Vec<f64>,
    phi_x: Vec<f64>,
    varphi_x: Vec<f64>,
}

fn derivatives(spec: &ModelSpec, fp: &ForwardPaths, curves: &MeanFieldCurves, k: usize) -> Derivs {
    let c = spec.coeffs();
    let t = fp.grid.t(k);
    let m = fp.paths;
    let rows: Vec<[f64; 9]> = par::map_range(m, |j| {
        let i = fp.at(k, j);
        let (x, u) = (fp.x[i], fp.u[i]);
        let r = spec.r(fp.regime[i]);
        let b = c.drift_grad(t, x, curves.m_psi[k], u);
        let s = c.diffusion_grad(t, x, curves.m_phi[k], u);
        let h = c.running_cost_grad(t, x, curves.m_varphi[k], u);
        [b.x * r, b.y * r, s.x * r, s.y * r, h.x * r, h.y * r, c.psi_x(x), c.phi_x(x), c.varphi_x(x)]
    });
    let col = |n: usize| rows.iter().map(|r| r[n]).collect::<Vec<f64>>();
    Derivs {
        bx_r: col(0),
        by_r: col(1),
        sx_r: col(2),
        sy_r: col(3),
        hx_r: col(4),
        hy_r: col(5),
        psi_x: col(6),
        phi_x: col(7),
        varphi_x: col(8),
    }
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Adjoint driver `f` with `dp = −f dt + q dw + s dΦ̃`.
fn driver(dv: &Derivs, p: &[f64], q: &[f64], terms: [f64; 3], j: usize) -> f64 {
    dv.bx_r[j] * p[j]
        + dv.sx_r[j] * q[j]
        + dv.hx_r[j]
        + terms[0] * dv.psi_x[j]
        + terms[1] * dv.phi_x[j]
        + terms[2] * dv.varphi_x[j]
}

/// Solves the adjoint equation by backward regression.
pub fn solve_adjoint(
    spec: &ModelSpec,
    feedback: &FeedbackControl,
    curves: &MeanFieldCurves,
    grid: &TimeGrid,
    init: &InitialLaw,
    opts: &AdjointOptions,
) -> Result<AdjointTriple> {
    if opts.paths < 10 {
        return Err(Error::InvalidArgument(format!("adjoint needs at least 10 paths, got {}", opts.paths)));
    }
    if !(0.0..=1.0).contains(&opts.theta) {
        return Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {}", opts.theta)));
    }
    if opts.sweeps == 0 {
        return Err(Error::InvalidArgument("sweeps must be >= 1".into()));
    }
    if !curves.converged {
        return Err(Error::InvalidArgument("adjoint requires converged mean-field curves".into()));
    }
    let key = StreamKey::new(opts.seed, module::ADJOINT);
    let fp = simulate_forward(spec, feedback, curves, opts.paths, grid, init, key)?;
    solve_adjoint_on(spec, fp, curves, opts)
}

/// Backward recursion on given forward paths.
pub fn solve_adjoint_on(
    spec: &ModelSpec,
    fp: ForwardPaths,
    curves: &MeanFieldCurves,
    opts: &AdjointOptions,
) -> Result<AdjointTriple> {
    let c = spec.coeffs();
    let grid = fp.grid;
    let steps = grid.n_steps();
    let dt = grid.dt();
    let m = fp.paths;
    let d = spec.regimes();
    let theta = opts.theta;

    // Compensated jump increments, (step, path, target).
    let dphi: Vec<f64> = if d > 1 {
        par::map_range(m, |j| martingale_increments(&fp.chains[j], spec.generator(), dt, steps))
            .into_iter()
            .enumerate()
            .fold(vec![0.0; steps * m * d], |mut acc, (j, inc)| {
                for k in 0..steps {
                    for t in 0..d {
                        acc[(k * m + j) * d + t] = inc[k * d + t];
                    }
                }
                acc
            })
    } else {
        Vec::new()
    };

    let mut p = vec![0.0; (steps + 1) * m];
    let mut q = vec![0.0; (steps + 1) * m];
    let mut s = if d > 1 { vec![0.0; (steps + 1) * m * d] } else { Vec::new() };

    // Terminal condition.
    {
        let xs = &fp.x[steps * m..];
        let rs = &fp.regime[steps * m..];
        let gy_r = xs.iter().zip(rs).map(|(&x, &i)| c.terminal_cost_grad(x, curves.m_chi_t).y * spec.r(i)).sum::<f64>()
            / m as f64;
        for j in 0..m {
            let x = xs[j];
            let r = spec.r(rs[j]);
            p[steps * m + j] = c.terminal_cost_grad(x, curves.m_chi_t).x * r + gy_r * c.chi_x(x);
        }
        if let Some(j) = p[steps * m..].iter().position(|v| !v.is_finite()) {
            log::error!("non-finite terminal adjoint on path {j}");
            return Err(Error::NonFiniteAdjoint { step: steps });
        }
    }

    let mut diagnostics = Vec::with_capacity(steps + 1);
    let mut reductions = 0usize;
    let mut next_derivs = derivatives(spec, &fp, curves, steps);
    let mut next_terms = [0.0; 3];
    let mut fitted = vec![vec![0.0; m]; 1 + d];

    for k in (0..steps).rev() {
        let cur = k * m..(k + 1) * m;
        let nxt = (k + 1) * m..(k + 2) * m;
        let xs = &fp.x[cur.clone()];
        let rs = &fp.regime[cur.clone()];
        let mut groups = vec![Vec::new(); d];
        for (j, &i) in rs.iter().enumerate() {
            groups[i].push(j);
        }
        let p1 = p[nxt.clone()].to_vec();
        let dw = &fp.dw[cur.clone()];

        let reg_c = regress(xs, &groups, opts.basis.degree, &[&p1], &mut fitted[..1]);
        let centre = fitted[0].clone();

        // q_k and s_k from the martingale increments. The increments have zero
        // conditional mean, so centring p_{k+1} by a fitted F_k-measurable value
        // leaves the estimates unbiased and removes most of the noise.
        let centred: Vec<f64> = p1.iter().zip(&centre).map(|(a, b)| a - b).collect();
        let pdw: Vec<f64> = centred.iter().zip(dw).map(|(a, b)| a * b).collect();
        let mut targets: Vec<Vec<f64>> = vec![pdw];
        if d > 1 {
            for t in 0..d {
                let inc = |j: usize| dphi[(k * m + j) * d + t];
                targets.push((0..m).map(|j| centred[j] * inc(j)).collect());
            }
        }
        // The chain is independent of x given the regime, so E_k[ΔΦ̃²] is a
        // per-regime constant.
        let mut second = vec![0.0; d * d];
        if d > 1 {
            for (i, g) in groups.iter().enumerate() {
                for t in 0..d {
                    let v = g.iter().map(|&j| dphi[(k * m + j) * d + t].powi(2)).sum::<f64>();
                    second[i * d + t] = if g.is_empty() { 0.0 } else { v / g.len() as f64 };
                }
            }
        }
        let refs: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
        let reg = regress(xs, &groups, opts.basis.degree, &refs, &mut fitted[..refs.len()]);
        let qk: Vec<f64> = fitted[0].iter().map(|v| v / dt).collect();
        if d > 1 {
            for j in 0..m {
                for t in 0..d {
                    // No jump into the current regime, so its component is zero.
                    let num = fitted[1 + t][j];
                    let den = second[rs[j] * d + t];
                    s[(k * m + j) * d + t] = if t != rs[j] && den > 1e-12 * dt { num / den } else { 0.0 };
                }
            }
        }
        q[cur.clone()].copy_from_slice(&qk);
        if k + 1 == steps {
            q[nxt.clone()].copy_from_slice(&qk);
            let qn = &q[nxt.clone()];
            next_terms = [
                mean_product(&next_derivs.by_r, &p1),
                mean_product(&next_derivs.sy_r, qn),
                next_derivs.hy_r.iter().sum::<f64>() / m as f64,
            ];
            diagnostics.push(StepDiagnostics {
                step: steps,
                t: grid.horizon(),
                r_squared: 1.0,
                condition: 1.0,
                reduced_basis: false,
                mean_p: p1.iter().sum::<f64>() / m as f64,
                mean_q: qn.iter().sum::<f64>() / m as f64,
                mf_terms: next_terms,
            });
        }

        // E_k[p_{k+1} + (1−θ)dt f_{k+1}].
        let q1 = &q[nxt.clone()];
        let y: Vec<f64> =
            (0..m).map(|j| p1[j] + (1.0 - theta) * dt * driver(&next_derivs, &p1, q1, next_terms, j)).collect();
        let reg_p = regress(xs, &groups, opts.basis.degree, &[&y], &mut fitted[..1]);
        let ey = fitted[0].clone();

        let r_squared = {
            let mu = y.iter().sum::<f64>() / m as f64;
            let tot: f64 = y.iter().map(|v| (v - mu).powi(2)).sum();
            let res: f64 = y.iter().zip(&ey).map(|(a, b)| (a - b).powi(2)).sum();
            if tot > 0.0 {
                1.0 - res / tot
            } else {
                1.0
            }
        };

        let dv = derivatives(spec, &fp, curves, k);
        let mut terms = [next_terms[0], mean_product(&dv.sy_r, &qk), dv.hy_r.iter().sum::<f64>() / m as f64];
        let mut pk = vec![0.0; m];
        for _ in 0..opts.sweeps {
            for j in 0..m {
                let explicit = dv.sx_r[j] * qk[j]
                    + dv.hx_r[j]
                    + terms[0] * dv.psi_x[j]
                    + terms[1] * dv.phi_x[j]
                    + terms[2] * dv.varphi_x[j];
                pk[j] = (ey[j] + theta * dt * explicit) / (1.0 - theta * dt * dv.bx_r[j]);
            }
            terms[0] = mean_product(&dv.by_r, &pk);
        }
        if pk.iter().chain(&qk).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteAdjoint { step: k });
        }
        p[cur.clone()].copy_from_slice(&pk);
        reductions += (reg.reduced || reg_p.reduced || reg_c.reduced) as usize;
        diagnostics.push(StepDiagnostics {
            step: k,
            t: grid.t(k),
            r_squared,
            condition: reg.condition.max(reg_p.condition).max(reg_c.condition),
            reduced_basis: reg.reduced || reg_p.reduced || reg_c.reduced,
            mean_p: pk.iter().sum::<f64>() / m as f64,
            mean_q: qk.iter().sum::<f64>() / m as f64,
            mf_terms: terms,
        });
        next_derivs = dv;
        next_terms = terms;
    }
    if reductions > 0 {
        log::warn!("regression basis reduced on {reductions} steps");
    }
    diagnostics.reverse();
    Ok(AdjointTriple { forward: fp, p, q, s, regimes: d, basis: opts.basis, diagnostics, basis_reductions: reductions })
}

/// Feedback recovered pointwise from the Hamiltonian minimization, evaluated
/// at every `(path, step)` sample; layout as in [`ForwardPaths`].
pub fn recovered_controls(spec: &ModelSpec, triple: &AdjointTriple, curves: &MeanFieldCurves) -> Result<Vec<f64>> {
    let fp = &triple.forward;
    let steps = fp.grid.n_steps();
    let rows = par::map_range(fp.paths, |j| {
        (0..=steps).map(|k| minimize_hamiltonian(spec, &triple.point(curves, k, j))).collect::<Result<Vec<f64>>>()
    });
    let mut out = vec![0.0; (steps + 1) * fp.paths];
    for (j, r) in rows.into_iter().enumerate() {
        for (k, u) in r?.into_iter().enumerate() {
            out[fp.at(k, j)] = u;
        }
    }
    Ok(out)
}

/// Relative L² distance over all `(path, step)` samples between the
/// recovered feedback and `reference` (projected onto the action set).
pub fn feedback_discrepancy(
    spec: &ModelSpec,
    triple: &AdjointTriple,
    curves: &MeanFieldCurves,
    reference: &FeedbackControl,
) -> Result<f64> {
    let rec = recovered_controls(spec, triple, curves)?;
    let fp = &triple.forward;
    let act = spec.action_set();
    let steps = fp.grid.n_steps();
    let parts = par::map_range(fp.paths, |j| {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..=steps {
            let i = fp.at(k, j);
            let (u, _) = reference.apply(fp.grid.t(k), fp.x[i], fp.regime[i], &act);
            num += (rec[i] - u).powi(2);
            den += u * u;
        }
        (num, den)
    });
    let (num, den) = parts.iter().fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d));
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

/// No-intercept regression of `p_{k+1} − p_k + f_k Δt` on `q_kΔw_k + s_k·ΔΦ̃_k`
/// pooled over steps and paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleFit {
    pub slope: f64,
    pub r_squared: f64,
    pub samples: usize,
}

pub fn martingale_fit(spec: &ModelSpec, triple: &AdjointTriple, curves: &MeanFieldCurves) -> MartingaleFit {
    let fp = &triple.forward;
    let steps = fp.grid.n_steps();
    let dt = fp.grid.dt();
    let m = fp.paths;
    let d = triple.regimes;
    let incs: Vec<Vec<f64>> = if d > 1 {
        par::map_range(m, |j| martingale_increments(&fp.chains[j], spec.generator(), dt, steps))
    } else {
        Vec::new()
    };
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..steps {
        let dv = derivatives(spec, fp, curves, k);
        let terms = triple.diagnostics[k].mf_terms;
        let pk = &triple.p[k * m..(k + 1) * m];
        let qk = &triple.q[k * m..(k + 1) * m];
        for j in 0..m {
            let y = triple.p_at(k + 1, j) - pk[j] + driver(&dv, pk, qk, terms, j) * dt;
            let mut x = qk[j] * fp.dw[fp.at(k, j)];
            if d > 1 {
                for t in 0..d {
                    x += triple.s_at(k, j, t) * incs[j][k * d + t];
                }
            }
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if sxx > 0.0 && syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    MartingaleFit { slope, r_squared, samples: steps * m }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::control::riccati::{solve_lq_oracle, MeanFlowStart};
    use crate::mean_field::unused_curves;
    use crate::model::{ActionSet, ClosureModel, LqParams};

    #[test]
    fn zero_costs_give_zero_triple() {
        let spec = ModelSpec::new(
            Arc::new(ClosureModel::new().drift(|_, x, _, v| -x + v).diffusion(|_, _, _, _| 0.4)),
            vec![1.0, 2.0],
            crate::chain::GeneratorMatrix::uniform(2, 1.0).unwrap(),
            0,
            ActionSet::new(-1.0, 1.0).unwrap(),
        )
        .unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let t = solve_adjoint(
            &spec,
            &FeedbackControl::constant(0.3),
            &unused_curves(g),
            &g,
            &InitialLaw::Point(1.0),
            &AdjointOptions::new(2000, 1),
        )
        .unwrap();
        assert!(t.p.iter().chain(&t.q).all(|v| v.abs() <= 1e-8));
        for k in 0..=10 {
            for j in 0..50 {
                assert!(t.s_at(k, j, 0).abs() <= 1e-8 && t.s_at(k, j, 1).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn single_regime_has_no_jump_integrand() {
        let lq = LqParams { a: -0.5, c: 1.0, b_bar: 0.0, sigma: 0.5, q: 1.0, r_c: 1.0, s: 1.0 };
        let spec = ModelSpec::single_regime(Arc::new(lq), ActionSet::new(-10.0, 10.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let t = solve_adjoint(
            &spec,
            &FeedbackControl::zero(),
            &unused_curves(g),
            &g,
            &InitialLaw::Point(1.0),
            &AdjointOptions::new(500, 2),
        )
        .unwrap();
        assert_eq!(t.s_at(3, 7, 0), 0.0);
    }

    #[test]
    fn lq_adjoint_matches_riccati_slope() {
        let lq = LqParams { a: -0.5, c: 1.0, b_bar: 0.0, sigma: 0.5, q: 1.0, r_c: 1.0, s: 1.0 };
        let spec = ModelSpec::single_regime(Arc::new(lq), ActionSet::new(-10.0, 10.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 50).unwrap();
        let sol =
            solve_lq_oracle(&lq, spec.generator(), spec.modulation(), &g, MeanFlowStart { mean_x0: 1.0, regime: 0 }, 4)
                .unwrap();
        let fb = sol.feedback().unwrap();
        let init = InitialLaw::Gaussian { mean: 1.0, std: 0.5 };
        let curves = unused_curves(g);
        let t = solve_adjoint(&spec, &fb, &curves, &g, &init, &AdjointOptions::new(20_000, 3)).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=50 {
            for j in 0..t.forward.paths {
                let x = t.forward.x[t.forward.at(k, j)];
                let exact = sol.adjoint(k, x, 0);
                num += (t.p_at(k, j) - exact).powi(2);
                den += exact * exact;
            }
        }
        assert!((num / den).sqrt() < 0.02, "{}", (num / den).sqrt());
        let err = feedback_discrepancy(&spec, &t, &curves, &fb).unwrap();
        assert!(err < 0.02, "{err}");
        let mf = martingale_fit(&spec, &t, &curves);
        assert!(mf.r_squared > 0.95 && (mf.slope - 1.0).abs() < 0.05, "{mf:?}");
    }

    #[test]
    fn two_regime_jump_integrand_matches_riccati() {
        let lq = LqParams { a: -0.5, c: 1.0, b_bar: 0.0, sigma: 0.5, q: 1.0, r_c: 1.0, s: 0.0 };
        let gen = crate::chain::GeneratorMatrix::uniform(2, 1.0).unwrap();
        let spec = ModelSpec::new(Arc::new(lq), vec![1.0, 2.0], gen, 0, ActionSet::new(-10.0, 10.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 50).unwrap();
        let sol =
            solve_lq_oracle(&lq, spec.generator(), spec.modulation(), &g, MeanFlowStart { mean_x0: 1.0, regime: 0 }, 4)
                .unwrap();
        let fb = sol.feedback().unwrap();
        let init = InitialLaw::Gaussian { mean: 1.0, std: 0.5 };
        let curves = unused_curves(g);
        let t = solve_adjoint(&spec, &fb, &curves, &g, &init, &AdjointOptions::new(20_000, 3)).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..50 {
            for j in 0..t.forward.paths {
                let i = t.forward.regime[t.forward.at(k, j)];
                let x = t.forward.x[t.forward.at(k, j)];
                assert_eq!(t.s_at(k, j, i), 0.0);
                let exact = sol.adjoint(k, x, 1 - i) - sol.adjoint(k, x, i);
                num += (t.s_at(k, j, 1 - i) - exact).powi(2);
                den += exact * exact;
            }
        }
        assert!((num / den).sqrt() < 0.3, "{}", (num / den).sqrt());
        let mf = martingale_fit(&spec, &t, &curves);
        assert!(mf.r_squared > 0.95 && (mf.slope - 1.0).abs() < 0.05, "{mf:?}");
    }

    #[test]
    fn unconverged_curves_are_rejected() {
        let spec = ModelSpec::single_regime(Arc::new(ClosureModel::new()), ActionSet::new(-1.0, 1.0).unwrap()).unwrap();
        let g = TimeGrid::new(1.0, 5).unwrap();
        let curves = MeanFieldCurves::constant(g, 0.0, 0.0, 0.0, 0.0);
        assert!(solve_adjoint(
            &spec,
            &FeedbackControl::zero(),
            &curves,
            &g,
            &InitialLaw::Point(0.0),
            &AdjointOptions::new(100, 0)
        )
        .is_err());
    }

    #[test]
    fn ill_conditioned_regression_reduces_basis() {
        // Nearly constant state: the quadratic design is singular.
        let xs: Vec<f64> = (0..100).map(|j| 1.0 + 1e-9 * (j % 2) as f64).collect();
        let groups = vec![(0..100).collect::<Vec<_>>()];
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let mut fitted = vec![vec![0.0; 100]];
        let r = regress(&xs, &groups, 2, &[&y], &mut fitted);
        assert!(r.reduced);
        assert!(fitted[0].iter().all(|v| (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn quadratic_targets_are_fitted_exactly() {
        let xs: Vec<f64> = (0..200).map(|j| j as f64 / 50.0 - 2.0).collect();
        let regimes: Vec<usize> = (0..200).map(|j| j % 2).collect();
        let groups = vec![(0..200).step_by(2).collect::<Vec<_>>(), (1..200).step_by(2).collect::<Vec<_>>()];
        let y: Vec<f64> =
            xs.iter().zip(&regimes).map(|(x, &i)| if i == 0 { 1.0 + x * x } else { 3.0 - x + x * x }).collect();
        let mut fitted = vec![vec![0.0; 200]];
        regress(&xs, &groups, 2, &[&y], &mut fitted);
        for j in 0..200 {
            assert!((fitted[0][j] - y[j]).abs() < 1e-10);
        }
    }
}
