//! Regime-coupled Riccati system of the linear-quadratic benchmark.
//!
//! Value function `V_i(t, x) = ½P_i(t)x² + S_i(t)x + R_i(t)` with the
//! population mean `M(t) = E x_t` entering the drift through `b̄·M`. For
//! `b̄ ≠ 0` the mean flow and the backward system are solved jointly by
//! fixed-point iteration on `M`.

use serde::{Deserialize, Serialize};

use crate::chain::GeneratorMatrix;
use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::model::LqParams;
use crate::particle::TimeGrid;

/// Tabulated solution on the grid; per-regime arrays are `(n_steps + 1) × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub regimes: usize,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    /// Feedback gains `u = k0 + k1·x`.
    pub k0: Vec<f64>,
    pub k1: Vec<f64>,
    /// `E x_t` under the optimal feedback.
    pub mean: Vec<f64>,
    /// Regime probabilities `P(α_t = i)`.
    pub regime_prob: Vec<f64>,
    pub fixed_point_iterations: usize,
}

impl RiccatiSolution {
    fn idx(&self, k: usize, i: usize) -> usize {
        k * self.regimes + i
    }

    pub fn p_at(&self, k: usize, i: usize) -> f64 {
        self.p[self.idx(k, i)]
    }

    pub fn s_at(&self, k: usize, i: usize) -> f64 {
        self.s[self.idx(k, i)]
    }

    pub fn r_at(&self, k: usize, i: usize) -> f64 {
        self.r[self.idx(k, i)]
    }

    /// `V_i(t_k, x)`.
    pub fn value(&self, k: usize, x: f64, i: usize) -> f64 {
        0.5 * self.p_at(k, i) * x * x + self.s_at(k, i) * x + self.r_at(k, i)
    }

    /// Adjoint `∂_x V_i(t_k, x)`.
    pub fn adjoint(&self, k: usize, x: f64, i: usize) -> f64 {
        self.p_at(k, i) * x + self.s_at(k, i)
    }

    /// Affine-per-regime feedback on the grid.
    pub fn feedback(&self) -> Result<FeedbackControl> {
        Ok(FeedbackControl::affine(
            self.grid.horizon(),
            self.grid.n_steps(),
            self.regimes,
            self.k0.clone(),
            self.k1.clone(),
        )?
        .with_label("riccati"))
    }
}

/// Initial data of the mean flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFlowStart {
    pub mean_x0: f64,
    pub regime: usize,
}

struct System<'a> {
    p: &'a LqParams,
    gen: &'a GeneratorMatrix,
    r: &'a [f64],
    d: usize,
}

impl System<'_> {
    fn g(&self) -> f64 {
        self.p.c * self.p.c / self.p.r_c
    }

    /// Time derivative of `(P, S, R)` given `M`.
    fn backward_rhs(&self, y: &[f64], m: f64, out: &mut [f64]) {
        let d = self.d;
        let (pp, rest) = y.split_at(d);
        let (ss, rr) = rest.split_at(d);
        let lq = self.p;
        let g = self.g();
        for i in 0..d {
            let ri = self.r[i];
            let (mut cp, mut cs, mut cr) = (0.0, 0.0, 0.0);
            for j in 0..d {
                let l = self.gen.rate(i, j);
                cp += l * pp[j];
                cs += l * ss[j];
                cr += l * rr[j];
            }
            out[i] = -2.0 * lq.a * ri * pp[i] + g * ri * pp[i] * pp[i] - ri * lq.q - cp;
            out[d + i] = -(lq.a * ri - g * ri * pp[i]) * ss[i] - lq.b_bar * m * ri * pp[i] - cs;
            out[2 * d + i] = -lq.b_bar * m * ri * ss[i] - 0.5 * lq.sigma * lq.sigma * ri * ri * pp[i]
                + ri * 0.5 * g * ss[i] * ss[i]
                - cr;
        }
    }

    /// Time derivative of `(m, π)` with `m_i = E[x 1{α=i}]`.
    fn forward_rhs(&self, y: &[f64], ps: &[f64], out: &mut [f64]) {
        let d = self.d;
        let (m, pi) = y.split_at(d);
        let (pp, ss) = ps.split_at(d);
        let total: f64 = m.iter().sum();
        let lq = self.p;
        let g = self.g();
        for i in 0..d {
            let ri = self.r[i];
            let (mut im, mut ip) = (0.0, 0.0);
            for j in 0..d {
                let l = self.gen.rate(j, i);
                im += l * m[j];
                ip += l * pi[j];
            }
            out[i] = ri * ((lq.a - g * pp[i]) * m[i] - g * ss[i] * pi[i] + lq.b_bar * total * pi[i]) + im;
            out[d + i] = ip;
        }
    }
}

fn rk4_step(y: &[f64], h: f64, f: impl Fn(usize, &[f64], &mut [f64])) -> Vec<f64> {
    // Stage index 0 = start, 1 = midpoint, 2 = end.
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(0, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(1, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(1, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(2, &tmp, &mut k4);
    (0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Solves the benchmark with `substeps` RK4 steps per grid step.
pub fn solve_lq_oracle(
    params: &LqParams,
    gen: &GeneratorMatrix,
    modulation: &[f64],
    grid: &TimeGrid,
    start: MeanFlowStart,
    substeps: usize,
) -> Result<RiccatiSolution> {
    if !(params.r_c > 0.0) {
        return Err(Error::InvalidModel(format!("control cost r_c = {} must be positive", params.r_c)));
    }
    let d = gen.dim();
    if modulation.len() != d || modulation.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidModel("modulation must be positive with one entry per regime".into()));
    }
    gen.check_state(start.regime)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    let sys = System { p: params, gen, r: modulation, d };
    let n = grid.n_steps() * substeps;
    let h = grid.horizon() / n as f64;

    // Backward values live on a half-step lattice so the forward RK4 can read
    // them at its midpoints; `mean` lives on the full-step lattice.
    let backward = |mean: &[f64]| -> Vec<Vec<f64>> {
        let hb = 0.5 * h;
        let nb = 2 * n;
        let mut out = vec![Vec::new(); nb + 1];
        let mut y = vec![0.0; 3 * d];
        for i in 0..d {
            y[i] = params.s * modulation[i];
        }
        out[nb] = y.clone();
        let m_at = |half: f64| {
            // `half` counts half-steps from 0; linear interpolation of `mean`.
            let pos = half / 2.0;
            let lo = (pos.floor() as usize).min(n - 1);
            let w = pos - lo as f64;
            (1.0 - w) * mean[lo] + w * mean[lo + 1]
        };
        for step in (0..nb).rev() {
            let y_next = rk4_step(&y, -hb, |stage, z, o| {
                let half = step as f64 + 1.0 - 0.5 * stage as f64;
                sys.backward_rhs(z, m_at(half), o)
            });
            y = y_next;
            out[step] = y.clone();
        }
        out
    };
    let forward = |bw: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut y = vec![0.0; 2 * d];
        y[start.regime] = start.mean_x0;
        y[d + start.regime] = 1.0;
        let mut means = Vec::with_capacity(n + 1);
        let mut probs = Vec::with_capacity(n + 1);
        means.push(start.mean_x0);
        probs.push(y[d..].to_vec());
        for step in 0..n {
            y = rk4_step(&y, h, |stage, z, o| {
                let b = &bw[2 * step + stage];
                sys.forward_rhs(z, &b[..2 * d], o)
            });
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("mean flow diverged".into()));
            }
            means.push(y[..d].iter().sum());
            probs.push(y[d..].to_vec());
        }
        Ok((means, probs))
    };

    let mut mean = vec![start.mean_x0; n + 1];
    let mut bw = backward(&mean);
    let (mut new_mean, mut probs) = forward(&bw)?;
    let mut iterations = 1;
    if params.b_bar != 0.0 {
        loop {
            let diff = mean.iter().zip(&new_mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + new_mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            mean = new_mean;
            if diff <= 1e-13 * scale {
                break;
            }
            if iterations >= 500 {
                return Err(Error::NotConverged { residual: diff });
            }
            bw = backward(&mean);
            (new_mean, probs) = forward(&bw)?;
            iterations += 1;
        }
    } else {
        mean = new_mean;
    }
    if bw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("Riccati solution blew up before t = 0".into()));
    }

    let steps = grid.n_steps();
    let total = (steps + 1) * d;
    let mut sol = RiccatiSolution {
        grid: *grid,
        regimes: d,
        p: Vec::with_capacity(total),
        s: Vec::with_capacity(total),
        r: Vec::with_capacity(total),
        k0: Vec::with_capacity(total),
        k1: Vec::with_capacity(total),
        mean: Vec::with_capacity(steps + 1),
        regime_prob: Vec::with_capacity(total),
        fixed_point_iterations: iterations,
    };
    let ratio = params.c / params.r_c;
    for k in 0..=steps {
        let fine = k * substeps;
        let b = &bw[2 * fine];
        for i in 0..d {
            sol.p.push(b[i]);
            sol.s.push(b[d + i]);
            sol.r.push(b[2 * d + i]);
            sol.k0.push(-ratio * b[d + i]);
            sol.k1.push(-ratio * b[i]);
            sol.regime_prob.push(probs[fine][i]);
        }
        sol.mean.push(mean[fine]);
    }
    Ok(sol)
}
