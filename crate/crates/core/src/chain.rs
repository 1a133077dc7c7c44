//! Finite-state continuous-time Markov chains, simulated exactly in
//! continuous time, and their counting-process decomposition.
//!
//! States are `0..d` in the library. Files and CLI output label them `1..=d`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Rate matrix of a time-homogeneous chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GeneratorMatrix {
    d: usize,
    rates: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::InvalidGenerator { row: 0, reason: "empty matrix".into() });
        }
        let mut rates = Vec::with_capacity(d * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidGenerator {
                    row: i,
                    reason: format!("expected {d} entries, found {}", row.len()),
                });
            }
            let mut off = 0.0;
            let mut scale: f64 = 1.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidGenerator { row: i, reason: format!("entry {j} is not finite") });
                }
                scale = scale.max(v.abs());
                if j != i {
                    if v < 0.0 {
                        return Err(Error::InvalidGenerator {
                            row: i,
                            reason: format!("negative off-diagonal rate {v} at column {j}"),
                        });
                    }
                    off += v;
                }
            }
            let sum = off + row[i];
            if sum.abs() > ROW_SUM_TOL * scale {
                return Err(Error::InvalidGenerator { row: i, reason: format!("row sums to {sum}, expected 0") });
            }
            rates.extend_from_slice(row);
        }
        Ok(Self { d, rates })
    }

    /// Single absorbing state.
    pub fn trivial() -> Self {
        Self { d: 1, rates: vec![0.0] }
    }

    /// Symmetric chain on `d` states jumping to each other state at `rate`.
    pub fn uniform(d: usize, rate: f64) -> Result<Self> {
        let rows =
            (0..d).map(|i| (0..d).map(|j| if i == j { -rate * (d as f64 - 1.0) } else { rate }).collect()).collect();
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.d + j]
    }

    /// Total exit rate `-λ_ii`.
    #[inline]
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.rates.chunks(self.d).map(<[f64]>::to_vec).collect()
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s < self.d {
            Ok(())
        } else {
            Err(Error::StateOutOfRange { state: s, d: self.d })
        }
    }

    /// Law of the chain at time `t` from each starting state: `exp(tΛ)`.
    pub fn transition_matrix(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("transition time must be >= 0, got {t}")));
        }
        let d = self.d;
        let m = DMatrix::from_row_slice(d, d, &self.rates) * t;
        let e = m.exp();
        Ok((0..d)
            .map(|i| {
                let row: Vec<f64> = (0..d).map(|j| e[(i, j)].max(0.0)).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|p| p / s).collect()
            })
            .collect())
    }

    /// Marginal law at `t` starting from `i0`.
    pub fn marginal(&self, i0: usize, t: f64) -> Result<Vec<f64>> {
        self.check_state(i0)?;
        Ok(self.transition_matrix(t)?.swap_remove(i0))
    }
}

impl TryFrom<Vec<Vec<f64>>> for GeneratorMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<GeneratorMatrix> for Vec<Vec<f64>> {
    fn from(g: GeneratorMatrix) -> Self {
        g.rows()
    }
}

/// One càdlàg trajectory of the chain on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub initial_state: usize,
    pub jump_times: Vec<f64>,
    pub jump_targets: Vec<usize>,
    pub horizon: f64,
}

impl ChainPath {
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self { initial_state: state, jump_times: Vec::new(), jump_targets: Vec::new(), horizon }
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// `α_t`: includes a jump occurring exactly at `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial_state
        } else {
            self.jump_targets[k - 1]
        }
    }

    /// `α_{t-}`: only jumps strictly before `t`. At `t = 0` this is the
    /// initial state.
    pub fn state_before(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s < t);
        if k == 0 {
            self.initial_state
        } else {
            self.jump_targets[k - 1]
        }
    }

    /// `(from, to, time)` for every jump.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let froms = std::iter::once(self.initial_state).chain(self.jump_targets.iter().copied());
        froms.zip(self.jump_targets.iter().copied()).zip(self.jump_times.iter().copied()).map(|((f, t), s)| (f, t, s))
    }

    /// Left-limit regimes `α_{t_k-}` on a uniform grid of `n_steps` steps,
    /// plus right-continuous values `α_{t_k}`, both of length `n_steps + 1`.
    pub fn on_grid(&self, dt: f64, n_steps: usize) -> (Vec<usize>, Vec<usize>) {
        let mut left = Vec::with_capacity(n_steps + 1);
        let mut right = Vec::with_capacity(n_steps + 1);
        let mut cur = self.initial_state;
        let mut next = 0;
        for k in 0..=n_steps {
            let t = k as f64 * dt;
            while next < self.jump_times.len() && self.jump_times[next] < t {
                cur = self.jump_targets[next];
                next += 1;
            }
            left.push(cur);
            let mut r = cur;
            let mut probe = next;
            while probe < self.jump_times.len() && self.jump_times[probe] <= t {
                r = self.jump_targets[probe];
                probe += 1;
            }
            right.push(r);
        }
        (left, right)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.initial_state >= d {
            return Err(Error::StateOutOfRange { state: self.initial_state, d });
        }
        if self.jump_times.len() != self.jump_targets.len() {
            return Err(Error::InvalidArgument("jump_times and jump_targets differ in length".into()));
        }
        let mut prev_t = 0.0;
        let mut prev_s = self.initial_state;
        for (&t, &s) in self.jump_times.iter().zip(&self.jump_targets) {
            if s >= d {
                return Err(Error::StateOutOfRange { state: s, d });
            }
            if !(t > prev_t) || t > self.horizon {
                return Err(Error::InvalidArgument(format!("jump time {t} out of order or beyond horizon")));
            }
            if s == prev_s {
                return Err(Error::InvalidArgument(format!("self-jump at time {t}")));
            }
            prev_t = t;
            prev_s = s;
        }
        Ok(())
    }
}

/// Samples a path by exponential holding times with rate `-λ_ii` and jump
/// kernel `λ_ij / -λ_ii`.
pub fn sample_chain<R: Rng + ?Sized>(gen: &GeneratorMatrix, i0: usize, horizon: f64, rng: &mut R) -> Result<ChainPath> {
    gen.check_state(i0)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(sample_chain_unchecked(gen, i0, horizon, rng))
}

pub(crate) fn sample_chain_unchecked<R: Rng + ?Sized>(
    gen: &GeneratorMatrix,
    i0: usize,
    horizon: f64,
    rng: &mut R,
) -> ChainPath {
    let mut path = ChainPath::constant(i0, horizon);
    let mut t = 0.0;
    let mut state = i0;
    loop {
        let exit = gen.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let hold: f64 = Exp1.sample(rng);
        t += hold / exit;
        if t > horizon {
            break;
        }
        let mut u = rng.random::<f64>() * exit;
        let mut target = state;
        for j in 0..gen.dim() {
            let r = gen.rate(state, j);
            if j == state || r <= 0.0 {
                continue;
            }
            target = j;
            if u < r {
                break;
            }
            u -= r;
        }
        path.jump_times.push(t);
        path.jump_targets.push(target);
        state = target;
    }
    path
}

/// Exact counting processes, compensators and compensated martingales of a
/// path, stored at event-time breakpoints.
#[derive(Debug, Clone)]
pub struct CountingRecord {
    d: usize,
    gen: GeneratorMatrix,
    /// `0, τ_1, …, τ_K`.
    breaks: Vec<f64>,
    /// State on `[breaks[k], breaks[k+1])`.
    states: Vec<usize>,
    /// Occupation time of each state at each breakpoint, `breaks.len() × d`.
    occupation: Vec<f64>,
    /// `N(i, j)` at each breakpoint (after the jump), `breaks.len() × d × d`.
    counts: Vec<u32>,
    horizon: f64,
}

pub fn counting_decomposition(path: &ChainPath, gen: &GeneratorMatrix) -> Result<CountingRecord> {
    let d = gen.dim();
    path.validate(d)?;
    let nb = path.n_jumps() + 1;
    let mut breaks = Vec::with_capacity(nb);
    let mut states = Vec::with_capacity(nb);
    let mut occupation = vec![0.0; nb * d];
    let mut counts = vec![0u32; nb * d * d];
    breaks.push(0.0);
    states.push(path.initial_state);
    for (k, (from, to, t)) in path.transitions().enumerate() {
        let prev = k;
        let cur = k + 1;
        let dt = t - breaks[prev];
        for s in 0..d {
            occupation[cur * d + s] = occupation[prev * d + s];
        }
        occupation[cur * d + from] += dt;
        for c in 0..d * d {
            counts[cur * d * d + c] = counts[prev * d * d + c];
        }
        counts[cur * d * d + from * d + to] += 1;
        breaks.push(t);
        states.push(to);
    }
    Ok(CountingRecord { d, gen: gen.clone(), breaks, states, occupation, counts, horizon: path.horizon })
}

impl CountingRecord {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Last breakpoint with time `<= t`.
    fn segment(&self, t: f64) -> usize {
        self.breaks.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// `N_t(i, j)`.
    pub fn count(&self, i: usize, j: usize, t: f64) -> u32 {
        self.counts[self.segment(t) * self.d * self.d + i * self.d + j]
    }

    /// Time spent in state `i` on `[0, t]`.
    pub fn occupation(&self, i: usize, t: f64) -> f64 {
        let k = self.segment(t);
        let mut occ = self.occupation[k * self.d + i];
        if self.states[k] == i {
            occ += t - self.breaks[k];
        }
        occ
    }

    /// `∫_0^t m_s(i, j) ds = λ_ij · occupation_i(t)`.
    pub fn compensator(&self, i: usize, j: usize, t: f64) -> f64 {
        self.gen.rate(i, j) * self.occupation(i, t)
    }

    /// `Φ̃_t(j) = Σ_{i≠j} (N_t(i,j) − ∫_0^t m_s(i,j) ds)`.
    pub fn martingale(&self, j: usize, t: f64) -> f64 {
        (0..self.d).filter(|&i| i != j).map(|i| self.count(i, j, t) as f64 - self.compensator(i, j, t)).sum()
    }

    /// Instantaneous intensity `m_t(i, j) = λ_ij 1{α_{t-} = i}`.
    pub fn intensity(&self, i: usize, j: usize, t: f64) -> f64 {
        if i == j {
            return 0.0;
        }
        let k = self.breaks.partition_point(|&s| s < t).saturating_sub(1);
        if self.states[k] == i {
            self.gen.rate(i, j)
        } else {
            0.0
        }
    }

    /// Instantaneous intensity vector `Σ_{i≠j} m_t(i, j)` per target `j`.
    pub fn intensity_vector(&self, t: f64) -> Vec<f64> {
        (0..self.d).map(|j| (0..self.d).filter(|&i| i != j).map(|i| self.intensity(i, j, t)).sum()).collect()
    }

    /// Cumulative intensity vector `Σ_{i≠j} ∫_0^t m_s(i, j) ds` per target `j`.
    pub fn cumulative_intensity(&self, t: f64) -> Vec<f64> {
        (0..self.d).map(|j| (0..self.d).filter(|&i| i != j).map(|i| self.compensator(i, j, t)).sum()).collect()
    }

    /// Event times at which the record changes slope or jumps.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }
}

/// Increments `Φ̃_{t_{k+1}}(j) − Φ̃_{t_k}(j)` on a uniform grid, laid out as
/// `n_steps × d`. Computed in one pass over the path.
pub fn martingale_increments(path: &ChainPath, gen: &GeneratorMatrix, dt: f64, n_steps: usize) -> Vec<f64> {
    let d = gen.dim();
    let mut out = vec![0.0; n_steps * d];
    let mut jump = 0;
    let mut state = path.initial_state;
    for k in 0..n_steps {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let row = &mut out[k * d..(k + 1) * d];
        let mut s = t0;
        loop {
            let next = path.jump_times.get(jump).copied().filter(|&tj| tj <= t1);
            let end = next.unwrap_or(t1);
            // Compensator drift: while in `state`, target j accrues λ_{state,j}.
            for (j, r) in row.iter_mut().enumerate() {
                if j != state {
                    *r -= gen.rate(state, j) * (end - s);
                }
            }
            match next {
                Some(tj) => {
                    let to = path.jump_targets[jump];
                    row[to] += 1.0;
                    state = to;
                    s = tj;
                    jump += 1;
                }
                None => break,
            }
        }
    }
    out
}
