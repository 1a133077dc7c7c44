use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ActionSet;
use crate::rng::StreamRng;

type FeedbackFn = Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum FeedbackRepr {
    Constant(f64),
    /// `u(t, x, i) = k0(t, i) + k1(t, i)·x` with gains tabulated at the grid
    /// points `k·dt`, `k = 0..=n_steps`, laid out `(n_steps + 1) × d`, and
    /// held constant on each step.
    AffinePerRegime {
        dt: f64,
        n_steps: usize,
        regimes: usize,
        k0: Vec<f64>,
        k1: Vec<f64>,
    },
    Custom(FeedbackFn),
}

impl fmt::Debug for FeedbackRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedbackRepr::Constant(c) => write!(f, "Constant({c})"),
            FeedbackRepr::AffinePerRegime { n_steps, regimes, .. } => {
                write!(f, "AffinePerRegime {{ n_steps: {n_steps}, regimes: {regimes} }}")
            }
            FeedbackRepr::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Lipschitz feedback `u(t, x, regime)`.
#[derive(Debug, Clone)]
pub struct FeedbackControl {
    repr: FeedbackRepr,
    lipschitz_x: f64,
    label: String,
}

impl FeedbackControl {
    pub fn constant(u: f64) -> Self {
        Self { repr: FeedbackRepr::Constant(u), lipschitz_x: 0.0, label: format!("constant({u})") }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn affine(horizon: f64, n_steps: usize, regimes: usize, k0: Vec<f64>, k1: Vec<f64>) -> Result<Self> {
        let len = (n_steps + 1) * regimes;
        if n_steps == 0 || regimes == 0 || k0.len() != len || k1.len() != len {
            return Err(Error::InvalidArgument(format!(
                "affine feedback needs {len} gains per coefficient, got {} and {}",
                k0.len(),
                k1.len()
            )));
        }
        if k0.iter().chain(&k1).any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("affine feedback gains must be finite".into()));
        }
        let lipschitz_x = k1.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        Ok(Self {
            repr: FeedbackRepr::AffinePerRegime { dt: horizon / n_steps as f64, n_steps, regimes, k0, k1 },
            lipschitz_x,
            label: "affine_per_regime".into(),
        })
    }

    pub fn custom(f: impl Fn(f64, f64, usize) -> f64 + Send + Sync + 'static, lipschitz_x: f64) -> Self {
        Self { repr: FeedbackRepr::Custom(Arc::new(f)), lipschitz_x, label: "custom".into() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lipschitz_x(&self) -> f64 {
        self.lipschitz_x
    }

    pub fn repr(&self) -> &FeedbackRepr {
        &self.repr
    }

    /// Affine gains `(k0, k1)` at time `t` in `regime`, if affine.
    pub fn gains(&self, t: f64, regime: usize) -> Option<(f64, f64)> {
        match &self.repr {
            FeedbackRepr::Constant(c) => Some((*c, 0.0)),
            FeedbackRepr::AffinePerRegime { dt, n_steps, regimes, k0, k1 } => {
                let k = ((t / dt) + 1e-9).floor().max(0.0) as usize;
                let idx = k.min(*n_steps) * regimes + regime.min(regimes - 1);
                Some((k0[idx], k1[idx]))
            }
            FeedbackRepr::Custom(_) => None,
        }
    }

    /// Unclamped feedback value.
    #[inline]
    pub fn raw(&self, t: f64, x: f64, regime: usize) -> f64 {
        match &self.repr {
            FeedbackRepr::Constant(c) => *c,
            FeedbackRepr::AffinePerRegime { .. } => {
                let (a, b) = self.gains(t, regime).unwrap_or_default();
                a + b * x
            }
            FeedbackRepr::Custom(f) => f(t, x, regime),
        }
    }

    /// Feedback value projected onto the action set, with a clamping flag.
    #[inline]
    pub fn apply(&self, t: f64, x: f64, regime: usize, set: &ActionSet) -> (f64, bool) {
        let u = self.raw(t, x, regime);
        let c = set.clamp(u);
        (c, c != u)
    }

    /// Affine shift `u + δ0_i + δ1_i·x` per regime. Affine inputs stay
    /// affine; the Lipschitz constant grows by `max |δ1|`.
    pub fn shifted(&self, d0: &[f64], d1: &[f64]) -> Self {
        let extra = d1.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let label = format!("{}+shift({d0:?},{d1:?})", self.label);
        match &self.repr {
            FeedbackRepr::AffinePerRegime { dt, n_steps, regimes, k0, k1 } => {
                let sel = |v: &[f64], i: usize| v.get(i).or(v.last()).copied().unwrap_or(0.0);
                let k0 = k0.iter().enumerate().map(|(n, g)| g + sel(d0, n % regimes)).collect();
                let k1 = k1.iter().enumerate().map(|(n, g)| g + sel(d1, n % regimes)).collect();
                Self {
                    repr: FeedbackRepr::AffinePerRegime { dt: *dt, n_steps: *n_steps, regimes: *regimes, k0, k1 },
                    lipschitz_x: self.lipschitz_x + extra,
                    label,
                }
            }
            _ => {
                let base = self.clone();
                let d0 = d0.to_vec();
                let d1 = d1.to_vec();
                let sel = move |v: &[f64], i: usize| v.get(i).or(v.last()).copied().unwrap_or(0.0);
                Self {
                    repr: FeedbackRepr::Custom(Arc::new(move |t, x, i| {
                        base.raw(t, x, i) + sel(&d0, i) + sel(&d1, i) * x
                    })),
                    lipschitz_x: self.lipschitz_x + extra,
                    label,
                }
            }
        }
    }

    /// `count` perturbations `u + ε(a0 + a1·sin(2πt) + b·tanh x)` with
    /// standard normal `(a0, a1, b)` and `ε` cycling through `scales`.
    pub fn random_perturbations(&self, count: usize, scales: &[f64], rng: &mut StreamRng) -> Vec<FeedbackControl> {
        (0..count)
            .map(|m| {
                let eps = if scales.is_empty() { 1.0 } else { scales[m % scales.len()] };
                let a0: f64 = StandardNormal.sample(rng);
                let a1: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                let base = self.clone();
                let lip = base.lipschitz_x() + eps * b.abs();
                FeedbackControl::custom(
                    move |t, x, i| {
                        base.raw(t, x, i) + eps * (a0 + a1 * (std::f64::consts::TAU * t).sin() + b * x.tanh())
                    },
                    lip,
                )
                .with_label(format!("perturbation[{m}]"))
            })
            .collect()
    }

    /// Largest observed ratio `|u(t,x,i) − u(t,x′,i)| / |x − x′|` over random
    /// samples, compared against the recorded constant.
    pub fn spot_check_lipschitz(&self, horizon: f64, regimes: usize, samples: usize, rng: &mut StreamRng) -> bool {
        (0..samples).all(|_| {
            let t = rng.random::<f64>() * horizon;
            let i = rng.random_range(0..regimes.max(1));
            let x = rng.random_range(-5.0..5.0);
            let x2 = rng.random_range(-5.0..5.0);
            if x == x2 {
                return true;
            }
            let ratio = (self.raw(t, x, i) - self.raw(t, x2, i)).abs() / (x - x2).abs();
            ratio <= self.lipschitz_x * (1.0 + 1e-9) + 1e-12
        })
    }
}
