//! Coefficients, functionals, modulation and action set of the control
//! problem, plus the Hamiltonian and numerical assumption checks.

mod assumptions;
mod families;
mod file;
mod hamiltonian;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::GeneratorMatrix;
use crate::error::{Error, Result};
use crate::rng::{module, Driver, StreamKey};

pub use assumptions::{check_assumptions, AssumptionCheck, AssumptionReport};
pub use families::{BoundedSmooth, ClosureModel, LinearMeasureCoefficient, LqParams, ScalarFn, StateFn, TerminalFn};
pub use file::{FamilySpec, ModelFile};
pub use hamiltonian::{hamiltonian, minimize_hamiltonian, HamiltonianEval, HamiltonianPoint};

/// Partial derivatives of a coefficient `f(t, x, y, v)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Grad3 {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

/// Partial derivatives of a terminal function `g(x, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Grad2 {
    pub x: f64,
    pub y: f64,
}

#[inline]
pub(crate) fn fd_step(z: f64) -> f64 {
    1e-6 * z.abs().max(1.0)
}

#[inline]
pub(crate) fn central<F: Fn(f64) -> f64>(f: F, z: f64) -> f64 {
    let h = fd_step(z);
    (f(z + h) - f(z - h)) / (2.0 * h)
}

pub(crate) fn fd3<F: Fn(f64, f64, f64) -> f64>(f: F, x: f64, y: f64, v: f64) -> Grad3 {
    Grad3 { x: central(|z| f(z, y, v), x), y: central(|z| f(x, z, v), y), v: central(|z| f(x, y, z), v) }
}

pub(crate) fn fd2<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64) -> Grad2 {
    Grad2 { x: central(|z| f(z, y), x), y: central(|z| f(x, z), y) }
}

/// Coefficient functions of the controlled dynamics and costs.
///
/// `y` is always the mean-field argument: `Eψ` for the drift, `Eφ` for the
/// diffusion, `E varphi` for the running cost and `Eχ` for the terminal cost.
/// Derivatives default to central finite differences with step
/// `1e-6 · max(1, |z|)`.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn drift(&self, t: f64, x: f64, y: f64, v: f64) -> f64;
    fn diffusion(&self, t: f64, x: f64, y: f64, v: f64) -> f64;
    fn running_cost(&self, t: f64, x: f64, y: f64, v: f64) -> f64;
    fn terminal_cost(&self, x: f64, y: f64) -> f64;
    fn psi(&self, x: f64) -> f64;
    fn phi(&self, x: f64) -> f64;
    fn varphi(&self, x: f64) -> f64;
    fn chi(&self, x: f64) -> f64;

    fn drift_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        fd3(|x, y, v| self.drift(t, x, y, v), x, y, v)
    }
    fn diffusion_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        fd3(|x, y, v| self.diffusion(t, x, y, v), x, y, v)
    }
    fn running_cost_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        fd3(|x, y, v| self.running_cost(t, x, y, v), x, y, v)
    }
    fn terminal_cost_grad(&self, x: f64, y: f64) -> Grad2 {
        fd2(|x, y| self.terminal_cost(x, y), x, y)
    }
    fn psi_x(&self, x: f64) -> f64 {
        central(|z| self.psi(z), x)
    }
    fn phi_x(&self, x: f64) -> f64 {
        central(|z| self.phi(z), x)
    }
    fn varphi_x(&self, x: f64) -> f64 {
        central(|z| self.varphi(z), x)
    }
    fn chi_x(&self, x: f64) -> f64 {
        central(|z| self.chi(z), x)
    }

    /// True when no coefficient depends on its mean-field argument, so the
    /// law fixed point is reached after a single evaluation.
    fn measure_free(&self) -> bool {
        false
    }

    fn family(&self) -> &str {
        "custom"
    }
}

/// Compact control interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ActionSet {
    lo: f64,
    hi: f64,
}

impl ActionSet {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidModel(format!("action set [{lo}, {hi}] must be a nonempty finite interval")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.lo, self.hi)
    }
}

impl TryFrom<[f64; 2]> for ActionSet {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<ActionSet> for [f64; 2] {
    fn from(a: ActionSet) -> Self {
        [a.lo, a.hi]
    }
}

/// A validated model: coefficients, regime chain, modulation and controls.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    coeffs: Arc<dyn Coefficients>,
    modulation: Vec<f64>,
    generator: GeneratorMatrix,
    initial_regime: usize,
    action_set: ActionSet,
    documented_deviations: Vec<String>,
}

impl ModelSpec {
    /// Validates modulation positivity, dimensions and the supplied
    /// derivatives against central finite differences.
    pub fn new(
        coeffs: Arc<dyn Coefficients>,
        modulation: Vec<f64>,
        generator: GeneratorMatrix,
        initial_regime: usize,
        action_set: ActionSet,
    ) -> Result<Self> {
        if modulation.len() != generator.dim() {
            return Err(Error::InvalidModel(format!(
                "modulation has {} entries but the chain has {} states",
                modulation.len(),
                generator.dim()
            )));
        }
        if let Some((i, r)) = modulation.iter().enumerate().find(|(_, r)| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidModel(format!("modulation r({}) = {r} must be positive", i + 1)));
        }
        generator.check_state(initial_regime)?;
        let spec =
            Self { coeffs, modulation, generator, initial_regime, action_set, documented_deviations: Vec::new() };
        spec.spot_check_derivatives(32)?;
        Ok(spec)
    }

    /// Single-regime model with `r ≡ 1`.
    pub fn single_regime(coeffs: Arc<dyn Coefficients>, action_set: ActionSet) -> Result<Self> {
        Self::new(coeffs, vec![1.0], GeneratorMatrix::trivial(), 0, action_set)
    }

    pub fn with_deviations(mut self, notes: Vec<String>) -> Self {
        self.documented_deviations = notes;
        self
    }

    pub fn coeffs(&self) -> &dyn Coefficients {
        &*self.coeffs
    }

    pub fn shared_coeffs(&self) -> Arc<dyn Coefficients> {
        Arc::clone(&self.coeffs)
    }

    #[inline]
    pub fn r(&self, regime: usize) -> f64 {
        self.modulation[regime]
    }

    pub fn modulation(&self) -> &[f64] {
        &self.modulation
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn regimes(&self) -> usize {
        self.generator.dim()
    }

    pub fn initial_regime(&self) -> usize {
        self.initial_regime
    }

    pub fn action_set(&self) -> ActionSet {
        self.action_set
    }

    pub fn documented_deviations(&self) -> &[String] {
        &self.documented_deviations
    }

    /// Same model with every `r(i)` multiplied by `factor`.
    pub fn scaled_modulation(&self, factor: f64) -> Result<Self> {
        let mut s = self.clone();
        s.modulation = self.modulation.iter().map(|r| r * factor).collect();
        if s.modulation.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidModel("scaled modulation must stay positive".into()));
        }
        Ok(s)
    }

    /// Same model with a different chain (and modulation of matching size).
    pub fn with_chain(&self, generator: GeneratorMatrix, modulation: Vec<f64>, initial_regime: usize) -> Result<Self> {
        Self::new(Arc::clone(&self.coeffs), modulation, generator, initial_regime, self.action_set)
            .map(|s| s.with_deviations(self.documented_deviations.clone()))
    }

    fn spot_check_derivatives(&self, points: usize) -> Result<()> {
        let c = self.coeffs();
        let mut rng = StreamKey::new(0x5eed, module::ASSUMPTIONS).rng(Driver::Aux);
        let lo = self.action_set.lo().max(-2.0);
        let hi = self.action_set.hi().min(2.0).max(lo);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0);
        for _ in 0..points {
            let t = rng.random::<f64>();
            let x = rng.random_range(-2.0..2.0);
            let y = rng.random_range(-2.0..2.0);
            let v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let checks: [(&str, Grad3, Grad3); 3] = [
                ("drift", c.drift_grad(t, x, y, v), fd3(|x, y, v| c.drift(t, x, y, v), x, y, v)),
                ("diffusion", c.diffusion_grad(t, x, y, v), fd3(|x, y, v| c.diffusion(t, x, y, v), x, y, v)),
                ("running_cost", c.running_cost_grad(t, x, y, v), fd3(|x, y, v| c.running_cost(t, x, y, v), x, y, v)),
            ];
            for (name, got, want) in checks {
                for (part, a, b) in [("x", got.x, want.x), ("y", got.y, want.y), ("v", got.v, want.v)] {
                    if !close(a, b) {
                        return Err(Error::InvalidModel(format!(
                            "{name} derivative in {part} = {a} disagrees with finite difference {b} at (t={t}, x={x}, y={y}, v={v})"
                        )));
                    }
                }
            }
            let g = c.terminal_cost_grad(x, y);
            let gf = fd2(|x, y| c.terminal_cost(x, y), x, y);
            if !close(g.x, gf.x) || !close(g.y, gf.y) {
                return Err(Error::InvalidModel(format!(
                    "terminal cost gradient disagrees with finite differences at ({x}, {y})"
                )));
            }
            let scalar: [(&str, f64, f64); 4] = [
                ("psi", c.psi_x(x), central(|z| c.psi(z), x)),
                ("phi", c.phi_x(x), central(|z| c.phi(z), x)),
                ("varphi", c.varphi_x(x), central(|z| c.varphi(z), x)),
                ("chi", c.chi_x(x), central(|z| c.chi(z), x)),
            ];
            for (name, a, b) in scalar {
                if !close(a, b) {
                    return Err(Error::InvalidModel(format!(
                        "{name} derivative {a} disagrees with finite difference {b} at x={x}"
                    )));
                }
            }
        }
        Ok(())
    }
}
