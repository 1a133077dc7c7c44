use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Coefficients, Grad2, Grad3};

/// Linear-quadratic family:
/// `b = a·x + c·v + b̄·y` with `ψ(x) = x`, `σ` constant,
/// `h = ½(q·x² + r_c·v²)`, `g = ½·s·x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqParams {
    pub a: f64,
    pub c: f64,
    #[serde(default)]
    pub b_bar: f64,
    pub sigma: f64,
    pub q: f64,
    pub r_c: f64,
    pub s: f64,
}

impl LqParams {
    /// The `tanh` benchmark: `Ṗ = P² − 1`, `P(1) = 0`.
    pub fn tanh_benchmark() -> Self {
        Self { a: 0.0, c: 1.0, b_bar: 0.0, sigma: 0.0, q: 1.0, r_c: 1.0, s: 0.0 }
    }
}

impl Coefficients for LqParams {
    fn drift(&self, _t: f64, x: f64, y: f64, v: f64) -> f64 {
        self.a * x + self.c * v + self.b_bar * y
    }
    fn diffusion(&self, _t: f64, _x: f64, _y: f64, _v: f64) -> f64 {
        self.sigma
    }
    fn running_cost(&self, _t: f64, x: f64, _y: f64, v: f64) -> f64 {
        0.5 * (self.q * x * x + self.r_c * v * v)
    }
    fn terminal_cost(&self, x: f64, _y: f64) -> f64 {
        0.5 * self.s * x * x
    }
    fn psi(&self, x: f64) -> f64 {
        x
    }
    fn phi(&self, x: f64) -> f64 {
        x
    }
    fn varphi(&self, x: f64) -> f64 {
        x
    }
    fn chi(&self, x: f64) -> f64 {
        x
    }
    fn drift_grad(&self, _t: f64, _x: f64, _y: f64, _v: f64) -> Grad3 {
        Grad3 { x: self.a, y: self.b_bar, v: self.c }
    }
    fn diffusion_grad(&self, _t: f64, _x: f64, _y: f64, _v: f64) -> Grad3 {
        Grad3::default()
    }
    fn running_cost_grad(&self, _t: f64, x: f64, _y: f64, v: f64) -> Grad3 {
        Grad3 { x: self.q * x, y: 0.0, v: self.r_c * v }
    }
    fn terminal_cost_grad(&self, x: f64, _y: f64) -> Grad2 {
        Grad2 { x: self.s * x, y: 0.0 }
    }
    fn psi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn phi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn varphi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn chi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn measure_free(&self) -> bool {
        self.b_bar == 0.0
    }
    fn family(&self) -> &str {
        "lq"
    }
}

/// Nonlinear family with bounded, Lipschitz derivatives:
/// `b = −κx + c·v + β·sin(y)`, `ψ = tanh`, `σ = σ₀ + γ·cos(y)`, `φ = tanh`,
/// `h = log cosh(x) + ½v²`, `g = log cosh(x)`, `varphi = χ = identity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundedSmooth {
    pub kappa: f64,
    pub c: f64,
    pub beta: f64,
    pub sigma0: f64,
    pub gamma: f64,
}

impl Default for BoundedSmooth {
    fn default() -> Self {
        Self { kappa: 0.5, c: 1.0, beta: 1.0, sigma0: 0.6, gamma: 0.3 }
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

impl Coefficients for BoundedSmooth {
    fn drift(&self, _t: f64, x: f64, y: f64, v: f64) -> f64 {
        -self.kappa * x + self.c * v + self.beta * y.sin()
    }
    fn diffusion(&self, _t: f64, _x: f64, y: f64, _v: f64) -> f64 {
        self.sigma0 + self.gamma * y.cos()
    }
    fn running_cost(&self, _t: f64, x: f64, _y: f64, v: f64) -> f64 {
        log_cosh(x) + 0.5 * v * v
    }
    fn terminal_cost(&self, x: f64, _y: f64) -> f64 {
        log_cosh(x)
    }
    fn psi(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn phi(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn varphi(&self, x: f64) -> f64 {
        x
    }
    fn chi(&self, x: f64) -> f64 {
        x
    }
    fn drift_grad(&self, _t: f64, _x: f64, y: f64, _v: f64) -> Grad3 {
        Grad3 { x: -self.kappa, y: self.beta * y.cos(), v: self.c }
    }
    fn diffusion_grad(&self, _t: f64, _x: f64, y: f64, _v: f64) -> Grad3 {
        Grad3 { x: 0.0, y: -self.gamma * y.sin(), v: 0.0 }
    }
    fn running_cost_grad(&self, _t: f64, x: f64, _y: f64, v: f64) -> Grad3 {
        Grad3 { x: x.tanh(), y: 0.0, v }
    }
    fn terminal_cost_grad(&self, x: f64, _y: f64) -> Grad2 {
        Grad2 { x: x.tanh(), y: 0.0 }
    }
    fn psi_x(&self, x: f64) -> f64 {
        sech2(x)
    }
    fn phi_x(&self, x: f64) -> f64 {
        sech2(x)
    }
    fn varphi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn chi_x(&self, _x: f64) -> f64 {
        1.0
    }
    fn measure_free(&self) -> bool {
        self.beta == 0.0 && self.gamma == 0.0
    }
    fn family(&self) -> &str {
        "bounded_smooth"
    }
}

pub type StateFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Grad3Fn = Arc<dyn Fn(f64, f64, f64, f64) -> Grad3 + Send + Sync>;
type Grad2Fn = Arc<dyn Fn(f64, f64) -> Grad2 + Send + Sync>;

/// Coefficients supplied as callbacks. Every function defaults to zero;
/// derivatives not supplied are finite-differenced.
#[derive(Clone)]
pub struct ClosureModel {
    drift: StateFn,
    diffusion: StateFn,
    running: StateFn,
    terminal: TerminalFn,
    psi: ScalarFn,
    phi: ScalarFn,
    varphi: ScalarFn,
    chi: ScalarFn,
    drift_grad: Option<Grad3Fn>,
    diffusion_grad: Option<Grad3Fn>,
    running_grad: Option<Grad3Fn>,
    terminal_grad: Option<Grad2Fn>,
    measure_free: bool,
}

impl Default for ClosureModel {
    fn default() -> Self {
        let zero4: StateFn = Arc::new(|_, _, _, _| 0.0);
        let zero1: ScalarFn = Arc::new(|_| 0.0);
        Self {
            drift: zero4.clone(),
            diffusion: zero4.clone(),
            running: zero4,
            terminal: Arc::new(|_, _| 0.0),
            psi: zero1.clone(),
            phi: zero1.clone(),
            varphi: zero1.clone(),
            chi: zero1,
            drift_grad: None,
            diffusion_grad: None,
            running_grad: None,
            terminal_grad: None,
            measure_free: false,
        }
    }
}

impl fmt::Debug for ClosureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureModel").field("measure_free", &self.measure_free).finish_non_exhaustive()
    }
}

impl ClosureModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn drift(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn running_cost(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.running = Arc::new(f);
        self
    }

    pub fn terminal_cost(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn psi(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.psi = Arc::new(f);
        self
    }

    pub fn phi(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.phi = Arc::new(f);
        self
    }

    pub fn varphi(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.varphi = Arc::new(f);
        self
    }

    pub fn chi(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.chi = Arc::new(f);
        self
    }

    pub fn drift_grad(mut self, f: impl Fn(f64, f64, f64, f64) -> Grad3 + Send + Sync + 'static) -> Self {
        self.drift_grad = Some(Arc::new(f));
        self
    }

    pub fn diffusion_grad(mut self, f: impl Fn(f64, f64, f64, f64) -> Grad3 + Send + Sync + 'static) -> Self {
        self.diffusion_grad = Some(Arc::new(f));
        self
    }

    pub fn running_cost_grad(mut self, f: impl Fn(f64, f64, f64, f64) -> Grad3 + Send + Sync + 'static) -> Self {
        self.running_grad = Some(Arc::new(f));
        self
    }

    pub fn terminal_cost_grad(mut self, f: impl Fn(f64, f64) -> Grad2 + Send + Sync + 'static) -> Self {
        self.terminal_grad = Some(Arc::new(f));
        self
    }

    /// Declares that no coefficient reads its mean-field argument.
    pub fn measure_free(mut self, yes: bool) -> Self {
        self.measure_free = yes;
        self
    }
}

impl Coefficients for ClosureModel {
    fn drift(&self, t: f64, x: f64, y: f64, v: f64) -> f64 {
        (self.drift)(t, x, y, v)
    }
    fn diffusion(&self, t: f64, x: f64, y: f64, v: f64) -> f64 {
        (self.diffusion)(t, x, y, v)
    }
    fn running_cost(&self, t: f64, x: f64, y: f64, v: f64) -> f64 {
        (self.running)(t, x, y, v)
    }
    fn terminal_cost(&self, x: f64, y: f64) -> f64 {
        (self.terminal)(x, y)
    }
    fn psi(&self, x: f64) -> f64 {
        (self.psi)(x)
    }
    fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }
    fn varphi(&self, x: f64) -> f64 {
        (self.varphi)(x)
    }
    fn chi(&self, x: f64) -> f64 {
        (self.chi)(x)
    }
    fn drift_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        match &self.drift_grad {
            Some(g) => g(t, x, y, v),
            None => super::fd3(|x, y, v| self.drift(t, x, y, v), x, y, v),
        }
    }
    fn diffusion_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        match &self.diffusion_grad {
            Some(g) => g(t, x, y, v),
            None => super::fd3(|x, y, v| self.diffusion(t, x, y, v), x, y, v),
        }
    }
    fn running_cost_grad(&self, t: f64, x: f64, y: f64, v: f64) -> Grad3 {
        match &self.running_grad {
            Some(g) => g(t, x, y, v),
            None => super::fd3(|x, y, v| self.running_cost(t, x, y, v), x, y, v),
        }
    }
    fn terminal_cost_grad(&self, x: f64, y: f64) -> Grad2 {
        match &self.terminal_grad {
            Some(g) => g(x, y),
            None => super::fd2(|x, y| self.terminal_cost(x, y), x, y),
        }
    }
    fn measure_free(&self) -> bool {
        self.measure_free
    }
}

/// Measure-linear coefficient `σ̃(t, x, ν) = ∫ η(t, x, y) ν(dy)` with a
/// recorded Lipschitz constant of `η` in `(x, y)`.
#[derive(Clone)]
pub struct LinearMeasureCoefficient {
    eta: StateKernel,
    pub lipschitz: f64,
}

type StateKernel = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

impl fmt::Debug for LinearMeasureCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMeasureCoefficient").field("lipschitz", &self.lipschitz).finish_non_exhaustive()
    }
}

impl LinearMeasureCoefficient {
    pub fn new(eta: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static, lipschitz: f64) -> Self {
        Self { eta: Arc::new(eta), lipschitz }
    }

    pub fn kernel(&self, t: f64, x: f64, y: f64) -> f64 {
        (self.eta)(t, x, y)
    }

    /// Integral against the empirical measure of `atoms`.
    pub fn against_atoms(&self, t: f64, x: f64, atoms: &[f64]) -> f64 {
        atoms.iter().map(|&y| (self.eta)(t, x, y)).sum::<f64>() / atoms.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cosh_is_stable_for_large_arguments() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert_eq!(log_cosh(-2.0), log_cosh(2.0));
    }

    #[test]
    fn linear_kernel_matches_direct_sum() {
        let k = LinearMeasureCoefficient::new(|_, x, y| 0.5 * (y - x), 0.5);
        let atoms = [1.0, 2.0, 6.0];
        assert!((k.against_atoms(0.0, 1.0, &atoms) - 0.5 * (3.0 - 1.0)).abs() < 1e-15);
    }
}
