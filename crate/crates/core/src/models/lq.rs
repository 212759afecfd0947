//! Scalar delayed linear-quadratic problem
//!
//! ```text
//! dX = (A1 X + A2 X(t-delay) + A3 u) dt + (B1 X + B2 X(t-delay) + B3 u) dW,
//! J(u) = E[X(T)^2] / 2.
//! ```
//!
//! Substituting `u = (q - B1 x - B2 x_d) / B3` into `-b` gives the backward
//! generator `f = Ab1 x + Ab2 x_d + Ab3 q` with
//! `Ab1 = A3 B1 / B3 - A1`, `Ab2 = A3 B2 / B3 - A2`, `Ab3 = -A3 / B3`.

use crate::brownian::BrownianDriver;
use crate::bsde::TerminalControl;
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, Partials};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

/// Coefficients of the backward generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqBar {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl LqParams {
    pub fn new(a: [f64; 3], b: [f64; 3]) -> Self {
        LqParams { a1: a[0], a2: a[1], a3: a[2], b1: b[0], b2: b[1], b3: b[2] }
    }

    pub fn bar(&self) -> LqBar {
        LqBar {
            a1: self.a3 * self.b1 / self.b3 - self.a1,
            a2: self.a3 * self.b2 / self.b3 - self.a2,
            a3: -self.a3 / self.b3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqModel {
    params: LqParams,
    bar: LqBar,
}

impl LqModel {
    pub fn new(params: LqParams) -> Result<Self> {
        let all = [params.a1, params.a2, params.a3, params.b1, params.b2, params.b3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("LQ coefficients must be finite".into()));
        }
        if params.b3 == 0.0 {
            return Err(Error::DegenerateDiffusion("B3 = 0, the control does not enter the diffusion".into()));
        }
        Ok(LqModel { params, bar: params.bar() })
    }

    pub fn params(&self) -> &LqParams {
        &self.params
    }

    pub fn bar(&self) -> &LqBar {
        &self.bar
    }
}

impl CoefficientSet for LqModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        out[0] = p.a1 * x[0] + p.a2 * xd[0] + p.a3 * u[0];
    }

    fn diffusion(&self, _t: f64, x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
        let p = &self.params;
        out[0] = p.b1 * x[0] + p.b2 * xd[0] + p.b3 * u[0];
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        0.5 * x[0] * x[0]
    }

    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    fn lipschitz_bound(&self) -> f64 {
        let p = &self.params;
        [p.a1, p.a2, p.a3, p.b1, p.b2, p.b3].iter().map(|v| v.abs()).sum()
    }

    fn inversion_modulus(&self) -> f64 {
        self.params.b3.abs()
    }

    fn diffusion_inverse(&self, _t: f64, x: &[f64], xd: &[f64], q: &[f64], out: &mut [f64]) -> f64 {
        let p = &self.params;
        out[0] = (q[0] - p.b1 * x[0] - p.b2 * xd[0]) / p.b3;
        let back = p.b1 * x[0] + p.b2 * xd[0] + p.b3 * out[0];
        (back - q[0]).abs()
    }

    fn generator(&self, _t: f64, x: &[f64], xd: &[f64], q: &[f64], out: &mut [f64]) {
        out[0] = self.bar.a1 * x[0] + self.bar.a2 * xd[0] + self.bar.a3 * q[0];
    }

    fn backward_running_cost(&self, _t: f64, _x: &[f64], _xd: &[f64], _q: &[f64]) -> f64 {
        0.0
    }

    fn backward_partials(&self, _t: f64, _x: &[f64], _xd: &[f64], _q: &[f64], out: &mut Partials) {
        out.clear();
        out.f_x[0] = self.bar.a1;
        out.f_xd[0] = self.bar.a2;
        out.f_q[0] = self.bar.a3;
    }
}

/// Minimizer of `E[xi^2] / 2` subject to `E[Gamma xi] = a`,
/// `xi = a Gamma / E[Gamma^2]` with `Gamma = exp(Ab3 W_T + (Ab1 - Ab3^2 / 2) T)`
/// and `E[Gamma^2] = exp((2 Ab1 + Ab3^2) T)`. Valid only without delay in
/// the generator.
pub fn lq_closed_form_oracle(a: f64, params: &LqParams, driver: &BrownianDriver) -> Result<TerminalControl> {
    if params.b3 == 0.0 {
        return Err(Error::DegenerateDiffusion("B3 = 0".into()));
    }
    if driver.dim() != 1 {
        return Err(Error::ShapeMismatch("the LQ oracle is scalar".into()));
    }
    let bar = params.bar();
    if bar.a2 != 0.0 {
        return Err(Error::DelayPresent(bar.a2));
    }
    let t = driver.grid().horizon();
    let second = ((2.0 * bar.a1 + bar.a3 * bar.a3) * t).exp();
    Ok(TerminalControl::from_fn(driver.n_paths(), 1, |p, out| {
        let gamma = (bar.a3 * driver.terminal(p)[0] + (bar.a1 - 0.5 * bar.a3 * bar.a3) * t).exp();
        out[0] = a * gamma / second;
    }))
}

/// `Gamma` per path, the state-price density of the backward equation.
pub fn lq_gamma(params: &LqParams, driver: &BrownianDriver) -> Vec<f64> {
    let bar = params.bar();
    let t = driver.grid().horizon();
    (0..driver.n_paths())
        .map(|p| (bar.a3 * driver.terminal(p)[0] + (bar.a1 - 0.5 * bar.a3 * bar.a3) * t).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    #[test]
    fn bar_coefficients() {
        let b = LqParams::new([1.0, 0.0, 1.0], [0.0, 0.0, 1.0]).bar();
        assert_eq!((b.a1, b.a2, b.a3), (-1.0, 0.0, -1.0));
        let b = LqParams::new([1.0, 1.0, 1.0], [1.0, 1.0, 2.0]).bar();
        assert_eq!((b.a1, b.a2, b.a3), (-0.5, -0.5, -0.5));
    }

    #[test]
    fn degenerate_diffusion_rejected() {
        let p = LqParams::new([1.0, 0.0, 1.0], [0.3, 0.0, 0.0]);
        assert!(matches!(LqModel::new(p), Err(Error::DegenerateDiffusion(_))));
    }

    #[test]
    fn oracle_requires_no_delay() {
        let g = TimeGrid::new(1.0, 0.25, 8).unwrap();
        let drv = BrownianDriver::sample(g, 4, 1, 1).unwrap();
        let p = LqParams::new([0.1, 0.3, 0.2], [0.3, 0.0, 1.0]);
        assert!(matches!(lq_closed_form_oracle(1.0, &p, &drv), Err(Error::DelayPresent(_))));
    }

    #[test]
    fn oracle_deterministic_when_bar_vanishes() {
        let g = TimeGrid::new(1.0, 0.25, 8).unwrap();
        let drv = BrownianDriver::sample(g, 50, 1, 1).unwrap();
        // A1 = A3 = 0 gives Ab1 = Ab3 = 0.
        let p = LqParams::new([0.0, 0.0, 0.0], [0.4, 0.0, 1.0]);
        let xi = lq_closed_form_oracle(1.7, &p, &drv).unwrap();
        assert!(xi.values().iter().all(|&v| v == 1.7));
        let zero = lq_closed_form_oracle(0.0, &LqParams::new([0.2, 0.0, 0.5], [0.1, 0.0, 1.0]), &drv).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }
}
