//! Scalar coefficient set built from config expressions.

use delaymp::CoefficientSet;

use crate::config::{expression, ConfigError};
use crate::expr::{Expr, Var, Vars};

#[derive(Debug, Clone)]
pub struct ExprModel {
    drift: Expr,
    diffusion: Expr,
    running_cost: Option<Expr>,
    terminal_cost: Expr,
    inverse: Option<Expr>,
    lipschitz: f64,
    modulus: f64,
}

impl ExprModel {
    pub fn new(
        drift: &str,
        diffusion: &str,
        running_cost: Option<&str>,
        terminal_cost: &str,
        inverse: Option<&str>,
        lipschitz: f64,
        modulus: f64,
    ) -> Result<Self, ConfigError> {
        use Var::*;
        if !(lipschitz > 0.0 && lipschitz.is_finite()) || !(modulus > 0.0 && modulus.is_finite()) {
            return Err(ConfigError::Invalid("lipschitz and inversion_modulus must be positive and finite".into()));
        }
        Ok(Self {
            drift: expression(drift, &[T, X, XDelay, U])?,
            diffusion: expression(diffusion, &[T, X, XDelay, U])?,
            running_cost: running_cost.map(|s| expression(s, &[T, X, U])).transpose()?,
            terminal_cost: expression(terminal_cost, &[X])?,
            inverse: inverse.map(|s| expression(s, &[T, X, XDelay, Q])).transpose()?,
            lipschitz,
            modulus,
        })
    }
}

impl CoefficientSet for ExprModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &[f64], x_delay: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.drift.eval(&Vars { t, x: x[0], x_d: x_delay[0], u: u[0], q: 0.0 });
    }

    fn diffusion(&self, t: f64, x: &[f64], x_delay: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.diffusion.eval(&Vars { t, x: x[0], x_d: x_delay[0], u: u[0], q: 0.0 });
    }

    fn running_cost(&self, t: f64, x: &[f64], u: &[f64]) -> f64 {
        self.running_cost.as_ref().map_or(0.0, |e| e.eval(&Vars { t, x: x[0], u: u[0], ..Vars::default() }))
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.terminal_cost.eval(&Vars { x: x[0], ..Vars::default() })
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    fn inversion_modulus(&self) -> f64 {
        self.modulus
    }

    fn diffusion_inverse(&self, t: f64, x: &[f64], x_delay: &[f64], q: &[f64], out: &mut [f64]) -> f64 {
        match &self.inverse {
            Some(inv) => {
                out[0] = inv.eval(&Vars { t, x: x[0], x_d: x_delay[0], q: q[0], u: 0.0 });
                let mut s = [0.0];
                self.diffusion(t, x, x_delay, out, &mut s);
                (s[0] - q[0]).abs()
            }
            None => delaymp::model::newton_inverse(self, t, x, x_delay, q, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_and_newton_inverses_agree() {
        let closed = ExprModel::new("-x + u", "0.5 * x_d + 2 * u", None, "x * x / 2", Some("(q - 0.5 * x_d) / 2"), 3.0, 2.0)
            .unwrap();
        let newton = ExprModel::new("-x + u", "0.5 * x_d + 2 * u", None, "x * x / 2", None, 3.0, 2.0).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        let ra = closed.diffusion_inverse(0.3, &[1.0], &[0.4], &[0.9], &mut a);
        let rb = newton.diffusion_inverse(0.3, &[1.0], &[0.4], &[0.9], &mut b);
        assert!(ra < 1e-12 && rb < 1e-10);
        assert!((a[0] - b[0]).abs() < 1e-10);
        let (mut fa, mut fb) = ([0.0], [0.0]);
        closed.generator(0.3, &[1.0], &[0.4], &[0.9], &mut fa);
        newton.generator(0.3, &[1.0], &[0.4], &[0.9], &mut fb);
        assert!((fa[0] - fb[0]).abs() < 1e-9);
    }

    #[test]
    fn variables_are_checked_per_slot() {
        assert!(ExprModel::new("q", "u", None, "x", None, 1.0, 1.0).is_err());
        assert!(ExprModel::new("u", "u", None, "x_d", None, 1.0, 1.0).is_err());
        assert!(ExprModel::new("u", "u", Some("x_d"), "x", None, 1.0, 1.0).is_err());
        assert!(ExprModel::new("u", "u", None, "x", None, 0.0, 1.0).is_err());
    }
}
