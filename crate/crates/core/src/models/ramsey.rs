//! Stochastic production-consumption problem with delayed capital
//!
//! ```text
//! dX = (K y X(t-delay) - c) dt + (s0 X(t-delay) + s1 c) dW,
//! maximize E[ int e^{-rt} c^g / g dt + X(T) ].
//! ```
//!
//! The maximization is posed as minimizing the negated reward, so the
//! running cost is `-e^{-rt} c^g / g` and `phi(x) = -x`. Consumption is
//! recovered as `c = (q - s0 x_d) / s1`; negative values are clipped at zero
//! inside the utility, whose slope is 0 there. The marginal utility
//! `c^{g-1}` blows up at zero and is capped.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::constraint::ConvexSet;
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, Partials};

pub const DEFAULT_UTILITY_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct RamseyParams {
    /// Production constant `K`.
    pub k_prod: f64,
    /// Labor level `y`.
    pub labor: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    /// Bond rate.
    pub r: f64,
    /// Risk parameter in `(0, 1)`.
    pub gamma: f64,
    /// Admissible terminal capital.
    pub admissible: ConvexSet,
    /// Cap on the marginal utility `c^{gamma-1}`.
    pub utility_cap: f64,
}

#[derive(Debug)]
pub struct RamseyModel {
    params: RamseyParams,
    cap_hit: AtomicBool,
}

impl Clone for RamseyModel {
    fn clone(&self) -> Self {
        RamseyModel { params: self.params.clone(), cap_hit: AtomicBool::new(self.cap_hit.load(Ordering::Relaxed)) }
    }
}

impl RamseyModel {
    pub fn new(params: RamseyParams) -> Result<Self> {
        let p = &params;
        if [p.k_prod, p.labor, p.sigma0, p.sigma1, p.r, p.gamma].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Ramsey parameters must be finite".into()));
        }
        if p.sigma1 == 0.0 {
            return Err(Error::DegenerateDiffusion("sigma1 = 0, consumption does not enter the diffusion".into()));
        }
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {}", p.gamma)));
        }
        if !(p.utility_cap > 0.0) {
            return Err(Error::InvalidArgument("utility cap must be positive".into()));
        }
        if p.admissible.dim() != 1 {
            return Err(Error::ShapeMismatch("the admissible set must be one-dimensional".into()));
        }
        p.admissible.validate()?;
        Ok(RamseyModel { params, cap_hit: AtomicBool::new(false) })
    }

    pub fn params(&self) -> &RamseyParams {
        &self.params
    }

    /// `K y`.
    pub fn productivity(&self) -> f64 {
        self.params.k_prod * self.params.labor
    }

    /// Consumption `(q - s0 x_d) / s1` implied by the diffusion coefficient.
    pub fn consumption(&self, x_delay: f64, q: f64) -> f64 {
        (q - self.params.sigma0 * x_delay) / self.params.sigma1
    }

    /// Whether the marginal-utility cap was reached at least once.
    pub fn cap_reached(&self) -> bool {
        self.cap_hit.load(Ordering::Relaxed)
    }

    fn marginal_utility(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return 0.0;
        }
        let v = c.powf(self.params.gamma - 1.0);
        if v > self.params.utility_cap {
            if !self.cap_hit.swap(true, Ordering::Relaxed) {
                log::warn!("marginal utility capped at {} (consumption {c:e})", self.params.utility_cap);
            }
            return self.params.utility_cap;
        }
        v
    }
}

impl CoefficientSet for RamseyModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, _x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.productivity() * xd[0] - u[0];
    }

    fn diffusion(&self, _t: f64, _x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.params.sigma0 * xd[0] + self.params.sigma1 * u[0];
    }

    fn running_cost(&self, t: f64, _x: &[f64], u: &[f64]) -> f64 {
        let c = u[0].max(0.0);
        -(-self.params.r * t).exp() * c.powf(self.params.gamma) / self.params.gamma
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        -x[0]
    }

    fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
    }

    fn lipschitz_bound(&self) -> f64 {
        self.productivity().abs() + 1.0 + self.params.sigma0.abs() + self.params.sigma1.abs()
    }

    fn inversion_modulus(&self) -> f64 {
        self.params.sigma1.abs()
    }

    fn diffusion_inverse(&self, _t: f64, _x: &[f64], xd: &[f64], q: &[f64], out: &mut [f64]) -> f64 {
        out[0] = self.consumption(xd[0], q[0]);
        (self.params.sigma0 * xd[0] + self.params.sigma1 * out[0] - q[0]).abs()
    }

    fn generator(&self, _t: f64, _x: &[f64], xd: &[f64], q: &[f64], out: &mut [f64]) {
        out[0] = -self.productivity() * xd[0] + self.consumption(xd[0], q[0]);
    }

    fn backward_running_cost(&self, t: f64, x: &[f64], xd: &[f64], q: &[f64]) -> f64 {
        self.running_cost(t, x, &[self.consumption(xd[0], q[0])])
    }

    fn backward_partials(&self, t: f64, _x: &[f64], xd: &[f64], q: &[f64], out: &mut Partials) {
        let p = &self.params;
        out.clear();
        out.f_xd[0] = -self.productivity() - p.sigma0 / p.sigma1;
        out.f_q[0] = 1.0 / p.sigma1;
        let mu = (-p.r * t).exp() * self.marginal_utility(self.consumption(xd[0], q[0]));
        out.l_q[0] = -mu / p.sigma1;
        out.l_xd[0] = mu * p.sigma0 / p.sigma1;
    }
}
