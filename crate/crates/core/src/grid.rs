use crate::error::{Error, Result};

/// Uniform grid on `[-delay, horizon + delay]` whose step divides the delay.
///
/// Grid indices run from `-delay_steps` to `steps + delay_steps`; index `0`
/// is time zero and index `steps` is the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    delay: f64,
    steps: usize,
    dt: f64,
    delay_steps: usize,
}

impl TimeGrid {
    /// Relative tolerance on `delay / dt` being an integer.
    pub const COMMENSURATE_TOL: f64 = 1e-12;

    pub fn new(horizon: f64, delay: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::InvalidArgument(format!("delay must be positive, got {delay}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("at least one step is required".into()));
        }
        let dt = horizon / steps as f64;
        let ratio = delay * steps as f64 / horizon;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > Self::COMMENSURATE_TOL * ratio.max(1.0) {
            return Err(Error::NonCommensurateDelay { delay, step: dt });
        }
        Ok(Self { horizon, delay, steps, dt, delay_steps: rounded as usize })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    /// Number of steps on `[0, horizon]`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The delay measured in steps.
    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    pub fn first_index(&self) -> isize {
        -(self.delay_steps as isize)
    }

    pub fn last_index(&self) -> isize {
        (self.steps + self.delay_steps) as isize
    }

    /// Time of grid index `k`; exact at `0` and at the horizon.
    pub fn time(&self, k: isize) -> f64 {
        k as f64 * self.horizon / self.steps as f64
    }

    /// The same interval with `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.horizon, self.delay, self.steps * factor)
    }
}
