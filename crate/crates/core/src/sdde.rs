//! Forward Euler–Maruyama for controlled stochastic delayed equations and
//! coefficient diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::brownian::BrownianDriver;
use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::model::{norm, CoefficientSet};

/// A deterministic initial path sampled on the grid indices `-delay_steps..=0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSegment {
    dim: usize,
    delay_steps: usize,
    values: Vec<f64>,
}

impl InitialSegment {
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(grid: &TimeGrid, dim: usize, f: F) -> Result<Self> {
        let m = grid.delay_steps();
        let mut values = Vec::with_capacity((m + 1) * dim);
        for k in grid.first_index()..=0 {
            let v = f(grid.time(k));
            if v.len() != dim {
                return Err(Error::ShapeMismatch(format!("initial value of length {}, expected {dim}", v.len())));
            }
            values.extend(v);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial segment has non-finite samples".into()));
        }
        Ok(Self { dim, delay_steps: m, values })
    }

    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub fn zeros(grid: &TimeGrid, dim: usize) -> Self {
        Self { dim, delay_steps: grid.delay_steps(), values: vec![0.0; (grid.delay_steps() + 1) * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// Sample at grid index `k` in `-delay_steps..=0`.
    #[inline]
    pub fn at(&self, k: isize) -> &[f64] {
        let j = (k + self.delay_steps as isize) as usize;
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// The value at time zero.
    pub fn origin(&self) -> &[f64] {
        self.at(0)
    }
}

/// Explicit Euler–Maruyama with left-point coefficients:
///
/// `X[i+1] = X[i] + b(t_i, X[i], X[i-m], u[i]) dt + sigma(t_i, X[i], X[i-m], u[i]) dW[i]`,
///
/// with the segment `-delay_steps..=0` copied from `eta`. The control `u`
/// must cover the step indices `0..N`.
pub fn solve_sdde<M: CoefficientSet + ?Sized>(
    model: &M,
    eta: &InitialSegment,
    control: &PathEnsemble,
    driver: &BrownianDriver,
) -> Result<PathEnsemble> {
    let g = *driver.grid();
    let n = model.state_dim();
    let d = model.noise_dim();
    let nu = model.control_dim();
    if eta.dim() != n || eta.delay_steps() != g.delay_steps() {
        return Err(Error::ShapeMismatch("initial segment does not match model/grid".into()));
    }
    if driver.dim() != d {
        return Err(Error::ShapeMismatch(format!("driver has {} coordinates, model needs {d}", driver.dim())));
    }
    if control.dim() != nu
        || control.n_paths() != driver.n_paths()
        || control.first_index() > 0
        || control.last_index() < g.steps() as isize - 1
    {
        return Err(Error::ShapeMismatch("control does not cover all steps of all paths".into()));
    }
    let m = g.delay_steps();
    let dt = g.dt();
    let np = driver.n_paths();
    let mut x = PathEnsemble::zeros(np, g.first_index(), g.steps() as isize, n);
    for k in g.first_index()..=0 {
        for p in 0..np {
            x.at_mut(p, k).copy_from_slice(eta.at(k));
        }
    }
    let mut next = vec![0.0; np * n];
    for i in 0..g.steps() {
        let k = i as isize;
        let t = g.time(k);
        let xs = &x;
        exec::for_each_block(&mut next, n, |first, block| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * d];
            for (j, out) in block.chunks_mut(n).enumerate() {
                let p = first + j;
                let xi = xs.at(p, k);
                let xd = xs.at(p, k - m as isize);
                let u = control.at(p, k);
                model.drift(t, xi, xd, u, &mut b);
                model.diffusion(t, xi, xd, u, &mut s);
                let dw = driver.increment(p, i);
                for r in 0..n {
                    let mut v = xi[r] + b[r] * dt;
                    for c in 0..d {
                        v += s[r * d + c] * dw[c];
                    }
                    out[r] = v;
                }
            }
        });
        x.set_column(k + 1, &next);
    }
    if let Some((step, path)) = x.first_non_finite() {
        return Err(Error::NonFiniteState { step, path });
    }
    Ok(x)
}

/// Constant control `value` on every step of every path.
pub fn constant_control(grid: &TimeGrid, n_paths: usize, value: &[f64]) -> PathEnsemble {
    PathEnsemble::from_fn(n_paths, 0, grid.steps() as isize - 1, value.len(), |_, _, out| {
        out.copy_from_slice(value)
    })
}

/// Empirical Lipschitz and inversion-modulus diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    /// max `|b(z) - b(z')| / (|dx| + |dx_d| + |du|)` over probe pairs.
    pub drift_ratio: f64,
    /// Same ratio for the diffusion (Frobenius norm).
    pub diffusion_ratio: f64,
    /// min `|sigma(u) - sigma(u')| / |u - u'|` at fixed `(t, x, x_d)`.
    pub inversion_ratio: f64,
    /// Set when `inversion_ratio < alpha / 2`.
    pub inversion_violated: bool,
}

/// Samples `n_probes` random argument pairs (standard normal coordinates,
/// `t` uniform on `[0, 1]`) and reports the observed ratios.
pub fn lipschitz_probe<M: CoefficientSet + ?Sized>(model: &M, n_probes: usize, seed: u64) -> Result<LipschitzReport> {
    if n_probes < 2 {
        return Err(Error::InvalidArgument("lipschitz_probe needs at least 2 probes".into()));
    }
    let n = model.state_dim();
    let nu = model.control_dim();
    let nd = n * model.noise_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
    let mut report =
        LipschitzReport { drift_ratio: 0.0, diffusion_ratio: 0.0, inversion_ratio: f64::INFINITY, inversion_violated: false };
    let (mut b1, mut b2) = (vec![0.0; n], vec![0.0; n]);
    let (mut s1, mut s2) = (vec![0.0; nd], vec![0.0; nd]);
    for k in 0..n_probes {
        let t = (k as f64 + 0.5) / n_probes as f64;
        let (x1, y1, u1) = (normal(n), normal(n), normal(nu));
        let (x2, y2, u2) = (normal(n), normal(n), normal(nu));
        let denom = dist(&x1, &x2) + dist(&y1, &y2) + dist(&u1, &u2);
        model.drift(t, &x1, &y1, &u1, &mut b1);
        model.drift(t, &x2, &y2, &u2, &mut b2);
        model.diffusion(t, &x1, &y1, &u1, &mut s1);
        model.diffusion(t, &x2, &y2, &u2, &mut s2);
        if denom > 0.0 {
            report.drift_ratio = report.drift_ratio.max(dist(&b1, &b2) / denom);
            report.diffusion_ratio = report.diffusion_ratio.max(dist(&s1, &s2) / denom);
        }
        model.diffusion(t, &x1, &y1, &u2, &mut s2);
        let du = dist(&u1, &u2);
        if du > 0.0 {
            report.inversion_ratio = report.inversion_ratio.min(dist(&s1, &s2) / du);
        }
    }
    let alpha = model.inversion_modulus();
    report.inversion_violated = !(alpha > 0.0) || report.inversion_ratio < 0.5 * alpha;
    Ok(report)
}

/// Largest relative error `|sigma^-1(sigma(u)) - u| / (1 + |u|)` on random probes.
pub fn inversion_roundtrip_error<M: CoefficientSet + ?Sized>(model: &M, n_probes: usize, seed: u64) -> f64 {
    let n = model.state_dim();
    let nu = model.control_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut q = vec![0.0; nu];
    let mut back = vec![0.0; nu];
    for k in 0..n_probes {
        let t = (k as f64 + 0.5) / n_probes.max(1) as f64;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..nu).map(|_| rng.sample(StandardNormal)).collect();
        model.diffusion(t, &x, &y, &u, &mut q);
        model.diffusion_inverse(t, &x, &y, &q, &mut back);
        worst = worst.max(dist(&back, &u) / (1.0 + norm(&u)));
    }
    worst
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        a: [f64; 3],
        b: [f64; 3],
    }

    impl CoefficientSet for Linear {
        fn state_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = self.a[0] * x[0] + self.a[1] * xd[0] + self.a[2] * u[0];
        }
        fn diffusion(&self, _t: f64, x: &[f64], xd: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = self.b[0] * x[0] + self.b[1] * xd[0] + self.b[2] * u[0];
        }
        fn terminal_cost(&self, x: &[f64]) -> f64 {
            0.5 * x[0] * x[0]
        }
        fn lipschitz_bound(&self) -> f64 {
            self.a.iter().chain(&self.b).map(|v| v.abs()).sum()
        }
        fn inversion_modulus(&self) -> f64 {
            self.b[2].abs()
        }
    }

    #[test]
    fn frozen_dynamics_stay_constant() {
        let g = TimeGrid::new(1.0, 0.25, 16).unwrap();
        let drv = BrownianDriver::sample(g, 20, 1, 1).unwrap();
        let m = Linear { a: [0.0; 3], b: [0.0; 3] };
        let eta = InitialSegment::constant(&g, &[3.5]).unwrap();
        let u = constant_control(&g, 20, &[0.7]);
        let x = solve_sdde(&m, &eta, &u, &drv).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn initial_segment_copied_bitwise() {
        let g = TimeGrid::new(1.0, 0.25, 16).unwrap();
        let drv = BrownianDriver::sample(g, 4, 1, 1).unwrap();
        let m = Linear { a: [0.3, -0.2, 0.1], b: [0.2, 0.1, 0.5] };
        let eta = InitialSegment::from_fn(&g, 1, |t| vec![(3.0 * t).sin() + 0.1]).unwrap();
        let u = constant_control(&g, 4, &[0.1]);
        let x = solve_sdde(&m, &eta, &u, &drv).unwrap();
        for p in 0..4 {
            for k in g.first_index()..=0 {
                assert_eq!(x.at(p, k), eta.at(k));
            }
        }
    }

    #[test]
    fn explosion_is_reported_with_first_step() {
        let g = TimeGrid::new(1.0, 0.5, 10).unwrap();
        let drv = BrownianDriver::sample(g, 3, 1, 1).unwrap();
        let m = Linear { a: [1e200, 0.0, 0.0], b: [0.0, 0.0, 1.0] };
        let eta = InitialSegment::constant(&g, &[1.0]).unwrap();
        let u = constant_control(&g, 3, &[0.0]);
        match solve_sdde(&m, &eta, &u, &drv) {
            Err(Error::NonFiniteState { step, .. }) => assert_eq!(step, 2),
            other => panic!("expected NonFiniteState, got {other:?}"),
        }
    }

    #[test]
    fn linear_lipschitz_bounds() {
        let m = Linear { a: [0.3, -0.7, 1.2], b: [0.1, 0.2, 0.5] };
        let r = lipschitz_probe(&m, 500, 3).unwrap();
        assert!(r.drift_ratio <= 0.3 + 0.7 + 1.2 + 1e-9);
        assert!((r.inversion_ratio - 0.5).abs() < 1e-9);
        assert!(!r.inversion_violated);
    }

    #[test]
    fn control_free_diffusion_flags_violation() {
        let m = Linear { a: [0.3, -0.7, 1.2], b: [0.1, 0.2, 0.0] };
        let r = lipschitz_probe(&m, 50, 3).unwrap();
        assert_eq!(r.inversion_ratio, 0.0);
        assert!(r.inversion_violated);
        assert!(lipschitz_probe(&m, 1, 3).is_err());
    }

    #[test]
    fn newton_roundtrip_on_linear_model() {
        let m = Linear { a: [0.3, -0.7, 1.2], b: [0.1, 0.2, 0.5] };
        assert!(inversion_roundtrip_error(&m, 200, 9) < 1e-8);
    }
}
