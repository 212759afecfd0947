use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::PathEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::TimeGrid;

/// Brownian increments `dW[step][path][coord]` on the steps of `[0, T]`.
///
/// Every path draws from its own ChaCha8 stream (`set_stream(path)`) of the
/// generator seeded with `seed`, so the increments depend only on
/// `(seed, shape)` and never on scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianDriver {
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    seed: u64,
    increments: Vec<f64>,
}

impl BrownianDriver {
    pub fn sample(grid: TimeGrid, n_paths: usize, dim: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 || dim == 0 {
            return Err(Error::InvalidArgument("need at least one path and one Brownian coordinate".into()));
        }
        let steps = grid.steps();
        let sd = grid.dt().sqrt();
        let mut by_path = vec![0.0; n_paths * steps * dim];
        exec::for_each_row(&mut by_path, steps * dim, |p, row| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        });
        let mut increments = vec![0.0; n_paths * steps * dim];
        exec::for_each_row(&mut increments, n_paths * dim, |i, col| {
            for (p, out) in col.chunks_mut(dim).enumerate() {
                let o = (p * steps + i) * dim;
                out.copy_from_slice(&by_path[o..o + dim]);
            }
        });
        Ok(Self { grid, n_paths, dim, seed, increments })
    }

    /// Wraps externally produced increments laid out `[step][path][coord]`.
    pub fn from_increments(grid: TimeGrid, n_paths: usize, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != n_paths * grid.steps() * dim || n_paths == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} increments for {n_paths} paths x {} steps x {dim}",
                increments.len(),
                grid.steps()
            )));
        }
        Ok(Self { grid, n_paths, dim, seed: 0, increments })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let o = (step * self.n_paths + path) * self.dim;
        &self.increments[o..o + self.dim]
    }

    /// Increments of all paths on one step, `n_paths * dim` numbers.
    #[inline]
    pub fn step_increments(&self, step: usize) -> &[f64] {
        let w = self.n_paths * self.dim;
        &self.increments[step * w..(step + 1) * w]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W` itself on `[-delay, T]`, identically zero on the initial segment.
    pub fn brownian_path(&self) -> PathEnsemble {
        let g = self.grid;
        let mut w = PathEnsemble::zeros(self.n_paths, g.first_index(), g.steps() as isize, self.dim);
        for i in 0..g.steps() {
            let k = i as isize;
            let mut col = w.column(k);
            for (c, v) in col.iter_mut().zip(self.step_increments(i)) {
                *c += v;
            }
            w.set_column(k + 1, &col);
        }
        w
    }

    /// `W(T)` per path.
    pub fn terminal(&self, path: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for i in 0..self.grid.steps() {
            for (a, b) in w.iter_mut().zip(self.increment(path, i)) {
                *a += b;
            }
        }
        w
    }

    /// The same Brownian paths on a grid with `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let g = self.grid;
        if factor == 0 || g.steps() % factor != 0 {
            return Err(Error::InvalidArgument(format!("cannot coarsen {} steps by {factor}", g.steps())));
        }
        let coarse = TimeGrid::new(g.horizon(), g.delay(), g.steps() / factor)?;
        let d = self.dim;
        let w = self.n_paths * d;
        let mut inc = vec![0.0; coarse.steps() * w];
        exec::for_each_row(&mut inc, w, |j, col| {
            for s in 0..factor {
                for (o, v) in col.iter_mut().zip(self.step_increments(j * factor + s)) {
                    *o += v;
                }
            }
        });
        Ok(Self { grid: coarse, n_paths: self.n_paths, dim: d, seed: self.seed, increments: inc })
    }
}
