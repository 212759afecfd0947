use crate::error::{Error, Result};
use crate::exec;

/// Monte Carlo sample paths of an `dim`-dimensional process on the grid
/// indices `first..=last`.
///
/// Storage is index-major: `values[((k - first) * n_paths + path) * dim + c]`,
/// so all paths at one grid index are contiguous. The solvers sweep the grid
/// one index at a time and regress across paths, which makes this the
/// cache-friendly order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    values: Vec<f64>,
    n_paths: usize,
    first: isize,
    last: isize,
    dim: usize,
}

impl PathEnsemble {
    pub fn zeros(n_paths: usize, first: isize, last: isize, dim: usize) -> Self {
        assert!(last >= first, "empty index range {first}..={last}");
        let len = (last - first + 1) as usize;
        Self { values: vec![0.0; n_paths * len * dim], n_paths, first, last, dim }
    }

    /// Builds an ensemble by calling `f(path, index, out)` at every point.
    pub fn from_fn<F>(n_paths: usize, first: isize, last: isize, dim: usize, f: F) -> Self
    where
        F: Fn(usize, isize, &mut [f64]) + Sync + Send,
    {
        let mut e = Self::zeros(n_paths, first, last, dim);
        if n_paths == 0 {
            return e;
        }
        exec::for_each_block(&mut e.values, dim, |start, block| {
            for (j, out) in block.chunks_mut(dim.max(1)).enumerate() {
                let r = start + j;
                f(r % n_paths, first + (r / n_paths) as isize, out);
            }
        });
        e
    }

    /// Wraps raw index-major storage.
    pub fn from_vec(values: Vec<f64>, n_paths: usize, first: isize, last: isize, dim: usize) -> Result<Self> {
        let len = (last - first + 1).max(0) as usize;
        if last < first || values.len() != n_paths * len * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n_paths} paths x {len} points x {dim}",
                values.len()
            )));
        }
        Ok(Self { values, n_paths, first, last, dim })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn first_index(&self) -> isize {
        self.first
    }

    pub fn last_index(&self) -> isize {
        self.last
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid points per path.
    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n_paths == 0
    }

    pub fn contains(&self, k: isize) -> bool {
        k >= self.first && k <= self.last
    }

    #[inline]
    fn offset(&self, path: usize, k: isize) -> usize {
        debug_assert!(self.contains(k), "index {k} outside {}..={}", self.first, self.last);
        debug_assert!(path < self.n_paths);
        ((k - self.first) as usize * self.n_paths + path) * self.dim
    }

    #[inline]
    pub fn at(&self, path: usize, k: isize) -> &[f64] {
        let o = self.offset(path, k);
        &self.values[o..o + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, path: usize, k: isize) -> &mut [f64] {
        let o = self.offset(path, k);
        &mut self.values[o..o + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// All paths at index `k`, `n_paths * dim` numbers.
    #[inline]
    pub fn column_slice(&self, k: isize) -> &[f64] {
        let w = self.n_paths * self.dim;
        let o = self.offset(0, k);
        &self.values[o..o + w]
    }

    #[inline]
    pub fn column_slice_mut(&mut self, k: isize) -> &mut [f64] {
        let w = self.n_paths * self.dim;
        let o = self.offset(0, k);
        &mut self.values[o..o + w]
    }

    /// Copies all paths at index `k` into a `n_paths * dim` buffer.
    pub fn column(&self, k: isize) -> Vec<f64> {
        self.column_slice(k).to_vec()
    }

    /// Writes a `n_paths * dim` buffer into index `k`.
    pub fn set_column(&mut self, k: isize, col: &[f64]) {
        self.column_slice_mut(k).copy_from_slice(col);
    }

    /// Sample mean over paths at index `k`.
    pub fn mean_at(&self, k: isize) -> Vec<f64> {
        let n = self.n_paths;
        let s = exec::chunked_sum(n, self.dim, |r, acc| {
            for p in r {
                for (a, v) in acc.iter_mut().zip(self.at(p, k)) {
                    *a += v;
                }
            }
        });
        s.into_iter().map(|v| v / n.max(1) as f64).collect()
    }

    /// Sample standard deviation over paths at index `k`, per coordinate.
    pub fn std_at(&self, k: isize) -> Vec<f64> {
        let mean = self.mean_at(k);
        let n = self.n_paths;
        let s = exec::chunked_sum(n, self.dim, |r, acc| {
            for p in r {
                for ((a, v), m) in acc.iter_mut().zip(self.at(p, k)).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        });
        s.into_iter().map(|v| (v / (n.max(2) - 1) as f64).sqrt()).collect()
    }

    /// First `(index, path)` holding a NaN or infinity, scanning by index.
    pub fn first_non_finite(&self) -> Option<(isize, usize)> {
        let d = self.dim.max(1);
        let pos = self.values.iter().position(|v| !v.is_finite())? / d;
        Some((self.first + (pos / self.n_paths) as isize, pos % self.n_paths))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Restriction to `first..=last`.
    pub fn window(&self, first: isize, last: isize) -> Result<Self> {
        if first < self.first || last > self.last || last < first {
            return Err(Error::ShapeMismatch(format!(
                "window {first}..={last} outside {}..={}",
                self.first, self.last
            )));
        }
        Ok(Self::from_fn(self.n_paths, first, last, self.dim, |p, k, out| {
            out.copy_from_slice(self.at(p, k))
        }))
    }
}
