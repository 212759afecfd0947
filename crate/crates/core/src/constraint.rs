use crate::error::{Error, Result};

/// A closed convex subset of `R^n` with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Whole { dim: usize },
    /// Per-coordinate `[lo, hi]`; infinite bounds are allowed.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{x : <w, x> >= beta}`.
    HalfSpace { w: Vec<f64>, beta: f64 },
}

impl ConvexSet {
    pub fn whole(dim: usize) -> Self {
        ConvexSet::Whole { dim }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::ShapeMismatch("box bounds must have equal, non-zero length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || l.is_nan() || h.is_nan() || *l == f64::INFINITY || *h == f64::NEG_INFINITY) {
            return Err(Error::EmptyConstraintSet(format!("box [{lo:?}, {hi:?}] is empty")));
        }
        Ok(ConvexSet::Box { lo, hi })
    }

    /// `[lo, inf)` in one dimension.
    pub fn lower_bound(lo: f64) -> Result<Self> {
        Self::boxed(vec![lo], vec![f64::INFINITY])
    }

    pub fn half_space(w: Vec<f64>, beta: f64) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite()) || !beta.is_finite() {
            return Err(Error::InvalidArgument("half-space normal and offset must be finite".into()));
        }
        if w.iter().all(|&v| v == 0.0) {
            if beta > 0.0 {
                return Err(Error::EmptyConstraintSet(format!("<0, x> >= {beta} has no solution")));
            }
            return Ok(ConvexSet::Whole { dim: w.len() });
        }
        Ok(ConvexSet::HalfSpace { w, beta })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Whole { dim } => *dim,
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::HalfSpace { w, .. } => w.len(),
        }
    }

    /// Checks the emptiness conditions again, for sets built field by field.
    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Whole { .. } => Ok(()),
            ConvexSet::Box { lo, hi } => Self::boxed(lo.clone(), hi.clone()).map(|_| ()),
            ConvexSet::HalfSpace { w, beta } => Self::half_space(w.clone(), *beta).map(|_| ()),
        }
    }

    /// Euclidean projection. The result is a member of the set, so projecting
    /// it again returns it unchanged.
    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        match self {
            ConvexSet::Whole { .. } => {}
            ConvexSet::Box { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = o.clamp(*l, *h);
                }
            }
            ConvexSet::HalfSpace { w, beta } => {
                let s = dot(w, x);
                if s >= *beta {
                    return;
                }
                let ww = dot(w, w);
                let mut step = (beta - s) / ww;
                // Rounding can leave the image a hair outside; nudge until it is a member.
                for _ in 0..64 {
                    for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
                        *o = xi + step * wi;
                    }
                    if dot(w, out) >= *beta {
                        return;
                    }
                    step += step.abs().max(f64::MIN_POSITIVE) * 4.0 * f64::EPSILON;
                }
            }
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.project(x, &mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ConvexSet::Whole { .. } => true,
            ConvexSet::Box { lo, hi } => x.iter().zip(lo).zip(hi).all(|((v, l), h)| *v >= *l && *v <= *h),
            ConvexSet::HalfSpace { w, beta } => dot(w, x) >= *beta,
        }
    }

    /// Default boundary band `1e-6 (1 + |x|)`.
    pub fn boundary_tolerance(x: &[f64]) -> f64 {
        1e-6 * (1.0 + dot(x, x).sqrt())
    }

    /// Whether `x` lies within `tol` of the boundary.
    pub fn on_boundary(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ConvexSet::Whole { .. } => false,
            ConvexSet::Box { lo, hi } => {
                x.iter().zip(lo).zip(hi).any(|((v, l), h)| (v - l).abs() <= tol || (h - v).abs() <= tol)
            }
            ConvexSet::HalfSpace { w, beta } => (dot(w, x) - beta).abs() <= tol * dot(w, w).sqrt(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection() {
        let k = ConvexSet::boxed(vec![0.0, -1.0], vec![1.0, f64::INFINITY]).unwrap();
        assert_eq!(k.projected(&[2.0, -3.0]), vec![1.0, -1.0]);
        assert!(k.on_boundary(&[1.0, 5.0], 1e-9));
        assert!(!k.on_boundary(&[0.5, 5.0], 1e-9));
        assert!(matches!(ConvexSet::boxed(vec![1.0], vec![0.0]), Err(Error::EmptyConstraintSet(_))));
    }

    #[test]
    fn half_space_projection_is_member() {
        let k = ConvexSet::half_space(vec![0.3, 0.7], 0.1).unwrap();
        let p = k.projected(&[-1.234567, -2.345678]);
        assert!(k.contains(&p));
        assert_eq!(k.projected(&p), p);
        assert!(k.on_boundary(&p, 1e-9));
        assert!(ConvexSet::half_space(vec![0.0], 1.0).is_err());
    }
}
