//! Convex feasible sets and Euclidean projection.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::linalg;

/// A bounded convex feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexDomain {
    L2Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ConvexDomain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("center", "dimension must be at least 1"));
        }
        if !linalg::all_finite(&center) {
            return Err(invalid("center", "entries must be finite"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid("radius", format!("must be positive and finite, got {radius}")));
        }
        Ok(Self::L2Ball { center, radius })
    }

    /// Ball of the given radius centered at the origin.
    pub fn origin_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(vec![0.0; dim], radius)
    }

    pub fn cube(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(invalid("lower", "dimension must be at least 1"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(
                    "upper",
                    format!("need finite lower[{i}] < upper[{i}], got {lo} and {hi}"),
                ));
            }
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::L2Ball { center, .. } => center.len(),
            Self::Box { lower, .. } => lower.len(),
        }
    }

    /// Largest distance between two feasible points.
    pub fn diameter(&self) -> f64 {
        match self {
            Self::L2Ball { radius, .. } => 2.0 * radius,
            Self::Box { lower, upper } => linalg::dist(upper, lower),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        Ok(out)
    }

    /// Projects `x` in place. The caller guarantees the dimension matches.
    pub(crate) fn project_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            Self::L2Ball { center, radius } => {
                // Points already projected may sit a few ulps outside after
                // re-centering; the slack keeps projection idempotent.
                let r = linalg::dist(x, center);
                let slack = 4.0 * f64::EPSILON * (radius + linalg::norm(center));
                if r > radius + slack {
                    let shrink = radius / r;
                    for (xi, ci) in x.iter_mut().zip(center) {
                        *xi = ci + (*xi - ci) * shrink;
                    }
                }
            }
            Self::Box { lower, upper } => {
                for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
                    *xi = xi.clamp(*lo, *hi);
                }
            }
        }
    }

    /// Membership test with an absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Self::L2Ball { center, radius } => linalg::dist(x, center) <= radius + tol,
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((xi, lo), hi)| *xi >= lo - tol && *xi <= hi + tol),
        }
    }

    /// A canonical interior point (ball center or box midpoint).
    pub fn center(&self) -> Vec<f64> {
        match self {
            Self::L2Ball { center, .. } => center.clone(),
            Self::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(a, b)| 0.5 * (a + b)).collect()
            }
        }
    }
}
