//! Desk-scale quality checks: seam visibility, mask agreement, and noise statistics.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, Mask};

/// A line between two adjacent pixel columns or rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Between columns `x - 1` and `x`.
    Column(usize),
    /// Between rows `y - 1` and `y`.
    Row(usize),
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Column(x) => write!(f, "col {x}"),
            Boundary::Row(y) => write!(f, "row {y}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeamReport {
    pub boundaries: Vec<Boundary>,
    /// Mean over every boundary pixel pair.
    pub mean: f64,
    /// Mean for each boundary, in input order.
    pub per_boundary: Vec<f64>,
}

/// Mean absolute difference across each boundary, averaged over channels.
pub fn seam_score(grid: &LatentGrid, boundaries: &[Boundary]) -> Result<SeamReport> {
    let (h, w, c) = grid.dims();
    let mut per_boundary = Vec::with_capacity(boundaries.len());
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for &b in boundaries {
        let (count, sum) = match b {
            Boundary::Column(x) if x >= 1 && x < w => {
                let mut s = 0.0f64;
                for r in 0..h {
                    for k in 0..c {
                        s += (grid.get(r, x, k) as f64 - grid.get(r, x - 1, k) as f64).abs();
                    }
                }
                (h, s / c as f64)
            }
            Boundary::Row(y) if y >= 1 && y < h => {
                let mut s = 0.0f64;
                for col in 0..w {
                    for k in 0..c {
                        s += (grid.get(y, col, k) as f64 - grid.get(y - 1, col, k) as f64).abs();
                    }
                }
                (w, s / c as f64)
            }
            _ => {
                return Err(Error::range(
                    "boundary",
                    format!("{b} is not interior to a {h}x{w} grid"),
                ))
            }
        };
        per_boundary.push(sum / count as f64);
        total += sum;
        pairs += count;
    }
    let mean = if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    };
    Ok(SeamReport {
        boundaries: boundaries.to_vec(),
        mean,
        per_boundary,
    })
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(pred: &Mask, truth: &Mask) -> Result<f64> {
    pred.ensure_same_dims(truth)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(truth.data()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixels whose largest per-channel distance to `color` is at most `tol`.
///
/// A single-entry colour applies to every channel.
pub fn foreground_threshold(grid: &LatentGrid, color: &[f32], tol: f32) -> Result<Mask> {
    let (h, w, c) = grid.dims();
    if color.len() != 1 && color.len() != c {
        return Err(Error::Shape(format!(
            "colour has {} entries for a {c}-channel grid",
            color.len()
        )));
    }
    let color_at = |k: usize| if color.len() == 1 { color[0] } else { color[k] };
    Mask::from_fn(h, w, |r, col| {
        (0..c).all(|k| (grid.get(r, col, k) - color_at(k)).abs() <= tol)
    })
}

/// Sample mean and unbiased sample variance over every entry.
pub fn gaussian_stats(grid: &LatentGrid) -> (f64, f64) {
    let n = grid.data().len() as f64;
    let mean = grid.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = grid.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}
