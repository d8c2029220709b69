//! Exact Euclidean projections onto the simplex family.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexFamily {
    /// `{x : ‖x‖₁ ≤ scale}`
    L1Ball,
    /// `{x : x ≥ 0, Σx = scale}`
    Simplex,
    /// `{x : 0 ≤ x ≤ 1, Σx = scale}`
    CappedSimplex,
}

/// Projects `z` onto the set selected by `kind`, scaled by `scale`.
pub fn project_simplex_family(kind: SimplexFamily, scale: f64, z: &[f64]) -> Result<Vec<f64>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Argument(format!(
            "simplex-family scale must be positive and finite, got {scale}"
        )));
    }
    let mut out = vec![0.0; z.len()];
    match kind {
        SimplexFamily::L1Ball => proj_l1_ball(z, scale, &mut out),
        SimplexFamily::Simplex => {
            if z.is_empty() {
                return Err(Error::Argument("cannot project onto an empty simplex".into()));
            }
            proj_simplex(z, scale, &mut out)
        }
        SimplexFamily::CappedSimplex => {
            if scale > z.len() as f64 {
                return Err(Error::Argument(format!(
                    "capped simplex with total {scale} is empty in dimension {}",
                    z.len()
                )));
            }
            proj_capped_simplex(z, scale, &mut out)
        }
    }
    Ok(out)
}

/// Sort-based projection onto `{x ≥ 0, Σx = scale}`. `z` must be nonempty.
pub(crate) fn proj_simplex(z: &[f64], scale: f64, out: &mut [f64]) {
    let mut sorted: Vec<f64> = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = (sorted[0] - scale) / 1.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - scale) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - theta).max(0.0);
    }
}

pub(crate) fn proj_l1_ball(z: &[f64], radius: f64, out: &mut [f64]) {
    let norm1: f64 = z.iter().map(|v| v.abs()).sum();
    if norm1 <= radius {
        out.copy_from_slice(z);
        return;
    }
    let abs: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    proj_simplex(&abs, radius, out);
    for (o, &v) in out.iter_mut().zip(z) {
        if v < 0.0 {
            *o = -*o;
        }
    }
}

/// Projection onto `{0 ≤ x ≤ 1, Σx = total}` by locating the shift λ with
/// `Σ clamp(z − λ, 0, 1) = total` among the sorted breakpoints `{z_i, z_i − 1}`.
/// Requires `0 ≤ total ≤ z.len()`.
pub(crate) fn proj_capped_simplex(z: &[f64], total: f64, out: &mut [f64]) {
    if z.is_empty() {
        return;
    }
    let mass = |lambda: f64| -> f64 { z.iter().map(|&v| (v - lambda).clamp(0.0, 1.0)).sum() };
    let mut bps: Vec<f64> = z.iter().flat_map(|&v| [v - 1.0, v]).collect();
    bps.sort_by(f64::total_cmp);

    // mass is non-increasing in λ; find the first breakpoint where it drops to `total`.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    if mass(bps[hi]) > total {
        // unreachable for total ≥ 0: mass(max z) = 0
        lo = hi;
    } else {
        while lo < hi {
            let mid = (lo + hi) / 2;
            if mass(bps[mid]) <= total {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
    }
    let j = lo;
    let lambda = if j == 0 {
        bps[0]
    } else {
        let (a, b) = (bps[j - 1], bps[j]);
        let (ma, mb) = (mass(a), mass(b));
        if ma == mb {
            b
        } else {
            a + (ma - total) / (ma - mb) * (b - a)
        }
    };
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - lambda).clamp(0.0, 1.0);
    }
}

/// Minimum over scalar `t` (optionally `t ≥ t_min`) of
/// `Σ (a − t)² + Σ (b − t)₊² + Σ (t − c)₊²`.
///
/// The derivative is monotone piecewise linear, so the minimizer is found
/// exactly by locating its sign change among the sorted hinge breakpoints.
pub(crate) fn min_hinged_quadratic(full: &[f64], upper: &[f64], lower: &[f64], t_min: Option<f64>) -> f64 {
    let half_grad = |t: f64| -> f64 {
        full.iter().map(|&a| t - a).sum::<f64>() - upper.iter().map(|&b| (b - t).max(0.0)).sum::<f64>()
            + lower.iter().map(|&c| (t - c).max(0.0)).sum::<f64>()
    };
    let value = |t: f64| -> f64 {
        full.iter().map(|&a| (a - t).powi(2)).sum::<f64>()
            + upper.iter().map(|&b| (b - t).max(0.0).powi(2)).sum::<f64>()
            + lower.iter().map(|&c| (t - c).max(0.0).powi(2)).sum::<f64>()
    };

    let mut pts: Vec<f64> = upper.iter().chain(lower).copied().collect();
    pts.sort_by(f64::total_cmp);
    let sum_full: f64 = full.iter().sum();

    // Solve the linear piece of the half-gradient that holds for t ≤ p with
    // p the right end of the segment (left end `left`).
    let solve_segment = |p: f64, left: Option<f64>| -> f64 {
        let mut slope = full.len() as f64;
        let mut rhs = sum_full;
        for &b in upper {
            if b >= p {
                slope += 1.0;
                rhs += b;
            }
        }
        for &c in lower {
            if c < p {
                slope += 1.0;
                rhs += c;
            }
        }
        if slope == 0.0 {
            return p;
        }
        let t = rhs / slope;
        let t = t.min(p);
        match left {
            Some(l) => t.max(l),
            None => t,
        }
    };

    let t_star = match pts.iter().position(|&p| half_grad(p) >= 0.0) {
        Some(j) => solve_segment(pts[j], if j > 0 { Some(pts[j - 1]) } else { None }),
        None => {
            let last = pts.last().copied();
            let slope = (full.len() + lower.len()) as f64;
            if slope == 0.0 {
                last.unwrap_or(0.0)
            } else {
                let t = (sum_full + lower.iter().sum::<f64>()) / slope;
                match last {
                    Some(l) => t.max(l),
                    None => t,
                }
            }
        }
    };
    let t_star = match t_min {
        Some(m) => t_star.max(m),
        None => t_star,
    };
    value(t_star)
}
