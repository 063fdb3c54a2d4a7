//! Edge maps, rotated ROI resampling, folded edge profiles and the edge loss
//! that snaps box sides onto image edges.

use crate::geometry::{rotation_matrix, Point2, RBox};
use crate::grid::{GrayImage, Grid};
use crate::watershed::WidthHeightTarget;

/// Per-pixel edge strength in `[0, 1]`.
pub type EdgeMap = Grid<f64>;

/// ROI half-size in samples.
pub const DEFAULT_K: usize = 24;
/// ROI enlargement relative to the box.
pub const DEFAULT_BETA: f64 = 1.6;
/// Width of the soft prior around the current border, in samples.
pub const DEFAULT_SIGMA_E: f64 = 6.0;
/// Transition point of the smooth-L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// `0.5·x²/β` inside `|x| < β`, `|x| − 0.5·β` outside.
#[inline]
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let ax = x.abs();
    if ax < beta {
        0.5 * ax * ax / beta
    } else {
        ax - 0.5 * beta
    }
}

#[inline]
pub fn smooth_l1_derivative(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// 3×3 Sobel magnitude scaled by its 99th percentile and clamped to `[0, 1]`.
/// When the percentile is zero (edges cover under 1% of pixels) the maximum
/// is used instead.
pub fn sobel_edge_map(image: &GrayImage) -> EdgeMap {
    let mag = Grid::from_fn(image.width(), image.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let p = |dx: i64, dy: i64| image.get_clamped(x + dx, y + dy);
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        gx.hypot(gy)
    });
    normalize_by_percentile(mag, 0.99)
}

fn normalize_by_percentile(mag: Grid<f64>, q: f64) -> EdgeMap {
    if mag.is_empty() {
        return mag;
    }
    let mut sorted = mag.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((sorted.len() - 1) as f64 * q).round() as usize;
    let mut scale = sorted[rank];
    if scale <= 0.0 {
        scale = sorted[sorted.len() - 1];
    }
    if scale <= 0.0 {
        return mag.map(|_| 0.0);
    }
    mag.map(|v| (v / scale).clamp(0.0, 1.0))
}

/// `(2K+1)×(2K+1)` resampled window. Rows run along the box height axis,
/// columns along the width axis; the center sample sits at index `(K, K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPatch {
    k: usize,
    data: Vec<f64>,
}

impl RoiPatch {
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = 2 * k + 1;
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Self { k, data }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.k + 1
    }

    /// Zero-based row and column.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side() + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Bilinear resampling of the rotated window `(cx, cy, βw, βh, θ)`.
///
/// Samples are spaced `βw/(2K)` along the width axis and `βh/(2K)` along the
/// height axis, with the center sample exactly on the box center.
/// Out-of-image pixels read as zero.
pub fn rotated_roi_align(map: &EdgeMap, b: &RBox, k: usize, beta: f64) -> RoiPatch {
    assert!(k >= 1 && beta > 0.0, "invalid ROI parameters K={k}, β={beta}");
    let r = rotation_matrix(b.theta);
    let step_w = beta * b.w / (2 * k) as f64;
    let step_h = beta * b.h / (2 * k) as f64;
    let ux = r.apply(Point2::new(step_w, 0.0));
    let uy = r.apply(Point2::new(0.0, step_h));
    let kf = k as f64;
    RoiPatch::from_fn(k, |row, col| {
        let (u, v) = (col as f64 - kf, row as f64 - kf);
        map.bilinear_zero(b.cx + u * ux.x + v * uy.x, b.cy + u * ux.y + v * uy.y)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Width,
    Height,
}

/// Folds the patch about its center: entry `i − 1` (for `i = 1..=K`) sums
/// the two rows (height) or columns (width) at distance `i` from the center.
/// The center line itself is excluded.
pub fn fold_profile(p: &RoiPatch, axis: Axis) -> Vec<f64> {
    let k = p.k();
    let n = p.side();
    (1..=k)
        .map(|i| {
            let (lo, hi) = (k - i, k + i);
            (0..n)
                .map(|j| match axis {
                    Axis::Height => p.get(lo, j) + p.get(hi, j),
                    Axis::Width => p.get(j, lo) + p.get(j, hi),
                })
                .sum()
        })
        .collect()
}

/// Gaussian prior over fold index centered on the current border (`K/β`).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeProfilePrior {
    /// `lambda[i − 1]` is the weight of fold index `i`.
    pub lambda: Vec<f64>,
    pub sigma: f64,
}

pub fn soft_prior(k: usize, beta: f64, sigma_e: f64) -> EdgeProfilePrior {
    assert!(k >= 1 && beta > 0.0 && sigma_e > 0.0, "invalid prior parameters");
    let peak = k as f64 / beta;
    let lambda = (1..=k)
        .map(|i| {
            let d = i as f64 - peak;
            (-(d * d) / (2.0 * sigma_e * sigma_e)).exp()
        })
        .collect();
    EdgeProfilePrior { lambda, sigma: sigma_e }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeParams {
    pub k: usize,
    pub beta: f64,
    pub sigma_e: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self { k: DEFAULT_K, beta: DEFAULT_BETA, sigma_e: DEFAULT_SIGMA_E }
    }
}

/// Fold index (1-based) maximizing `profile · prior`, smallest on ties.
/// `None` when the product is identically zero.
fn weighted_argmax(profile: &[f64], prior: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&m, &l)) in profile.iter().zip(prior).enumerate() {
        let v = m * l;
        if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i + 1, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Edge-derived size target. An axis without edge evidence keeps the
/// current size and clears `evidence`.
pub fn edge_wh_target(map: &EdgeMap, b: &RBox, params: &EdgeParams) -> WidthHeightTarget {
    let prior = soft_prior(params.k, params.beta, params.sigma_e);
    edge_wh_target_with_prior(map, b, params, &prior)
}

pub fn edge_wh_target_with_prior(
    map: &EdgeMap,
    b: &RBox,
    params: &EdgeParams,
    prior: &EdgeProfilePrior,
) -> WidthHeightTarget {
    let patch = rotated_roi_align(map, b, params.k, params.beta);
    let scale = params.beta / params.k as f64;
    let mut evidence = true;
    let mut pick = |axis: Axis, size: f64| match weighted_argmax(&fold_profile(&patch, axis), &prior.lambda) {
        Some(i) => scale * size * i as f64,
        None => {
            evidence = false;
            size
        }
    };
    let w = pick(Axis::Width, b.w);
    let h = pick(Axis::Height, b.h);
    WidthHeightTarget { w, h, evidence }
}

/// Smooth-L1 between `(w, h)` and the target, summed over both components.
pub fn edge_loss(b: &RBox, t: &WidthHeightTarget) -> f64 {
    smooth_l1(b.w - t.w, SMOOTH_L1_BETA) + smooth_l1(b.h - t.h, SMOOTH_L1_BETA)
}

/// Edge loss and its derivatives with respect to `(ln w, ln h)`.
pub fn edge_loss_grad(b: &RBox, t: &WidthHeightTarget) -> (f64, [f64; 2]) {
    (
        edge_loss(b, t),
        [
            smooth_l1_derivative(b.w - t.w, SMOOTH_L1_BETA) * b.w,
            smooth_l1_derivative(b.h - t.h, SMOOTH_L1_BETA) * b.h,
        ],
    )
}
