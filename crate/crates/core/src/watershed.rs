//! Marker-based watershed with Voronoi ridges as barriers, and the size
//! targets and loss derived from the resulting basins.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::gaussian::{wasserstein2_sq, GwdForm, Gaussian2D};
use crate::geometry::{rotation_matrix, Mat2, Point2, RBox};
use crate::grid::{gaussian_kernel, GrayImage, Grid};
use crate::tessellation::RidgeMask;

/// Topographic surface flooded by the watershed.
pub type TerrainSurface = Grid<f64>;

/// Smoothing applied before the gradient: σ = 1.5 px, 7-tap kernel.
pub const SURFACE_SIGMA: f64 = 1.5;
pub const SURFACE_RADIUS: usize = 3;

/// How far (px) a marker that lands on a barrier may be moved.
pub const MARKER_SEARCH_RADIUS: i64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SurfaceMode {
    /// Gradient magnitude of the smoothed image; object borders become
    /// watershed lines.
    #[default]
    Gradient,
    /// The intensity itself.
    Intensity,
}

impl SurfaceMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gradient" => Some(Self::Gradient),
            "intensity" => Some(Self::Intensity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gradient => "gradient",
            Self::Intensity => "intensity",
        }
    }
}

/// How barrier pixels take part in the flood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BarrierMode {
    /// Barriers are walls: never labeled, never crossed.
    Wall,
    /// Barriers (and optionally the image frame) seed a background label
    /// that floods in competition with the instance markers, so each basin
    /// stops where the background meets it on the surface.
    #[default]
    Background,
}

impl BarrierMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wall" => Some(Self::Wall),
            "background" => Some(Self::Background),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Wall => "wall",
            Self::Background => "background",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WatershedOptions {
    pub barrier_mode: BarrierMode,
    /// Also seed the one-pixel image frame as background (background mode
    /// only).
    pub seed_frame: bool,
}

impl Default for WatershedOptions {
    fn default() -> Self {
        Self { barrier_mode: BarrierMode::Background, seed_frame: true }
    }
}

impl WatershedOptions {
    pub const WALLS: WatershedOptions =
        WatershedOptions { barrier_mode: BarrierMode::Wall, seed_frame: false };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasinLabel {
    Unassigned,
    /// A barrier pixel, or background flooded from one.
    Barrier,
    Instance(u32),
}

pub type BasinLabelMap = Grid<BasinLabel>;

/// A marker pixel that had to move off a barrier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MovedMarker {
    pub instance: usize,
    pub from: (usize, usize),
    pub to: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct WatershedResult {
    pub labels: BasinLabelMap,
    pub moved: Vec<MovedMarker>,
}

impl WatershedResult {
    /// Pixel coordinates of every instance's basin, indexed by instance.
    pub fn basin_pixels(&self, instances: usize) -> Vec<Vec<Point2>> {
        basin_pixels(&self.labels, instances)
    }
}

pub fn basin_pixels(labels: &BasinLabelMap, instances: usize) -> Vec<Vec<Point2>> {
    let mut out = vec![Vec::new(); instances];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            if let BasinLabel::Instance(i) = *labels.get(x, y) {
                if let Some(v) = out.get_mut(i as usize) {
                    v.push(Point2::new(x as f64, y as f64));
                }
            }
        }
    }
    out
}

/// Builds the flooding surface from a grayscale image.
pub fn make_surface(image: &GrayImage, mode: SurfaceMode) -> TerrainSurface {
    match mode {
        SurfaceMode::Intensity => image.map(|v| v.max(0.0)),
        SurfaceMode::Gradient => {
            let smooth = image.convolve_separable(&gaussian_kernel(SURFACE_SIGMA, SURFACE_RADIUS));
            Grid::from_fn(image.width(), image.height(), |x, y| {
                let (x, y) = (x as i64, y as i64);
                let gx = 0.5 * (smooth.get_clamped(x + 1, y) - smooth.get_clamped(x - 1, y));
                let gy = 0.5 * (smooth.get_clamped(x, y + 1) - smooth.get_clamped(x, y - 1));
                gx.hypot(gy)
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct QueueEntry {
    height: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // Reversed so the max-heap pops the lowest height, then the earliest
    // insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        other.height.total_cmp(&self.height).then_with(|| other.seq.cmp(&self.seq))
    }
}

fn marker_pixel(p: Point2, width: usize, height: usize) -> Result<(usize, usize)> {
    let (x, y) = (p.x.round(), p.y.round());
    if !p.is_finite() || x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
        return Err(Error::OutOfBounds { x: p.x, y: p.y, width, height });
    }
    Ok((x as usize, y as usize))
}

/// Moves a marker off a barrier to the nearest free pixel within
/// [`MARKER_SEARCH_RADIUS`]; ties resolve in row-major order.
fn place_marker(
    instance: usize,
    (x, y): (usize, usize),
    barriers: &RidgeMask,
) -> Result<(usize, usize)> {
    if !*barriers.get(x, y) {
        return Ok((x, y));
    }
    let r = MARKER_SEARCH_RADIUS;
    let mut best: Option<(i64, (usize, usize))> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 > r * r {
                continue;
            }
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if !barriers.contains(nx, ny) || *barriers.get(nx as usize, ny as usize) {
                continue;
            }
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, (nx as usize, ny as usize)));
            }
        }
    }
    best.map(|(_, p)| p).ok_or(Error::IsolatedMarker { instance })
}

/// Priority-flood (Meyer) watershed.
///
/// Markers are seeded in instance order, then (background mode) barrier
/// pixels and the frame in row-major order. The lowest queued pixel is popped
/// (ties by insertion order) and each unlabeled neighbor takes its label and
/// is queued at its own height, so a pixel reached by two floods keeps the
/// label that arrived first.
pub fn watershed(
    surface: &TerrainSurface,
    markers: &[Point2],
    barriers: &RidgeMask,
    opts: WatershedOptions,
) -> Result<WatershedResult> {
    if markers.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    if !surface.same_shape(barriers) {
        return Err(Error::Config(format!(
            "surface {}x{} vs barrier mask {}x{}",
            surface.width(),
            surface.height(),
            barriers.width(),
            barriers.height()
        )));
    }
    let (w, h) = (surface.width(), surface.height());
    let mut labels = Grid::filled(w, h, BasinLabel::Unassigned);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<QueueEntry>, idx: usize, height: f64| {
        heap.push(QueueEntry { height, seq, idx });
        seq += 1;
    };

    let mut moved = Vec::new();
    for (i, &m) in markers.iter().enumerate() {
        let px = marker_pixel(m, w, h)?;
        let at = place_marker(i, px, barriers)?;
        if at != px {
            moved.push(MovedMarker { instance: i, from: px, to: at });
        }
        // A duplicate marker on an already-seeded pixel keeps the first label.
        if *labels.get(at.0, at.1) == BasinLabel::Unassigned {
            labels.set(at.0, at.1, BasinLabel::Instance(i as u32));
            let idx = labels.index(at.0, at.1);
            push(&mut heap, idx, surface.data()[idx]);
        }
    }

    let background = opts.barrier_mode == BarrierMode::Background;
    for y in 0..h {
        for x in 0..w {
            let on_frame = opts.seed_frame && (x == 0 || y == 0 || x + 1 == w || y + 1 == h);
            if *barriers.get(x, y) || (background && on_frame) {
                if *labels.get(x, y) != BasinLabel::Unassigned {
                    continue;
                }
                labels.set(x, y, BasinLabel::Barrier);
                if background {
                    let idx = labels.index(x, y);
                    push(&mut heap, idx, surface.data()[idx]);
                }
            }
        }
    }

    while let Some(QueueEntry { idx, .. }) = heap.pop() {
        let label = labels.data()[idx];
        let (x, y) = (idx % w, idx / w);
        for (nx, ny) in labels.neighbors4(x, y) {
            let nidx = ny * w + nx;
            if labels.data()[nidx] != BasinLabel::Unassigned {
                continue;
            }
            labels.data_mut()[nidx] = label;
            push(&mut heap, nidx, surface.data()[nidx]);
        }
    }
    Ok(WatershedResult { labels, moved })
}

/// Detached width/height regression target for one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthHeightTarget {
    pub w: f64,
    pub h: f64,
    /// False when the target fell back to a default for lack of evidence.
    pub evidence: bool,
}

impl WidthHeightTarget {
    pub fn new(w: f64, h: f64) -> Self {
        Self { w, h, evidence: true }
    }
}

/// Smallest size a watershed target can take.
pub const MIN_TARGET: f64 = 1.0;

/// Twice the componentwise maximum of `|Rᵀ(p − c)|` over the basin pixels,
/// floored at 1 px. An empty basin yields `(1, 1)` without evidence.
pub fn watershed_wh_target(basin: &[Point2], b: &RBox) -> WidthHeightTarget {
    if basin.is_empty() {
        log::warn!("empty basin at ({:.1}, {:.1})", b.cx, b.cy);
        return WidthHeightTarget { w: MIN_TARGET, h: MIN_TARGET, evidence: false };
    }
    let rt = rotation_matrix(b.theta).transpose();
    let c = b.center();
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    for &p in basin {
        let l = rt.apply(p - c);
        mx = mx.max(l.x.abs());
        my = my.max(l.y.abs());
    }
    WidthHeightTarget::new((2.0 * mx).max(MIN_TARGET), (2.0 * my).max(MIN_TARGET))
}

fn axis_gaussian(w: f64, h: f64) -> Gaussian2D {
    Gaussian2D::new(Point2::default(), Mat2::diag((w / 2.0).powi(2), (h / 2.0).powi(2)))
}

/// Wasserstein loss between the zero-mean axis-aligned Gaussians of the
/// current and target sizes.
pub fn voronoi_watershed_loss(b: &RBox, t: &WidthHeightTarget) -> f64 {
    voronoi_watershed_loss_with(GwdForm::Log, b, t)
}

pub fn voronoi_watershed_loss_with(form: GwdForm, b: &RBox, t: &WidthHeightTarget) -> f64 {
    let d2 = wasserstein2_sq(&axis_gaussian(b.w, b.h), &axis_gaussian(t.w, t.h))
        // Diagonal SPD inputs cannot trip the numeric guards.
        .expect("diagonal covariances");
    form.apply(d2)
}

/// Loss and its derivatives with respect to `(ln w, ln h)`.
///
/// For diagonal covariances the distance reduces to
/// `d² = (w − w_t)²/4 + (h − h_t)²/4`.
pub fn voronoi_watershed_loss_grad(form: GwdForm, b: &RBox, t: &WidthHeightTarget) -> (f64, [f64; 2]) {
    let (dw, dh) = ((b.w - t.w) / 2.0, (b.h - t.h) / 2.0);
    let d2 = dw * dw + dh * dh;
    let outer = form.derivative(d2);
    // ∂d²/∂ln w = 2·dw·(w/2)
    (form.apply(d2), [outer * dw * b.w, outer * dh * b.h])
}
