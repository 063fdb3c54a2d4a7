//! Seeded generator of dense rotated-rectangle scenes with exact ground
//! truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fitter::{Instance, SceneAnnotation};
use crate::geometry::{rotated_iou, Point2, RBox};
use crate::grid::{GrayImage, Grid};

/// Rejection attempts per object before packing gives up.
pub const MAX_ATTEMPTS: usize = 10_000;
/// Every GT corner stays at least this far inside the image.
pub const BORDER_MARGIN: f64 = 2.0;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Layout {
    /// Jittered copies of one base pose, one per grid cell.
    #[default]
    Grid,
    RandomPacked,
}

impl Layout {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(Self::Grid),
            "random" | "random-packed" => Some(Self::RandomPacked),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Grid => "grid",
            Self::RandomPacked => "random-packed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive object count range.
    pub count: (usize, usize),
    /// Inclusive range of the long side, px.
    pub size: (f64, f64),
    /// Inclusive range of long side / short side.
    pub aspect: (f64, f64),
    pub layout: Layout,
    pub max_iou: f64,
    /// Minimum clearance between objects, px.
    pub min_gap: f64,
    /// Minimum object/background intensity difference in `[0, 1]` units.
    pub contrast: f64,
    /// Standard deviation of additive pixel noise in `[0, 1]` units.
    pub noise: f64,
    /// Point jitter as a fraction of each object's short side.
    pub point_jitter: f64,
    pub classes: u16,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            count: (20, 60),
            size: (24.0, 64.0),
            aspect: (1.0, 3.0),
            layout: Layout::Grid,
            max_iou: 0.0,
            min_gap: 2.0,
            contrast: 60.0 / 255.0,
            noise: 8.0 / 255.0,
            point_jitter: 0.0,
            classes: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if self.count.0 > self.count.1 {
            return bad("object count range is empty");
        }
        if !(self.size.0 > 0.0) || self.size.0 > self.size.1 {
            return bad("size range must be positive and nonempty");
        }
        if !(self.aspect.0 >= 1.0) || self.aspect.0 > self.aspect.1 {
            return bad("aspect range must be nonempty and at least 1");
        }
        if !(0.0..=0.3).contains(&self.max_iou) {
            return bad("max IoU must lie in [0, 0.3]");
        }
        if !(self.min_gap >= 0.0) || !(self.contrast > 0.0) || !(self.noise >= 0.0) || !(self.point_jitter >= 0.0) {
            return bad("gap, noise and jitter must be non-negative; contrast positive");
        }
        if self.contrast > 0.45 {
            return bad("contrast above 0.45 cannot be rendered in both polarities");
        }
        if self.classes == 0 {
            return bad("at least one class is required");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub image: GrayImage,
    pub gt_boxes: Vec<RBox>,
    pub annotation: SceneAnnotation,
    /// Object intensities, index-aligned with `gt_boxes`.
    pub intensities: Vec<f64>,
    pub background: f64,
}

pub fn class_token(id: u16) -> String {
    format!("class-{id}")
}

pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.random_range(cfg.count.0..=cfg.count.1);
    let boxes = match cfg.layout {
        Layout::Grid => grid_layout(cfg, count, &mut rng)?,
        Layout::RandomPacked => random_layout(cfg, count, &mut rng)?,
    };

    let background = rng.random_range(0.35..0.55);
    let intensities: Vec<f64> = boxes
        .iter()
        .map(|_| {
            let delta = cfg.contrast + rng.random_range(0.0..0.15);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (background + sign * delta).clamp(0.0, 1.0)
        })
        .collect();
    let mut image = render(cfg.width, cfg.height, background, &boxes, &intensities);
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in image.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    let instances = boxes
        .iter()
        .map(|b| {
            let j = cfg.point_jitter * b.w.min(b.h);
            let (dx, dy) = if j > 0.0 {
                (rng.random_range(-j..=j), rng.random_range(-j..=j))
            } else {
                (0.0, 0.0)
            };
            let x = (b.cx + dx).clamp(0.0, (cfg.width - 1) as f64);
            let y = (b.cy + dy).clamp(0.0, (cfg.height - 1) as f64);
            Instance { point: Point2::new(x, y), class_id: rng.random_range(0..cfg.classes) }
        })
        .collect();
    Ok(SynthScene {
        image: image.clone(),
        gt_boxes: boxes,
        annotation: SceneAnnotation { image, instances },
        intensities,
        background,
    })
}

fn random_pose<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> (f64, f64, f64) {
    let w = rng.random_range(cfg.size.0..=cfg.size.1);
    let aspect = rng.random_range(cfg.aspect.0..=cfg.aspect.1);
    let theta = rng.random_range(-PI / 2.0..PI / 2.0);
    (w, w / aspect, theta)
}

/// Half extents of the axis-aligned bounding box of a rotated rectangle.
fn half_extents(w: f64, h: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (0.5 * (w * c.abs() + h * s.abs()), 0.5 * (w * s.abs() + h * c.abs()))
}

fn inside_image(b: &RBox, width: usize, height: usize) -> bool {
    b.to_quad().corners.iter().all(|p| {
        p.x >= BORDER_MARGIN
            && p.y >= BORDER_MARGIN
            && p.x <= width as f64 - 1.0 - BORDER_MARGIN
            && p.y <= height as f64 - 1.0 - BORDER_MARGIN
    })
}

fn compatible(a: &RBox, b: &RBox, max_iou: f64, gap: f64) -> bool {
    if rotated_iou(a, b) > max_iou {
        return false;
    }
    if gap > 0.0 {
        let grow = |r: &RBox| RBox { w: r.w + gap, h: r.h + gap, ..*r };
        return rotated_iou(&grow(a), &grow(b)) <= max_iou;
    }
    true
}

fn grid_layout<R: Rng>(cfg: &SynthConfig, count: usize, rng: &mut R) -> Result<Vec<RBox>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let (iw, ih) = (cfg.width as f64 - 2.0 * BORDER_MARGIN - 1.0, cfg.height as f64 - 2.0 * BORDER_MARGIN - 1.0);
    let cols = ((count as f64 * iw / ih).sqrt().ceil() as usize).max(1);
    let rows = count.div_ceil(cols);
    let (cw, ch) = (iw / cols as f64, ih / rows as f64);
    let (base_w, base_h, base_theta) = random_pose(cfg, rng);
    let mut boxes = Vec::with_capacity(count);
    for idx in 0..count {
        let (col, row) = (idx % cols, idx / cols);
        let mut w = base_w * rng.random_range(0.9..1.1);
        let mut h = base_h * rng.random_range(0.9..1.1);
        let theta = base_theta + rng.random_range(-0.15..0.15);
        let (ex, ey) = half_extents(w, h, theta);
        let fit = ((0.5 * cw - 0.5 * cfg.min_gap) / ex).min((0.5 * ch - 0.5 * cfg.min_gap) / ey);
        if fit < 1.0 {
            w *= fit;
            h *= fit;
        }
        if w < 1.0 || h < 1.0 {
            return Err(Error::Packing { placed: idx, requested: count, attempts: 0 });
        }
        let (ex, ey) = half_extents(w, h, theta);
        let sx = (0.5 * cw - 0.5 * cfg.min_gap - ex).max(0.0);
        let sy = (0.5 * ch - 0.5 * cfg.min_gap - ey).max(0.0);
        let cx = BORDER_MARGIN + (col as f64 + 0.5) * cw + rng.random_range(-1.0..=1.0) * sx;
        let cy = BORDER_MARGIN + (row as f64 + 0.5) * ch + rng.random_range(-1.0..=1.0) * sy;
        boxes.push(RBox::new(cx, cy, w, h, theta).canonical());
    }
    Ok(boxes)
}

fn random_layout<R: Rng>(cfg: &SynthConfig, count: usize, rng: &mut R) -> Result<Vec<RBox>> {
    let mut boxes: Vec<RBox> = Vec::with_capacity(count);
    let mut total_attempts = 0;
    for placed in 0..count {
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS {
            total_attempts += 1;
            let (w, h, theta) = random_pose(cfg, rng);
            let (ex, ey) = half_extents(w, h, theta);
            let (lo_x, hi_x) = (BORDER_MARGIN + ex, cfg.width as f64 - 1.0 - BORDER_MARGIN - ex);
            let (lo_y, hi_y) = (BORDER_MARGIN + ey, cfg.height as f64 - 1.0 - BORDER_MARGIN - ey);
            if lo_x > hi_x || lo_y > hi_y {
                continue;
            }
            let b = RBox::new(rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y), w, h, theta).canonical();
            if inside_image(&b, cfg.width, cfg.height)
                && boxes.iter().all(|o| compatible(o, &b, cfg.max_iou, cfg.min_gap))
            {
                boxes.push(b);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Packing { placed, requested: count, attempts: total_attempts });
        }
    }
    Ok(boxes)
}

/// Anti-aliased rendering: each pixel averages a 4×4 grid of subsamples
/// within its unit footprint; later objects paint over earlier ones.
pub fn render(width: usize, height: usize, background: f64, boxes: &[RBox], intensities: &[f64]) -> GrayImage {
    let mut image = Grid::filled(width, height, background);
    let n = SUPERSAMPLE as f64;
    for (b, &v) in boxes.iter().zip(intensities) {
        let (ex, ey) = half_extents(b.w, b.h, b.theta);
        let x0 = (b.cx - ex - 1.0).floor().max(0.0) as usize;
        let y0 = (b.cy - ey - 1.0).floor().max(0.0) as usize;
        let x1 = ((b.cx + ex + 1.0).ceil() as usize).min(width - 1);
        let y1 = ((b.cy + ey + 1.0).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 - 0.5 + (sx as f64 + 0.5) / n;
                        let py = y as f64 - 0.5 + (sy as f64 + 0.5) / n;
                        if b.contains(Point2::new(px, py)) {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cov = hits as f64 / (n * n);
                    let p = image.get_mut(x, y);
                    *p = *p * (1.0 - cov) + v * cov;
                }
            }
        }
    }
    image
}
