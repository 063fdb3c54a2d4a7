//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run; every
//! other failure makes the process exit non-zero.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rbox_layout::consistency::{angle_loss, consistency_loss, AugmentedPair, Proportions, TransformSampler};
use rbox_layout::edge::{edge_wh_target, EdgeMap, EdgeParams, DEFAULT_BETA, DEFAULT_K};
use rbox_layout::fitter::{fit_scene, objective_gradient, objective_value, FitConfig, GradientMode, InstanceTargets, LossWeights};
use rbox_layout::gaussian::{
    bhattacharyya_coefficient, bhattacharyya_with_grad, box_covariance, box_covariance_derivs, rbox_to_gaussian,
    wasserstein2_sq, Gaussian2D, GwdForm,
};
use rbox_layout::geometry::{angle_diff_mod_pi, rotated_iou, Mat2, Point2, RBox};
use rbox_layout::io::eval::{evaluate, LabeledBox};
use rbox_layout::synth::{synth_scene, Layout, SynthConfig};
use rbox_layout::tessellation::voronoi_partition;
use rbox_layout::watershed::{
    make_surface, watershed, watershed_wh_target, BarrierMode, BasinLabel, SurfaceMode, WatershedOptions,
    WidthHeightTarget, MARKER_SEARCH_RADIUS, MIN_TARGET,
};
use rbox_layout::Grid;

const KNOWN_RED: &[&str] = &["noise-robustness"];

const BHATTACHARYYA_REL: f64 = 1e-3;
const BHATTACHARYYA_TIME: Duration = Duration::from_secs(10);
const W2_REL: f64 = 1e-9;
const EDGE_IDENTITY_TOL: f64 = 1e-9;
const ANGLE_ZERO_TOL: f64 = 1e-24;
const CONSISTENCY_TOL: f64 = 1e-9;
const GRADIENT_REL: f64 = 1e-4;
const E2E_MEDIAN_IOU: f64 = 0.7;
const E2E_ANGLE_DEG: f64 = 10.0;
const E2E_MIN_ASPECT: f64 = 1.5;
const E2E_TIME: Duration = Duration::from_secs(600);
const E2E_SCENES: u64 = 50;
const NOISE_LEVELS: [(f64, f64); 2] = [(0.1, 0.05), (0.3, 0.12)];

type Outcome = Result<String, String>;
/// Per-scene IoUs, angle errors, AP50 and fixed-center ceiling IoUs.
type SceneStats = (Vec<f64>, Vec<f64>, f64, Vec<f64>);
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_spd<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Mat2 {
    let (a, b) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
    let t: f64 = rng.random_range(0.0..PI);
    let (s, c) = t.sin_cos();
    Mat2::new(c * c * a + s * s * b, c * s * (a - b), c * s * (a - b), s * s * a + c * c * b)
}

fn gauss_density(g: &Gaussian2D, x: f64, y: f64) -> f64 {
    let s = g.sigma;
    let det = s.a * s.d - s.b * s.c;
    let (dx, dy) = (x - g.mu.x, y - g.mu.y);
    let q = (s.d * dx * dx - (s.b + s.c) * dx * dy + s.a * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

fn bhattacharyya_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g1 = Gaussian2D::new(
            Point2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            random_spd(&mut rng, 0.5, 4.0),
        );
        let g2 = Gaussian2D::new(
            Point2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            random_spd(&mut rng, 0.5, 4.0),
        );
        // Midpoint rule over ±10 standard deviations of the widest axis.
        let r = 10.0 * 2.0f64;
        let (x0, x1) = (g1.mu.x.min(g2.mu.x) - r, g1.mu.x.max(g2.mu.x) + r);
        let (y0, y1) = (g1.mu.y.min(g2.mu.y) - r, g1.mu.y.max(g2.mu.y) + r);
        let n = 1200;
        let (hx, hy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
        let numeric: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = x0 + (i as f64 + 0.5) * hx;
                (0..n)
                    .map(|j| {
                        let y = y0 + (j as f64 + 0.5) * hy;
                        (gauss_density(&g1, x, y) * gauss_density(&g2, x, y)).sqrt()
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            * hx
            * hy;
        let closed = bhattacharyya_coefficient(&g1, &g2).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(closed, numeric, 0.0));
    }
    let t = start.elapsed();
    check(
        worst < BHATTACHARYYA_REL && t < BHATTACHARYYA_TIME,
        format!("20 pairs, max rel err {worst:.2e} (< {BHATTACHARYYA_REL:e}), {:.2} s", t.as_secs_f64()),
    )
}

/// Symmetric 2×2 eigendecomposition: eigenvalues and the rotation angle of
/// the first eigenvector.
fn sym_eig(m: Mat2) -> (f64, f64, f64) {
    let (a, b, d) = (m.a, 0.5 * (m.b + m.c), m.d);
    let phi = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = phi.sin_cos();
    let l1 = c * c * a + 2.0 * c * s * b + s * s * d;
    let l2 = s * s * a - 2.0 * c * s * b + c * c * d;
    (l1, l2, phi)
}

fn sqrtm(m: Mat2) -> Mat2 {
    let (l1, l2, phi) = sym_eig(m);
    let (s, c) = phi.sin_cos();
    let (r1, r2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    Mat2::new(c * c * r1 + s * s * r2, c * s * (r1 - r2), c * s * (r1 - r2), s * s * r1 + c * c * r2)
}

fn mat_mul(p: Mat2, q: Mat2) -> Mat2 {
    Mat2::new(
        p.a * q.a + p.b * q.c,
        p.a * q.b + p.b * q.d,
        p.c * q.a + p.d * q.c,
        p.c * q.b + p.d * q.d,
    )
}

fn wasserstein_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g1 = Gaussian2D::new(
            Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            random_spd(&mut rng, 0.2, 30.0),
        );
        let g2 = Gaussian2D::new(
            Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            random_spd(&mut rng, 0.2, 30.0),
        );
        let r1 = sqrtm(g1.sigma);
        let inner = sqrtm(mat_mul(mat_mul(r1, g2.sigma), r1));
        let dm = g1.mu - g2.mu;
        let oracle = dm.dot(dm) + g1.sigma.trace() + g2.sigma.trace() - 2.0 * inner.trace();
        let closed = wasserstein2_sq(&g1, &g2).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(closed, oracle, 0.0));
    }
    check(worst < W2_REL, format!("100 pairs, max rel err {worst:.2e} (< {W2_REL:e})"))
}

fn voronoi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let (w, h) = (rng.random_range(1..=128usize), rng.random_range(1..=128usize));
        let n = rng.random_range(1..=30usize);
        let mut pts: Vec<Point2> = (0..n)
            .map(|i| match i % 3 {
                // Integer and half-integer sites produce exact distance ties.
                0 => Point2::new(rng.random_range(0..w) as f64, rng.random_range(0..h) as f64),
                1 => Point2::new(
                    (rng.random_range(0..2 * w) as f64 * 0.5).min(w as f64 - 1.0),
                    (rng.random_range(0..2 * h) as f64 * 0.5).min(h as f64 - 1.0),
                ),
                _ => Point2::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)),
            })
            .collect();
        if case % 5 == 0 && n > 1 {
            let p = pts[0];
            pts[n - 1] = Point2::new((p.x + 0.2).min(w as f64 - 0.01), p.y);
        }
        let part = voronoi_partition(&pts, w, h).map_err(|e| format!("case {case}: {e}"))?;
        let mut kept: Vec<usize> = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            if !kept.iter().any(|&k| pts[k].dist(*p) < 0.5) {
                kept.push(i);
            }
        }
        let labels = Grid::from_fn(w, h, |x, y| {
            let d2 = |k: usize| {
                let (dx, dy) = (x as f64 - pts[k].x, y as f64 - pts[k].y);
                dx * dx + dy * dy
            };
            let mut best = kept[0];
            for &k in &kept[1..] {
                if d2(k) < d2(best) {
                    best = k;
                }
            }
            best as u32
        });
        if labels != part.cells {
            return Err(format!("case {case} ({w}x{h}, {n} sites): labels differ"));
        }
        let ridges = Grid::from_fn(w, h, |x, y| {
            let own = *labels.get(x, y);
            let higher = |nx: i64, ny: i64| labels.contains(nx, ny) && *labels.get(nx as usize, ny as usize) > own;
            let (x, y) = (x as i64, y as i64);
            higher(x - 1, y) || higher(x + 1, y) || higher(x, y - 1) || higher(x, y + 1)
        });
        if ridges != part.ridges {
            return Err(format!("case {case}: ridge masks differ"));
        }
    }
    Ok("50 configurations up to 128x128 with <= 30 sites, labels and ridges identical".into())
}

#[derive(Debug, PartialEq)]
enum FloodOutcome {
    Labels(Grid<BasinLabel>, Vec<(usize, (usize, usize))>),
    Failed,
}

/// Independent flood: linear-scan minimum over an open list instead of a heap.
fn oracle_flood(surface: &Grid<f64>, markers: &[Point2], barriers: &Grid<bool>, opts: WatershedOptions) -> FloodOutcome {
    let (w, h) = (surface.width(), surface.height());
    let mut labels = Grid::filled(w, h, BasinLabel::Unassigned);
    let mut open: Vec<(f64, u64, usize, usize)> = Vec::new();
    let mut seq = 0u64;
    let mut moved = Vec::new();
    for (i, m) in markers.iter().enumerate() {
        let (mx, my) = (m.x.round(), m.y.round());
        if mx < 0.0 || my < 0.0 || mx >= w as f64 || my >= h as f64 {
            return FloodOutcome::Failed;
        }
        let (mx, my) = (mx as i64, my as i64);
        let mut at = (mx as usize, my as usize);
        if *barriers.get(at.0, at.1) {
            let r = MARKER_SEARCH_RADIUS;
            let mut cands: Vec<(i64, i64, i64)> = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (mx + dx, my + dy);
                    if dx * dx + dy * dy <= r * r && barriers.contains(x, y) && !*barriers.get(x as usize, y as usize) {
                        cands.push((dx * dx + dy * dy, dy, dx));
                    }
                }
            }
            cands.sort();
            let Some(&(_, dy, dx)) = cands.first() else {
                return FloodOutcome::Failed;
            };
            at = ((mx + dx) as usize, (my + dy) as usize);
            moved.push((i, at));
        }
        if *labels.get(at.0, at.1) == BasinLabel::Unassigned {
            labels.set(at.0, at.1, BasinLabel::Instance(i as u32));
            open.push((*surface.get(at.0, at.1), seq, at.0, at.1));
            seq += 1;
        }
    }
    let background = opts.barrier_mode == BarrierMode::Background;
    for y in 0..h {
        for x in 0..w {
            let frame = background && opts.seed_frame && (x == 0 || y == 0 || x == w - 1 || y == h - 1);
            if (*barriers.get(x, y) || frame) && *labels.get(x, y) == BasinLabel::Unassigned {
                labels.set(x, y, BasinLabel::Barrier);
                if background {
                    open.push((*surface.get(x, y), seq, x, y));
                    seq += 1;
                }
            }
        }
    }
    while !open.is_empty() {
        let mut k = 0;
        for j in 1..open.len() {
            let (a, b) = (&open[j], &open[k]);
            if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
                k = j;
            }
        }
        let (_, _, x, y) = open.swap_remove(k);
        let label = *labels.get(x, y);
        let (xi, yi) = (x as i64, y as i64);
        for (nx, ny) in [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)] {
            if labels.contains(nx, ny) && *labels.get(nx as usize, ny as usize) == BasinLabel::Unassigned {
                let (nx, ny) = (nx as usize, ny as usize);
                labels.set(nx, ny, label);
                open.push((*surface.get(nx, ny), seq, nx, ny));
                seq += 1;
            }
        }
    }
    FloodOutcome::Labels(labels, moved)
}

fn watershed_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut flat = 0;
    let mut with_barriers = 0;
    let mut failures = 0;
    for case in 0..30 {
        let (w, h) = (rng.random_range(8..=64usize), rng.random_range(8..=64usize));
        let n = rng.random_range(1..=8usize);
        let markers: Vec<Point2> = (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..w as f64 - 0.5), rng.random_range(0.0..h as f64 - 0.5)))
            .collect();
        let surface = match case % 3 {
            0 => {
                flat += 1;
                Grid::filled(w, h, 0.0)
            }
            1 => Grid::from_fn(w, h, |_, _| rng.random_range(0..6) as f64 / 5.0),
            _ => {
                let boxes: Vec<RBox> = markers.iter().map(|m| RBox::new(m.x, m.y, 8.0, 4.0, 0.3)).collect();
                let img = rbox_layout::synth::render(w, h, 0.2, &boxes, &vec![0.8; boxes.len()]);
                make_surface(&img, SurfaceMode::Gradient)
            }
        };
        let barriers = match (case / 3) % 3 {
            0 => Grid::filled(w, h, false),
            1 => voronoi_partition(&markers, w, h).map_err(|e| e.to_string())?.ridges,
            _ => {
                let (cx, cy) = (rng.random_range(0..w), rng.random_range(0..h));
                Grid::from_fn(w, h, |x, y| x == cx || y == cy)
            }
        };
        if barriers.data().iter().any(|&b| b) {
            with_barriers += 1;
        }
        let opts = match case % 4 {
            0 => WatershedOptions::default(),
            1 => WatershedOptions { barrier_mode: BarrierMode::Background, seed_frame: false },
            2 => WatershedOptions::WALLS,
            _ => WatershedOptions { barrier_mode: BarrierMode::Wall, seed_frame: true },
        };
        let got = match watershed(&surface, &markers, &barriers, opts) {
            Ok(r) => FloodOutcome::Labels(r.labels, r.moved.iter().map(|m| (m.instance, m.to)).collect()),
            Err(_) => {
                failures += 1;
                FloodOutcome::Failed
            }
        };
        if got != oracle_flood(&surface, &markers, &barriers, opts) {
            return Err(format!("case {case} ({w}x{h}, {n} markers, {opts:?}) differs"));
        }
    }
    Ok(format!(
        "30 cases up to 64x64 identical ({flat} flat, {with_barriers} with barriers, {failures} rejected by both)"
    ))
}

fn oracle_wh(basin: &[Point2], b: &RBox) -> (f64, f64) {
    let (s, c) = b.theta.sin_cos();
    let (mut mw, mut mh) = (0.0f64, 0.0f64);
    for p in basin {
        let (dx, dy) = (p.x - b.cx, p.y - b.cy);
        mw = mw.max((c * dx + s * dy).abs());
        mh = mh.max((-s * dx + c * dy).abs());
    }
    ((2.0 * mw).max(MIN_TARGET), (2.0 * mh).max(MIN_TARGET))
}

fn watershed_target_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.random_range(1..200);
        let basin: Vec<Point2> = (0..n)
            .map(|_| Point2::new(rng.random_range(0..100) as f64, rng.random_range(0..100) as f64))
            .collect();
        let c = Point2::new(rng.random_range(20.0..80.0), rng.random_range(20.0..80.0));
        let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let b = RBox::new(c.x, c.y, 10.0, 5.0, theta);
        let t = watershed_wh_target(&basin, &b);
        let (ow, oh) = oracle_wh(&basin, &b);
        if t.w != ow || t.h != oh {
            return Err(format!("case {case}: ({}, {}) vs brute force ({ow}, {oh})", t.w, t.h));
        }
        let t0 = watershed_wh_target(&basin, &RBox { theta: 0.0, ..b });
        let t90 = watershed_wh_target(&basin, &RBox { theta: FRAC_PI_2, ..b });
        if t0.w != t90.h || t0.h != t90.w {
            return Err(format!("case {case}: swap identity broken: {t0:?} vs {t90:?}"));
        }
    }
    Ok("200 basins equal brute-force max; theta=0 vs pi/2 swap exact".into())
}

/// Distance from `p` to the boundary of `b`.
fn boundary_distance(b: &RBox, p: Point2) -> f64 {
    let q = b.to_quad().corners;
    (0..4)
        .map(|i| {
            let (a, c) = (q[i], q[(i + 1) % 4]);
            let ab = c - a;
            let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            p.dist(a + ab.scale(t))
        })
        .fold(f64::INFINITY, f64::min)
}

fn edge_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = EdgeParams::default();
    if params.k != 24 || params.beta != 1.6 || DEFAULT_K != 24 || DEFAULT_BETA != 1.6 {
        return Err(format!("unexpected defaults {params:?}"));
    }
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let w = rng.random_range(30.0..90.0);
        let h = rng.random_range(24.0..w);
        let b = RBox::new(rng.random_range(110.0..146.0), rng.random_range(110.0..146.0), w, h, rng.random_range(-1.5..1.5));
        let map: EdgeMap = Grid::from_fn(256, 256, |x, y| {
            let d = boundary_distance(&b, Point2::new(x as f64, y as f64));
            (-d * d / (2.0 * 0.75 * 0.75)).exp()
        });
        let t = edge_wh_target(&map, &b, &params);
        let err = (t.h - b.h).abs().max((t.w - b.w).abs());
        if !t.evidence || err > EDGE_IDENTITY_TOL {
            return Err(format!("case {case}: target {t:?} for box {b:?}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("50 boxes, edges on the border: max |target - size| {worst:.1e} (<= {EDGE_IDENTITY_TOL:e})"))
}

fn angle_periodicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let theta = rng.random_range(-PI..PI);
        for k in -3..=3 {
            worst = worst.max(angle_loss(theta, theta + k as f64 * PI));
        }
    }
    let peak = angle_loss(0.3, 0.3 + FRAC_PI_2);
    let mut argmax = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=20_000 {
        let d = -PI + 2.0 * PI * i as f64 / 20_000.0;
        let v = angle_loss(0.0, d);
        if v > best {
            best = v;
            argmax = d;
        }
    }
    let at_quarter = (argmax.abs() - FRAC_PI_2).abs() < 1e-9;
    check(
        worst <= ANGLE_ZERO_TOL && at_quarter && (best - peak).abs() < 1e-12,
        format!("max over 7000 pairs {worst:.1e}; argmax at |d|={:.6} (pi/2), peak {peak:.6}", argmax.abs()),
    )
}

fn consistency_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut sampler = TransformSampler::new(8, Proportions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut kinds = std::collections::BTreeMap::new();
    for _ in 0..100 {
        let t = sampler.next_transform();
        *kinds.entry(format!("{:?}", t.kind)).or_insert(0) += 1;
        let n = rng.random_range(1..=10);
        let base = (0..n)
            .map(|_| {
                let w = rng.random_range(4.0..80.0);
                let b = RBox::new(
                    rng.random_range(0.0..512.0),
                    rng.random_range(0.0..512.0),
                    w,
                    w / rng.random_range(1.0..4.0),
                    rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                );
                (rbox_to_gaussian(&b), b.theta)
            })
            .collect();
        let pair = AugmentedPair::exact(base, &t);
        worst = worst.max(consistency_loss(&pair, &t).map_err(|e| e.to_string())?.abs());
    }
    check(worst <= CONSISTENCY_TOL, format!("100 transforms {kinds:?}: max loss {worst:.1e} (<= {CONSISTENCY_TOL:e})"))
}

#[derive(Default)]
struct GradStats {
    points: usize,
    worst: f64,
}

impl GradStats {
    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(numeric) {
            self.worst = self.worst.max(rel_err(*a, *n, 1e-6 * scale.max(1e-300)));
        }
        self.points += 1;
    }
}

fn random_layout<R: Rng>(rng: &mut R) -> Vec<RBox> {
    let n = rng.random_range(2..=6);
    (0..n)
        .map(|i| {
            let w = rng.random_range(12.0..50.0);
            RBox::new(
                40.0 * i as f64 + rng.random_range(-5.0..5.0),
                rng.random_range(-8.0..8.0),
                w,
                w / rng.random_range(1.2..3.0),
                rng.random_range(-1.4..1.4),
            )
        })
        .collect()
}

fn random_targets<R: Rng>(rng: &mut R, boxes: &[RBox]) -> Vec<InstanceTargets> {
    boxes
        .iter()
        .map(|b| InstanceTargets {
            watershed: WidthHeightTarget::new(b.w * rng.random_range(0.5..1.5), b.h * rng.random_range(0.5..1.5)),
            edge: WidthHeightTarget::new(b.w + rng.random_range(-10.0..10.0), b.h + rng.random_range(-10.0..10.0)),
        })
        .collect()
}

fn term_gradients(rng: &mut ChaCha8Rng, weights: LossWeights, form: GwdForm) -> Result<GradStats, String> {
    let cfg = FitConfig { weights, gwd_form: form, gradient: GradientMode::Analytic, ..FitConfig::default() };
    let mut stats = GradStats::default();
    let step = 1e-6;
    while stats.points < 50 {
        let boxes = random_layout(rng);
        let targets = random_targets(rng, &boxes);
        let analytic = objective_gradient(&boxes, &targets, &cfg, None).map_err(|e| e.to_string())?;
        let f = |bs: &[RBox]| objective_value(bs, &targets, &cfg, None).map(|l| l.total).map_err(|e| e.to_string());
        let mut numeric = Vec::new();
        for i in 0..boxes.len() {
            for k in 0..3 {
                let shift = |d: f64| {
                    let mut bs = boxes.clone();
                    let b = &mut bs[i];
                    match k {
                        0 => b.w *= d.exp(),
                        1 => b.h *= d.exp(),
                        _ => b.theta += d,
                    }
                    bs
                };
                numeric.push((f(&shift(step))? - f(&shift(-step))?) / (2.0 * step));
            }
        }
        let flat: Vec<f64> = analytic.iter().flatten().copied().collect();
        stats.add(&flat, &numeric);
    }
    Ok(stats)
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    let h = 1e-6;

    let mut bc = GradStats::default();
    for _ in 0..50 {
        let g1 = Gaussian2D::new(
            Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            random_spd(&mut rng, 0.5, 5.0),
        );
        let g2 = Gaussian2D::new(
            Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            random_spd(&mut rng, 0.5, 5.0),
        );
        let (_, d1, d2) = bhattacharyya_with_grad(&g1, &g2).map_err(|e| e.to_string())?;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (which, grad) in [(0, d1), (1, d2)] {
            for dir in [Mat2::new(1.0, 0.0, 0.0, 0.0), Mat2::new(0.0, 0.0, 0.0, 1.0), Mat2::new(0.0, 1.0, 1.0, 0.0)] {
                let at = |s: f64| {
                    let (mut a, mut b) = (g1, g2);
                    if which == 0 {
                        a.sigma = a.sigma + dir.scale(s);
                    } else {
                        b.sigma = b.sigma + dir.scale(s);
                    }
                    bhattacharyya_coefficient(&a, &b).unwrap()
                };
                analytic.push(grad.frobenius_dot(dir));
                numeric.push((at(h) - at(-h)) / (2.0 * h));
            }
        }
        bc.add(&analytic, &numeric);
    }
    lines.push(format!("bhattacharyya-sigma {:.1e}", bc.worst));
    worst = worst.max(bc.worst);

    let mut cov = GradStats::default();
    for _ in 0..50 {
        let w = rng.random_range(2.0..80.0);
        let (hh, t) = (w / rng.random_range(1.0..4.0), rng.random_range(-FRAC_PI_2..FRAC_PI_2));
        let derivs = box_covariance_derivs(w, hh, t);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (k, d) in derivs.iter().enumerate() {
            let at = |s: f64| match k {
                0 => box_covariance(w * s.exp(), hh, t),
                1 => box_covariance(w, hh * s.exp(), t),
                _ => box_covariance(w, hh, t + s),
            };
            let (p, m) = (at(h), at(-h));
            analytic.extend([d.a, d.b, d.c, d.d]);
            numeric.extend([p.a - m.a, p.b - m.b, p.c - m.c, p.d - m.d].map(|v| v / (2.0 * h)));
        }
        cov.add(&analytic, &numeric);
    }
    lines.push(format!("box-covariance {:.1e}", cov.worst));
    worst = worst.max(cov.worst);

    let only = |o: f64, ws: f64, e: f64| LossWeights { overlap: o, watershed: ws, edge: e, consistency: 0.0 };
    for (name, weights, form) in [
        ("overlap", only(1.0, 0.0, 0.0), GwdForm::Log),
        ("watershed-log", only(0.0, 1.0, 0.0), GwdForm::Log),
        ("watershed-raw", only(0.0, 1.0, 0.0), GwdForm::Raw),
        ("watershed-inverse", only(0.0, 1.0, 0.0), GwdForm::Inverse),
        ("edge", only(0.0, 0.0, 1.0), GwdForm::Log),
        ("weighted-total", LossWeights::default(), GwdForm::Log),
    ] {
        let s = term_gradients(&mut rng, weights, form)?;
        lines.push(format!("{name} {:.1e}", s.worst));
        worst = worst.max(s.worst);
    }
    check(worst < GRADIENT_REL, format!("50 points per term, max rel err: {} (< {GRADIENT_REL:e})", lines.join(", ")))
}

struct RecoveryStats {
    median_iou: f64,
    mean_angle_deg: f64,
    angle_objects: usize,
    objects: usize,
    mean_ap50: f64,
    ceiling_median_iou: f64,
    elapsed: Duration,
}

fn recovery(jitter: f64) -> Result<RecoveryStats, String> {
    let start = Instant::now();
    let per_scene: Vec<Result<SceneStats, String>> = (0..E2E_SCENES)
        .into_par_iter()
        .map(|seed| {
            let layout = if seed % 2 == 0 { Layout::Grid } else { Layout::RandomPacked };
            let cfg = SynthConfig { seed, layout, point_jitter: jitter, ..SynthConfig::default() };
            let s = synth_scene(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let fit = fit_scene(&s.annotation, &FitConfig::default()).map_err(|e| format!("seed {seed}: {e}"))?;
            let ious: Vec<f64> = fit.boxes.iter().zip(&s.gt_boxes).map(|(p, g)| rotated_iou(p, g)).collect();
            let angles: Vec<f64> = fit
                .boxes
                .iter()
                .zip(&s.gt_boxes)
                .filter(|(_, g)| g.w / g.h >= E2E_MIN_ASPECT)
                .map(|(p, g)| angle_diff_mod_pi(p.theta, g.theta).to_degrees())
                .collect();
            let pred: Vec<LabeledBox> = fit.boxes.iter().map(|b| LabeledBox::new(*b, "x")).collect();
            let gt: Vec<LabeledBox> = s.gt_boxes.iter().map(|b| LabeledBox::new(*b, "x")).collect();
            let ap = evaluate(&pred, &gt).overall.ap50;
            // Best achievable with centers pinned to the annotated points.
            let ceiling: Vec<f64> = s
                .gt_boxes
                .iter()
                .zip(&s.annotation.instances)
                .map(|(g, inst)| rotated_iou(&RBox { cx: inst.point.x, cy: inst.point.y, ..*g }, g))
                .collect();
            Ok((ious, angles, ap, ceiling))
        })
        .collect();
    let (mut ious, mut angles, mut aps, mut ceiling) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in per_scene {
        let (i, a, ap, c) = r?;
        ious.extend(i);
        angles.extend(a);
        aps.push(ap);
        ceiling.extend(c);
    }
    Ok(RecoveryStats {
        objects: ious.len(),
        median_iou: median(ious),
        angle_objects: angles.len(),
        mean_angle_deg: angles.iter().sum::<f64>() / angles.len().max(1) as f64,
        mean_ap50: aps.iter().sum::<f64>() / aps.len() as f64,
        ceiling_median_iou: median(ceiling),
        elapsed: start.elapsed(),
    })
}

fn end_to_end(clean: &Result<RecoveryStats, String>) -> Outcome {
    let s = clean.as_ref().map_err(Clone::clone)?;
    check(
        s.median_iou >= E2E_MEDIAN_IOU && s.mean_angle_deg <= E2E_ANGLE_DEG && s.elapsed <= E2E_TIME,
        format!(
            "{E2E_SCENES} scenes, {} objects: median IoU {:.3} (>= {E2E_MEDIAN_IOU}), mean angle error {:.2} deg over {} objects (<= {E2E_ANGLE_DEG}), mean AP50 {:.3}, {:.1} s",
            s.objects,
            s.median_iou,
            s.mean_angle_deg,
            s.angle_objects,
            s.mean_ap50,
            s.elapsed.as_secs_f64()
        ),
    )
}

fn noise_robustness(clean: &Result<RecoveryStats, String>) -> Outcome {
    let base = clean.as_ref().map_err(Clone::clone)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (jitter, max_drop) in NOISE_LEVELS {
        let s = recovery(jitter)?;
        let drop = base.median_iou - s.median_iou;
        ok &= drop <= max_drop;
        parts.push(format!(
            "jitter {jitter}: median IoU {:.3}, drop {drop:.3} (<= {max_drop}), fixed-center ceiling {:.3}",
            s.median_iou, s.ceiling_median_iou
        ));
    }
    check(ok, parts.join("; "))
}

fn run(bin: &Path, dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn pipeline_outputs(bin: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut stdout = run(bin, dir, &["synth", "--out", ".", "--seed", "11", "--scenes", "2", "--layout", "random-packed", "--jitter", "0.1"])?;
    stdout.extend(run(bin, dir, &["fit", "--scene-dir", "."])?);
    for i in 0..2 {
        let (pred, gt, out) = (format!("scene_{i:03}.fit.txt"), format!("scene_{i:03}.gt.txt"), format!("scene_{i:03}.eval.txt"));
        stdout.extend(run(bin, dir, &["eval", "--pred", &pred, "--gt", &gt, "--out", &out])?);
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    files.push(("<stdout>".into(), stdout));
    Ok(files)
}

fn determinism() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_rbox-layout"));
    let a = pipeline_outputs(bin)?;
    let b = pipeline_outputs(bin)?;
    if a.len() < 10 {
        return Err(format!("only {} outputs produced", a.len()));
    }
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        if na != nb || ba != bb {
            return Err(format!("{na} differs between runs"));
        }
    }
    check(a.len() == b.len(), format!("synth + fit + eval twice: {} outputs byte-identical", a.len()))
}

fn main() -> ExitCode {
    let clean = recovery(0.0);
    let criteria: Vec<Criterion<'_>> = vec![
        ("bhattacharyya-oracle", Box::new(bhattacharyya_oracle)),
        ("wasserstein-oracle", Box::new(wasserstein_oracle)),
        ("voronoi-oracle", Box::new(voronoi_oracle)),
        ("watershed-oracle", Box::new(watershed_oracle)),
        ("watershed-target", Box::new(watershed_target_exact)),
        ("edge-identity", Box::new(edge_identity)),
        ("angle-loss", Box::new(angle_periodicity)),
        ("consistency-exactness", Box::new(consistency_exactness)),
        ("gradient-checks", Box::new(gradient_checks)),
        ("end-to-end-recovery", Box::new(|| end_to_end(&clean))),
        ("noise-robustness", Box::new(|| noise_robustness(&clean))),
        ("determinism", Box::new(determinism)),
    ];
    let mut unexpected = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                let known = KNOWN_RED.contains(name);
                println!("FAIL {name}: {detail}{}", if known { " [known]" } else { "" });
                if !known {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
