//! Network-free box fitting: per-instance `(ln w, ln h, θ)` are optimized
//! with Adam against the weighted overlap, watershed, edge and (optionally)
//! consistency losses. Centers stay on the annotated points.

use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consistency::{
    consistency_loss_with, draw_transform, AugmentedPair, Proportions, ViewTransform,
};
use crate::edge::{
    edge_loss, edge_loss_grad, edge_wh_target_with_prior, sobel_edge_map, soft_prior, EdgeMap,
    EdgeParams, EdgeProfilePrior,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    bhattacharyya_coefficient, bhattacharyya_with_grad, box_covariance_derivs, rbox_to_gaussian,
    sym_eigenvalues, Gaussian2D, GwdForm,
};
use crate::geometry::{Mat2, Point2, RBox};
use crate::grid::GrayImage;
use crate::tessellation::{voronoi_partition, VoronoiPartition};
use crate::watershed::{
    basin_pixels, make_surface, voronoi_watershed_loss_grad, voronoi_watershed_loss_with, watershed,
    watershed_wh_target, SurfaceMode, WatershedOptions, WidthHeightTarget,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instance {
    pub point: Point2,
    pub class_id: u16,
}

/// An image plus one annotated point per object.
#[derive(Clone, Debug)]
pub struct SceneAnnotation {
    pub image: GrayImage,
    pub instances: Vec<Instance>,
}

impl SceneAnnotation {
    pub fn new(image: GrayImage, instances: Vec<Instance>) -> Result<Self> {
        let scene = Self { image, instances };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
        let (w, h) = (self.image.width(), self.image.height());
        for inst in &self.instances {
            let p = inst.point;
            if !p.is_finite() || p.x < 0.0 || p.y < 0.0 || p.x > (w - 1) as f64 || p.y > (h - 1) as f64 {
                return Err(Error::OutOfBounds { x: p.x, y: p.y, width: w, height: h });
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Point2> {
        self.instances.iter().map(|i| i.point).collect()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Weights of the overlap, watershed, edge and consistency terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub overlap: f64,
    pub watershed: f64,
    pub edge: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { overlap: 10.0, watershed: 5.0, edge: 0.3, consistency: 1.0 }
    }
}

impl LossWeights {
    pub fn scaled(self, s: f64) -> Self {
        Self {
            overlap: self.overlap * s,
            watershed: self.watershed * s,
            edge: self.edge * s,
            consistency: self.consistency * s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientMode {
    /// Central differences of the full objective.
    FiniteDifference,
    /// Closed-form gradients for the overlap, watershed and edge terms;
    /// central differences for anything else.
    #[default]
    Analytic,
}

impl GradientMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "finite-difference" | "fd" => Some(Self::FiniteDifference),
            "analytic" => Some(Self::Analytic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FiniteDifference => "finite-difference",
            Self::Analytic => "analytic",
        }
    }
}

/// Initial orientation of every box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrientationInit {
    /// `θ = 0`.
    Zero,
    /// Principal axis of the instance's watershed basin.
    #[default]
    BasinMoments,
}

impl OrientationInit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(Self::Zero),
            "basin" => Some(Self::BasinMoments),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::BasinMoments => "basin",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub iterations: usize,
    /// Adam step for the log sizes.
    pub step_size: f64,
    /// Adam step for the angle, radians.
    pub angle_step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Denominator guard of the Adam update.
    pub adam_eps: f64,
    pub edge: EdgeParams,
    pub init_min: f64,
    pub init_max: f64,
    pub init_single: f64,
    pub orientation_init: OrientationInit,
    pub gradient: GradientMode,
    /// Central-difference step relative to the parameter scale (1 for log
    /// sizes and radians).
    pub fd_step: f64,
    pub gwd_form: GwdForm,
    pub surface: SurfaceMode,
    pub watershed: WatershedOptions,
    /// Apply the consistency term during fitting.
    pub with_ss: bool,
    pub proportions: Proportions,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            iterations: 300,
            step_size: 0.05,
            angle_step_size: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            edge: EdgeParams::default(),
            init_min: 8.0,
            init_max: 64.0,
            init_single: 32.0,
            orientation_init: OrientationInit::default(),
            gradient: GradientMode::default(),
            fd_step: 1e-3,
            gwd_form: GwdForm::Log,
            surface: SurfaceMode::Gradient,
            watershed: WatershedOptions::default(),
            with_ss: false,
            proportions: Proportions::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("w_overlap", w.overlap),
            ("w_watershed", w.watershed),
            ("w_edge", w.edge),
            ("w_consistency", w.consistency),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if !(self.angle_step_size >= 0.0) {
            return Err(Error::Config("angle step size must be non-negative".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.edge.k == 0 || !(self.edge.beta > 0.0) || !(self.edge.sigma_e > 0.0) {
            return Err(Error::Config("edge parameters need K >= 1, beta > 0, sigma_e > 0".into()));
        }
        if !(self.init_min > 0.0) || self.init_max < self.init_min || !(self.init_single > 0.0) {
            return Err(Error::Config("init size bounds must satisfy 0 < min <= max".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        self.proportions.validate()
    }
}

/// Non-fatal events recorded while preparing or fitting a scene.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FitWarning {
    DuplicatePoint { instance: usize, kept: usize },
    MarkerMoved { instance: usize },
    FlatTerrain,
    EmptyBasin { instance: usize },
    NoEdgeEvidence { instance: usize },
    UsedBestIterate { iteration: usize },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicatePoint { instance, kept } => {
                write!(f, "instance {instance} duplicates instance {kept}; cells merged")
            }
            Self::MarkerMoved { instance } => write!(f, "instance {instance}: marker moved off a Voronoi ridge"),
            Self::FlatTerrain => write!(f, "flat image: watershed targets carry no evidence"),
            Self::EmptyBasin { instance } => write!(f, "instance {instance}: empty watershed basin"),
            Self::NoEdgeEvidence { instance } => write!(f, "instance {instance}: no edge evidence"),
            Self::UsedBestIterate { iteration } => {
                write!(f, "final iterate was worse than the start; returning iteration {iteration}")
            }
        }
    }
}

/// Per-scene data that depends only on the image and the points.
#[derive(Clone, Debug)]
pub struct SceneCache {
    width: usize,
    height: usize,
    points: Vec<Point2>,
    pub partition: VoronoiPartition,
    pub basins: Vec<Vec<Point2>>,
    pub edge_map: EdgeMap,
    pub flat_terrain: bool,
    prior: EdgeProfilePrior,
    edge_params: EdgeParams,
    pub warnings: Vec<FitWarning>,
}

/// Surfaces whose maximum is below this are treated as flat.
const FLAT_SURFACE: f64 = 1e-12;

impl SceneCache {
    pub fn build(scene: &SceneAnnotation, cfg: &FitConfig) -> Result<Self> {
        let edge_map = sobel_edge_map(&scene.image);
        Self::build_with_edge_map(scene, cfg, edge_map)
    }

    /// Uses an externally produced edge map in place of the Sobel map.
    pub fn build_with_edge_map(scene: &SceneAnnotation, cfg: &FitConfig, edge_map: EdgeMap) -> Result<Self> {
        scene.validate()?;
        let (width, height) = (scene.image.width(), scene.image.height());
        if !edge_map.same_shape(&scene.image) {
            return Err(Error::Config(format!(
                "edge map is {}x{}, image is {width}x{height}",
                edge_map.width(),
                edge_map.height()
            )));
        }
        let points = scene.points();
        let partition = voronoi_partition(&points, width, height)?;
        let mut warnings: Vec<FitWarning> = partition
            .merged
            .iter()
            .map(|m| FitWarning::DuplicatePoint { instance: m.merged, kept: m.kept })
            .collect();
        let surface = make_surface(&scene.image, cfg.surface);
        let flat_terrain = !(surface.max_value() > FLAT_SURFACE);
        if flat_terrain {
            warnings.push(FitWarning::FlatTerrain);
        }
        let ws = watershed(&surface, &points, &partition.ridges, cfg.watershed)?;
        warnings.extend(ws.moved.iter().map(|m| FitWarning::MarkerMoved { instance: m.instance }));
        let mut basins = basin_pixels(&ws.labels, points.len());
        // Merged duplicates share the basin of the instance they merged into.
        for m in &partition.merged {
            basins[m.merged] = basins[m.kept].clone();
        }
        Ok(Self {
            width,
            height,
            points,
            partition,
            basins,
            prior: soft_prior(cfg.edge.k, cfg.edge.beta, cfg.edge.sigma_e),
            edge_params: cfg.edge,
            edge_map,
            flat_terrain,
            warnings,
        })
    }

    pub fn check(&self, scene: &SceneAnnotation, cfg: &FitConfig) -> Result<()> {
        if self.width != scene.image.width() || self.height != scene.image.height() {
            return Err(Error::StaleCache(format!(
                "cache is {}x{}, image is {}x{}",
                self.width,
                self.height,
                scene.image.width(),
                scene.image.height()
            )));
        }
        if self.points.len() != scene.instances.len()
            || self.points.iter().zip(&scene.instances).any(|(p, i)| *p != i.point)
        {
            return Err(Error::StaleCache("annotated points differ".into()));
        }
        if self.edge_params != cfg.edge {
            return Err(Error::StaleCache("edge parameters differ".into()));
        }
        Ok(())
    }

    /// Watershed and edge targets for the given boxes (detached constants).
    pub fn targets(&self, boxes: &[RBox]) -> Vec<InstanceTargets> {
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let watershed = if self.flat_terrain {
                    WidthHeightTarget { w: b.w, h: b.h, evidence: false }
                } else {
                    watershed_wh_target(&self.basins[i], b)
                };
                let edge = edge_wh_target_with_prior(&self.edge_map, b, &self.edge_params, &self.prior);
                InstanceTargets { watershed, edge }
            })
            .collect()
    }

    /// Principal-axis angle of each basin; `None` for near-isotropic or
    /// tiny basins.
    pub fn basin_orientations(&self) -> Vec<Option<f64>> {
        self.basins.iter().map(|px| principal_angle(px)).collect()
    }
}

fn principal_angle(pixels: &[Point2]) -> Option<f64> {
    if pixels.len() < 3 {
        return None;
    }
    let n = pixels.len() as f64;
    let mx = pixels.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pixels.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pixels {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let cov = Mat2::new(sxx / n, sxy / n, sxy / n, syy / n);
    let (l_max, l_min) = sym_eigenvalues(cov);
    if !(l_min > 0.0) || l_max / l_min < 1.1 {
        return None;
    }
    Some(0.5 * (2.0 * cov.b).atan2(cov.a - cov.d))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceTargets {
    pub watershed: WidthHeightTarget,
    pub edge: WidthHeightTarget,
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub overlap: f64,
    pub watershed: f64,
    pub edge: f64,
    pub consistency: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.overlap, self.watershed, self.edge, self.consistency]
            .iter()
            .all(|v| v.is_finite())
    }

    fn diagnosis(&self) -> String {
        let mut bad = Vec::new();
        for (name, v) in [
            ("overlap", self.overlap),
            ("watershed", self.watershed),
            ("edge", self.edge),
            ("consistency", self.consistency),
        ] {
            if !v.is_finite() {
                bad.push(format!("{name}={v}"));
            }
        }
        if bad.is_empty() {
            format!("total={}", self.total)
        } else {
            bad.join(", ")
        }
    }
}

/// Reference view for the optional consistency term: the transform `t`
/// applied to a detached snapshot of the boxes.
#[derive(Clone, Debug)]
pub struct ConsistencyView {
    pub transform: ViewTransform,
    pub augmented: Vec<(Gaussian2D, f64)>,
}

impl ConsistencyView {
    pub fn from_boxes(boxes: &[RBox], t: ViewTransform) -> Self {
        let base = boxes.iter().map(|b| (rbox_to_gaussian(b), b.theta)).collect();
        Self { transform: t, augmented: AugmentedPair::exact(base, &t).augmented }
    }
}

/// Objective with the detached targets held fixed.
pub(crate) struct Objective<'a> {
    pub weights: LossWeights,
    pub form: GwdForm,
    pub targets: &'a [InstanceTargets],
    pub ss: Option<&'a ConsistencyView>,
}

impl Objective<'_> {
    pub fn evaluate(&self, boxes: &[RBox]) -> Result<LossBreakdown> {
        let n = boxes.len();
        let gaussians: Vec<Gaussian2D> = boxes.iter().map(rbox_to_gaussian).collect();
        let overlap = if self.weights.overlap != 0.0 && n > 1 {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += bhattacharyya_coefficient(&gaussians[i], &gaussians[j])?;
                }
            }
            2.0 * s / n as f64
        } else {
            0.0
        };
        let mut watershed = 0.0;
        let mut edge = 0.0;
        for (b, t) in boxes.iter().zip(self.targets) {
            watershed += voronoi_watershed_loss_with(self.form, b, &t.watershed);
            edge += edge_loss(b, &t.edge);
        }
        let consistency = match self.ss {
            Some(view) if self.weights.consistency != 0.0 => {
                let pair = AugmentedPair {
                    base: boxes.iter().zip(&gaussians).map(|(b, g)| (*g, b.theta)).collect(),
                    augmented: view.augmented.clone(),
                };
                consistency_loss_with(self.form, &pair, &view.transform)?
            }
            _ => 0.0,
        };
        let w = self.weights;
        let total = w.overlap * overlap + w.watershed * watershed + w.edge * edge + w.consistency * consistency;
        Ok(LossBreakdown { total, overlap, watershed, edge, consistency })
    }

    /// Objective terms that involve instance `i`, for central differences.
    fn local(&self, boxes: &[RBox], gaussians: &[Gaussian2D], i: usize, b: &RBox) -> Result<f64> {
        let n = boxes.len();
        let w = self.weights;
        let mut v = 0.0;
        if w.overlap != 0.0 && n > 1 {
            let gi = rbox_to_gaussian(b);
            let mut s = 0.0;
            for (j, gj) in gaussians.iter().enumerate() {
                if j != i {
                    s += bhattacharyya_coefficient(&gi, gj)?;
                }
            }
            v += w.overlap * 2.0 * s / n as f64;
        }
        let t = &self.targets[i];
        v += w.watershed * voronoi_watershed_loss_with(self.form, b, &t.watershed);
        v += w.edge * edge_loss(b, &t.edge);
        if let Some(view) = self.ss {
            if w.consistency != 0.0 {
                let pair = AugmentedPair {
                    base: vec![(rbox_to_gaussian(b), b.theta)],
                    augmented: vec![view.augmented[i]],
                };
                v += w.consistency * consistency_loss_with(self.form, &pair, &view.transform)? / n as f64;
            }
        }
        Ok(v)
    }

    /// Gradient with respect to `(ln w, ln h, θ)` of every box.
    pub fn gradient(&self, boxes: &[RBox], mode: GradientMode, fd_step: f64) -> Result<Vec<[f64; 3]>> {
        match mode {
            GradientMode::FiniteDifference => self.fd_gradient(boxes, fd_step, true),
            GradientMode::Analytic => {
                let mut g = self.analytic_gradient(boxes)?;
                if self.ss.is_some() && self.weights.consistency != 0.0 {
                    let ss_only = Objective {
                        weights: LossWeights { overlap: 0.0, watershed: 0.0, edge: 0.0, ..self.weights },
                        form: self.form,
                        targets: self.targets,
                        ss: self.ss,
                    };
                    let extra = ss_only.fd_gradient(boxes, fd_step, false)?;
                    for (a, b) in g.iter_mut().zip(extra) {
                        for k in 0..3 {
                            a[k] += b[k];
                        }
                    }
                }
                Ok(g)
            }
        }
    }

    fn fd_gradient(&self, boxes: &[RBox], step: f64, size_terms: bool) -> Result<Vec<[f64; 3]>> {
        let gaussians: Vec<Gaussian2D> = boxes.iter().map(rbox_to_gaussian).collect();
        let mut out = vec![[0.0; 3]; boxes.len()];
        let this = if size_terms {
            Objective { ..*self }
        } else {
            Objective {
                weights: LossWeights { overlap: 0.0, watershed: 0.0, edge: 0.0, ..self.weights },
                ..*self
            }
        };
        for (i, b) in boxes.iter().enumerate() {
            for (k, slot) in out[i].iter_mut().enumerate() {
                let plus = perturb(b, k, step);
                let minus = perturb(b, k, -step);
                *slot = (this.local(boxes, &gaussians, i, &plus)? - this.local(boxes, &gaussians, i, &minus)?)
                    / (2.0 * step);
            }
        }
        Ok(out)
    }

    fn analytic_gradient(&self, boxes: &[RBox]) -> Result<Vec<[f64; 3]>> {
        let n = boxes.len();
        let w = self.weights;
        let mut out = vec![[0.0; 3]; n];
        if w.overlap != 0.0 && n > 1 {
            let gaussians: Vec<Gaussian2D> = boxes.iter().map(rbox_to_gaussian).collect();
            let mut sigma_grad = vec![Mat2::ZERO; n];
            for i in 0..n {
                for j in i + 1..n {
                    let (_, gi, gj) = bhattacharyya_with_grad(&gaussians[i], &gaussians[j])?;
                    sigma_grad[i] = sigma_grad[i] + gi;
                    sigma_grad[j] = sigma_grad[j] + gj;
                }
            }
            let scale = w.overlap * 2.0 / n as f64;
            for (i, b) in boxes.iter().enumerate() {
                let d = box_covariance_derivs(b.w, b.h, b.theta);
                for k in 0..3 {
                    out[i][k] += scale * sigma_grad[i].frobenius_dot(d[k]);
                }
            }
        }
        for (i, (b, t)) in boxes.iter().zip(self.targets).enumerate() {
            let (_, gw) = voronoi_watershed_loss_grad(self.form, b, &t.watershed);
            let (_, ge) = edge_loss_grad(b, &t.edge);
            for k in 0..2 {
                out[i][k] += w.watershed * gw[k] + w.edge * ge[k];
            }
        }
        Ok(out)
    }
}

fn perturb(b: &RBox, k: usize, step: f64) -> RBox {
    match k {
        0 => RBox { w: b.w * step.exp(), ..*b },
        1 => RBox { h: b.h * step.exp(), ..*b },
        _ => RBox { theta: b.theta + step, ..*b },
    }
}

/// Weighted objective for `boxes`, with targets recomputed from them.
pub fn total_layout_loss(
    boxes: &[RBox],
    scene: &SceneAnnotation,
    cache: &SceneCache,
    cfg: &FitConfig,
) -> Result<LossBreakdown> {
    total_layout_loss_with_view(boxes, scene, cache, cfg, None)
}

pub fn total_layout_loss_with_view(
    boxes: &[RBox],
    scene: &SceneAnnotation,
    cache: &SceneCache,
    cfg: &FitConfig,
    ss: Option<&ConsistencyView>,
) -> Result<LossBreakdown> {
    cache.check(scene, cfg)?;
    if boxes.len() != scene.len() {
        return Err(Error::StaleCache(format!("{} boxes for {} instances", boxes.len(), scene.len())));
    }
    if let Some(view) = ss {
        if view.augmented.len() != boxes.len() {
            return Err(Error::Alignment { base: boxes.len(), augmented: view.augmented.len() });
        }
    }
    let targets = cache.targets(boxes);
    Objective { weights: cfg.weights, form: cfg.gwd_form, targets: &targets, ss }.evaluate(boxes)
}

/// Objective at fixed (detached) targets.
pub fn objective_value(
    boxes: &[RBox],
    targets: &[InstanceTargets],
    cfg: &FitConfig,
    ss: Option<&ConsistencyView>,
) -> Result<LossBreakdown> {
    check_lengths(boxes, targets, ss)?;
    Objective { weights: cfg.weights, form: cfg.gwd_form, targets, ss }.evaluate(boxes)
}

/// Gradient of [`objective_value`] with respect to `(ln w, ln h, θ)` of each
/// box, computed as selected by `cfg.gradient`.
pub fn objective_gradient(
    boxes: &[RBox],
    targets: &[InstanceTargets],
    cfg: &FitConfig,
    ss: Option<&ConsistencyView>,
) -> Result<Vec<[f64; 3]>> {
    check_lengths(boxes, targets, ss)?;
    Objective { weights: cfg.weights, form: cfg.gwd_form, targets, ss }.gradient(boxes, cfg.gradient, cfg.fd_step)
}

fn check_lengths(boxes: &[RBox], targets: &[InstanceTargets], ss: Option<&ConsistencyView>) -> Result<()> {
    if targets.len() != boxes.len() {
        return Err(Error::StaleCache(format!("{} targets for {} boxes", targets.len(), boxes.len())));
    }
    if let Some(view) = ss {
        if view.augmented.len() != boxes.len() {
            return Err(Error::Alignment { base: boxes.len(), augmented: view.augmented.len() });
        }
    }
    Ok(())
}

/// Initial boxes: centered on the points, square, half the distance to the
/// nearest other point clamped to `[init_min, init_max]`, `θ = 0`.
pub fn init_params(scene: &SceneAnnotation, cfg: &FitConfig) -> Vec<RBox> {
    let pts = scene.points();
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let nearest = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| q.dist(*p))
                .fold(f64::INFINITY, f64::min);
            let size = if nearest.is_finite() {
                (0.5 * nearest).clamp(cfg.init_min, cfg.init_max)
            } else {
                cfg.init_single
            };
            RBox::new(p.x, p.y, size, size, 0.0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Canonical boxes, index-aligned with the instances.
    pub boxes: Vec<RBox>,
    /// One entry per iteration, evaluated before that iteration's step.
    pub trace: Vec<LossBreakdown>,
    /// Loss of the returned boxes.
    pub final_loss: LossBreakdown,
    pub warnings: Vec<FitWarning>,
}

impl FitResult {
    pub fn initial_total(&self) -> f64 {
        self.trace.first().map_or(0.0, |l| l.total)
    }

    pub fn final_total(&self) -> f64 {
        self.final_loss.total
    }
}

pub fn fit_scene(scene: &SceneAnnotation, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let cache = SceneCache::build(scene, cfg)?;
    fit_scene_with_cache(scene, &cache, cfg)
}

struct Adam {
    m: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![[0.0; 3]; n], v: vec![[0.0; 3]; n], t: 0 }
    }

    fn step(&mut self, params: &mut [[f64; 3]], grad: &[[f64; 3]], cfg: &FitConfig) {
        let (lr, b1, b2) = (cfg.step_size, cfg.adam_beta1, cfg.adam_beta2);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..3 {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let lr = if k == 2 { cfg.angle_step_size } else { lr };
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn to_boxes(points: &[Point2], params: &[[f64; 3]]) -> Vec<RBox> {
    points
        .iter()
        .zip(params)
        .map(|(p, q)| RBox::new(p.x, p.y, q[0].exp(), q[1].exp(), q[2]))
        .collect()
}

/// Fits a scene whose cache was built beforehand (for instance with an
/// external edge map).
pub fn fit_scene_with_cache(scene: &SceneAnnotation, cache: &SceneCache, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    cache.check(scene, cfg)?;
    let mut init = init_params(scene, cfg);
    if cfg.orientation_init == OrientationInit::BasinMoments && !cache.flat_terrain {
        for (b, o) in init.iter_mut().zip(cache.basin_orientations()) {
            if let Some(theta) = o {
                b.theta = theta;
            }
        }
    }
    fit_scene_from(scene, cache, cfg, &init)
}

/// Fits starting from the sizes and angles of `init`; centers always come
/// from the annotated points.
pub fn fit_scene_from(scene: &SceneAnnotation, cache: &SceneCache, cfg: &FitConfig, init: &[RBox]) -> Result<FitResult> {
    cfg.validate()?;
    cache.check(scene, cfg)?;
    if init.len() != scene.len() {
        return Err(Error::StaleCache(format!("{} initial boxes for {} instances", init.len(), scene.len())));
    }
    if let Some(b) = init.iter().find(|b| !b.is_valid()) {
        return Err(Error::DegenerateGeometry(format!("initial box {b:?}")));
    }
    let points = scene.points();
    let mut params: Vec<[f64; 3]> = init.iter().map(|b| [b.w.ln(), b.h.ln(), b.theta]).collect();

    let mut warnings: BTreeSet<FitWarning> = cache.warnings.iter().cloned().collect();
    for (i, basin) in cache.basins.iter().enumerate() {
        if basin.is_empty() && !cache.flat_terrain {
            warnings.insert(FitWarning::EmptyBasin { instance: i });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.len());
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(f64, usize, Vec<[f64; 3]>)> = None;

    for iteration in 0..=cfg.iterations {
        let boxes = to_boxes(&points, &params);
        let targets = cache.targets(&boxes);
        for (i, t) in targets.iter().enumerate() {
            if !t.edge.evidence {
                warnings.insert(FitWarning::NoEdgeEvidence { instance: i });
            }
        }
        let view = cfg.with_ss.then(|| {
            // Transform of the detached current boxes: the term damps changes
            // between consecutive iterations.
            ConsistencyView::from_boxes(&boxes, draw_transform(&mut rng, &cfg.proportions))
        });
        let objective = Objective { weights: cfg.weights, form: cfg.gwd_form, targets: &targets, ss: view.as_ref() };
        let loss = objective.evaluate(&boxes)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration, diagnosis: loss.diagnosis() });
        }
        trace.push(loss);
        if best.as_ref().is_none_or(|(v, _, _)| loss.total < *v) {
            best = Some((loss.total, iteration, params.clone()));
        }
        if iteration == cfg.iterations {
            break;
        }
        let grad = objective.gradient(&boxes, cfg.gradient, cfg.fd_step)?;
        if let Some((i, _)) = grad.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { iteration, diagnosis: format!("gradient of instance {i}") });
        }
        adam.step(&mut params, &grad, cfg);
    }

    let initial = trace[0].total;
    let mut final_loss = *trace.last().expect("at least one evaluation");
    if final_loss.total > initial {
        if let Some((_, iteration, p)) = best {
            warnings.insert(FitWarning::UsedBestIterate { iteration });
            final_loss = trace[iteration];
            params = p;
        }
    }
    let boxes = to_boxes(&points, &params).iter().map(RBox::canonical).collect();
    Ok(FitResult { boxes, trace, final_loss, warnings: warnings.into_iter().collect() })
}
