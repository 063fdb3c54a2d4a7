//! View transforms and the symmetry-aware consistency losses between a base
//! set of Gaussians and the set predicted on a transformed view.
//!
//! Only covariances and angles are compared; centers are not part of these
//! terms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::edge::{smooth_l1, SMOOTH_L1_BETA};
use crate::error::{Error, Result};
use crate::gaussian::{gwd_loss_with, Gaussian2D, GwdForm};
use crate::geometry::{rotation_matrix, wrap_half_pi, Mat2, Point2};

/// Scale factors are drawn from this open interval.
pub const SCALE_RANGE: (f64, f64) = (0.5, 0.9);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Rotation,
    Flip,
    Scale,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewTransform {
    pub kind: TransformKind,
    /// Rotation amount in radians; zero unless `kind` is `Rotation`.
    pub rotation: f64,
    /// Scale factor; one unless `kind` is `Scale`.
    pub scale: f64,
}

impl ViewTransform {
    pub fn rotation(angle: f64) -> Self {
        Self { kind: TransformKind::Rotation, rotation: angle, scale: 1.0 }
    }

    pub fn flip() -> Self {
        Self { kind: TransformKind::Flip, rotation: 0.0, scale: 1.0 }
    }

    pub fn scale(s: f64) -> Self {
        Self { kind: TransformKind::Scale, rotation: 0.0, scale: s }
    }

    /// Linear part acting on image coordinates.
    pub fn alpha(&self) -> Mat2 {
        match self.kind {
            TransformKind::Rotation => rotation_matrix(self.rotation),
            TransformKind::Flip => Mat2::diag(1.0, -1.0),
            TransformKind::Scale => Mat2::diag(self.scale, self.scale),
        }
    }

    /// Sign applied to the base angle before the rotation offset.
    pub fn angle_sign(&self) -> f64 {
        match self.kind {
            TransformKind::Flip => -1.0,
            _ => 1.0,
        }
    }

    /// Angle the augmented view should predict for a base angle `theta`.
    pub fn map_angle(&self, theta: f64) -> f64 {
        self.angle_sign() * theta + self.rotation
    }
}

/// Selection probabilities of rotation, flip and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportions {
    pub rotation: f64,
    pub flip: f64,
    pub scale: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Self { rotation: 0.68, flip: 0.07, scale: 0.25 }
    }
}

impl Proportions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.rotation, self.flip, self.scale];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("negative or non-finite proportion in {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("proportions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Draws one transform. Proportions must already be validated.
pub fn draw_transform<R: Rng + ?Sized>(rng: &mut R, p: &Proportions) -> ViewTransform {
    let u: f64 = rng.random();
    if u < p.rotation {
        ViewTransform::rotation(rng.random_range(0.0..2.0 * PI))
    } else if u < p.rotation + p.flip {
        ViewTransform::flip()
    } else {
        let (lo, hi) = SCALE_RANGE;
        // Open interval: resample the (measure-zero) lower endpoint.
        let mut s = rng.random_range(lo..hi);
        while s <= lo {
            s = rng.random_range(lo..hi);
        }
        ViewTransform::scale(s)
    }
}

/// Seeded stream of transforms.
pub struct TransformSampler {
    rng: ChaCha8Rng,
    proportions: Proportions,
}

impl TransformSampler {
    pub fn new(seed: u64, proportions: Proportions) -> Result<Self> {
        proportions.validate()?;
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), proportions })
    }

    pub fn next_transform(&mut self) -> ViewTransform {
        draw_transform(&mut self.rng, &self.proportions)
    }
}

/// One transform drawn from a fresh generator seeded with `seed`.
pub fn sample_transform(seed: u64, proportions: Proportions) -> Result<ViewTransform> {
    Ok(TransformSampler::new(seed, proportions)?.next_transform())
}

/// Maps the covariance through the transform; the mean is left as is.
pub fn transform_gaussian(t: &ViewTransform, g: &Gaussian2D) -> Gaussian2D {
    Gaussian2D::new(g.mu, t.alpha().congruence(g.sigma))
}

/// π-periodic smooth-L1 angle loss.
pub fn angle_loss(theta1: f64, theta2: f64) -> f64 {
    smooth_l1(wrap_half_pi(theta1 - theta2), SMOOTH_L1_BETA)
}

/// Per-instance predictions of the base and augmented views, index-aligned.
#[derive(Clone, Debug, Default)]
pub struct AugmentedPair {
    pub base: Vec<(Gaussian2D, f64)>,
    pub augmented: Vec<(Gaussian2D, f64)>,
}

impl AugmentedPair {
    /// The augmented view that is exactly consistent with `base` under `t`.
    pub fn exact(base: Vec<(Gaussian2D, f64)>, t: &ViewTransform) -> Self {
        let augmented = base
            .iter()
            .map(|(g, theta)| (transform_gaussian(t, g), t.map_angle(*theta)))
            .collect();
        Self { base, augmented }
    }
}

fn centered(sigma: Mat2) -> Gaussian2D {
    Gaussian2D::new(Point2::default(), sigma)
}

/// Mean over instances of the covariance term plus the angle term.
pub fn consistency_loss(pair: &AugmentedPair, t: &ViewTransform) -> Result<f64> {
    consistency_loss_with(GwdForm::Log, pair, t)
}

pub fn consistency_loss_with(form: GwdForm, pair: &AugmentedPair, t: &ViewTransform) -> Result<f64> {
    if pair.base.len() != pair.augmented.len() || pair.base.is_empty() {
        return Err(Error::Alignment { base: pair.base.len(), augmented: pair.augmented.len() });
    }
    let alpha = t.alpha();
    let mut total = 0.0;
    for ((g, theta), (ga, theta_a)) in pair.base.iter().zip(&pair.augmented) {
        let expected = centered(alpha.congruence(g.sigma));
        total += gwd_loss_with(form, &expected, &centered(ga.sigma))?;
        total += angle_loss(t.map_angle(*theta), *theta_a);
    }
    Ok(total / pair.base.len() as f64)
}
