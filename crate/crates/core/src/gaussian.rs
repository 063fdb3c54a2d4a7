//! Boxes as 2D Gaussians, and the Gaussian-space distances the losses use.
//!
//! A box maps to `N(μ, Σ)` with `μ` at the center and
//! `Σ = R · diag(w/2, h/2)² · Rᵀ`. Everything here is closed-form 2×2
//! algebra.

use crate::error::{Error, Result};
use crate::geometry::{rotation_matrix, wrap_half_pi, Mat2, Point2, RBox};

/// Relative asymmetry tolerated before a matrix is rejected as a covariance.
const SYMMETRY_TOL: f64 = 1e-9;
/// Largest condition number accepted for the averaged covariance.
const MAX_CONDITION: f64 = 1e12;
/// Rounding slack allowed under a square root before it is an error.
const ROOT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mu: Point2,
    pub sigma: Mat2,
}

impl Gaussian2D {
    pub fn new(mu: Point2, sigma: Mat2) -> Self {
        Self { mu, sigma }
    }

    /// Validates symmetry (relative 1e-9) and positive definiteness by
    /// leading minors.
    pub fn check_spd(&self) -> Result<()> {
        check_spd(self.sigma)
    }
}

pub(crate) fn check_spd(s: Mat2) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::InvalidCovariance("non-finite entry".into()));
    }
    let scale = s.b.abs().max(s.c.abs()).max(1.0);
    if (s.b - s.c).abs() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidCovariance(format!("asymmetric off-diagonal {} vs {}", s.b, s.c)));
    }
    if !(s.a > 0.0) || !(s.det() > 0.0) {
        return Err(Error::InvalidCovariance(format!(
            "leading minors {:.3e}, {:.3e}",
            s.a,
            s.det()
        )));
    }
    Ok(())
}

/// Eigenvalues `(λ_max, λ_min)` of a symmetric 2×2 matrix.
pub(crate) fn sym_eigenvalues(s: Mat2) -> (f64, f64) {
    let mean = 0.5 * (s.a + s.d);
    let off = 0.5 * (s.b + s.c);
    let r = (0.5 * (s.a - s.d)).hypot(off);
    (mean + r, mean - r)
}

pub fn rbox_to_gaussian(b: &RBox) -> Gaussian2D {
    Gaussian2D::new(b.center(), box_covariance(b.w, b.h, b.theta))
}

/// `R(θ) · diag(w/2, h/2)² · R(θ)ᵀ`
pub fn box_covariance(w: f64, h: f64, theta: f64) -> Mat2 {
    let (a, b) = (w / 2.0, h / 2.0);
    let (s, c) = theta.sin_cos();
    let (a2, b2) = (a * a, b * b);
    // Written out so the result is exactly symmetric.
    let xx = c * c * a2 + s * s * b2;
    let yy = s * s * a2 + c * c * b2;
    let xy = c * s * (a2 - b2);
    Mat2::new(xx, xy, xy, yy)
}

/// Derivatives of the box covariance with respect to `(ln w, ln h, θ)`.
pub fn box_covariance_derivs(w: f64, h: f64, theta: f64) -> [Mat2; 3] {
    let r = rotation_matrix(theta);
    let (a2, b2) = ((w / 2.0).powi(2), (h / 2.0).powi(2));
    [
        r.congruence(Mat2::diag(2.0 * a2, 0.0)),
        r.congruence(Mat2::diag(0.0, 2.0 * b2)),
        r.congruence(Mat2::new(0.0, a2 - b2, a2 - b2, 0.0)),
    ]
}

/// Inverse of [`rbox_to_gaussian`], returning a canonical box. An isotropic
/// covariance has no orientation and yields `theta = 0`.
pub fn gaussian_to_rbox(g: &Gaussian2D) -> Result<RBox> {
    g.check_spd()?;
    let s = g.sigma;
    let (l_max, l_min) = sym_eigenvalues(s);
    if !(l_min > 0.0) {
        return Err(Error::InvalidCovariance(format!("eigenvalue {l_min:.3e}")));
    }
    let off = 0.5 * (s.b + s.c);
    let theta = if off == 0.0 && s.a == s.d {
        0.0
    } else {
        0.5 * (2.0 * off).atan2(s.a - s.d)
    };
    Ok(RBox::new(
        g.mu.x,
        g.mu.y,
        2.0 * l_max.sqrt(),
        2.0 * l_min.sqrt(),
        wrap_half_pi(theta),
    ))
}

fn averaged_inverse(s1: Mat2, s2: Mat2) -> Result<(Mat2, Mat2)> {
    let avg = (s1 + s2).scale(0.5);
    let (l_max, l_min) = sym_eigenvalues(avg);
    if !(l_min > 0.0) || l_max / l_min > MAX_CONDITION {
        return Err(Error::IllConditioned {
            condition: if l_min > 0.0 { l_max / l_min } else { f64::INFINITY },
        });
    }
    let inv = avg
        .inverse()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok((avg, inv))
}

/// Bhattacharyya coefficient `∫√(p₁p₂)` of two Gaussians.
pub fn bhattacharyya_coefficient(g1: &Gaussian2D, g2: &Gaussian2D) -> Result<f64> {
    let (avg, inv) = averaged_inverse(g1.sigma, g2.sigma)?;
    let mu = g2.mu - g1.mu;
    let maha = mu.dot(inv.apply(mu));
    let dets = (g1.sigma.det() * g2.sigma.det()).sqrt().sqrt();
    Ok((-maha / 8.0).exp() * dets / avg.det().sqrt())
}

/// Coefficient plus its gradients with respect to `Σ₁` and `Σ₂`, laid out so
/// that `dB = ⟨G₁, dΣ₁⟩ + ⟨G₂, dΣ₂⟩` for symmetric perturbations. Means are
/// treated as fixed.
pub fn bhattacharyya_with_grad(g1: &Gaussian2D, g2: &Gaussian2D) -> Result<(f64, Mat2, Mat2)> {
    let (_, inv) = averaged_inverse(g1.sigma, g2.sigma)?;
    let bc = bhattacharyya_coefficient(g1, g2)?;
    let v = inv.apply(g2.mu - g1.mu);
    let outer = Mat2::new(v.x * v.x, v.x * v.y, v.y * v.x, v.y * v.y).scale(1.0 / 16.0);
    let grad = |own: Mat2| -> Result<Mat2> {
        let own_inv = own
            .inverse()
            .ok_or_else(|| Error::InvalidCovariance("singular covariance".into()))?;
        Ok((outer + own_inv.scale(0.25) - inv.scale(0.25)).scale(bc))
    };
    Ok((bc, grad(g1.sigma)?, grad(g2.sigma)?))
}

/// Pairwise coefficients of one scene's instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMatrix {
    n: usize,
    values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn build(gs: &[Gaussian2D]) -> Result<Self> {
        let n = gs.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in i + 1..n {
                let b = bhattacharyya_coefficient(&gs[i], &gs[j])?;
                values[i * n + j] = b;
                values[j * n + i] = b;
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// `(1/N) Σ_{i≠j} M_ij`
    pub fn off_diagonal_mean(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j);
                }
            }
        }
        s / self.n as f64
    }
}

/// Overlap loss: off-diagonal sum of the coefficient matrix divided by the
/// instance count. Zero for fewer than two instances.
pub fn gaussian_overlap_loss(gs: &[Gaussian2D]) -> Result<f64> {
    Ok(OverlapMatrix::build(gs)?.off_diagonal_mean())
}

/// Squared 2-Wasserstein distance between two 2D Gaussians.
pub fn wasserstein2_sq(g1: &Gaussian2D, g2: &Gaussian2D) -> Result<f64> {
    let (s1, s2) = (g1.sigma, g2.sigma);
    let det_prod = s1.det() * s2.det();
    let inner_root = clamped_sqrt(det_prod, "det(Σ₁)·det(Σ₂)")?;
    let cross = clamped_sqrt((s1 * s2).trace() + 2.0 * inner_root, "cross term")?;
    let d2 = (g1.mu - g2.mu).norm_sq() + s1.trace() + s2.trace() - 2.0 * cross;
    if d2 < 0.0 {
        // Cancellation in the trace terms; scale slack with their magnitude.
        let scale = (s1.trace() + s2.trace()).max(1.0);
        if d2 > -ROOT_SLACK * scale {
            return Ok(0.0);
        }
        return Err(Error::Numeric(format!("negative squared distance {d2:.3e}")));
    }
    Ok(d2)
}

fn clamped_sqrt(x: f64, what: &str) -> Result<f64> {
    if x >= 0.0 {
        Ok(x.sqrt())
    } else if x > -ROOT_SLACK {
        Ok(0.0)
    } else if x.is_nan() {
        Err(Error::Numeric(format!("{what} is NaN")))
    } else {
        Err(Error::Numeric(format!("{what} negative ({x:.3e})")))
    }
}

/// How a squared Wasserstein distance is turned into a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GwdForm {
    /// `ln(1 + d²)`
    #[default]
    Log,
    /// `d²`
    Raw,
    /// `1 − 1/(1 + d)`
    Inverse,
}

impl GwdForm {
    pub fn apply(self, d2: f64) -> f64 {
        match self {
            GwdForm::Log => d2.ln_1p(),
            GwdForm::Raw => d2,
            GwdForm::Inverse => 1.0 - 1.0 / (1.0 + d2.sqrt()),
        }
    }

    /// Derivative of [`GwdForm::apply`] with respect to `d²`.
    pub fn derivative(self, d2: f64) -> f64 {
        match self {
            GwdForm::Log => 1.0 / (1.0 + d2),
            GwdForm::Raw => 1.0,
            GwdForm::Inverse => {
                let d = d2.sqrt();
                if d == 0.0 {
                    // One-sided limit is unbounded; report zero at the optimum.
                    0.0
                } else {
                    1.0 / ((1.0 + d).powi(2) * 2.0 * d)
                }
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log" => Some(GwdForm::Log),
            "raw" => Some(GwdForm::Raw),
            "inverse" => Some(GwdForm::Inverse),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GwdForm::Log => "log",
            GwdForm::Raw => "raw",
            GwdForm::Inverse => "inverse",
        }
    }
}

/// Wasserstein loss in the default `ln(1 + d²)` form.
pub fn gwd_loss(g1: &Gaussian2D, g2: &Gaussian2D) -> Result<f64> {
    gwd_loss_with(GwdForm::Log, g1, g2)
}

pub fn gwd_loss_with(form: GwdForm, g1: &Gaussian2D, g2: &Gaussian2D) -> Result<f64> {
    Ok(form.apply(wasserstein2_sq(g1, g2)?))
}
