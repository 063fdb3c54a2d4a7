//! Oriented boxes, 2×2 rotation algebra, corner quads and rotated IoU.
//!
//! Angle convention: pixel coordinates with x to the right and y down. A box
//! angle `theta` rotates the box's width axis from +x toward +y, i.e. the
//! ordinary rotation matrix applied in image coordinates. On screen that is a
//! clockwise turn. Canonical boxes have `w >= h` and `theta` in (−π/2, π/2].

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// A point (or vector) in pixel coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// Row-major 2×2 matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    #[inline]
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    #[inline]
    pub const fn diag(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, 0.0, y)
    }

    #[inline]
    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.a, self.c, self.b, self.d)
    }

    #[inline]
    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    #[inline]
    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    /// Closed-form inverse; `None` when the determinant is exactly zero or
    /// not finite.
    pub fn inverse(self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(Mat2::new(self.d * inv, -self.b * inv, -self.c * inv, self.a * inv))
    }

    #[inline]
    pub fn scale(self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    #[inline]
    pub fn apply(self, p: Point2) -> Point2 {
        Point2::new(self.a * p.x + self.b * p.y, self.c * p.x + self.d * p.y)
    }

    /// `self · m · selfᵀ`
    #[inline]
    pub fn congruence(self, m: Mat2) -> Mat2 {
        self * m * self.transpose()
    }

    /// Frobenius inner product `tr(selfᵀ · o)`.
    #[inline]
    pub fn frobenius_dot(self, o: Mat2) -> f64 {
        self.a * o.a + self.b * o.b + self.c * o.c + self.d * o.d
    }

    pub fn max_abs_diff(self, o: Mat2) -> f64 {
        (self.a - o.a)
            .abs()
            .max((self.b - o.b).abs())
            .max((self.c - o.c).abs())
            .max((self.d - o.d).abs())
    }

    pub fn is_finite(self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    #[inline]
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    #[inline]
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

/// Below this magnitude a sine or cosine is taken as 0, so quarter turns
/// are exact permutations.
const TRIG_SNAP: f64 = 1e-15;

/// `[[cos θ, −sin θ], [sin θ, cos θ]]`
#[inline]
pub fn rotation_matrix(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    let snap = |v: f64| if v.abs() < TRIG_SNAP { 0.0 } else { v };
    let (s, c) = (snap(s), snap(c));
    Mat2::new(c, -s, s, c)
}

/// Wraps an angle into (−π/2, π/2].
pub fn wrap_half_pi(theta: f64) -> f64 {
    // rem_euclid lands in [0, π); shift so the open end sits at −π/2.
    let t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t <= -FRAC_PI_2 {
        t + PI
    } else {
        t
    }
}

/// Oriented box: center, width along the rotated x axis, height along the
/// rotated y axis, and angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RBox {
    #[inline]
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { cx, cy, w, h, theta }
    }

    #[inline]
    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.theta.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same point set with `w >= h` and `theta` in (−π/2, π/2].
    pub fn canonical(&self) -> RBox {
        let (w, h, theta) = if self.w < self.h {
            (self.h, self.w, self.theta + FRAC_PI_2)
        } else {
            (self.w, self.h, self.theta)
        };
        RBox::new(self.cx, self.cy, w, h, wrap_half_pi(theta))
    }

    /// Four corners, starting at the (−w/2, −h/2) local corner and walking
    /// toward +w first.
    pub fn to_quad(&self) -> PolyQuad {
        rbox_to_quad(self)
    }

    /// Maps a point into the box frame: x along the width axis, y along the
    /// height axis, origin at the center.
    #[inline]
    pub fn to_local(&self, p: Point2) -> Point2 {
        rotation_matrix(self.theta).transpose().apply(p - self.center())
    }

    pub fn contains(&self, p: Point2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.w / 2.0 && l.y.abs() <= self.h / 2.0
    }
}

/// Four corners of a convex quadrilateral in a consistent winding order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyQuad {
    pub corners: [Point2; 4],
}

impl PolyQuad {
    pub fn new(corners: [Point2; 4]) -> Self {
        Self { corners }
    }

    /// Signed shoelace area; positive when the corners turn from +x toward +y.
    pub fn signed_area(&self) -> f64 {
        polygon_signed_area(&self.corners)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }
}

pub fn rbox_to_quad(b: &RBox) -> PolyQuad {
    let r = rotation_matrix(b.theta);
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    let c = b.center();
    let local = [
        Point2::new(-hw, -hh),
        Point2::new(hw, -hh),
        Point2::new(hw, hh),
        Point2::new(-hw, hh),
    ];
    PolyQuad::new(local.map(|p| c + r.apply(p)))
}

/// Recovers a canonical box from an (approximately) rectangular quad.
///
/// Opposite edge lengths are averaged; the angle follows the longer edge
/// pair.
pub fn quad_to_rbox(q: &PolyQuad) -> Result<RBox> {
    let area = q.area();
    if !(area >= 1e-6) {
        return Err(Error::DegenerateGeometry(format!("quad area {area:.3e} px²")));
    }
    let p = &q.corners;
    let center = Point2::new(
        p.iter().map(|c| c.x).sum::<f64>() / 4.0,
        p.iter().map(|c| c.y).sum::<f64>() / 4.0,
    );
    let e01 = p[1] - p[0];
    let e32 = p[2] - p[3];
    let e12 = p[2] - p[1];
    let e03 = p[3] - p[0];
    let len_a = (e01.norm() + e32.norm()) / 2.0;
    let len_b = (e12.norm() + e03.norm()) / 2.0;
    let (w, h, dir) = if len_a >= len_b {
        (len_a, len_b, e01 + e32)
    } else {
        (len_b, len_a, e12 + e03)
    };
    let theta = wrap_half_pi(dir.y.atan2(dir.x));
    Ok(RBox::new(center.x, center.y, w, h, theta))
}

pub(crate) fn polygon_signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        s += pts[i].cross(pts[(i + 1) % n]);
    }
    s / 2.0
}

const SLIVER_AREA: f64 = 1e-9;

/// Clips the convex polygon `subject` against the convex polygon `clip`.
/// Both must have positive orientation.
fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b - a;
        let inside = |p: Point2| edge.cross(p - a) >= 0.0;
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (cur_in, prev_in) = (inside(cur), inside(prev));
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn segment_line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let edge = b - a;
    let dp = edge.cross(p - a);
    let dq = edge.cross(q - a);
    let denom = dp - dq;
    if denom.abs() < f64::EPSILON {
        return p;
    }
    let t = dp / denom;
    p + (q - p).scale(t)
}

fn positive_corners(q: &PolyQuad) -> [Point2; 4] {
    let mut c = q.corners;
    if q.signed_area() < 0.0 {
        c.reverse();
    }
    c
}

/// Area of the intersection of two boxes.
pub fn intersection_area(a: &RBox, b: &RBox) -> f64 {
    let qa = positive_corners(&a.to_quad());
    let qb = positive_corners(&b.to_quad());
    let poly = clip_convex(&qa, &qb);
    let area = polygon_signed_area(&poly);
    if area < SLIVER_AREA {
        0.0
    } else {
        area
    }
}

/// Rotated IoU via Sutherland–Hodgman clipping of the two corner quads.
pub fn rotated_iou(a: &RBox, b: &RBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// π-periodic absolute angle difference in [0, π/2].
pub fn angle_diff_mod_pi(a: f64, b: f64) -> f64 {
    wrap_half_pi(a - b).abs()
}
