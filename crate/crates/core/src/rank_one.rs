//! Per-factor arithmetic in PSL(2,R).
//!
//! Conventions used throughout the crate:
//!
//! * `a_t = diag(e^{t/2}, e^{-t/2})`, positive chamber `t >= 0`, root `alpha(a_t) = t`;
//! * `N` is the upper unipotent group `[[1,x],[0,1]]` (contracted by `a_{-s} . a_s`),
//!   `N^+` the lower unipotent group, `P` the upper triangular group;
//! * the boundary `G/P` is the projective line, written in the affine chart
//!   `xi = x / y` of the column vector `(x, y)`; `e^+ = inf`, `e^- = 0`;
//! * the circle coordinate of a boundary point is the angle `theta in [0, pi)`
//!   of a representing unit vector, so `xi = cot(theta)` and `e^+` sits at `theta = 0`.

use core::f64::consts::PI;
use core::fmt;
use core::ops::Mul;

use crate::math;

/// Determinant magnitude below which a matrix is considered singular.
pub const MIN_DET: f64 = 1e-300;
/// `|d|` below which an element is treated as outside the open Bruhat cell.
pub const OPEN_CELL_TOL: f64 = 1e-12;
/// Margin on `|trace| - 2` separating loxodromic from parabolic/elliptic.
pub const LOXODROMIC_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankOneError {
    /// Determinant not positive (or numerically zero).
    InvalidElement { det: f64 },
    /// The lower-right entry vanishes, so `g` is not in `N A N^+`.
    NotInOpenCell,
    /// Boundary derivative requested at a point mapped to or from infinity.
    ChartSingularity,
}

impl fmt::Display for RankOneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidElement { det } => {
                write!(f, "matrix with determinant {det} is not an element of PSL(2,R)")
            }
            Self::NotInOpenCell => f.write_str("element is outside the open Bruhat cell N A N+"),
            Self::ChartSingularity => f.write_str("boundary point at infinity in the affine chart"),
        }
    }
}

impl core::error::Error for RankOneError {}

/// A plain real 2x2 matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Self {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn sub(&self, o: &Mat2) -> Self {
        Self::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }

    pub fn max_abs(&self) -> f64 {
        math::abs(self.a)
            .max(math::abs(self.b))
            .max(math::abs(self.c))
            .max(math::abs(self.d))
    }

    /// Max-entry distance.
    pub fn dist(&self, o: &Mat2) -> f64 {
        self.sub(o).max_abs()
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

fn rotation_matrix(angle: f64) -> Mat2 {
    let (s, c) = (math::sin(angle), math::cos(angle));
    Mat2::new(c, -s, s, c)
}

fn diagonal_matrix(t: f64) -> Mat2 {
    Mat2::new(math::exp(t / 2.0), 0.0, 0.0, math::exp(-t / 2.0))
}

/// An element of PSL(2,R): unit determinant, with the sign fixed so that the
/// first nonzero entry of the first column is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorElement(Mat2);

impl FactorElement {
    pub const IDENTITY: FactorElement = FactorElement(Mat2::IDENTITY);

    /// Scale `m` to unit determinant and pick the canonical sign.
    pub fn normalize(m: Mat2) -> Result<Self, RankOneError> {
        let det = m.det();
        if !(det > 0.0) || det < MIN_DET || !det.is_finite() {
            return Err(RankOneError::InvalidElement { det });
        }
        // already normalized up to rounding: keep the entries as they are
        let size = m.max_abs();
        if math::abs(det - 1.0) <= 8.0 * f64::EPSILON * size * size.max(1.0) {
            return Ok(Self::canonical(m));
        }
        Ok(Self::canonical(m.scale(1.0 / math::sqrt(det))))
    }

    fn canonical(m: Mat2) -> Self {
        let flip = m.a < 0.0 || (m.a == 0.0 && m.c < 0.0);
        FactorElement(if flip { m.scale(-1.0) } else { m })
    }

    /// Renormalize a product whose determinant has drifted from one. For large
    /// entries the computed determinant is dominated by cancellation, so it is
    /// left alone there.
    fn renormalized(m: Mat2) -> Self {
        let det = m.det();
        let size = m.max_abs();
        if det > 0.0 && det.is_finite() && size * size < 1e6 {
            Self::canonical(m.scale(1.0 / math::sqrt(det)))
        } else {
            Self::canonical(m)
        }
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Result<Self, RankOneError> {
        Self::normalize(Mat2::from_rows(rows))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    /// Rotation by `angle` (acts on the circle coordinate by `theta -> theta + angle`).
    pub fn rotation(angle: f64) -> Self {
        Self::canonical(rotation_matrix(angle))
    }

    /// `a_t = diag(e^{t/2}, e^{-t/2})`.
    pub fn diagonal(t: f64) -> Self {
        FactorElement(diagonal_matrix(t))
    }

    /// `n_x = [[1, x], [0, 1]]`, an element of `N`.
    pub fn upper(x: f64) -> Self {
        FactorElement(Mat2::new(1.0, x, 0.0, 1.0))
    }

    /// `[[1, 0], [y, 1]]`, an element of `N^+`.
    pub fn lower(y: f64) -> Self {
        FactorElement(Mat2::new(1.0, 0.0, y, 1.0))
    }

    /// The Weyl element `[[0, 1], [-1, 0]]`.
    pub fn w0() -> Self {
        Self::canonical(Mat2::new(0.0, 1.0, -1.0, 0.0))
    }

    /// The loxodromic element with the given attracting and repelling circle
    /// coordinates and Jordan coordinate `t > 0`.
    pub fn loxodromic(attract_angle: f64, repel_angle: f64, t: f64) -> Result<Self, RankOneError> {
        let (sa, ca) = (math::sin(attract_angle), math::cos(attract_angle));
        let (sr, cr) = (math::sin(repel_angle), math::cos(repel_angle));
        let mut phi = Mat2::new(ca, cr, sa, sr);
        if phi.det() < 0.0 {
            phi = Mat2::new(ca, -cr, sa, -sr);
        }
        let phi = Self::normalize(phi)?;
        Ok(phi * Self::diagonal(t) * phi.inverse())
    }

    pub fn inverse(&self) -> Self {
        let m = &self.0;
        Self::canonical(Mat2::new(m.d, -m.b, -m.c, m.a))
    }

    pub fn pow(&self, n: i64) -> Self {
        let base = if n < 0 { self.inverse() } else { *self };
        let mut e = n.unsigned_abs();
        let mut acc = Self::IDENTITY;
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * sq;
            }
            sq = sq * sq;
            e >>= 1;
        }
        acc
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Max-entry distance in PSL(2,R), i.e. minimized over the sign of `other`.
    pub fn dist(&self, other: &FactorElement) -> f64 {
        let d1 = self.0.dist(&other.0);
        let d2 = self.0.dist(&other.0.scale(-1.0));
        d1.min(d2)
    }

    /// Max-entry distance to the identity, minimized over the sign.
    pub fn dist_to_identity(&self) -> f64 {
        self.dist(&Self::IDENTITY)
    }
}

impl Mul for FactorElement {
    type Output = FactorElement;

    fn mul(self, o: FactorElement) -> FactorElement {
        FactorElement::renormalized(self.0 * o.0)
    }
}

/// A point of the projective line `R u {inf}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorBoundaryPoint {
    Finite(f64),
    Infinity,
}

impl FactorBoundaryPoint {
    pub const E_PLUS: FactorBoundaryPoint = FactorBoundaryPoint::Infinity;
    pub const E_MINUS: FactorBoundaryPoint = FactorBoundaryPoint::Finite(0.0);

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(x) => Some(*x),
            Self::Infinity => None,
        }
    }

    /// Circle coordinate in `[0, pi)`.
    pub fn angle(&self) -> f64 {
        match self {
            Self::Infinity => 0.0,
            Self::Finite(x) => math::rem_euclid(math::atan2(1.0, *x), PI),
        }
    }

    pub fn from_angle(theta: f64) -> Self {
        let theta = math::rem_euclid(theta, PI);
        let s = math::sin(theta);
        if s == 0.0 {
            Self::Infinity
        } else {
            Self::Finite(math::cos(theta) / s)
        }
    }

    /// Unit vector representing the point.
    pub fn unit_vector(&self) -> [f64; 2] {
        let th = self.angle();
        [math::cos(th), math::sin(th)]
    }

    fn from_vector(v: [f64; 2]) -> Self {
        if v[1] == 0.0 {
            Self::Infinity
        } else {
            Self::Finite(v[0] / v[1])
        }
    }
}

/// Distance between two circle coordinates on `R / pi Z`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = math::rem_euclid(a - b, PI);
    d.min(PI - d)
}

/// Boundary action `xi -> (a xi + b) / (c xi + d)`.
pub fn mobius(g: &FactorElement, xi: FactorBoundaryPoint) -> FactorBoundaryPoint {
    let m = g.matrix();
    match xi {
        FactorBoundaryPoint::Infinity => {
            if m.c == 0.0 {
                FactorBoundaryPoint::Infinity
            } else {
                FactorBoundaryPoint::Finite(m.a / m.c)
            }
        }
        FactorBoundaryPoint::Finite(x) => {
            let den = m.c * x + m.d;
            if den == 0.0 {
                FactorBoundaryPoint::Infinity
            } else {
                FactorBoundaryPoint::Finite((m.a * x + m.b) / den)
            }
        }
    }
}

/// Boundary action in the circle coordinate.
pub fn act_on_angle(g: &FactorElement, theta: f64) -> f64 {
    let v = g.matrix().apply([math::cos(theta), math::sin(theta)]);
    math::rem_euclid(math::atan2(v[1], v[0]), PI)
}

/// `g = k(angle) . a_t . n_x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IwasawaParts {
    pub k: f64,
    pub t: f64,
    pub x: f64,
}

impl IwasawaParts {
    pub fn recompose(&self) -> FactorElement {
        FactorElement::canonical(
            rotation_matrix(self.k) * diagonal_matrix(self.t) * Mat2::new(1.0, self.x, 0.0, 1.0),
        )
    }
}

/// `g = k(k1) . a_t . k(k2)` with `t >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartanParts {
    pub k1: f64,
    pub t: f64,
    pub k2: f64,
}

impl CartanParts {
    pub fn recompose(&self) -> FactorElement {
        FactorElement::canonical(
            rotation_matrix(self.k1) * diagonal_matrix(self.t) * rotation_matrix(self.k2),
        )
    }
}

/// `g = n_x . a_t . [[1,0],[y,1]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BruhatParts {
    pub x: f64,
    pub t: f64,
    pub y: f64,
}

impl BruhatParts {
    pub fn recompose(&self) -> FactorElement {
        FactorElement::canonical(
            Mat2::new(1.0, self.x, 0.0, 1.0)
                * diagonal_matrix(self.t)
                * Mat2::new(1.0, 0.0, self.y, 1.0),
        )
    }
}

pub fn iwasawa(g: &FactorElement) -> IwasawaParts {
    let m = g.matrix();
    let r = math::hypot(m.a, m.c);
    IwasawaParts {
        k: math::atan2(m.c, m.a),
        t: 2.0 * math::ln(r),
        x: (m.a * m.b + m.c * m.d) / (r * r),
    }
}

pub fn cartan(g: &FactorElement) -> CartanParts {
    let m = g.matrix();
    let e = 0.5 * (m.a + m.d);
    let f = 0.5 * (m.a - m.d);
    let gg = 0.5 * (m.c + m.b);
    let h = 0.5 * (m.c - m.b);
    let q = math::hypot(e, h);
    let r = math::hypot(f, gg);
    let a1 = math::atan2(gg, f);
    let a2 = math::atan2(h, e);
    // sigma_1 sigma_2 = det = 1
    let sigma1 = q + r;
    CartanParts {
        k1: 0.5 * (a2 + a1),
        t: (2.0 * math::ln(sigma1)).max(0.0),
        k2: 0.5 * (a2 - a1),
    }
}

pub fn bruhat(g: &FactorElement) -> Result<BruhatParts, RankOneError> {
    let mut m = *g.matrix();
    if math::abs(m.d) < OPEN_CELL_TOL {
        return Err(RankOneError::NotInOpenCell);
    }
    if m.d < 0.0 {
        m = m.scale(-1.0);
    }
    Ok(BruhatParts {
        x: m.b / m.d,
        t: -2.0 * math::ln(m.d),
        y: m.c / m.d,
    })
}

/// Jordan data of a loxodromic element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoxodromicData {
    /// `2 log rho` for the spectral radius `rho`.
    pub t_jordan: f64,
    pub attract: FactorBoundaryPoint,
    pub repel: FactorBoundaryPoint,
}

fn eigendirection(m: &Mat2, lambda: f64) -> FactorBoundaryPoint {
    // Two candidate kernel vectors of (m - lambda); keep the better conditioned one.
    let v1 = [m.b, lambda - m.a];
    let v2 = [lambda - m.d, m.c];
    let n1 = v1[0] * v1[0] + v1[1] * v1[1];
    let n2 = v2[0] * v2[0] + v2[1] * v2[1];
    FactorBoundaryPoint::from_vector(if n1 >= n2 { v1 } else { v2 })
}

/// `None` for elliptic, parabolic and identity elements (Jordan coordinate zero).
pub fn loxodromic_data(g: &FactorElement) -> Option<LoxodromicData> {
    let m = g.matrix();
    let tr = m.trace();
    if math::abs(tr) - 2.0 <= LOXODROMIC_TOL {
        return None;
    }
    let disc = math::sqrt((tr - 2.0) * (tr + 2.0));
    let rho = 0.5 * (math::abs(tr) + disc);
    let sign = if tr > 0.0 { 1.0 } else { -1.0 };
    Some(LoxodromicData {
        t_jordan: 2.0 * math::ln(rho),
        attract: eigendirection(m, sign * rho),
        repel: eigendirection(m, sign / rho),
    })
}

/// Jordan coordinate, zero when `g` is not loxodromic.
pub fn jordan(g: &FactorElement) -> f64 {
    loxodromic_data(g).map_or(0.0, |d| d.t_jordan)
}

/// Iwasawa cocycle `sigma(h, xi)`: the `a`-part of `h . k_xi` where `k_xi . inf = xi`.
pub fn iwasawa_cocycle(h: &FactorElement, xi: FactorBoundaryPoint) -> f64 {
    let v = h.matrix().apply(xi.unit_vector());
    math::ln(v[0] * v[0] + v[1] * v[1])
}

/// Busemann cocycle `beta_xi(e, g) = -sigma(g^{-1}, xi)`.
pub fn busemann(xi: FactorBoundaryPoint, g: &FactorElement) -> f64 {
    -iwasawa_cocycle(&g.inverse(), xi)
}

/// `|d(g xi)/d xi| = 1 / (c xi + d)^2` in the affine chart.
pub fn boundary_derivative(g: &FactorElement, xi: FactorBoundaryPoint) -> Result<f64, RankOneError> {
    let x = xi.finite().ok_or(RankOneError::ChartSingularity)?;
    let m = g.matrix();
    let den = m.c * x + m.d;
    if den == 0.0 || !den.is_finite() {
        return Err(RankOneError::ChartSingularity);
    }
    Ok(1.0 / (den * den))
}
