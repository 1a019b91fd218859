//! The product group `G = PSL(2,R)^r` and its vector-valued projections.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Mul;

use crate::math;
use crate::rank_one::{
    self, busemann, cartan, iwasawa, loxodromic_data, mobius, FactorBoundaryPoint, FactorElement,
    Mat2, RankOneError,
};

/// Boundary coordinates larger than this count as infinite when testing `y in N e^-`.
pub const CHART_MARGIN: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProductError {
    RankMismatch { expected: usize, found: usize },
    /// Factor `factor` of `g n` is outside the open Bruhat cell.
    NotInOpenCell { factor: usize },
    /// The attracting point is not in `N e^-` (it is at infinity in factor `factor`).
    OutsideCell { factor: usize },
    NotLoxodromic { factor: usize },
    /// A chamber vector with a non-positive (or non-finite) component.
    InvalidDirection { component: usize },
    /// Boundary points coincide in factor `factor`.
    NotInGeneralPosition { factor: usize },
    Factor(RankOneError),
}

impl fmt::Display for ProductError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RankMismatch { expected, found } => {
                write!(f, "expected {expected} factors, found {found}")
            }
            Self::NotInOpenCell { factor } => {
                write!(f, "factor {factor} is outside the open Bruhat cell")
            }
            Self::OutsideCell { factor } => {
                write!(f, "attracting point is not in N e- (factor {factor} at infinity)")
            }
            Self::NotLoxodromic { factor } => write!(f, "factor {factor} is not loxodromic"),
            Self::InvalidDirection { component } => {
                write!(f, "chamber vector component {component} is not positive")
            }
            Self::NotInGeneralPosition { factor } => {
                write!(f, "boundary points coincide in factor {factor}")
            }
            Self::Factor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ProductError {}

impl From<RankOneError> for ProductError {
    fn from(e: RankOneError) -> Self {
        Self::Factor(e)
    }
}

fn check_rank(expected: usize, found: usize) -> Result<(), ProductError> {
    if expected == found {
        Ok(())
    } else {
        Err(ProductError::RankMismatch { expected, found })
    }
}

/// An element of `PSL(2,R)^r`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    factors: Vec<FactorElement>,
}

impl GroupElement {
    pub fn new(factors: Vec<FactorElement>) -> Self {
        assert!(!factors.is_empty(), "a group element needs at least one factor");
        Self { factors }
    }

    pub fn identity(r: usize) -> Self {
        Self::new(alloc::vec![FactorElement::IDENTITY; r])
    }

    /// `exp(v) = (a_{v_1}, ..., a_{v_r})`.
    pub fn diagonal(v: &[f64]) -> Self {
        Self::new(v.iter().map(|&t| FactorElement::diagonal(t)).collect())
    }

    /// The element of `N` with coordinates `xs`.
    pub fn upper(xs: &[f64]) -> Self {
        Self::new(xs.iter().map(|&x| FactorElement::upper(x)).collect())
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[FactorElement] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &FactorElement {
        &self.factors[i]
    }

    pub fn try_mul(&self, other: &GroupElement) -> Result<GroupElement, ProductError> {
        check_rank(self.rank(), other.rank())?;
        Ok(GroupElement {
            factors: self.factors.iter().zip(&other.factors).map(|(a, b)| *a * *b).collect(),
        })
    }

    pub fn inverse(&self) -> Self {
        Self { factors: self.factors.iter().map(FactorElement::inverse).collect() }
    }

    pub fn pow(&self, n: i64) -> Self {
        Self { factors: self.factors.iter().map(|g| g.pow(n)).collect() }
    }

    /// Max-entry distance, maximized over factors.
    pub fn dist(&self, other: &GroupElement) -> f64 {
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| a.dist(b))
            .fold(0.0, f64::max)
    }

    pub fn dist_to_identity(&self) -> f64 {
        self.factors.iter().map(FactorElement::dist_to_identity).fold(0.0, f64::max)
    }

    /// Euclidean norm of the Cartan vector: the distance `d(o, g o)` in the
    /// product of hyperbolic planes.
    pub fn displacement_from_basepoint(&self) -> f64 {
        let s: f64 = self.factors.iter().map(|g| {
            let t = cartan(g).t;
            t * t
        }).sum();
        math::sqrt(s)
    }

    pub fn act(&self, xi: &BoundaryPoint) -> BoundaryPoint {
        BoundaryPoint(self.factors.iter().zip(&xi.0).map(|(g, p)| mobius(g, *p)).collect())
    }
}

impl Mul for &GroupElement {
    type Output = GroupElement;

    /// Panics on a factor-count mismatch; use [`GroupElement::try_mul`] to handle it.
    fn mul(self, other: &GroupElement) -> GroupElement {
        self.try_mul(other).expect("factor counts differ")
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;

    fn mul(self, other: GroupElement) -> GroupElement {
        &self * &other
    }
}

/// A vector in `a = R^r`; interior chamber vectors have all components positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ChamberVector(Vec<f64>);

impl ChamberVector {
    /// An interior vector: every component finite and strictly positive.
    pub fn interior(v: Vec<f64>) -> Result<Self, ProductError> {
        if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(ProductError::InvalidDirection { component: i });
        }
        Ok(Self(v))
    }

    pub fn zero(r: usize) -> Self {
        Self(alloc::vec![0.0; r])
    }

    /// Any vector, positive or not (used for scan directions that may leave the chamber).
    pub fn unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|x| x.is_finite() && *x > 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn unit(&self) -> Vec<f64> {
        let n = self.norm();
        self.0.iter().map(|x| x / n).collect()
    }
}

/// A point of `F = G/P`, one projective-line point per factor.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint(pub Vec<FactorBoundaryPoint>);

impl BoundaryPoint {
    pub fn e_plus(r: usize) -> Self {
        Self(alloc::vec![FactorBoundaryPoint::E_PLUS; r])
    }

    pub fn e_minus(r: usize) -> Self {
        Self(alloc::vec![FactorBoundaryPoint::E_MINUS; r])
    }

    pub fn from_angles(thetas: &[f64]) -> Self {
        Self(thetas.iter().map(|&t| FactorBoundaryPoint::from_angle(t)).collect())
    }

    pub fn angles(&self) -> Vec<f64> {
        self.0.iter().map(FactorBoundaryPoint::angle).collect()
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    /// Finite chart coordinates of a point of `N e^-`, with the overflow margin.
    pub fn chart_coordinates(&self) -> Result<Vec<f64>, ProductError> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, p)| match p.finite() {
                Some(x) if math::abs(x) <= CHART_MARGIN => Ok(x),
                _ => Err(ProductError::OutsideCell { factor: i }),
            })
            .collect()
    }
}

/// `AM` coordinates; `M` is trivial for PSL(2,R), so only the `a`-part remains.
#[derive(Clone, Debug, PartialEq)]
pub struct AMCoordinates {
    pub a: Vec<f64>,
}

/// Componentwise Cartan projection `mu(g)`.
pub fn cartan_vector(g: &GroupElement) -> Vec<f64> {
    g.factors().iter().map(|h| cartan(h).t).collect()
}

/// Componentwise Jordan projection; zero in non-loxodromic factors.
pub fn jordan_vector(g: &GroupElement) -> Vec<f64> {
    g.factors().iter().map(rank_one::jordan).collect()
}

pub fn is_loxodromic(g: &GroupElement) -> bool {
    g.factors().iter().all(|h| loxodromic_data(h).is_some())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedFlags {
    /// `y_g`, the attracting fixed point.
    pub attract: BoundaryPoint,
    /// `y_{g^{-1}}`.
    pub repel: BoundaryPoint,
}

/// `Some` iff `g` is loxodromic in every factor.
pub fn fixed_flags(g: &GroupElement) -> Option<FixedFlags> {
    let mut attract = Vec::with_capacity(g.rank());
    let mut repel = Vec::with_capacity(g.rank());
    for h in g.factors() {
        let d = loxodromic_data(h)?;
        attract.push(d.attract);
        repel.push(d.repel);
    }
    Some(FixedFlags { attract: BoundaryPoint(attract), repel: BoundaryPoint(repel) })
}

/// `(xi, eta)` is in the open orbit `F^(2)` iff they differ in every factor.
pub fn general_position(xi: &BoundaryPoint, eta: &BoundaryPoint) -> bool {
    xi.0.len() == eta.0.len() && xi.0.iter().zip(&eta.0).all(|(a, b)| a != b)
}

/// Index of the first factor where `xi` and `eta` coincide up to `tol` in the circle coordinate.
pub fn general_position_defect(xi: &BoundaryPoint, eta: &BoundaryPoint, tol: f64) -> Option<usize> {
    xi.0.iter()
        .zip(&eta.0)
        .position(|(a, b)| rank_one::angle_distance(a.angle(), b.angle()) <= tol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruhatComponents {
    /// `b^N(g, n)` as `N`-coordinates.
    pub n: Vec<f64>,
    pub am: AMCoordinates,
    /// `b^{N^+}(g, n)` as `N^+`-coordinates.
    pub n_plus: Vec<f64>,
}

impl BruhatComponents {
    pub fn recompose(&self) -> GroupElement {
        let factors = (0..self.n.len())
            .map(|i| {
                rank_one::BruhatParts { x: self.n[i], t: self.am.a[i], y: self.n_plus[i] }
                    .recompose()
            })
            .collect();
        GroupElement::new(factors)
    }
}

/// `g n = b^N(g,n) b^{AM}(g,n) b^{N^+}(g,n)` for `n` given by its coordinates.
pub fn bruhat_components(g: &GroupElement, n: &[f64]) -> Result<BruhatComponents, ProductError> {
    check_rank(g.rank(), n.len())?;
    let mut out = BruhatComponents {
        n: Vec::with_capacity(n.len()),
        am: AMCoordinates { a: Vec::with_capacity(n.len()) },
        n_plus: Vec::with_capacity(n.len()),
    };
    for (i, (h, &x)) in g.factors().iter().zip(n).enumerate() {
        let p = rank_one::bruhat(&(*h * FactorElement::upper(x)))
            .map_err(|_| ProductError::NotInOpenCell { factor: i })?;
        out.n.push(p.x);
        out.am.a.push(p.t);
        out.n_plus.push(p.y);
    }
    Ok(out)
}

/// `lambda(g) = b^{AM}(g, y_g)` with `y_g = n e^-`.
pub fn generalized_jordan(g: &GroupElement) -> Result<AMCoordinates, ProductError> {
    let mut attract = Vec::with_capacity(g.rank());
    for (i, h) in g.factors().iter().enumerate() {
        let d = loxodromic_data(h).ok_or(ProductError::NotLoxodromic { factor: i })?;
        attract.push(d.attract);
    }
    let n = BoundaryPoint(attract).chart_coordinates()?;
    Ok(bruhat_components(g, &n)?.am)
}

/// Hopf coordinates `(g^+, g^-, beta_{g^+}(e, g))`.
#[derive(Clone, Debug, PartialEq)]
pub struct HopfPoint {
    pub plus: BoundaryPoint,
    pub minus: BoundaryPoint,
    pub b: Vec<f64>,
}

pub fn hopf(g: &GroupElement) -> HopfPoint {
    let r = g.rank();
    HopfPoint {
        plus: g.act(&BoundaryPoint::e_plus(r)),
        minus: g.act(&BoundaryPoint::e_minus(r)),
        b: g.factors().iter().map(|h| iwasawa(h).t).collect(),
    }
}

/// The unique element of `G/M = G` with the given Hopf coordinates: `k_xi a_b n_x`.
pub fn hopf_representative(p: &HopfPoint) -> Result<GroupElement, ProductError> {
    check_rank(p.plus.rank(), p.minus.rank())?;
    check_rank(p.plus.rank(), p.b.len())?;
    let mut factors = Vec::with_capacity(p.b.len());
    for i in 0..p.b.len() {
        let xi = p.plus.0[i];
        let eta = p.minus.0[i];
        if xi == eta {
            return Err(ProductError::NotInGeneralPosition { factor: i });
        }
        let k = FactorElement::rotation(xi.angle());
        let z = mobius(&k.inverse(), eta)
            .finite()
            .ok_or(ProductError::NotInGeneralPosition { factor: i })?;
        let b = p.b[i];
        let x = math::exp(-b) * z;
        factors.push(k * FactorElement::diagonal(b) * FactorElement::upper(x));
    }
    Ok(GroupElement::new(factors))
}

/// Componentwise Busemann cocycle `beta_xi(e, g)`.
pub fn busemann_vector(xi: &BoundaryPoint, g: &GroupElement) -> Vec<f64> {
    xi.0.iter().zip(g.factors()).map(|(p, h)| busemann(*p, h)).collect()
}

/// Lipschitz constant of `x -> h.x` on the chart interval `[lo, hi]`, measured from
/// `samples` equally spaced points (max slope over adjacent pairs).
pub fn measured_lipschitz(h: &FactorElement, lo: f64, hi: f64, samples: usize) -> Result<f64, RankOneError> {
    let mut prev: Option<(f64, f64)> = None;
    let mut lip: f64 = 0.0;
    for k in 0..samples {
        let x = lo + (hi - lo) * k as f64 / (samples - 1) as f64;
        let y = mobius(h, FactorBoundaryPoint::Finite(x))
            .finite()
            .ok_or(RankOneError::ChartSingularity)?;
        if let Some((px, py)) = prev {
            lip = lip.max(math::abs(y - py) / (x - px));
        }
        prev = Some((x, y));
    }
    Ok(lip)
}

/// Smallest `p0 <= max_power` such that `h^p` is `2^{-(t+1)}`-Lipschitz on
/// `[lo, hi]` for every `p0 <= p <= max_power`.
pub fn contraction_power(
    h: &FactorElement,
    lo: f64,
    hi: f64,
    t: f64,
    max_power: u32,
) -> Result<Option<u32>, RankOneError> {
    let bound = math::powf(2.0, -(t + 1.0));
    let mut p0 = None;
    let mut hp = FactorElement::IDENTITY;
    for p in 1..=max_power {
        hp = hp * *h;
        let lip = measured_lipschitz(&hp, lo, hi, 512)?;
        if lip <= bound {
            p0.get_or_insert(p);
        } else {
            p0 = None;
        }
    }
    Ok(p0)
}

/// `n -> b^N(g, n)` in coordinates; per factor this is the boundary action on `N e^-`.
pub fn bn_map(g: &GroupElement, n: &[f64]) -> Result<Vec<f64>, ProductError> {
    Ok(bruhat_components(g, n)?.n)
}

/// `|Jac_n b^N(g, .)|`, the product of the per-factor boundary derivatives.
pub fn bn_jacobian(g: &GroupElement, n: &[f64]) -> Result<f64, ProductError> {
    check_rank(g.rank(), n.len())?;
    let mut jac = 1.0;
    for (h, &x) in g.factors().iter().zip(n) {
        jac *= rank_one::boundary_derivative(h, FactorBoundaryPoint::Finite(x))?;
    }
    Ok(jac)
}

/// Helper used by callers that build elements from raw matrices.
pub fn element_from_matrices(ms: &[Mat2]) -> Result<GroupElement, RankOneError> {
    let factors = ms.iter().map(|m| FactorElement::normalize(*m)).collect::<Result<Vec<_>, _>>()?;
    Ok(GroupElement::new(factors))
}
