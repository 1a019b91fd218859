//! Homogeneous quasi-distances on products of stratified nilpotent groups,
//! Besicovitch covers, and the covering inequalities built on them.
//!
//! A point is a flat coordinate slice: an abelian factor of dimension `k`
//! contributes `k` coordinates, a Heisenberg factor contributes `(x, y, z)`.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::Rng;

use crate::math;
use crate::product::ChamberVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuasiError {
    InvalidDirection { component: usize },
    /// The direction has a different number of components than the space has factors.
    RankMismatch { factors: usize, components: usize },
    DimensionMismatch { expected: usize, found: usize },
    Precondition(&'static str),
}

impl fmt::Display for QuasiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidDirection { component } => {
                write!(f, "direction component {component} is not positive")
            }
            Self::RankMismatch { factors, components } => {
                write!(f, "space has {factors} factors but the direction has {components} components")
            }
            Self::DimensionMismatch { expected, found } => {
                write!(f, "expected a point of dimension {expected}, found {found}")
            }
            Self::Precondition(what) => write!(f, "precondition violated: {what}"),
        }
    }
}

impl core::error::Error for QuasiError {}

/// One factor `N_i` of the horospherical group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NilFactor {
    /// `R^dim` with the Euclidean norm; every coordinate has grade 1.
    Abelian(usize),
    /// The 3-dimensional Heisenberg group: grade-1 plane plus a grade-2 center,
    /// with the Koranyi gauge `(|h|^4 + 16 z^2)^{1/4}`.
    Heisenberg,
}

impl NilFactor {
    pub fn dim(&self) -> usize {
        match self {
            Self::Abelian(k) => *k,
            Self::Heisenberg => 3,
        }
    }

    /// `dim(grade 1) + 2 dim(grade 2)`.
    pub fn homogeneous_weight(&self) -> f64 {
        match self {
            Self::Abelian(k) => *k as f64,
            Self::Heisenberg => 4.0,
        }
    }

    /// Gauge of `p^{-1} q`.
    fn gauge(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            Self::Abelian(_) => {
                math::sqrt(p.iter().zip(q).map(|(a, b)| (b - a) * (b - a)).sum())
            }
            Self::Heisenberg => {
                let dx = q[0] - p[0];
                let dy = q[1] - p[1];
                let dz = q[2] - p[2] - 0.5 * (p[0] * q[1] - p[1] * q[0]);
                let h2 = dx * dx + dy * dy;
                math::powf(h2 * h2 + 16.0 * dz * dz, 0.25)
            }
        }
    }

    /// Lebesgue volume of the unit gauge ball.
    pub fn unit_volume(&self) -> f64 {
        match self {
            Self::Abelian(k) => {
                let h = *k as f64 / 2.0;
                math::powf(core::f64::consts::PI, h) / libm::tgamma(h + 1.0)
            }
            Self::Heisenberg => core::f64::consts::PI * core::f64::consts::PI / 8.0,
        }
    }

    fn dilate_into(&self, lambda: f64, p: &[f64], out: &mut Vec<f64>) {
        match self {
            Self::Abelian(_) => out.extend(p.iter().map(|x| lambda * x)),
            Self::Heisenberg => {
                out.push(lambda * p[0]);
                out.push(lambda * p[1]);
                out.push(lambda * lambda * p[2]);
            }
        }
    }
}

/// Validated per-factor exponents `t_i = alpha_i(v)`; all zero for the metric case `v = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Exponents(Vec<f64>);

impl Exponents {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_metric(&self) -> bool {
        self.0.iter().all(|t| *t == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedSpace {
    factors: Vec<NilFactor>,
    offsets: Vec<usize>,
    dim: usize,
}

impl StratifiedSpace {
    pub fn new(factors: Vec<NilFactor>) -> Self {
        assert!(!factors.is_empty(), "a stratified space needs at least one factor");
        let mut offsets = Vec::with_capacity(factors.len());
        let mut dim = 0;
        for f in &factors {
            offsets.push(dim);
            dim += f.dim();
        }
        Self { factors, offsets, dim }
    }

    /// `N = R^r`, the horospherical group of `PSL(2,R)^r`.
    pub fn abelian(r: usize) -> Self {
        Self::new(vec![NilFactor::Abelian(1); r])
    }

    pub fn factors(&self) -> &[NilFactor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True when every factor is a line, so balls are coordinate boxes.
    pub fn is_box_space(&self) -> bool {
        self.factors.iter().all(|f| *f == NilFactor::Abelian(1))
    }

    fn block<'a>(&self, i: usize, p: &'a [f64]) -> &'a [f64] {
        &p[self.offsets[i]..self.offsets[i] + self.factors[i].dim()]
    }

    pub fn exponents(&self, v: &ChamberVector) -> Result<Exponents, QuasiError> {
        if v.rank() != self.factors.len() {
            return Err(QuasiError::RankMismatch { factors: self.factors.len(), components: v.rank() });
        }
        if v.is_zero() {
            return Ok(Exponents(vec![0.0; v.rank()]));
        }
        if let Some(i) = v.as_slice().iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(QuasiError::InvalidDirection { component: i });
        }
        Ok(Exponents(v.as_slice().to_vec()))
    }

    fn check_point(&self, p: &[f64]) -> Result<(), QuasiError> {
        if p.len() == self.dim {
            Ok(())
        } else {
            Err(QuasiError::DimensionMismatch { expected: self.dim, found: p.len() })
        }
    }

    /// `d_v(p, q)` for pre-validated exponents.
    pub fn dist_with(&self, e: &Exponents, p: &[f64], q: &[f64]) -> f64 {
        let mut d: f64 = 0.0;
        for (i, f) in self.factors.iter().enumerate() {
            let g = f.gauge(self.block(i, p), self.block(i, q));
            let t = e.0[i];
            let di = if t == 0.0 { g } else { math::powf(g, 1.0 / t) };
            d = d.max(di);
        }
        d
    }

    /// Homogeneous dimension `Q(v) = sum_i t_i (dim grade-1 + 2 dim grade-2)`.
    pub fn homogeneous_dimension_with(&self, e: &Exponents) -> f64 {
        self.factors.iter().zip(&e.0).map(|(f, t)| t * f.homogeneous_weight()).sum()
    }

    pub fn ball_volume_with(&self, e: &Exponents, radius: f64) -> f64 {
        self.factors
            .iter()
            .zip(&e.0)
            .map(|(f, t)| {
                let s = if *t == 0.0 { radius } else { math::powf(radius, *t) };
                math::powf(s, f.homogeneous_weight()) * f.unit_volume()
            })
            .product()
    }

    /// Per-factor gauge radius `R^{t_i}` (or `R` in the metric case).
    fn gauge_radius(&self, e: &Exponents, i: usize, radius: f64) -> f64 {
        let t = e.0[i];
        if t == 0.0 {
            radius
        } else {
            math::powf(radius, t)
        }
    }
}

/// `d_v(p, q)`.
pub fn qdist(space: &StratifiedSpace, v: &ChamberVector, p: &[f64], q: &[f64]) -> Result<f64, QuasiError> {
    let e = space.exponents(v)?;
    space.check_point(p)?;
    space.check_point(q)?;
    Ok(space.dist_with(&e, p, q))
}

/// The anisotropic dilation `exp(t v) p exp(-t v)`.
pub fn dilate(space: &StratifiedSpace, v: &ChamberVector, t: f64, p: &[f64]) -> Result<Vec<f64>, QuasiError> {
    let e = space.exponents(v)?;
    space.check_point(p)?;
    let mut out = Vec::with_capacity(p.len());
    for (i, f) in space.factors.iter().enumerate() {
        f.dilate_into(math::exp(t * e.0[i]), space.block(i, p), &mut out);
    }
    Ok(out)
}

pub fn homogeneous_dimension(space: &StratifiedSpace, v: &ChamberVector) -> Result<f64, QuasiError> {
    Ok(space.homogeneous_dimension_with(&space.exponents(v)?))
}

/// Closed-form Lebesgue volume of `B_v(R)`.
pub fn ball_volume(space: &StratifiedSpace, v: &ChamberVector, radius: f64) -> Result<f64, QuasiError> {
    let e = space.exponents(v)?;
    if !(radius > 0.0) {
        return Err(QuasiError::Precondition("radius must be positive"));
    }
    Ok(space.ball_volume_with(&e, radius))
}

/// Hit-or-miss estimate of `vol B_v(R)` from `samples` uniform points in the bounding box.
pub fn ball_volume_monte_carlo<R: Rng + ?Sized>(
    space: &StratifiedSpace,
    v: &ChamberVector,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64, QuasiError> {
    let e = space.exponents(v)?;
    if !(radius > 0.0) || samples == 0 {
        return Err(QuasiError::Precondition("radius and sample count must be positive"));
    }
    let mut half = Vec::with_capacity(space.dim);
    for (i, f) in space.factors.iter().enumerate() {
        let s = space.gauge_radius(&e, i, radius);
        match f {
            NilFactor::Abelian(k) => half.extend(core::iter::repeat_n(s, *k)),
            NilFactor::Heisenberg => half.extend([s, s, s * s / 4.0]),
        }
    }
    let origin = vec![0.0; space.dim];
    let mut p = vec![0.0; space.dim];
    let mut hits = 0usize;
    for _ in 0..samples {
        for (x, h) in p.iter_mut().zip(&half) {
            *x = rng.random_range(-*h..*h);
        }
        if space.dist_with(&e, &origin, &p) < radius {
            hits += 1;
        }
    }
    let box_volume: f64 = half.iter().map(|h| 2.0 * h).product();
    Ok(box_volume * hits as f64 / samples as f64)
}

/// Largest observed `d(x,y) / (d(x,z) + d(z,y))` over random triples in `[-scale, scale]^dim`.
pub fn measured_quasi_triangle_constant<R: Rng + ?Sized>(
    space: &StratifiedSpace,
    v: &ChamberVector,
    triples: usize,
    scale: f64,
    rng: &mut R,
) -> Result<f64, QuasiError> {
    let e = space.exponents(v)?;
    let mut pts = [vec![0.0; space.dim], vec![0.0; space.dim], vec![0.0; space.dim]];
    let mut c: f64 = 1.0;
    for _ in 0..triples {
        for p in &mut pts {
            for x in p.iter_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
        let [x, y, z] = &pts;
        let num = space.dist_with(&e, x, y);
        let den = space.dist_with(&e, x, z) + space.dist_with(&e, z, y);
        if den > 0.0 {
            c = c.max(num / den);
        }
    }
    Ok(c)
}

/// An open quasi-ball `B_v(center, radius)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl QuasiBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cover {
    /// Indices into the input family, in selection order.
    pub selected: Vec<usize>,
    /// Largest number of selected balls containing one input center.
    pub multiplicity: usize,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Greedy Besicovitch subcover: descending radius (ties by lexicographic center),
/// skipping balls whose center is already covered.
pub fn besicovitch_cover(
    space: &StratifiedSpace,
    v: &ChamberVector,
    balls: &[QuasiBall],
) -> Result<Cover, QuasiError> {
    let e = space.exponents(v)?;
    for b in balls {
        space.check_point(&b.center)?;
        if !(b.radius > 0.0) {
            return Err(QuasiError::Precondition("radii must be positive"));
        }
    }
    let mut order: Vec<usize> = (0..balls.len()).collect();
    order.sort_by(|&i, &j| {
        balls[j]
            .radius
            .total_cmp(&balls[i].radius)
            .then_with(|| lex_cmp(&balls[i].center, &balls[j].center))
    });
    let mut selected: Vec<usize> = Vec::new();
    for &i in &order {
        let c = &balls[i].center;
        let covered = selected
            .iter()
            .any(|&j| space.dist_with(&e, &balls[j].center, c) < balls[j].radius);
        if !covered {
            selected.push(i);
        }
    }
    let multiplicity = balls
        .iter()
        .map(|b| {
            selected
                .iter()
                .filter(|&&j| space.dist_with(&e, &balls[j].center, &b.center) < balls[j].radius)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(Cover { selected, multiplicity })
}

/// Exact maximum overlap of a family of open box balls (all factors lines):
/// the overlap count is constant on the cells cut out by the box edges, so
/// testing one midpoint per cell suffices.
pub fn box_family_max_overlap(
    space: &StratifiedSpace,
    v: &ChamberVector,
    balls: &[QuasiBall],
) -> Result<usize, QuasiError> {
    if !space.is_box_space() {
        return Err(QuasiError::Precondition("exact overlap needs a space of line factors"));
    }
    let e = space.exponents(v)?;
    let d = space.dim;
    let half: Vec<Vec<f64>> = balls
        .iter()
        .map(|b| (0..d).map(|i| space.gauge_radius(&e, i, b.radius)).collect())
        .collect();
    let mut probes: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut edges: Vec<f64> = balls
            .iter()
            .zip(&half)
            .flat_map(|(b, h)| [b.center[i] - h[i], b.center[i] + h[i]])
            .collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        probes.push(edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect());
    }
    if probes.iter().any(Vec::is_empty) {
        return Ok(0);
    }
    let mut best = 0;
    let mut idx = vec![0usize; d];
    'outer: loop {
        let count = balls
            .iter()
            .zip(&half)
            .filter(|(b, h)| (0..d).all(|i| math::abs(probes[i][idx[i]] - b.center[i]) < h[i]))
            .count();
        best = best.max(count);
        for i in 0..d {
            idx[i] += 1;
            if idx[i] < probes[i].len() {
                continue 'outer;
            }
            idx[i] = 0;
        }
        break;
    }
    Ok(best)
}

/// Estimate of the Besicovitch constant `kappa_v`: the largest exact overlap of a
/// greedy subcover over `trials` small random families in the unit cube. Radii are
/// log-uniform on `[0.01, 1]`.
pub fn estimate_kappa<R: Rng + ?Sized>(
    space: &StratifiedSpace,
    v: &ChamberVector,
    trials: usize,
    family_size: usize,
    rng: &mut R,
) -> Result<usize, QuasiError> {
    let mut kappa = 1;
    for _ in 0..trials {
        let family: Vec<QuasiBall> = (0..family_size)
            .map(|_| {
                let center = (0..space.dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let radius = math::exp(rng.random_range(-math::ln(100.0)..0.0));
                QuasiBall::new(center, radius)
            })
            .collect();
        let cover = besicovitch_cover(space, v, &family)?;
        let chosen: Vec<QuasiBall> = cover.selected.iter().map(|&i| family[i].clone()).collect();
        kappa = kappa.max(box_family_max_overlap(space, v, &chosen)?);
    }
    Ok(kappa)
}

/// `kappa_*(v, beta, eta1, eta2) = m(B(eta2)) / m(B(eta1)) * e^{Q(v) beta} * kappa_v`.
///
/// The exponential uses the homogeneous dimension `Q(v)`, which is the growth rate of
/// `m(B_v(e^beta R)) / m(B_v(R))`.
pub fn kappa_star(
    space: &StratifiedSpace,
    v: &ChamberVector,
    beta: f64,
    eta1: f64,
    eta2: f64,
    kappa_v: f64,
) -> Result<f64, QuasiError> {
    let e = space.exponents(v)?;
    if e.is_metric() {
        return Err(QuasiError::Precondition("kappa_* needs an interior direction"));
    }
    if !(eta1 > 0.0 && eta1 <= eta2) {
        return Err(QuasiError::Precondition("need 0 < eta1 <= eta2"));
    }
    if !(beta >= 0.0) {
        return Err(QuasiError::Precondition("need beta >= 0"));
    }
    if !(kappa_v >= 1.0) {
        return Err(QuasiError::Precondition("need kappa_v >= 1"));
    }
    let ratio = space.ball_volume_with(&e, eta2) / space.ball_volume_with(&e, eta1);
    Ok(ratio * math::exp(space.homogeneous_dimension_with(&e) * beta) * kappa_v)
}

/// `B_v(c1, r1) ⊂ B_v(c2, r2)` for abelian factors (exact for Euclidean blocks).
pub fn ball_contained(space: &StratifiedSpace, e: &Exponents, inner: &QuasiBall, outer: &QuasiBall) -> Option<bool> {
    let mut inside = true;
    for (i, f) in space.factors.iter().enumerate() {
        if !matches!(f, NilFactor::Abelian(_)) {
            return None;
        }
        let g = f.gauge(space.block(i, &inner.center), space.block(i, &outer.center));
        inside &= g + space.gauge_radius(e, i, inner.radius) <= space.gauge_radius(e, i, outer.radius);
    }
    Some(inside)
}

/// Largest nested same-scale count from the covering lemma: greedy cover by
/// `B(u, e^{t_u} eta1)`, then for each selected `u_j` count selected `u_i` with
/// `B(u_i, e^{t_i} eta1) ⊂ B(u_j, e^{t_j} eta2)` and `|t_i - t_j| <= beta`.
pub fn nested_scale_count(
    space: &StratifiedSpace,
    v: &ChamberVector,
    centers: &[Vec<f64>],
    times: &[f64],
    beta: f64,
    eta1: f64,
    eta2: f64,
) -> Result<usize, QuasiError> {
    let e = space.exponents(v)?;
    if centers.len() != times.len() {
        return Err(QuasiError::Precondition("one time per center"));
    }
    let small: Vec<QuasiBall> = centers
        .iter()
        .zip(times)
        .map(|(c, t)| QuasiBall::new(c.clone(), math::exp(*t) * eta1))
        .collect();
    let cover = besicovitch_cover(space, v, &small)?;
    let mut best = 0;
    for &j in &cover.selected {
        let outer = QuasiBall::new(centers[j].clone(), math::exp(times[j]) * eta2);
        let mut count = 0;
        for &i in &cover.selected {
            if math::abs(times[i] - times[j]) > beta {
                continue;
            }
            match ball_contained(space, &e, &small[i], &outer) {
                Some(true) => count += 1,
                Some(false) => {}
                None => return Err(QuasiError::Precondition("containment needs abelian factors")),
            }
        }
        best = best.max(count);
    }
    Ok(best)
}

/// The unit torus `(R/Z)^r` of the abelian model, discretized with `2^bits` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TorusGrid {
    pub r: usize,
    pub bits: u32,
}

impl TorusGrid {
    pub const DEFAULT_BITS: u32 = 10;

    pub fn new(r: usize, bits: u32) -> Self {
        Self { r, bits }
    }

    pub fn side(&self) -> usize {
        1 << self.bits
    }

    pub fn cells(&self) -> usize {
        self.side().pow(self.r as u32)
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.side() as f64
    }

    pub fn cell_measure(&self) -> f64 {
        math::powf(self.cell_width(), self.r as f64)
    }

    /// Box half-widths (in cells) of the discrete ball `B_v(R)`: on axis `i`,
    /// the largest `k` with `k h < R^{t_i}`.
    pub fn half_widths(&self, e: &Exponents, radius: f64) -> Vec<usize> {
        let h = self.cell_width();
        let cap = self.side() / 2;
        e.as_slice()
            .iter()
            .map(|&t| {
                let s = if t == 0.0 { radius } else { math::powf(radius, t) };
                let k = math::ceil(s / h) as i64 - 1;
                (k.max(0) as usize).min(cap)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaximalCheck {
    /// `m(Omega_2 ∩ E†)`.
    pub lhs: f64,
    /// `2 kappa_v alpha^{-1} m(Omega_1)`.
    pub rhs: f64,
}

impl MaximalCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Periodic box sums along one axis with half-width `k`.
fn window_sum_axis(grid: &TorusGrid, src: &[u32], dst: &mut [u32], axis: usize, k: usize) {
    let n = grid.side();
    let stride = n.pow(axis as u32);
    let full = 2 * k + 1 >= n;
    let mut line = vec![0u32; n];
    let mut prefix = vec![0u32; n + 1];
    for base in 0..src.len() {
        if !(base / stride).is_multiple_of(n) {
            continue;
        }
        for (j, l) in line.iter_mut().enumerate() {
            *l = src[base + j * stride];
        }
        for j in 0..n {
            prefix[j + 1] = prefix[j] + line[j];
        }
        let total = prefix[n];
        for j in 0..n {
            let s = if full {
                total
            } else {
                let lo = j as i64 - k as i64;
                let hi = j + k + 1;
                if lo < 0 {
                    prefix[hi] + total - prefix[(lo + n as i64) as usize]
                } else if hi > n {
                    prefix[n] - prefix[lo as usize] + prefix[hi - n]
                } else {
                    prefix[hi] - prefix[lo as usize]
                }
            };
            dst[base + j * stride] = s;
        }
    }
}

fn box_sums(grid: &TorusGrid, indicator: &[u32], k: &[usize]) -> Vec<u32> {
    let mut a = indicator.to_vec();
    let mut b = vec![0u32; a.len()];
    for (axis, &kk) in k.iter().enumerate() {
        window_sum_axis(grid, &a, &mut b, axis, kk);
        core::mem::swap(&mut a, &mut b);
    }
    a
}

/// Distinct discrete balls `B_v(R)` for `0 < R <= r_max`, in increasing order.
pub fn discrete_ball_family(grid: &TorusGrid, e: &Exponents, r_max: f64) -> Vec<Vec<usize>> {
    let h = grid.cell_width();
    let cap = grid.side() / 2;
    let mut events: Vec<f64> = Vec::new();
    for &t in e.as_slice() {
        for k in 1..=cap {
            let s = k as f64 * h;
            let rk = if t == 0.0 { s } else { math::powf(s, 1.0 / t) };
            if rk >= r_max {
                break;
            }
            events.push(rk);
        }
    }
    events.sort_by(f64::total_cmp);
    events.dedup();
    let mut family = vec![vec![0usize; grid.r]];
    for (idx, &rk) in events.iter().enumerate() {
        // sample just above the breakpoint, below the next one
        let next = events.get(idx + 1).copied().unwrap_or(r_max).min(r_max);
        let probe = if next > rk { 0.5 * (rk + next) } else { rk };
        let k = grid.half_widths(e, probe);
        if family.last() != Some(&k) {
            family.push(k);
        }
    }
    let k = grid.half_widths(e, r_max);
    if family.last() != Some(&k) {
        family.push(k);
    }
    family
}

/// Grid quadrature of both sides of the maximal ratio inequality, with `R`
/// ranging over `(0, r_max]`.
pub fn maximal_set_bound_check(
    grid: &TorusGrid,
    omega1: &[bool],
    omega2: &[bool],
    alpha: f64,
    v: &ChamberVector,
    r_max: f64,
    kappa_v: f64,
) -> Result<MaximalCheck, QuasiError> {
    if grid.r == 0 || grid.bits == 0 {
        return Err(QuasiError::Precondition("degenerate grid"));
    }
    if omega1.len() != grid.cells() || omega2.len() != grid.cells() {
        return Err(QuasiError::Precondition("indicator size does not match the grid"));
    }
    if !(alpha > 0.0) || !(r_max > 0.0) {
        return Err(QuasiError::Precondition("need alpha > 0 and r_max > 0"));
    }
    if !omega2.iter().any(|b| *b) {
        return Err(QuasiError::Precondition("Omega_2 must have positive measure"));
    }
    let e = StratifiedSpace::abelian(grid.r).exponents(v)?;
    let i1: Vec<u32> = omega1.iter().map(|&b| b as u32).collect();
    let i2: Vec<u32> = omega2.iter().map(|&b| b as u32).collect();
    let mut in_e = vec![false; grid.cells()];
    for k in discrete_ball_family(grid, &e, r_max) {
        let s1 = box_sums(grid, &i1, &k);
        let s2 = box_sums(grid, &i2, &k);
        for x in 0..grid.cells() {
            if omega2[x] && !in_e[x] && s1[x] as f64 >= alpha * s2[x] as f64 {
                in_e[x] = true;
            }
        }
    }
    let m = grid.cell_measure();
    let lhs = in_e.iter().filter(|b| **b).count() as f64 * m;
    let m1 = omega1.iter().filter(|b| **b).count() as f64 * m;
    Ok(MaximalCheck { lhs, rhs: 2.0 * kappa_v / alpha * m1 })
}

/// A cubical grid on `N = R^r`: cell centers `cell * (i_1, ..., i_r)` with `|i_j| <= half_extent`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NGrid {
    pub r: usize,
    pub cell: f64,
    pub half_extent: usize,
}

impl NGrid {
    pub fn side(&self) -> usize {
        2 * self.half_extent + 1
    }

    pub fn cells(&self) -> usize {
        self.side().pow(self.r as u32)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        let n = self.side();
        let mut rest = index;
        (0..self.r)
            .map(|_| {
                let j = rest % n;
                rest /= n;
                (j as f64 - self.half_extent as f64) * self.cell
            })
            .collect()
    }
}

/// All grid times `t = dt, 2dt, ... <= horizon` at which
/// `hits(B_v(t + r)) / hits(B_v(t)) <= 1 + eps` (times with an empty denominator are skipped).
#[allow(clippy::too_many_arguments)]
pub fn slow_growth_times(
    grid: &NGrid,
    hits: &[bool],
    v: &ChamberVector,
    r: f64,
    eps: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>, QuasiError> {
    if hits.len() != grid.cells() {
        return Err(QuasiError::Precondition("indicator size does not match the grid"));
    }
    if !(r > 0.0 && eps > 0.0 && dt > 0.0) {
        return Err(QuasiError::Precondition("need r, eps, dt > 0"));
    }
    let space = StratifiedSpace::abelian(grid.r);
    let e = space.exponents(v)?;
    let origin = vec![0.0; grid.r];
    let mut radii: Vec<f64> = (0..grid.cells())
        .filter(|&i| hits[i])
        .map(|i| space.dist_with(&e, &origin, &grid.center(i)))
        .collect();
    if radii.is_empty() {
        return Err(QuasiError::Precondition("hit set is empty"));
    }
    radii.sort_by(f64::total_cmp);
    let count = |t: f64| radii.partition_point(|d| *d < t);
    let mut out = Vec::new();
    let steps = math::floor(horizon / dt + 1e-9) as usize;
    for k in 1..=steps {
        let t = k as f64 * dt;
        let inner = count(t);
        if inner == 0 {
            continue;
        }
        if count(t + r) as f64 <= (1.0 + eps) * inner as f64 {
            out.push(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> ChamberVector {
        ChamberVector::unchecked(x.to_vec())
    }

    #[test]
    fn qdist_examples() {
        let s = StratifiedSpace::abelian(2);
        assert_eq!(qdist(&s, &v(&[1.0, 2.0]), &[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        let d = qdist(&s, &v(&[1.0, 2.0]), &[0.0, 0.0], &[0.25, 0.04]).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert_eq!(
            qdist(&s, &v(&[1.0, -2.0]), &[0.0, 0.0], &[0.0, 0.0]),
            Err(QuasiError::InvalidDirection { component: 1 })
        );
        assert!(matches!(qdist(&s, &v(&[1.0]), &[0.0, 0.0], &[0.0, 0.0]), Err(QuasiError::RankMismatch { .. })));
        // v = 0 is the max of the factor metrics
        let d0 = qdist(&s, &v(&[0.0, 0.0]), &[0.0, 0.0], &[0.25, -0.5]).unwrap();
        assert_eq!(d0, 0.5);
    }

    #[test]
    fn heisenberg_gauge_is_left_invariant() {
        let s = StratifiedSpace::new(vec![NilFactor::Heisenberg]);
        let e = s.exponents(&v(&[1.0])).unwrap();
        let mul = |p: &[f64], q: &[f64]| {
            vec![p[0] + q[0], p[1] + q[1], p[2] + q[2] + 0.5 * (p[0] * q[1] - p[1] * q[0])]
        };
        let (u, p, q) = ([0.3, -1.1, 0.7], [0.2, 0.5, -0.4], [-0.6, 0.1, 0.9]);
        let a = s.dist_with(&e, &p, &q);
        let b = s.dist_with(&e, &mul(&u, &p), &mul(&u, &q));
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn dilation_examples() {
        let s = StratifiedSpace::abelian(2);
        let p = [0.3, -0.2];
        assert_eq!(dilate(&s, &v(&[1.0, 2.0]), 0.0, &p).unwrap(), p.to_vec());
        let q = dilate(&s, &v(&[1.0, 2.0]), 2.0f64.ln(), &[0.5, 0.25]).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-15 && (q[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn volume_examples() {
        let s = StratifiedSpace::abelian(2);
        for r in [0.5, 1.0, 3.0] {
            let vol = ball_volume(&s, &v(&[1.0, 2.0]), r).unwrap();
            assert!((vol - 4.0 * r * r * r).abs() < 1e-12 * r * r * r);
        }
        assert_eq!(homogeneous_dimension(&s, &v(&[1.0, 2.0])).unwrap(), 3.0);
        let h = StratifiedSpace::new(vec![NilFactor::Heisenberg]);
        assert_eq!(homogeneous_dimension(&h, &v(&[0.7])).unwrap(), 2.8);
    }

    #[test]
    fn heisenberg_unit_volume_matches_monte_carlo() {
        let h = StratifiedSpace::new(vec![NilFactor::Heisenberg]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mc = ball_volume_monte_carlo(&h, &v(&[1.0]), 1.0, 400_000, &mut rng).unwrap();
        let exact = ball_volume(&h, &v(&[1.0]), 1.0).unwrap();
        assert!((mc / exact - 1.0).abs() < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn cover_examples() {
        let s = StratifiedSpace::abelian(2);
        let w = v(&[1.0, 2.0]);
        assert_eq!(besicovitch_cover(&s, &w, &[]).unwrap(), Cover { selected: vec![], multiplicity: 0 });
        let one = [QuasiBall::new(vec![0.5, 0.5], 0.1)];
        assert_eq!(besicovitch_cover(&s, &w, &one).unwrap(), Cover { selected: vec![0], multiplicity: 1 });
        let two = [QuasiBall::new(vec![0.1, 0.1], 0.05), QuasiBall::new(vec![0.9, 0.9], 0.05)];
        let c = besicovitch_cover(&s, &w, &two).unwrap();
        assert_eq!(c.selected.len(), 2);
        assert_eq!(c.multiplicity, 1);
        // the small ball's center lies in the big one
        let nested = [QuasiBall::new(vec![0.5, 0.5], 0.01), QuasiBall::new(vec![0.5, 0.5], 0.5)];
        assert_eq!(besicovitch_cover(&s, &w, &nested).unwrap().selected, vec![1]);
    }

    #[test]
    fn exact_box_overlap_small_cases() {
        let s = StratifiedSpace::abelian(2);
        let w = v(&[1.0, 1.0]);
        let fam = [
            QuasiBall::new(vec![0.0, 0.0], 1.0),
            QuasiBall::new(vec![1.5, 0.0], 1.0),
            QuasiBall::new(vec![0.75, 1.5], 1.0),
            QuasiBall::new(vec![5.0, 5.0], 1.0),
        ];
        assert_eq!(box_family_max_overlap(&s, &w, &fam).unwrap(), 3);
        // touching open boxes do not overlap
        let touch = [QuasiBall::new(vec![0.0, 0.0], 1.0), QuasiBall::new(vec![2.0, 0.0], 1.0)];
        assert_eq!(box_family_max_overlap(&s, &w, &touch).unwrap(), 1);
    }

    #[test]
    fn kappa_star_examples() {
        let s = StratifiedSpace::abelian(2);
        let w = v(&[1.0, 2.0]);
        assert!((kappa_star(&s, &w, 0.0, 0.3, 0.3, 5.0).unwrap() - 5.0).abs() < 1e-12);
        assert!((kappa_star(&s, &w, 0.0, 0.1, 0.2, 4.0).unwrap() - 32.0).abs() < 1e-12);
        assert!(kappa_star(&s, &w, 0.0, 0.3, 0.1, 4.0).is_err());
        assert!(kappa_star(&s, &w, -1.0, 0.1, 0.2, 4.0).is_err());
    }

    #[test]
    fn maximal_trivial_cases() {
        let g = TorusGrid::new(2, 4);
        let w = v(&[1.0, 2.0]);
        let empty = vec![false; g.cells()];
        let full = vec![true; g.cells()];
        let c = maximal_set_bound_check(&g, &empty, &full, 0.5, &w, 0.2, 4.0).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        let c = maximal_set_bound_check(&g, &full, &full, 1.0, &w, 0.2, 4.0).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-15 && (c.rhs - 8.0).abs() < 1e-12);
        assert!(maximal_set_bound_check(&g, &full, &empty, 1.0, &w, 0.2, 4.0).is_err());
    }

    #[test]
    fn discrete_balls_are_monotone() {
        let g = TorusGrid::new(2, 5);
        let e = StratifiedSpace::abelian(2).exponents(&v(&[1.0, 2.0])).unwrap();
        let fam = discrete_ball_family(&g, &e, 0.4);
        assert_eq!(fam[0], vec![0, 0]);
        for w in fam.windows(2) {
            assert!(w[0][0] <= w[1][0] && w[0][1] <= w[1][1] && w[0] != w[1]);
        }
        assert_eq!(fam.last().unwrap(), &g.half_widths(&e, 0.4));
    }

    #[test]
    fn window_sums_match_direct_count() {
        let g = TorusGrid::new(2, 3);
        let n = g.side();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ind: Vec<u32> = (0..g.cells()).map(|_| rng.random_range(0..2)).collect();
        let k = [2usize, 1];
        let s = box_sums(&g, &ind, &k);
        for x in 0..n {
            for y in 0..n {
                let mut direct = 0;
                for dx in -(k[0] as i64)..=k[0] as i64 {
                    for dy in -(k[1] as i64)..=k[1] as i64 {
                        let xx = (x as i64 + dx).rem_euclid(n as i64) as usize;
                        let yy = (y as i64 + dy).rem_euclid(n as i64) as usize;
                        direct += ind[xx + n * yy];
                    }
                }
                assert_eq!(s[x + n * y], direct);
            }
        }
    }

    #[test]
    fn slow_growth_examples() {
        let grid = NGrid { r: 2, cell: 1.0, half_extent: 6 };
        let w = v(&[1.0, 2.0]);
        let mut one = vec![false; grid.cells()];
        one[grid.cells() / 2] = true;
        let times = slow_growth_times(&grid, &one, &w, 0.5, 0.01, 5.0, 0.5).unwrap();
        // origin has d = 0, so every t > 0 sees the single hit and ratio 1
        assert_eq!(times.len(), 10);
        assert!(slow_growth_times(&grid, &vec![false; grid.cells()], &w, 0.5, 0.01, 5.0, 0.5).is_err());
    }

    #[test]
    fn slow_growth_matches_direct_scan() {
        let grid = NGrid { r: 2, cell: 0.37, half_extent: 40 };
        let w = v(&[1.0, 1.5]);
        let hits: Vec<bool> = (0..grid.cells())
            .map(|i| {
                let c = grid.center(i);
                (c[0] / 0.37).round() as i64 % 3 == 0 && (c[1] / 0.37).round() as i64 % 2 == 0
            })
            .collect();
        let (r, eps, horizon, dt) = (0.5, 0.3, 6.0, 0.25);
        let fast = slow_growth_times(&grid, &hits, &w, r, eps, horizon, dt).unwrap();
        let count = |t: f64| {
            (0..grid.cells())
                .filter(|&i| {
                    let c = grid.center(i);
                    hits[i] && c[0].abs() < t && c[1].abs() < t.powf(1.5)
                })
                .count()
        };
        let mut direct = Vec::new();
        for k in 1..=24 {
            let t = k as f64 * dt;
            let a = count(t);
            if a > 0 && count(t + r) as f64 <= (1.0 + eps) * a as f64 {
                direct.push(t);
            }
        }
        assert!(!direct.is_empty());
        assert_eq!(fast, direct);
    }
}
