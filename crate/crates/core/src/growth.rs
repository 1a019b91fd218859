//! Poincare series, critical exponents, tangent forms of the growth indicator,
//! Patterson atoms and the Burger-Roblin density.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::product::{busemann_vector, hopf_representative, BoundaryPoint, GroupElement, HopfPoint, ProductError};
use crate::rank_one::{cartan, FactorBoundaryPoint};
use crate::schottky::{enumerate_words, enumerate_words_from, limit_cone, Arc, Letter, SchottkyError, SchottkySystem};

/// Smallest weight a Patterson atom may carry before the series counts as null.
pub const UNDERFLOW: f64 = 1e-300;
/// Minimum `nu`-mass of a test arc.
pub const MIN_ARC_MASS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum GrowthError {
    Schottky(SchottkyError),
    Product(ProductError),
    /// The form is not positive on the words, so the series has no finite abscissa.
    Divergent,
    /// The direction is not in the measured limit cone.
    NoTangent,
    Underflow,
    /// A test arc carries too little mass.
    Partition { cell: usize, mass: f64 },
    Precondition(&'static str),
}

impl fmt::Display for GrowthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Schottky(e) => write!(f, "{e}"),
            Self::Product(e) => write!(f, "{e}"),
            Self::Divergent => write!(f, "form is not positive on the limit cone; the series diverges"),
            Self::NoTangent => write!(f, "direction lies outside the measured limit cone"),
            Self::Underflow => write!(f, "Poincare series is numerically null"),
            Self::Partition { cell, mass } => write!(f, "test arc {cell} has mass {mass:.3e}"),
            Self::Precondition(what) => write!(f, "precondition violated: {what}"),
        }
    }
}

impl core::error::Error for GrowthError {}

impl From<SchottkyError> for GrowthError {
    fn from(e: SchottkyError) -> Self {
        Self::Schottky(e)
    }
}

impl From<ProductError> for GrowthError {
    fn from(e: ProductError) -> Self {
        Self::Product(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm(pub Vec<f64>);

impl LinearForm {
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> LinearForm {
        LinearForm(self.0.iter().map(|a| c * a).collect())
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }
}

/// The form standing in for `2 rho`: the homogeneous dimension of `N = R^r`.
pub fn two_rho_form(r: usize) -> LinearForm {
    LinearForm(vec![1.0; r])
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + math::ln(xs.map(|x| math::exp(x - m)).sum::<f64>())
}

/// Cartan data of every non-trivial reduced word up to a length cutoff.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordData {
    r: usize,
    max_len: usize,
    lengths: Vec<usize>,
    /// Row-major `cartan[w * r + i]`.
    cartan: Vec<f64>,
    /// `k1` angle of each factor (the atom `k1 e^+`).
    k1: Vec<f64>,
}

impl WordData {
    pub fn collect(system: &SchottkySystem, max_len: usize) -> Result<Self, GrowthError> {
        let mut d = Self { r: system.r(), max_len, ..Default::default() };
        for (w, g) in enumerate_words(system, max_len)?.skip(1) {
            d.push(w.len(), &g);
        }
        Ok(d)
    }

    /// The part of [`WordData::collect`] whose words start with `first`.
    pub fn collect_from(system: &SchottkySystem, first: Letter, max_len: usize) -> Result<Self, GrowthError> {
        let mut d = Self { r: system.r(), max_len, ..Default::default() };
        for (w, g) in enumerate_words_from(system, first, max_len)? {
            d.push(w.len(), &g);
        }
        Ok(d)
    }

    /// Concatenate partial collections in the given order.
    pub fn merge(parts: Vec<WordData>) -> Self {
        let mut it = parts.into_iter();
        let mut d = it.next().unwrap_or_default();
        for p in it {
            d.max_len = d.max_len.max(p.max_len);
            d.lengths.extend(p.lengths);
            d.cartan.extend(p.cartan);
            d.k1.extend(p.k1);
        }
        d
    }

    fn push(&mut self, len: usize, g: &GroupElement) {
        self.lengths.push(len);
        for h in g.factors() {
            let c = cartan(h);
            self.cartan.push(c.t);
            self.k1.push(math::rem_euclid(c.k1, core::f64::consts::PI));
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn cartan_of(&self, w: usize) -> &[f64] {
        &self.cartan[w * self.r..(w + 1) * self.r]
    }

    pub fn length_of(&self, w: usize) -> usize {
        self.lengths[w]
    }

    fn phi_values(&self, phi: &LinearForm) -> Vec<f64> {
        (0..self.len()).map(|w| phi.eval(self.cartan_of(w))).collect()
    }

    /// `log S_n(phi)` for `n = 0..=max_len`.
    pub fn log_partial_sums(&self, phi: &LinearForm) -> Vec<f64> {
        let vals = self.phi_values(phi);
        self.log_sums_of(&vals, 1.0)
    }

    fn log_sums_of(&self, vals: &[f64], s: f64) -> Vec<f64> {
        let mut by_len: Vec<Vec<f64>> = vec![Vec::new(); self.max_len + 1];
        for (w, v) in vals.iter().enumerate() {
            by_len[self.lengths[w]].push(-s * v);
        }
        let mut out = vec![0.0];
        out.extend(by_len[1..].iter().map(|xs| log_sum_exp(xs.iter().copied())));
        out
    }
}

/// `S_n = sum_{|w| = n} e^{-phi(mu(w))}` for `n = 0..=max_len` (`S_0 = 1`).
pub fn poincare_partial(system: &SchottkySystem, phi: &LinearForm, max_len: usize) -> Result<Vec<f64>, GrowthError> {
    if max_len == 0 {
        return Err(GrowthError::Precondition("need max_len >= 1"));
    }
    let data = WordData::collect(system, max_len)?;
    Ok(data.log_partial_sums(phi).into_iter().map(math::exp).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaEstimate {
    pub delta: f64,
    /// Fitted slope of `log S_n(delta phi)` against `n` at the returned exponent.
    pub slope_residual: f64,
}

/// Per-length values bucketed once so that repeated slope evaluations are cheap.
struct Buckets {
    fit_lengths: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Buckets {
    fn new(data: &WordData, normalized: &[f64]) -> Self {
        let l = data.max_len;
        let first = l - l / 2 + 1;
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); l / 2];
        for (w, v) in normalized.iter().enumerate() {
            let n = data.lengths[w];
            if n >= first {
                values[n - first].push(*v);
            }
        }
        Self { fit_lengths: (first..=l).map(|n| n as f64).collect(), values }
    }

    fn slope(&self, s: f64) -> f64 {
        let ys: Vec<f64> = self.values.iter().map(|xs| log_sum_exp(xs.iter().map(|x| -s * x))).collect();
        math::ols_slope(&self.fit_lengths, &ys)
    }
}

/// Abscissa of convergence of `sum e^{-s phi(mu(w))}`: the `s` at which the fitted growth
/// slope of the last `L/2` partial sums vanishes.
pub fn delta_from_data(data: &WordData, phi: &LinearForm) -> Result<DeltaEstimate, GrowthError> {
    if data.max_len < 4 {
        return Err(GrowthError::Precondition("need max_len >= 4 for the slope fit"));
    }
    if phi.rank() != data.r {
        return Err(GrowthError::Precondition("form and system ranks differ"));
    }
    let vals = data.phi_values(phi);
    if vals.iter().any(|v| !(*v > 0.0)) {
        return Err(GrowthError::Divergent);
    }
    // normalize so the bracket does not depend on the scale of phi
    let scale = vals
        .iter()
        .zip(&data.lengths)
        .filter(|(_, n)| **n == 1)
        .map(|(v, _)| *v)
        .fold(0.0, f64::max);
    let normalized: Vec<f64> = vals.iter().map(|v| v / scale).collect();
    let buckets = Buckets::new(data, &normalized);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while buckets.slope(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(GrowthError::Divergent);
        }
    }
    if buckets.slope(lo) <= 0.0 {
        return Ok(DeltaEstimate { delta: 0.0, slope_residual: buckets.slope(0.0) });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if buckets.slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    Ok(DeltaEstimate { delta: s / scale, slope_residual: buckets.slope(s) })
}

pub fn delta_phi(system: &SchottkySystem, phi: &LinearForm, max_len: usize) -> Result<DeltaEstimate, GrowthError> {
    delta_from_data(&WordData::collect(system, max_len)?, phi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentEstimate {
    /// `psi_Gamma(v)`.
    pub psi_gamma: f64,
    /// The minimizing form `delta(phi) phi`, an estimate of `psi_v`.
    pub phi_v: LinearForm,
    /// Grid directions evaluated (including the refinement pass).
    pub evaluated: usize,
    /// True when the minimizer sits on the boundary of the direction simplex.
    pub on_boundary: bool,
    /// `(direction, delta)` for every grid point.
    pub samples: Vec<(Vec<f64>, f64)>,
}

fn simplex_grid(r: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; r];
    fn rec(i: usize, left: usize, r: usize, m: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if i == r - 1 {
            idx[i] = left;
            out.push(idx.iter().map(|&k| k as f64 / m as f64).collect());
            return;
        }
        for k in 0..=left {
            idx[i] = k;
            rec(i + 1, left - k, r, m, idx, out);
        }
    }
    rec(0, m, r, m, &mut idx, &mut out);
    out
}

/// Simplex denominators for `r >= 3` (15 points per axis for `r = 3`).
fn grid_denominator(r: usize) -> usize {
    match r {
        3 => 14,
        _ => 6,
    }
}

/// Points of the `r = 2` form grid.
pub const PLANAR_GRID: usize = 33;

/// Measured limit cone from words of length `<= max_len`: the angle interval for `r = 2`,
/// otherwise per-coordinate simplex bounds.
fn measured_cone(system: &SchottkySystem, max_len: usize) -> Result<crate::schottky::LimitCone, GrowthError> {
    Ok(limit_cone(system, max_len)?)
}

fn cone_contains(cone: &crate::schottky::LimitCone, v: &[f64], tol: f64) -> bool {
    if v.iter().any(|x| !(*x > 0.0)) {
        return false;
    }
    if let Some((lo, hi)) = cone.angle_interval {
        let a = math::atan2(v[1], v[0]);
        return a >= lo - tol && a <= hi + tol;
    }
    let s: f64 = v.iter().sum();
    cone.simplex_bounds.iter().zip(v).all(|((lo, hi), x)| x / s >= lo - tol && x / s <= hi + tol)
}

/// Whether the direction of `v` lies in the limit cone measured from words of length
/// `<= max_len` (with slack `tol`).
pub fn in_measured_cone(system: &SchottkySystem, v: &[f64], max_len: usize, tol: f64) -> Result<bool, GrowthError> {
    if system.r() == 1 {
        return Ok(v[0] > 0.0);
    }
    Ok(cone_contains(&measured_cone(system, max_len)?, v, tol))
}

fn unit_at(theta: f64) -> Vec<f64> {
    vec![math::cos(theta), math::sin(theta)]
}

/// `psi_Gamma(v) = min_phi delta(phi) phi(v)` over a grid of form directions, with one
/// refinement pass at half spacing around the minimizer when it is unique. Near-ties
/// are averaged.
///
/// For `r = 2` the grid is `PLANAR_GRID` unit forms spread over the open dual of the measured
/// cone (every form positive on the cone); for `r >= 3` it is a simplex grid.
pub fn psi_tangent_from_data(
    system: &SchottkySystem,
    data: &WordData,
    v: &[f64],
) -> Result<TangentEstimate, GrowthError> {
    let r = data.r;
    if v.len() != r {
        return Err(GrowthError::Precondition("direction and system ranks differ"));
    }
    let eval = |dir: &Vec<f64>| -> Result<f64, GrowthError> {
        Ok(delta_from_data(data, &LinearForm(dir.clone()))?.delta)
    };
    let value = |(dir, d): &(Vec<f64>, f64)| d * LinearForm(dir.clone()).eval(v);
    let mut samples: Vec<(Vec<f64>, f64)> = Vec::new();
    // grid index -> position, used for the refinement step and the boundary flag
    let mut refine: alloc::boxed::Box<dyn Fn(usize) -> Vec<Vec<f64>>> = alloc::boxed::Box::new(|_| Vec::new());
    let mut is_edge: alloc::boxed::Box<dyn Fn(usize) -> bool> = alloc::boxed::Box::new(|_| false);
    if r == 1 {
        if !(v[0] > 0.0) {
            return Err(GrowthError::NoTangent);
        }
        samples.push((vec![1.0], eval(&vec![1.0])?));
    } else {
        let cone = measured_cone(system, data.max_len.min(8))?;
        if !cone_contains(&cone, v, 1e-6) {
            return Err(GrowthError::NoTangent);
        }
        if let Some((lo, hi)) = cone.angle_interval {
            let (a, b) = (hi - core::f64::consts::FRAC_PI_2, lo + core::f64::consts::FRAC_PI_2);
            let h = (b - a) / PLANAR_GRID as f64;
            let theta = move |k: f64| a + h * (k + 0.5);
            for k in 0..PLANAR_GRID {
                let dir = unit_at(theta(k as f64));
                let d = eval(&dir)?;
                samples.push((dir, d));
            }
            refine = alloc::boxed::Box::new(move |k| {
                [-0.5, 0.5].iter().map(|o| unit_at(theta(k as f64 + o))).collect()
            });
            is_edge = alloc::boxed::Box::new(|k| k == 0 || k == PLANAR_GRID - 1);
        } else {
            let m = grid_denominator(r);
            let grid = simplex_grid(r, m);
            for dir in &grid {
                let d = eval(dir)?;
                samples.push((dir.clone(), d));
            }
            let g2 = grid.clone();
            refine = alloc::boxed::Box::new(move |k| {
                let h = 0.5 / m as f64;
                let mut out = Vec::new();
                for i in 0..r {
                    for j in 0..r {
                        let mut dir = g2[k].clone();
                        if i == j || dir[j] < h - 1e-15 {
                            continue;
                        }
                        dir[i] += h;
                        dir[j] -= h;
                        out.push(dir);
                    }
                }
                out
            });
            is_edge = alloc::boxed::Box::new(move |k| grid[k].iter().any(|x| *x <= 1e-12));
        }
    }
    let base = samples.len();
    let best = samples.iter().map(value).fold(f64::INFINITY, f64::min);
    let tol = |b: f64| 1e-9 * b.abs().max(1e-300);
    let base_ties: Vec<usize> = (0..base).filter(|&k| value(&samples[k]) - best <= tol(best)).collect();
    if base_ties.len() == 1 {
        for dir in refine(base_ties[0]) {
            let d = eval(&dir)?;
            samples.push((dir, d));
        }
    }
    let best = samples.iter().map(value).fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = (0..samples.len()).filter(|&k| value(&samples[k]) - best <= tol(best)).collect();
    let mut phi = vec![0.0; r];
    for &k in &ties {
        let (dir, d) = &samples[k];
        for (p, x) in phi.iter_mut().zip(dir) {
            *p += d * x / ties.len() as f64;
        }
    }
    let on_boundary = base_ties.iter().any(|&k| is_edge(k));
    Ok(TangentEstimate { psi_gamma: best, phi_v: LinearForm(phi), evaluated: samples.len(), on_boundary, samples })
}

pub fn psi_tangent(system: &SchottkySystem, v: &[f64], max_len: usize) -> Result<TangentEstimate, GrowthError> {
    psi_tangent_from_data(system, &WordData::collect(system, max_len)?, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub point: BoundaryPoint,
    pub weight: f64,
    /// Length of the word the atom came from.
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalMeasureEstimate {
    pub atoms: Vec<Atom>,
    pub form: LinearForm,
    pub s: f64,
    pub max_len: usize,
}

impl ConformalMeasureEstimate {
    /// `nu(A)` for a set given by a membership test on boundary points.
    pub fn mass_where(&self, mut inside: impl FnMut(&BoundaryPoint) -> bool) -> f64 {
        self.atoms.iter().filter(|a| inside(&a.point)).map(|a| a.weight).sum()
    }

    /// Total weight per word length, index `n` for length `n`.
    pub fn mass_by_length(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.max_len + 1];
        for a in &self.atoms {
            out[a.length] += a.weight;
        }
        out
    }
}

/// Patterson atoms: one atom `k1 e^+` per non-trivial word, weight `e^{-s phi(mu(w))}`, normalized.
pub fn patterson_from_data(data: &WordData, phi: &LinearForm, s: f64) -> Result<ConformalMeasureEstimate, GrowthError> {
    if data.max_len < 4 {
        return Err(GrowthError::Precondition("need max_len >= 4"));
    }
    if !(s > 0.0) {
        return Err(GrowthError::Precondition("need s > 0"));
    }
    let logs: Vec<f64> = (0..data.len()).map(|w| -s * phi.eval(data.cartan_of(w))).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(top >= math::ln(UNDERFLOW)) {
        return Err(GrowthError::Underflow);
    }
    let total = log_sum_exp(logs.iter().copied());
    let r = data.r;
    let atoms = logs
        .iter()
        .enumerate()
        .map(|(w, l)| Atom {
            point: BoundaryPoint::from_angles(&data.k1[w * r..(w + 1) * r]),
            weight: math::exp(l - total),
            length: data.lengths[w],
        })
        .collect();
    Ok(ConformalMeasureEstimate { atoms, form: phi.clone(), s, max_len: data.max_len })
}

pub fn patterson_atoms(
    system: &SchottkySystem,
    phi: &LinearForm,
    s: f64,
    max_len: usize,
) -> Result<ConformalMeasureEstimate, GrowthError> {
    patterson_from_data(&WordData::collect(system, max_len)?, phi, s)
}

/// Partition of the circle in `factor` into `cells` arcs of roughly equal `nu`-mass,
/// cut midway between consecutive atoms. The first cut sits in the widest gap.
pub fn quantile_partition(nu: &ConformalMeasureEstimate, factor: usize, cells: usize) -> Result<Vec<Arc>, GrowthError> {
    if cells == 0 || nu.atoms.len() < cells {
        return Err(GrowthError::Precondition("need at least one atom per cell"));
    }
    let pi = core::f64::consts::PI;
    let mut pts: Vec<(f64, f64)> = nu.atoms.iter().map(|a| (a.point.0[factor].angle(), a.weight)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // merge coincident atoms
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (t, w) in pts {
        match merged.last_mut() {
            Some(last) if t - last.0 < 1e-15 => last.1 += w,
            _ => merged.push((t, w)),
        }
    }
    let n = merged.len();
    if n < cells {
        return Err(GrowthError::Precondition("need at least one distinct atom per cell"));
    }
    let gap = |i: usize| {
        let next = if i + 1 < n { merged[i + 1].0 } else { merged[0].0 + pi };
        next - merged[i].0
    };
    let widest = (0..n).max_by(|&a, &b| gap(a).total_cmp(&gap(b))).expect("atoms present");
    let order: Vec<(f64, f64)> = (1..=n)
        .map(|k| {
            let i = (widest + k) % n;
            let t = if i <= widest { merged[i].0 + pi } else { merged[i].0 };
            (t, merged[i].1)
        })
        .collect();
    let total: f64 = order.iter().map(|p| p.1).sum();
    let start = 0.5 * (merged[widest].0 + merged[widest].0 + gap(widest));
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for p in &order {
        acc += p.1;
        cum.push(acc);
    }
    // cut `k` goes in the widest gap whose cumulative mass is within a quarter cell of `k/cells`
    let half_window = total / (4.0 * cells as f64);
    let mut cuts = vec![start];
    let mut prev: Option<usize> = None;
    for k in 1..cells {
        let q = total * k as f64 / cells as f64;
        let lo = prev.map_or(0, |p| p + 1);
        let hi = n - 1 - (cells - k);
        if lo > hi {
            return Err(GrowthError::Precondition("too few distinct atoms for the partition"));
        }
        let window: Vec<usize> = (lo..=hi).filter(|&j| (cum[j] - q).abs() <= half_window).collect();
        let j = if window.is_empty() {
            (lo..=hi).find(|&j| cum[j] >= q).unwrap_or(hi)
        } else {
            let w = |j: usize| order[j + 1].0 - order[j].0;
            window.iter().copied().fold(window[0], |b, j| if w(j) > w(b) { j } else { b })
        };
        cuts.push(0.5 * (order[j].0 + order[j + 1].0));
        prev = Some(j);
    }
    cuts.push(start + pi);
    Ok(cuts.windows(2).map(|w| Arc::new(w[0], w[1] - 1e-15)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConformalityResidual {
    pub residual: f64,
    /// `+1` when `nu(g^{-1}A)/nu(A)` matched `e^{+psi(beta)}`, `-1` for `e^{-psi(beta)}`.
    pub sign: i8,
    /// The residual under the losing sign.
    pub other: f64,
}

/// `max_A |nu(g^{-1}A)/nu(A) - e^{±psi(beta_{xi_A}(e,g))}|` over the arcs of `partition` in
/// `factor`, with `xi_A` the `nu`-median atom of `A`. Both signs are evaluated.
pub fn conformality_residual(
    nu: &ConformalMeasureEstimate,
    psi: &LinearForm,
    g: &GroupElement,
    factor: usize,
    partition: &[Arc],
) -> Result<ConformalityResidual, GrowthError> {
    let mut plus: f64 = 0.0;
    let mut minus: f64 = 0.0;
    for (cell, arc) in partition.iter().enumerate() {
        let mut inside: Vec<(f64, &Atom)> = nu
            .atoms
            .iter()
            .filter(|a| arc.contains(a.point.0[factor].angle()))
            .map(|a| (math::rem_euclid(a.point.0[factor].angle() - arc.start, core::f64::consts::PI), a))
            .collect();
        let mass: f64 = inside.iter().map(|(_, a)| a.weight).sum();
        if mass < MIN_ARC_MASS {
            return Err(GrowthError::Partition { cell, mass });
        }
        inside.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let centre = inside
            .iter()
            .find(|(_, a)| {
                acc += a.weight;
                acc >= 0.5 * mass
            })
            .map(|(_, a)| a.point.clone())
            .expect("non-empty arc");
        let pulled = nu.mass_where(|p| arc.contains(g.act(p).0[factor].angle()));
        let ratio = pulled / mass;
        let b = psi.eval(&busemann_vector(&centre, g));
        plus = plus.max(math::abs(ratio - math::exp(b)));
        minus = minus.max(math::abs(ratio - math::exp(-b)));
    }
    Ok(if plus <= minus {
        ConformalityResidual { residual: plus, sign: 1, other: minus }
    } else {
        ConformalityResidual { residual: minus, sign: -1, other: plus }
    })
}

/// `psi(beta_xi(e,g)) + 2rho(beta_eta(e,g))` for the element `g` with Hopf coordinates `p`.
pub fn br_log_density(psi: &LinearForm, p: &HopfPoint) -> Result<f64, GrowthError> {
    let g = hopf_representative(p)?;
    Ok(br_log_density_of(psi, &g))
}

/// The density exponent evaluated directly on a group element.
pub fn br_log_density_of(psi: &LinearForm, g: &GroupElement) -> f64 {
    let r = g.rank();
    let plus = g.act(&BoundaryPoint::e_plus(r));
    let minus = g.act(&BoundaryPoint(vec![FactorBoundaryPoint::E_MINUS; r]));
    psi.eval(&busemann_vector(&plus, g)) + two_rho_form(r).eval(&busemann_vector(&minus, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::product::{cartan_vector, hopf};
    use crate::rank_one::{iwasawa, FactorElement};
    use crate::schottky::{reference_fuchsian, reference_self_joining, word_count, PingPong, DEFAULT_TOLERANCE};
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn fuchsian() -> SchottkySystem {
        reference_fuchsian(3.0, 0.35, 0.0).unwrap()
    }

    #[test]
    fn zero_form_counts_words() {
        let s = fuchsian();
        let sums = poincare_partial(&s, &LinearForm(vec![0.0]), 5).unwrap();
        for n in 1..=5 {
            let count = (word_count(2, n) - word_count(2, n - 1)) as f64;
            assert!((sums[n] - count).abs() < 1e-9 * count);
        }
    }

    #[test]
    fn single_generator_series() {
        let g = GroupElement::new(vec![FactorElement::diagonal(2.0)]);
        let p = PingPong { attract: Arc::centered(0.0, 0.4), repel: Arc::centered(PI / 2.0, 0.4) };
        let s = SchottkySystem::new(1, vec![g], vec![vec![p]], DEFAULT_TOLERANCE).unwrap();
        let sums = poincare_partial(&s, &LinearForm(vec![1.0]), 6).unwrap();
        for n in 1..=6 {
            assert!((sums[n] - 2.0 * (-2.0 * n as f64).exp()).abs() < 1e-12);
        }
        assert_eq!(delta_phi(&s, &LinearForm(vec![1.0]), 6).unwrap().delta, 0.0);
    }

    #[test]
    fn brute_force_series_oracle() {
        let s = reference_self_joining(true).unwrap();
        let phi = LinearForm(vec![0.3, 0.7]);
        let sums = poincare_partial(&s, &phi, 5).unwrap();
        let mut brute = [0.0; 6];
        for len in 1..=5u32 {
            for code in 0..4usize.pow(len) {
                let mut c = code;
                let w: Vec<Letter> = (0..len).map(|_| {
                    let l = Letter(c % 4);
                    c /= 4;
                    l
                }).collect();
                if crate::schottky::Word::is_reduced(&w) {
                    let mu = cartan_vector(&s.evaluate(&w));
                    brute[len as usize] += (-phi.eval(&mu)).exp();
                }
            }
        }
        for n in 1..=5 {
            assert!((sums[n] - brute[n]).abs() < 1e-9 * brute[n]);
        }
    }

    #[test]
    fn delta_scaling_law() {
        let s = fuchsian();
        let d1 = delta_phi(&s, &LinearForm(vec![1.0]), 8).unwrap().delta;
        for c in [0.1, 2.0, 7.5] {
            let dc = delta_phi(&s, &LinearForm(vec![c]), 8).unwrap().delta;
            assert!((dc - d1 / c).abs() < 1e-6 * d1 / c, "{c}: {dc} vs {}", d1 / c);
        }
        let j = reference_self_joining(true).unwrap();
        let a = delta_phi(&j, &LinearForm(vec![0.4, 0.6]), 8).unwrap().delta;
        let b = delta_phi(&j, &LinearForm(vec![1.2, 1.8]), 8).unwrap().delta;
        assert!((b - a / 3.0).abs() < 1e-6 * a);
    }

    #[test]
    fn delta_decreases_with_separation() {
        let mut prev = f64::INFINITY;
        for t in [3.0, 4.0, 5.0, 6.0] {
            let d = delta_phi(&reference_fuchsian(t, 0.35, 0.0).unwrap(), &LinearForm(vec![1.0]), 8).unwrap();
            assert!(d.delta < 0.5 && d.delta < prev, "t={t}: {}", d.delta);
            assert!(d.slope_residual.abs() < 1e-6);
            prev = d.delta;
        }
        // translation-length oracle: far-apart generators behave like a free tree with
        // edge length t, critical exponent ln 3 / t
        let d = delta_phi(&reference_fuchsian(12.0, 0.35, 0.0).unwrap(), &LinearForm(vec![1.0]), 8).unwrap();
        assert!((d.delta - 3.0f64.ln() / 12.0).abs() < 0.1 * 3.0f64.ln() / 12.0);
    }

    #[test]
    fn diagonal_delta_matches_single_factor() {
        let diag = reference_self_joining(false).unwrap();
        let d2 = delta_phi(&diag, &LinearForm(vec![0.5, 0.5]), 8).unwrap().delta;
        let d1 = delta_phi(&fuchsian(), &LinearForm(vec![1.0]), 8).unwrap().delta;
        assert!((d2 - d1).abs() < 0.05 * d1);
    }

    #[test]
    fn negative_form_diverges() {
        let s = reference_self_joining(true).unwrap();
        assert_eq!(delta_phi(&s, &LinearForm(vec![1.0, -2.0]), 6), Err(GrowthError::Divergent));
    }

    #[test]
    fn tangent_rank_one() {
        let s = fuchsian();
        let data = WordData::collect(&s, 8).unwrap();
        let d = delta_from_data(&data, &LinearForm(vec![1.0])).unwrap().delta;
        let t = psi_tangent_from_data(&s, &data, &[2.0]).unwrap();
        assert!((t.psi_gamma - 2.0 * d).abs() < 1e-12);
        assert!((t.phi_v.0[0] - d).abs() < 1e-12);
    }

    #[test]
    fn tangent_diagonal_is_symmetric() {
        let s = reference_self_joining(false).unwrap();
        let t = psi_tangent(&s, &[1.0, 1.0], 7).unwrap();
        assert!((t.phi_v.0[0] - t.phi_v.0[1]).abs() < 1e-9 * t.phi_v.0[0]);
        assert!(matches!(psi_tangent(&s, &[1.0, 2.0], 7), Err(GrowthError::NoTangent)));
    }

    #[test]
    fn tangent_generic_is_interior_and_dominates() {
        let s = reference_self_joining(true).unwrap();
        let data = WordData::collect(&s, 7).unwrap();
        let cone = limit_cone(&s, 7).unwrap();
        let (lo, hi) = cone.angle_interval.unwrap();
        let mid = 0.5 * (lo + hi);
        let v = [mid.cos(), mid.sin()];
        let t = psi_tangent_from_data(&s, &data, &v).unwrap();
        assert!(!t.on_boundary);
        assert!(t.evaluated > 33);
        // value at v is attained, and every sampled form dominates psi at cone directions
        assert!((t.phi_v.eval(&v) - t.psi_gamma).abs() < 1e-9 * t.psi_gamma);
        for k in 0..=8 {
            let a = lo + (hi - lo) * k as f64 / 8.0;
            let u = [a.cos(), a.sin()];
            let psi_u = psi_tangent_from_data(&s, &data, &u).unwrap().psi_gamma;
            // forms refined around v are not on u's grid: allow grid-resolution slack
            for (dir, d) in &t.samples {
                assert!(d * LinearForm(dir.clone()).eval(&u) >= psi_u * (1.0 - 1e-3));
            }
        }
    }

    #[test]
    fn single_generator_atoms_sit_at_fixed_points() {
        let g = GroupElement::new(vec![FactorElement::loxodromic(0.3, 0.3 + PI / 2.0, 3.0).unwrap()]);
        let p = PingPong { attract: Arc::centered(0.3, 0.4), repel: Arc::centered(0.3 + PI / 2.0, 0.4) };
        let s = SchottkySystem::new(1, vec![g], vec![vec![p]], DEFAULT_TOLERANCE).unwrap();
        let nu = patterson_atoms(&s, &LinearForm(vec![1.0]), 0.5, 6).unwrap();
        assert_eq!(nu.atoms.len(), 12);
        for a in &nu.atoms {
            let th = a.point.0[0].angle();
            let d = crate::rank_one::angle_distance(th, 0.3).min(crate::rank_one::angle_distance(th, 0.3 + PI / 2.0));
            assert!(d < 1e-9);
        }
        let total: f64 = nu.atoms.iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atoms_live_in_attracting_arcs() {
        let s = reference_self_joining(true).unwrap();
        let nu = patterson_atoms(&s, &LinearForm(vec![0.5, 0.5]), 0.5, 7).unwrap();
        let outside = nu.mass_where(|p| {
            (0..2).any(|i| !(0..4).map(Letter).any(|l| s.attract_arc(l, i).contains(p.0[i].angle())))
        });
        assert!(outside < 1e-6);
    }

    #[test]
    fn atoms_underflow() {
        let s = fuchsian();
        assert_eq!(patterson_atoms(&s, &LinearForm(vec![1.0]), 1e4, 5), Err(GrowthError::Underflow));
    }

    #[test]
    fn mass_moves_to_long_words_as_s_decreases() {
        let s = fuchsian();
        let data = WordData::collect(&s, 10).unwrap();
        let phi = LinearForm(vec![1.0]);
        let d = delta_from_data(&data, &phi).unwrap().delta;
        let mut prev = 0.0;
        for ds in [0.3, 0.1, 0.03, 0.01] {
            let nu = patterson_from_data(&data, &phi, d + ds).unwrap();
            let tail = nu.mass_by_length()[10];
            assert!(tail > prev);
            prev = tail;
        }
    }

    #[test]
    fn conformality_identity_and_detection() {
        let s = fuchsian();
        let data = WordData::collect(&s, 8).unwrap();
        let phi = LinearForm(vec![1.0]);
        let d = delta_from_data(&data, &phi).unwrap().delta;
        let nu = patterson_from_data(&data, &phi, d + 0.01).unwrap();
        let part = quantile_partition(&nu, 0, 16).unwrap();
        assert_eq!(part.len(), 16);
        let id = GroupElement::identity(1);
        let res = conformality_residual(&nu, &phi.scaled(d), &id, 0, &part).unwrap();
        assert!(res.residual < 1e-12);
        let g = s.generators()[0].clone();
        let good = conformality_residual(&nu, &phi.scaled(d + 0.01), &g, 0, &part).unwrap();
        let bad = conformality_residual(&nu, &phi.scaled(2.0 * (d + 0.01)), &g, 0, &part).unwrap();
        assert!(bad.residual > good.residual);
    }

    #[test]
    fn partition_arcs_cover_atoms_once() {
        let s = fuchsian();
        let nu = patterson_atoms(&s, &LinearForm(vec![1.0]), 0.4, 6).unwrap();
        let part = quantile_partition(&nu, 0, 16).unwrap();
        for a in &nu.atoms {
            let th = a.point.0[0].angle();
            assert_eq!(part.iter().filter(|arc| arc.contains(th)).count(), 1);
        }
    }

    #[test]
    fn br_density_examples() {
        let psi = LinearForm(vec![0.7, 0.2]);
        let id = hopf(&GroupElement::identity(2));
        assert!(br_log_density(&psi, &id).unwrap().abs() < 1e-15);
        let g = GroupElement::diagonal(&[1.5, -0.5]);
        let val = br_log_density(&psi, &hopf(&g)).unwrap();
        // beta_{g^+} = (1.5, -0.5); beta_{g^-}(e, a_t) = -t
        assert!((val - (0.7 * 1.5 - 0.2 * 0.5 - 1.0)).abs() < 1e-12);
        let degenerate = HopfPoint { plus: BoundaryPoint::e_plus(2), minus: BoundaryPoint::e_plus(2), b: vec![0.0, 0.0] };
        assert!(matches!(br_log_density(&psi, &degenerate), Err(GrowthError::Product(_))));
    }

    #[test]
    fn beta_minus_matches_kan_plus_definition() {
        // g = k a_s n^+ gives beta_{g^-}(e, g) = -s
        let g = GroupElement::new(vec![FactorElement::rotation(0.4) * FactorElement::diagonal(1.3) * FactorElement::lower(0.8)]);
        let minus = g.act(&BoundaryPoint::e_minus(1));
        assert!((busemann_vector(&minus, &g)[0] + 1.3).abs() < 1e-12);
        assert!((busemann_vector(&hopf(&g).plus, &g)[0] - iwasawa(g.factor(0)).t).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn br_density_is_well_defined(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, x in -3.0..3.0f64) {
            let m = crate::rank_one::Mat2::new(1.0 + a.abs(), b, c, (1.0 + b * c) / (1.0 + a.abs()));
            let g = GroupElement::new(vec![FactorElement::normalize(m).unwrap(), FactorElement::rotation(x)]);
            let psi = LinearForm(vec![0.4, 1.1]);
            let direct = br_log_density_of(&psi, &g);
            let via_hopf = br_log_density(&psi, &hopf(&g)).unwrap();
            prop_assert!((direct - via_hopf).abs() < 1e-9);
            // the other sign representative of each factor
            let neg = GroupElement::new(g.factors().iter().map(|f| {
                let mm = f.matrix();
                FactorElement::normalize(crate::rank_one::Mat2::new(-mm.a, -mm.b, -mm.c, -mm.d)).unwrap()
            }).collect());
            prop_assert!((br_log_density_of(&psi, &neg) - direct).abs() < 1e-9);
        }
    }
}
