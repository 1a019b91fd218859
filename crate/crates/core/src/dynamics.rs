//! Directional flows on `Gamma \ G`: displacement scans, scenery sampling, and the
//! transverse random-walk experiment.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math;
use crate::product::{
    bn_jacobian, bn_map, fixed_flags, general_position, generalized_jordan, BoundaryPoint,
    GroupElement, ProductError,
};
use crate::rank_one::{FactorBoundaryPoint, FactorElement, RankOneError};
use crate::schottky::{enumerate_words, SchottkyError, SchottkySystem, Word};

pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_WORDS: usize = 8;
/// A word replaces the representative when it shrinks the basepoint distance below this factor.
pub const REDUCTION_FACTOR: f64 = 0.5;
pub const DEFAULT_BOUND: f64 = 10.0;
pub const DEFAULT_SEPARATION: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsError {
    Schottky(SchottkyError),
    Product(ProductError),
    RankMismatch { expected: usize, found: usize },
    Precondition(&'static str),
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Schottky(e) => write!(f, "{e}"),
            Self::Product(e) => write!(f, "{e}"),
            Self::RankMismatch { expected, found } => write!(f, "expected rank {expected}, found {found}"),
            Self::Precondition(what) => write!(f, "precondition violated: {what}"),
        }
    }
}

impl core::error::Error for DynamicsError {}

impl From<SchottkyError> for DynamicsError {
    fn from(e: SchottkyError) -> Self {
        Self::Schottky(e)
    }
}

impl From<ProductError> for DynamicsError {
    fn from(e: ProductError) -> Self {
        Self::Product(e)
    }
}

impl From<RankOneError> for DynamicsError {
    fn from(e: RankOneError) -> Self {
        Self::Product(ProductError::Factor(e))
    }
}

/// The non-trivial reduced words of length `<= radius` with their products.
#[derive(Clone, Debug)]
pub struct WordBall {
    pub radius: usize,
    pub words: Vec<Word>,
    pub elements: Vec<GroupElement>,
}

impl WordBall {
    pub fn new(system: &SchottkySystem, radius: usize) -> Result<Self, DynamicsError> {
        if radius == 0 {
            return Err(DynamicsError::Precondition("need W >= 1"));
        }
        let (words, elements) = enumerate_words(system, radius)?.skip(1).unzip();
        Ok(Self { radius, words, elements })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn rank(&self) -> usize {
        self.elements[0].rank()
    }
}

/// A point `Gamma g` of the quotient, stored through a representative `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitPoint {
    pub g: GroupElement,
}

impl OrbitPoint {
    pub fn new(g: GroupElement) -> Self {
        Self { g }
    }

    /// `g a_{tv}`.
    pub fn flowed(&self, v: &[f64], t: f64) -> GroupElement {
        &self.g * &flow(v, t)
    }
}

/// `a_{tv}`.
pub fn flow(v: &[f64], t: f64) -> GroupElement {
    GroupElement::diagonal(&v.iter().map(|x| t * x).collect::<Vec<_>>())
}

fn check_direction(v: &[f64], r: usize) -> Result<(), DynamicsError> {
    if v.len() != r {
        return Err(DynamicsError::RankMismatch { expected: r, found: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
        return Err(DynamicsError::Precondition("direction must be finite and non-zero"));
    }
    Ok(())
}

/// `sqrt(sum mu_i^2)` from Frobenius norms: `|h|_F^2 = 2 cosh(mu)` per factor.
fn basepoint_distance(y: &GroupElement) -> f64 {
    let mut acc = 0.0;
    for h in y.factors() {
        let m = h.matrix();
        let f2 = m.a * m.a + m.b * m.b + m.c * m.c + m.d * m.d;
        let mu = math::acosh((0.5 * f2).max(1.0));
        acc += mu * mu;
    }
    math::sqrt(acc)
}

/// `y^{-1} gamma y`.
fn conjugate(y: &GroupElement, y_inv: &GroupElement, gamma: &GroupElement) -> GroupElement {
    &(y_inv * gamma) * y
}

/// Index and value of the word minimizing `|y^{-1} gamma y - I|`.
fn min_displacement(ball: &WordBall, y: &GroupElement) -> (usize, f64) {
    let y_inv = y.inverse();
    let mut best = (0, f64::INFINITY);
    for (i, gamma) in ball.elements.iter().enumerate() {
        let d = conjugate(y, &y_inv, gamma).dist_to_identity();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// `min_{1 <= |gamma| <= W} |a_{-tv} g^{-1} gamma g a_{tv} - I|` with the max-entry norm.
pub fn displacement(ball: &WordBall, x: &OrbitPoint, v: &[f64], t: f64) -> Result<f64, DynamicsError> {
    let r = ball.rank();
    if x.g.rank() != r {
        return Err(DynamicsError::RankMismatch { expected: r, found: x.g.rank() });
    }
    check_direction(v, r)?;
    Ok(min_displacement(ball, &x.flowed(v, t)).1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    RecurrentLike,
    TransientLike,
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Self::RecurrentLike => "recurrent-like",
            Self::TransientLike => "transient-like",
            Self::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub dt: f64,
    pub words: usize,
    pub reduction: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, words: DEFAULT_WORDS, reduction: REDUCTION_FACTOR }
    }
}

/// One grid step of a scan: the time, the current representative of `x a_{tv}`, and
/// the displacement there.
#[derive(Clone, Debug)]
struct Step {
    t: f64,
    y: GroupElement,
    displacement: f64,
}

/// Walk the grid `t = dt, 2dt, ..., horizon`, stepping the representative by `a_{dt v}`
/// and replacing it by `gamma y` whenever that brings it much closer to the basepoint.
fn walk<F: FnMut(&Step)>(
    ball: &WordBall,
    x: &OrbitPoint,
    v: &[f64],
    horizon: f64,
    cfg: &ScanConfig,
    mut visit: F,
) -> Result<usize, DynamicsError> {
    let r = ball.rank();
    if x.g.rank() != r {
        return Err(DynamicsError::RankMismatch { expected: r, found: x.g.rank() });
    }
    check_direction(v, r)?;
    if !(cfg.dt > 0.0) || !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(DynamicsError::Precondition("need dt > 0 and a finite horizon >= 0"));
    }
    let steps = math::floor(horizon / cfg.dt + 1e-9) as usize;
    let step = flow(v, cfg.dt);
    let mut y = x.g.clone();
    let mut reductions = 0;
    for k in 1..=steps {
        y = &y * &step;
        let here = basepoint_distance(&y);
        let mut best: Option<(f64, GroupElement)> = None;
        for gamma in &ball.elements {
            let z = gamma * &y;
            let d = basepoint_distance(&z);
            if d < cfg.reduction * here && best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, z));
            }
        }
        if let Some((_, z)) = best {
            y = z;
            reductions += 1;
        }
        let displacement = min_displacement(ball, &y).1;
        visit(&Step { t: k as f64 * cfg.dt, y: y.clone(), displacement });
    }
    Ok(reductions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub times: Vec<f64>,
    pub displacements: Vec<f64>,
    pub return_times: Vec<f64>,
    pub verdict: Verdict,
    /// How often the representative was replaced.
    pub reductions: usize,
    pub horizon: f64,
    pub threshold: f64,
    pub words: usize,
}

/// Heuristic recurrence test: returns are grid times with displacement `<= threshold`.
pub fn recurrence_scan(
    ball: &WordBall,
    x: &OrbitPoint,
    v: &[f64],
    horizon: f64,
    threshold: f64,
    cfg: &ScanConfig,
) -> Result<Scan, DynamicsError> {
    if !(threshold > 0.0) {
        return Err(DynamicsError::Precondition("need threshold > 0"));
    }
    let mut times = Vec::new();
    let mut displacements = Vec::new();
    let reductions = walk(ball, x, v, horizon, cfg, |s| {
        times.push(s.t);
        displacements.push(s.displacement);
    })?;
    let return_times: Vec<f64> =
        times.iter().zip(&displacements).filter(|(_, d)| **d <= threshold).map(|(t, _)| *t).collect();
    let verdict = if times.is_empty() {
        Verdict::Inconclusive
    } else if return_times.iter().any(|t| *t >= 0.8 * horizon) {
        Verdict::RecurrentLike
    } else if return_times.iter().all(|t| *t < 0.5 * horizon) {
        Verdict::TransientLike
    } else {
        Verdict::Inconclusive
    };
    Ok(Scan { times, displacements, return_times, verdict, reductions, horizon, threshold, words: ball.radius })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneryConfig {
    pub scan: ScanConfig,
    /// Conjugates with max-entry norm above this are discarded.
    pub bound: f64,
    /// Minimal time gap between a sample and the earlier one it accumulates on.
    pub separation: f64,
}

impl Default for SceneryConfig {
    fn default() -> Self {
        Self { scan: ScanConfig::default(), bound: DEFAULT_BOUND, separation: DEFAULT_SEPARATION }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneryElement {
    /// The earlier conjugate that the sample returned to.
    pub h: GroupElement,
    pub t: f64,
    pub word: Word,
    pub defect: f64,
    /// Generalized Jordan projection of `h` when it is loxodromic with flags opposite to `(e^+, e^-)`.
    pub lambda: Option<Vec<f64>>,
}

struct Sample {
    t: f64,
    word: usize,
    h: GroupElement,
    key: f64,
}

fn sample_lambda(h: &GroupElement) -> Option<Vec<f64>> {
    let flags = fixed_flags(h)?;
    let r = h.rank();
    if !general_position(&flags.attract, &BoundaryPoint::e_plus(r))
        || !general_position(&flags.repel, &BoundaryPoint::e_minus(r))
    {
        return None;
    }
    generalized_jordan(h).ok().map(|am| am.a)
}

/// Conjugates `a_{-t} g^{-1} gamma g a_t` of norm `<= bound` in the second half of the scan
/// that come back within `eps` of a conjugate seen at least `separation` earlier.
pub fn scenery_sample(
    ball: &WordBall,
    x: &OrbitPoint,
    v: &[f64],
    horizon: f64,
    eps: f64,
    cfg: &SceneryConfig,
) -> Result<Vec<SceneryElement>, DynamicsError> {
    let mut samples: Vec<Sample> = Vec::new();
    walk(ball, x, v, horizon, &cfg.scan, |s| {
        if s.t < 0.5 * horizon {
            return;
        }
        let y_inv = s.y.inverse();
        for (i, gamma) in ball.elements.iter().enumerate() {
            let h = conjugate(&s.y, &y_inv, gamma);
            if h.factors().iter().all(|f| f.matrix().max_abs() <= cfg.bound) {
                let key = math::abs(h.factor(0).matrix().a);
                samples.push(Sample { t: s.t, word: i, h, key });
            }
        }
    })?;
    if !(eps > 0.0) {
        return Ok(Vec::new());
    }
    // sweep over the sign-invariant key |a|: a max-entry match forces keys within eps
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| samples[i].key.total_cmp(&samples[j].key).then(i.cmp(&j)));
    let mut best: Vec<Option<(f64, usize)>> = (0..samples.len()).map(|_| None).collect();
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if samples[j].key - samples[i].key > eps {
                break;
            }
            let gap = samples[i].t - samples[j].t;
            if math::abs(gap) < cfg.separation {
                continue;
            }
            let d = samples[i].h.dist(&samples[j].h);
            if d > eps {
                continue;
            }
            let (late, early) = if gap > 0.0 { (i, j) } else { (j, i) };
            if best[late].is_none_or(|b| d < b.0) {
                best[late] = Some((d, early));
            }
        }
    }
    let mut out: Vec<SceneryElement> = best
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let (defect, early) = (*b)?;
            let h = samples[early].h.clone();
            Some(SceneryElement {
                lambda: sample_lambda(&h),
                h,
                t: samples[i].t,
                word: ball.words[samples[i].word].clone(),
                defect,
            })
        })
        .collect();
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.word.0.cmp(&b.word.0)));
    Ok(out)
}

/// The frame `k` in each factor with `k e^+ = y_g` and `k e^- = y_{g^{-1}}`, so that
/// `k^{-1} g k` is diagonal; `Gamma k` then lies on a periodic orbit when `g` is in `Gamma`.
pub fn axis_frame(g: &GroupElement) -> Result<GroupElement, DynamicsError> {
    let flags = fixed_flags(g).ok_or(DynamicsError::Precondition("element is not loxodromic"))?;
    let mut factors = Vec::with_capacity(g.rank());
    for (a, r) in flags.attract.0.iter().zip(&flags.repel.0) {
        let [ca, sa] = a.unit_vector();
        let [cr, sr] = r.unit_vector();
        let (cr, sr) = if ca * sr - cr * sa < 0.0 { (-cr, -sr) } else { (cr, sr) };
        factors.push(FactorElement::from_rows([[ca, cr], [sa, sr]])?);
    }
    Ok(GroupElement::new(factors))
}

/// Increment law of the transverse walk.
#[derive(Clone, Debug, PartialEq)]
pub enum Increments {
    /// `N(v_hat, sigma^2 I)`.
    Gaussian { sigma: f64 },
    /// Uniform choice among the given vectors.
    Empirical { vectors: Vec<Vec<f64>> },
}

impl Increments {
    /// The per-letter Cartan increments of a system.
    pub fn from_system(system: &SchottkySystem) -> Self {
        let vectors = (0..system.letter_count())
            .map(|i| crate::product::cartan_vector(&system.letter_element(crate::schottky::Letter(i))))
            .collect();
        Self::Empirical { vectors }
    }

    fn draw<R: Rng + ?Sized>(&self, v_hat: &[f64], rng: &mut R, out: &mut [f64]) {
        match self {
            Self::Gaussian { sigma } => {
                for (o, m) in out.iter_mut().zip(v_hat) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + sigma * z;
                }
            }
            Self::Empirical { vectors } => {
                let k = rng.random_range(0..vectors.len());
                out.copy_from_slice(&vectors[k]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluctuationConfig {
    pub increments: Increments,
    pub v: Vec<f64>,
    pub n_steps: usize,
    pub trials: usize,
    pub rho: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialStats {
    pub trial: usize,
    /// `#{n > n_steps/10 : |q_n| <= rho}`.
    pub returns: u64,
    pub min_late_distance: f64,
    /// Log-log slope of `max_{m <= n} |q_m|` against `n`.
    pub growth_exponent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluctuationStats {
    pub r: usize,
    pub trials: Vec<TrialStats>,
    pub median_returns: f64,
    /// Fraction of trials without late returns.
    pub transience_fraction: f64,
    pub median_growth_exponent: f64,
    /// Rank of the transverse increment covariance.
    pub effective_dim: usize,
    /// `effective_dim < r - 1`.
    pub degenerate: bool,
}

/// Deterministic stream for `(seed, r, trial)`.
pub fn trial_rng(seed: u64, r: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((r as u64) << 40) ^ trial as u64);
    rng
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = math::sqrt(v.iter().map(|x| x * x).sum());
    v.iter().map(|x| x / n).collect()
}

/// Geometric checkpoints `n` at which the running maximum is recorded.
fn checkpoints(n_steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut x = (n_steps as f64 / 100.0).max(10.0);
    while (x as usize) <= n_steps {
        let n = x as usize;
        if out.last() != Some(&n) {
            out.push(n);
        }
        x *= 1.25;
    }
    if out.last() != Some(&n_steps) && n_steps >= 1 {
        out.push(n_steps);
    }
    out
}

/// One walk `u_n = sum of increments` with transverse part `q_n = u_n - <u_n, v_hat> v_hat`.
/// `draw` fills one increment.
pub fn transverse_trial<F: FnMut(&mut [f64])>(v: &[f64], n_steps: usize, rho: f64, mut draw: F) -> TrialStats {
    let r = v.len();
    let v_hat = unit(v);
    let late = n_steps / 10;
    let marks = checkpoints(n_steps);
    let mut next_mark = 0;
    let mut u = vec![0.0; r];
    let mut inc = vec![0.0; r];
    let mut returns = 0;
    let mut min_late = f64::INFINITY;
    let mut running_max: f64 = 0.0;
    let mut xs = Vec::with_capacity(marks.len());
    let mut ys = Vec::with_capacity(marks.len());
    for n in 1..=n_steps {
        draw(&mut inc);
        for (a, b) in u.iter_mut().zip(&inc) {
            *a += b;
        }
        let along: f64 = u.iter().zip(&v_hat).map(|(a, b)| a * b).sum();
        let q2: f64 = u.iter().zip(&v_hat).map(|(a, b)| (a - along * b) * (a - along * b)).sum();
        let q = math::sqrt(q2);
        running_max = running_max.max(q);
        if n > late {
            min_late = min_late.min(q);
            if q <= rho {
                returns += 1;
            }
        }
        if next_mark < marks.len() && marks[next_mark] == n {
            next_mark += 1;
            if running_max > 0.0 {
                xs.push(math::ln(n as f64));
                ys.push(math::ln(running_max));
            }
        }
    }
    let growth_exponent = if ys.len() >= 2 { math::ols_slope(&xs, &ys) } else { 0.0 };
    TrialStats {
        trial: 0,
        returns,
        min_late_distance: if min_late.is_finite() { min_late } else { 0.0 },
        growth_exponent,
    }
}

/// Rank of the covariance of the transverse parts of the increments.
pub fn effective_transverse_dim(increments: &Increments, v: &[f64]) -> usize {
    let r = v.len();
    let v_hat = unit(v);
    match increments {
        Increments::Gaussian { sigma } => {
            if *sigma > 0.0 {
                r - 1
            } else {
                0
            }
        }
        Increments::Empirical { vectors } => {
            let n = vectors.len() as f64;
            let mut mean = vec![0.0; r];
            for w in vectors {
                for (m, x) in mean.iter_mut().zip(w) {
                    *m += x / n;
                }
            }
            let qs: Vec<Vec<f64>> = vectors
                .iter()
                .map(|w| {
                    let c: Vec<f64> = w.iter().zip(&mean).map(|(a, b)| a - b).collect();
                    let along: f64 = c.iter().zip(&v_hat).map(|(a, b)| a * b).sum();
                    c.iter().zip(&v_hat).map(|(a, b)| a - along * b).collect()
                })
                .collect();
            let mut cov = vec![vec![0.0; r]; r];
            for q in &qs {
                for i in 0..r {
                    for j in 0..r {
                        cov[i][j] += q[i] * q[j] / n;
                    }
                }
            }
            matrix_rank(cov)
        }
    }
}

/// Rank by Gaussian elimination with full pivoting, relative tolerance `1e-9`.
fn matrix_rank(mut m: Vec<Vec<f64>>) -> usize {
    let n = m.len();
    let scale = m.iter().flatten().fold(0.0_f64, |a, x| a.max(math::abs(*x)));
    if scale == 0.0 {
        return 0;
    }
    let tol = 1e-9 * scale;
    let mut rank = 0;
    let mut used_rows = vec![false; n];
    let mut used_cols = vec![false; n];
    for _ in 0..n {
        let mut pivot = (0, 0, 0.0);
        for (i, row) in m.iter().enumerate() {
            if used_rows[i] {
                continue;
            }
            for (j, x) in row.iter().enumerate() {
                if !used_cols[j] && math::abs(*x) > pivot.2 {
                    pivot = (i, j, math::abs(*x));
                }
            }
        }
        if pivot.2 <= tol {
            break;
        }
        let (pi, pj, _) = pivot;
        used_rows[pi] = true;
        used_cols[pj] = true;
        rank += 1;
        let prow = m[pi].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if used_rows[i] {
                continue;
            }
            let f = row[pj] / prow[pj];
            for (x, p) in row.iter_mut().zip(&prow) {
                *x -= f * p;
            }
        }
    }
    rank
}

/// Run one trial of `cfg` on its own stream.
pub fn fluctuation_trial(cfg: &FluctuationConfig, trial: usize) -> TrialStats {
    let r = cfg.v.len();
    let v_hat = unit(&cfg.v);
    let mut rng = trial_rng(cfg.seed, r, trial);
    let mut stats = transverse_trial(&cfg.v, cfg.n_steps, cfg.rho, |out| cfg.increments.draw(&v_hat, &mut rng, out));
    stats.trial = trial;
    stats
}

fn check_fluctuation(cfg: &FluctuationConfig) -> Result<(), DynamicsError> {
    check_direction(&cfg.v, cfg.v.len())?;
    if cfg.n_steps == 0 || cfg.trials == 0 {
        return Err(DynamicsError::Precondition("need n_steps >= 1 and trials >= 1"));
    }
    if !(cfg.rho > 0.0) {
        return Err(DynamicsError::Precondition("need rho > 0"));
    }
    match &cfg.increments {
        Increments::Gaussian { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => {
            Err(DynamicsError::Precondition("need sigma >= 0"))
        }
        Increments::Empirical { vectors } if vectors.is_empty() => {
            Err(DynamicsError::Precondition("need at least one increment vector"))
        }
        Increments::Empirical { vectors } if vectors.iter().any(|w| w.len() != cfg.v.len()) => {
            Err(DynamicsError::RankMismatch { expected: cfg.v.len(), found: vectors[0].len() })
        }
        _ => Ok(()),
    }
}

/// Aggregate per-trial results, which may come from any execution order.
pub fn summarize(cfg: &FluctuationConfig, mut trials: Vec<TrialStats>) -> FluctuationStats {
    trials.sort_by_key(|t| t.trial);
    let r = cfg.v.len();
    let returns: Vec<f64> = trials.iter().map(|t| t.returns as f64).collect();
    let growth: Vec<f64> = trials.iter().map(|t| t.growth_exponent).collect();
    let effective_dim = effective_transverse_dim(&cfg.increments, &cfg.v);
    FluctuationStats {
        r,
        median_returns: math::median(&returns),
        transience_fraction: returns.iter().filter(|x| **x == 0.0).count() as f64 / returns.len() as f64,
        median_growth_exponent: math::median(&growth),
        effective_dim,
        degenerate: effective_dim + 1 < r,
        trials,
    }
}

/// All trials of `cfg`, run in order.
pub fn transverse_fluctuation(cfg: &FluctuationConfig) -> Result<FluctuationStats, DynamicsError> {
    check_fluctuation(cfg)?;
    let trials = (0..cfg.trials).map(|k| fluctuation_trial(cfg, k)).collect();
    Ok(summarize(cfg, trials))
}

/// Gaussian walk along the diagonal of `R^r`.
pub fn dichotomy_config(r: usize, n_steps: usize, trials: usize, rho: f64, sigma: f64, seed: u64) -> FluctuationConfig {
    FluctuationConfig { increments: Increments::Gaussian { sigma }, v: vec![1.0; r], n_steps, trials, rho, seed }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DichotomyTable {
    pub rows: Vec<FluctuationStats>,
    /// Median returns never increase with `r`.
    pub monotone: bool,
    /// Positive median returns at `r = 3` and none at `r = 4`.
    pub collapse_3_to_4: bool,
}

pub fn dichotomy_table(rows: Vec<FluctuationStats>) -> DichotomyTable {
    let monotone = rows.windows(2).all(|w| w[1].r <= w[0].r || w[1].median_returns <= w[0].median_returns);
    let median_at = |r: usize| rows.iter().find(|s| s.r == r).map(|s| s.median_returns);
    let collapse_3_to_4 = matches!((median_at(3), median_at(4)), (Some(a), Some(b)) if a > 0.0 && b == 0.0);
    DichotomyTable { rows, monotone, collapse_3_to_4 }
}

/// Transverse walks for each `r` in `r_values` with the shared parameters.
pub fn dichotomy_experiment(
    r_values: &[usize],
    n_steps: usize,
    trials: usize,
    rho: f64,
    sigma: f64,
    seed: u64,
) -> Result<DichotomyTable, DynamicsError> {
    if r_values.iter().any(|r| *r < 2) {
        return Err(DynamicsError::Precondition("need r >= 2"));
    }
    let rows = r_values
        .iter()
        .map(|&r| transverse_fluctuation(&dichotomy_config(r, n_steps, trials, rho, sigma, seed)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(dichotomy_table(rows))
}

/// `Lip(h^{p+1}) / Lip(h^p)` on the chart interval `[lo, hi]` for `p = 1..powers`.
pub fn lipschitz_ratios(h: &FactorElement, lo: f64, hi: f64, powers: u32, samples: usize) -> Result<Vec<f64>, DynamicsError> {
    if !(lo < hi) || samples < 2 || powers < 1 {
        return Err(DynamicsError::Precondition("need lo < hi, samples >= 2, powers >= 1"));
    }
    let mut hp = *h;
    let mut prev = crate::product::measured_lipschitz(&hp, lo, hi, samples)?;
    let mut out = Vec::with_capacity(powers as usize);
    for _ in 0..powers {
        hp = hp * *h;
        let lip = crate::product::measured_lipschitz(&hp, lo, hi, samples)?;
        out.push(lip / prev);
        prev = lip;
    }
    Ok(out)
}

/// Product of `exp(-1/(1-u^2))` bumps, `u = (x - center)/width` per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: Vec<f64>,
}

/// `int_{-1}^{1} exp(-1/(1-u^2)) du`.
pub const BUMP_INTEGRAL: f64 = 0.443_993_816_168_079_4;

impl Bump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for ((x, c), w) in x.iter().zip(&self.center).zip(&self.width) {
            let u = (x - c) / w;
            if math::abs(u) >= 1.0 {
                return 0.0;
            }
            acc *= math::exp(-1.0 / (1.0 - u * u));
        }
        acc
    }

    pub fn integral(&self) -> f64 {
        self.width.iter().map(|w| w * BUMP_INTEGRAL).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianCheck {
    /// Monte-Carlo `int f(b^N(g, n)) |Jac| dn`.
    pub pulled_back: f64,
    pub direct: f64,
}

impl JacobianCheck {
    pub fn relative_error(&self) -> f64 {
        math::abs(self.pulled_back - self.direct) / math::abs(self.direct)
    }
}

/// Preimage of `[lo, hi]` under `x -> h.x`, provided the pole of `h^{-1}` misses it.
fn preimage(h: &FactorElement, lo: f64, hi: f64) -> Result<(f64, f64), DynamicsError> {
    let m = h.inverse();
    let m = m.matrix();
    if m.c != 0.0 {
        let pole = -m.d / m.c;
        if pole >= lo && pole <= hi {
            return Err(DynamicsError::Precondition("bump support meets the chart singularity"));
        }
    }
    let f = |x: f64| (m.a * x + m.b) / (m.c * x + m.d);
    let (a, b) = (f(lo), f(hi));
    Ok((a.min(b), a.max(b)))
}

/// Change of variables for `b^N(g, .)` against a bump `f`, sampling uniformly on the
/// preimage of the support.
pub fn jacobian_check<R: Rng + ?Sized>(
    g: &GroupElement,
    f: &Bump,
    samples: usize,
    rng: &mut R,
) -> Result<JacobianCheck, DynamicsError> {
    let r = g.rank();
    if f.center.len() != r || f.width.len() != r {
        return Err(DynamicsError::RankMismatch { expected: r, found: f.center.len() });
    }
    if samples == 0 || f.width.iter().any(|w| !(*w > 0.0)) {
        return Err(DynamicsError::Precondition("need samples >= 1 and positive widths"));
    }
    let boxes = g
        .factors()
        .iter()
        .zip(f.center.iter().zip(&f.width))
        .map(|(h, (c, w))| preimage(h, c - w, c + w))
        .collect::<Result<Vec<_>, _>>()?;
    let volume: f64 = boxes.iter().map(|(a, b)| b - a).product();
    let mut n = vec![0.0; r];
    let mut acc = 0.0;
    for _ in 0..samples {
        for (x, (a, b)) in n.iter_mut().zip(&boxes) {
            *x = rng.random_range(*a..*b);
        }
        let image = bn_map(g, &n)?;
        acc += f.eval(&image) * bn_jacobian(g, &n)?;
    }
    Ok(JacobianCheck { pulled_back: volume * acc / samples as f64, direct: f.integral() })
}

/// A boundary point whose every factor avoids all arcs of the system, if the grid finds one.
pub fn point_off_arcs(system: &SchottkySystem, grid: usize) -> Option<BoundaryPoint> {
    let pi = core::f64::consts::PI;
    let mut out = Vec::with_capacity(system.r());
    for i in 0..system.r() {
        let theta = (0..grid).map(|k| pi * (k as f64 + 0.5) / grid as f64).find(|&th| {
            (0..system.letter_count()).all(|l| {
                let l = crate::schottky::Letter(l);
                !system.attract_arc(l, i).contains(th) && !system.repel_arc(l, i).contains(th)
            })
        })?;
        out.push(FactorBoundaryPoint::from_angle(theta));
    }
    Some(BoundaryPoint(out))
}

/// The element `prod k_theta_i` that sends `e^+` to `xi`.
pub fn rotation_to(xi: &BoundaryPoint) -> GroupElement {
    GroupElement::new(xi.0.iter().map(|p| FactorElement::rotation(p.angle())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::product::jordan_vector;
    use crate::schottky::{reference_fuchsian, reference_self_joining, Letter};

    fn generic() -> SchottkySystem {
        reference_self_joining(true).unwrap()
    }

    #[test]
    fn zero_time_identity_baseline() {
        let s = generic();
        let ball = WordBall::new(&s, 1).unwrap();
        let x = OrbitPoint::new(GroupElement::identity(2));
        let d = displacement(&ball, &x, &[1.0, 1.0], 0.0).unwrap();
        let direct = (0..4).map(|i| s.letter_element(Letter(i)).dist_to_identity()).fold(f64::INFINITY, f64::min);
        assert!((d - direct).abs() < 1e-12);
    }

    #[test]
    fn axis_frame_diagonalizes() {
        let s = generic();
        let g = s.evaluate(&[Letter(0), Letter(2)]);
        let k = axis_frame(&g).unwrap();
        let d = &(&k.inverse() * &g) * &k;
        let lam = jordan_vector(&g);
        for (i, f) in d.factors().iter().enumerate() {
            let m = f.matrix();
            assert!(m.b.abs() < 1e-9 && m.c.abs() < 1e-9);
            assert!((2.0 * m.a.abs().ln() - lam[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_orbit_has_periodic_displacement() {
        let s = generic();
        let gamma = s.letter_element(Letter(0));
        let lam = jordan_vector(&gamma);
        let period = math::sqrt(lam.iter().map(|x| x * x).sum());
        let v = unit(&lam);
        let x = OrbitPoint::new(axis_frame(&gamma).unwrap());
        let ball = WordBall::new(&s, 4).unwrap();
        for t in [0.3, 1.1, 2.0] {
            let a = displacement(&ball, &x, &v, t).unwrap();
            let b = displacement(&ball, &x, &v, t + period).unwrap();
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_horizon_is_inconclusive() {
        let s = generic();
        let ball = WordBall::new(&s, 2).unwrap();
        let x = OrbitPoint::new(GroupElement::identity(2));
        let scan = recurrence_scan(&ball, &x, &[1.0, 1.0], 0.0, 0.5, &ScanConfig::default()).unwrap();
        assert!(scan.times.is_empty() && scan.return_times.is_empty());
        assert_eq!(scan.verdict, Verdict::Inconclusive);
        assert!(recurrence_scan(&ball, &x, &[1.0, 1.0], 1.0, 0.0, &ScanConfig::default()).is_err());
    }

    #[test]
    fn periodic_orbit_is_recurrent_like() {
        let s = reference_self_joining(false).unwrap();
        let gamma = s.letter_element(Letter(0));
        let x = OrbitPoint::new(axis_frame(&gamma).unwrap());
        let ball = WordBall::new(&s, 3).unwrap();
        let v = [1.0, 1.0];
        let cfg = ScanConfig { dt: 0.1, ..ScanConfig::default() };
        let probe = recurrence_scan(&ball, &x, &v, 12.0, 1e9, &cfg).unwrap();
        let ceiling = probe.displacements.iter().copied().fold(0.0, f64::max);
        let scan = recurrence_scan(&ball, &x, &v, 12.0, ceiling * 1.01, &cfg).unwrap();
        assert_eq!(scan.verdict, Verdict::RecurrentLike);
        assert_eq!(scan.return_times.len(), scan.times.len());
    }

    #[test]
    fn off_limit_set_escapes() {
        let s = generic();
        let xi = point_off_arcs(&s, 720).unwrap();
        let x = OrbitPoint::new(rotation_to(&xi));
        let ball = WordBall::new(&s, 3).unwrap();
        let cfg = ScanConfig { dt: 0.1, ..ScanConfig::default() };
        let scan = recurrence_scan(&ball, &x, &[1.0, 1.0], 20.0, 5.0, &cfg).unwrap();
        assert_eq!(scan.verdict, Verdict::TransientLike);
        let tail = &scan.displacements[scan.displacements.len() / 2..];
        assert!(tail.windows(2).all(|w| w[1] >= w[0] * 0.999));
        assert!(tail[tail.len() - 1] > 1e3);
    }

    #[test]
    fn direction_outside_cone_escapes() {
        let s = generic();
        let gamma = s.letter_element(Letter(0));
        let x = OrbitPoint::new(axis_frame(&gamma).unwrap());
        let ball = WordBall::new(&s, 3).unwrap();
        let cfg = ScanConfig { dt: 0.1, ..ScanConfig::default() };
        let scan = recurrence_scan(&ball, &x, &[1.0, 0.0], 20.0, 5.0, &cfg).unwrap();
        assert_eq!(scan.verdict, Verdict::TransientLike);
        let tail = &scan.displacements[scan.displacements.len() / 2..];
        assert!(tail.windows(2).all(|w| w[1] >= w[0] * 0.999));
    }

    #[test]
    fn conjugation_consistency() {
        let s = generic();
        let g0 = s.evaluate(&[Letter(1), Letter(2)]);
        let base = GroupElement::new(vec![FactorElement::rotation(0.1), FactorElement::rotation(0.9)]);
        let x = OrbitPoint::new(base.clone());
        let y = OrbitPoint::new(&g0 * &base);
        let small = WordBall::new(&s, 2).unwrap();
        let big = WordBall::new(&s, 6).unwrap();
        for t in [0.0, 0.7, 1.5] {
            let dx = displacement(&small, &x, &[1.0, 1.0], t).unwrap();
            let dy = displacement(&big, &y, &[1.0, 1.0], t).unwrap();
            assert!(dy <= dx + 1e-9);
            let dy_small = displacement(&small, &y, &[1.0, 1.0], t).unwrap();
            let dx_big = displacement(&big, &x, &[1.0, 1.0], t).unwrap();
            assert!(dx_big <= dy_small + 1e-9);
        }
    }

    #[test]
    fn scenery_on_periodic_diagonal_orbit() {
        let s = reference_self_joining(false).unwrap();
        let gamma = s.letter_element(Letter(0));
        let x = OrbitPoint::new(axis_frame(&gamma).unwrap());
        let ball = WordBall::new(&s, 2).unwrap();
        let cfg = SceneryConfig { scan: ScanConfig { dt: 0.1, ..ScanConfig::default() }, ..SceneryConfig::default() };
        let wide = scenery_sample(&ball, &x, &[1.0, 1.0], 14.0, 1e-3, &cfg).unwrap();
        assert!(!wide.is_empty());
        let mut loxodromic = 0;
        for e in &wide {
            assert!(e.defect <= 1e-3);
            let word = s.evaluate(&e.word.0);
            let (a, b) = (jordan_vector(&e.h), jordan_vector(&word));
            if let Some(lam) = &e.lambda {
                loxodromic += 1;
                assert!((lam[0] - lam[1]).abs() < 1e-6);
            }
            for i in 0..2 {
                if b[i] > 0.0 {
                    assert!((a[i] - b[i]).abs() < 1e-2, "{a:?} vs {b:?}");
                }
            }
        }
        assert!(loxodromic > 0);
        let narrow = scenery_sample(&ball, &x, &[1.0, 1.0], 14.0, 1e-6, &cfg).unwrap();
        for e in &narrow {
            assert!(wide.iter().any(|w| w.t == e.t && w.word == e.word));
        }
        assert!(scenery_sample(&ball, &x, &[1.0, 1.0], 14.0, 0.0, &cfg).unwrap().is_empty());
    }

    #[test]
    fn scenery_transient_is_empty() {
        let s = generic();
        let xi = point_off_arcs(&s, 720).unwrap();
        let x = OrbitPoint::new(rotation_to(&xi));
        let ball = WordBall::new(&s, 2).unwrap();
        let cfg = SceneryConfig { scan: ScanConfig { dt: 0.1, ..ScanConfig::default() }, ..SceneryConfig::default() };
        assert!(scenery_sample(&ball, &x, &[1.0, 1.0], 30.0, 1e-2, &cfg).unwrap().is_empty());
    }

    #[test]
    fn rank_one_walk_returns_every_late_step() {
        let cfg = FluctuationConfig {
            increments: Increments::Gaussian { sigma: 1.0 },
            v: vec![1.0],
            n_steps: 1000,
            trials: 3,
            rho: 1.0,
            seed: 7,
        };
        let st = transverse_fluctuation(&cfg).unwrap();
        for t in &st.trials {
            assert_eq!(t.returns, 900);
            assert_eq!(t.min_late_distance, 0.0);
        }
        assert_eq!(st.effective_dim, 0);
        assert!(!st.degenerate);
    }

    #[test]
    fn planar_walk_returns_and_four_dim_escapes() {
        let two = transverse_fluctuation(&dichotomy_config(2, 20_000, 30, 1.0, 1.0, 7)).unwrap();
        assert!(two.median_returns >= 50.0);
        let five = transverse_fluctuation(&dichotomy_config(5, 20_000, 30, 1.0, 1.0, 7)).unwrap();
        assert_eq!(five.median_returns, 0.0);
        assert!((0.4..=0.6).contains(&five.median_growth_exponent), "{}", five.median_growth_exponent);
    }

    #[test]
    fn rotation_invariance() {
        let v = [1.0, 1.0, 1.0];
        let v_hat = unit(&v);
        let (c, s) = (0.6_f64, 0.8_f64);
        // rotation about the first axis, applied to both increments and frame
        let rot = |x: &[f64]| [x[0], c * x[1] - s * x[2], s * x[1] + c * x[2]];
        let rv = rot(&v);
        let inc = Increments::Gaussian { sigma: 1.0 };
        let mut rng_a = trial_rng(3, 3, 0);
        let a = transverse_trial(&v, 5000, 2.0, |out| inc.draw(&v_hat, &mut rng_a, out));
        let mut rng_b = trial_rng(3, 3, 0);
        let b = transverse_trial(&rv, 5000, 2.0, |out| {
            inc.draw(&v_hat, &mut rng_b, out);
            out.copy_from_slice(&rot(out));
        });
        assert_eq!(a.returns, b.returns);
        assert!((a.min_late_distance - b.min_late_distance).abs() < 1e-9);
        assert!((a.growth_exponent - b.growth_exponent).abs() < 1e-9);
    }

    #[test]
    fn dichotomy_is_deterministic() {
        let a = dichotomy_experiment(&[2, 3], 2000, 5, 1.0, 1.0, 11).unwrap();
        let b = dichotomy_experiment(&[2, 3], 2000, 5, 1.0, 1.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(dichotomy_experiment(&[2], 100, 2, 1.0, 1.0, 1).unwrap().rows.len(), 1);
        assert!(dichotomy_experiment(&[1], 100, 2, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn empirical_increments_on_self_joining() {
        let s = generic();
        let inc = Increments::from_system(&s);
        let Increments::Empirical { vectors } = &inc else { unreachable!() };
        let mut mean = [0.0; 2];
        for w in vectors {
            mean[0] += w[0];
            mean[1] += w[1];
        }
        let cfg = FluctuationConfig { increments: inc.clone(), v: mean.to_vec(), n_steps: 20_000, trials: 20, rho: 1.0, seed: 5 };
        let st = transverse_fluctuation(&cfg).unwrap();
        assert_eq!(st.effective_dim, 1);
        assert!(st.median_returns > 0.0);
        // r = 3 with all increments on a line: degenerate
        let line = Increments::Empirical { vectors: vec![vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0], vec![1.5, 3.0, 0.0]] };
        assert_eq!(effective_transverse_dim(&line, &[1.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn lipschitz_decay_matches_jordan() {
        let h = FactorElement::loxodromic(0.3, 1.9, 2.0).unwrap();
        let x = FactorBoundaryPoint::from_angle(0.3).finite().unwrap();
        let ratios = lipschitz_ratios(&h, x - 0.2, x + 0.2, 6, 2000).unwrap();
        let last = ratios[ratios.len() - 1];
        assert!((last / (-2.0f64).exp() - 1.0).abs() < 0.1, "{ratios:?}");
    }

    #[test]
    fn jacobian_of_diagonal_and_unipotent() {
        // a_t scales the chart by e^t, and n_x translates it
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GroupElement::new(vec![FactorElement::diagonal(0.7), FactorElement::upper(0.4)]);
        let f = Bump { center: vec![0.2, -0.1], width: vec![0.5, 0.3] };
        let chk = jacobian_check(&g, &f, 200_000, &mut rng).unwrap();
        assert!(chk.relative_error() < 0.01, "{chk:?}");
        assert!((f.integral() - 0.15 * BUMP_INTEGRAL * BUMP_INTEGRAL).abs() < 1e-15);
    }

    #[test]
    fn bump_integral_by_quadrature() {
        let n = 200_000;
        let h = 2.0 / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let u: f64 = -1.0 + (k as f64 + 0.5) * h;
            acc += (-1.0 / (1.0 - u * u)).exp() * h;
        }
        assert!((acc - BUMP_INTEGRAL).abs() < 1e-10);
    }

    #[test]
    fn fuchsian_ball_size() {
        let s = reference_fuchsian(3.0, 0.35, 0.0).unwrap();
        assert_eq!(WordBall::new(&s, 8).unwrap().len(), 13120);
    }
}
