//! Schottky systems on products of projective lines: ping-pong validation,
//! free-group word enumeration, limit points and limit cones.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math;
use crate::product::{fixed_flags, jordan_vector, BoundaryPoint, GroupElement};
use crate::rank_one::{act_on_angle, angle_distance, loxodromic_data, FactorBoundaryPoint, FactorElement};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Boundary samples per arc complement in the absorption check.
pub const ABSORPTION_SAMPLES: usize = 1000;
/// Enumeration guard on the number of words.
pub const MAX_WORDS: u64 = 100_000_000;

/// A closed arc of the circle `[0, pi)`, running counterclockwise from `start` to `end`
/// (wrapping through 0 when `start > end`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
}

impl Arc {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start: math::rem_euclid(start, PI), end: math::rem_euclid(end, PI) }
    }

    pub fn centered(mid: f64, half_width: f64) -> Self {
        Self::new(mid - half_width, mid + half_width)
    }

    pub fn length(&self) -> f64 {
        math::rem_euclid(self.end - self.start, PI)
    }

    pub fn midpoint(&self) -> f64 {
        math::rem_euclid(self.start + 0.5 * self.length(), PI)
    }

    pub fn contains(&self, theta: f64) -> bool {
        math::rem_euclid(theta - self.start, PI) <= self.length()
    }

    /// Circular distance between two arcs; zero when they meet.
    pub fn gap(&self, other: &Arc) -> f64 {
        if self.contains(other.start) || other.contains(self.start) {
            return 0.0;
        }
        let a = math::rem_euclid(other.start - self.end, PI);
        let b = math::rem_euclid(self.start - other.end, PI);
        a.min(b)
    }

    /// `samples` equally spaced points of the closed complementary arc.
    pub fn complement_samples(&self, samples: usize) -> impl Iterator<Item = f64> + '_ {
        let len = PI - self.length();
        (0..samples).map(move |i| {
            let s = i as f64 / (samples - 1).max(1) as f64;
            math::rem_euclid(self.end + s * len, PI)
        })
    }
}

/// Ping-pong arcs of one generator in one factor: `g (S - repel) ⊂ attract`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PingPong {
    pub attract: Arc,
    pub repel: Arc,
}

/// Generator index with orientation; `index = 2 gen + inverse`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter(pub usize);

impl Letter {
    pub fn generator(gen: usize) -> Self {
        Letter(2 * gen)
    }

    pub fn inverse_of(gen: usize) -> Self {
        Letter(2 * gen + 1)
    }

    pub fn gen(&self) -> usize {
        self.0 / 2
    }

    pub fn is_inverse(&self) -> bool {
        self.0 % 2 == 1
    }

    pub fn inverse(self) -> Self {
        Letter(self.0 ^ 1)
    }

    /// Signed 1-based index: `+j` for generator `j - 1`, `-j` for its inverse.
    pub fn signed(&self) -> i64 {
        let j = self.gen() as i64 + 1;
        if self.is_inverse() {
            -j
        } else {
            j
        }
    }
}

/// A freely reduced word.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn is_reduced(letters: &[Letter]) -> bool {
        letters.windows(2).all(|w| w[1] != w[0].inverse())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArcKind {
    Attract,
    Repel,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NotLoxodromic { gen: usize, factor: usize },
    ArcsTooClose { factor: usize, first: (usize, ArcKind), second: (usize, ArcKind), gap: f64 },
    /// `g^{±1}` sends the sample `theta` outside its target arc.
    Absorption { gen: usize, factor: usize, inverse: bool, theta: f64 },
    MissingArcs { gen: usize, factor: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = |k: &ArcKind| match k {
            ArcKind::Attract => "attract",
            ArcKind::Repel => "repel",
        };
        match self {
            Self::NotLoxodromic { gen, factor } => {
                write!(f, "generator {gen} is not loxodromic in factor {factor}")
            }
            Self::ArcsTooClose { factor, first, second, gap } => write!(
                f,
                "factor {factor}: {} arc of generator {} and {} arc of generator {} are {gap:.3e} apart",
                kind(&first.1),
                first.0,
                kind(&second.1),
                second.0
            ),
            Self::Absorption { gen, factor, inverse, theta } => write!(
                f,
                "factor {factor}: generator {gen}{} maps theta={theta:.6} outside its {} arc",
                if *inverse { " inverse" } else { "" },
                if *inverse { "repel" } else { "attract" }
            ),
            Self::MissingArcs { gen, factor } => {
                write!(f, "no ping-pong arcs for generator {gen} in factor {factor}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PingPongReport {
    /// Smallest gap between distinct arcs, per factor.
    pub margins: Vec<f64>,
    pub violations: Vec<Violation>,
}

impl PingPongReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SchottkyError {
    Invalid(PingPongReport),
    TooManyWords { count: u64 },
    RankMismatch { expected: usize, found: usize },
    GeneratorCountMismatch { first: usize, second: usize },
    NotReduced,
    EmptyCone,
    Precondition(&'static str),
}

impl fmt::Display for SchottkyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(report) => {
                write!(f, "ping-pong validation failed")?;
                for v in &report.violations {
                    write!(f, "; {v}")?;
                }
                Ok(())
            }
            Self::TooManyWords { count } => write!(f, "{count} words exceeds the enumeration limit"),
            Self::RankMismatch { expected, found } => {
                write!(f, "expected {expected} factors, found {found}")
            }
            Self::GeneratorCountMismatch { first, second } => {
                write!(f, "representations have {first} and {second} generators")
            }
            Self::NotReduced => write!(f, "letter sequence is not freely reduced"),
            Self::EmptyCone => write!(f, "no fully loxodromic words"),
            Self::Precondition(what) => write!(f, "precondition violated: {what}"),
        }
    }
}

impl core::error::Error for SchottkyError {}

#[derive(Clone, Debug, PartialEq)]
pub struct SchottkySystem {
    r: usize,
    generators: Vec<GroupElement>,
    /// `pingpong[gen][factor]`.
    pingpong: Vec<Vec<PingPong>>,
    tolerance: f64,
}

impl SchottkySystem {
    /// Assembles a system without validating it; see [`validate_ping_pong`].
    pub fn new(
        r: usize,
        generators: Vec<GroupElement>,
        pingpong: Vec<Vec<PingPong>>,
        tolerance: f64,
    ) -> Result<Self, SchottkyError> {
        if generators.is_empty() {
            return Err(SchottkyError::Precondition("need at least one generator"));
        }
        for g in &generators {
            if g.rank() != r {
                return Err(SchottkyError::RankMismatch { expected: r, found: g.rank() });
            }
        }
        if pingpong.len() != generators.len() {
            return Err(SchottkyError::Precondition("one ping-pong entry per generator"));
        }
        for p in &pingpong {
            if p.len() != r {
                return Err(SchottkyError::RankMismatch { expected: r, found: p.len() });
            }
        }
        if !(tolerance > 0.0) {
            return Err(SchottkyError::Precondition("tolerance must be positive"));
        }
        Ok(Self { r, generators, pingpong, tolerance })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn generator_count(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[GroupElement] {
        &self.generators
    }

    pub fn pingpong(&self, gen: usize, factor: usize) -> &PingPong {
        &self.pingpong[gen][factor]
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn letter_element(&self, l: Letter) -> GroupElement {
        let g = &self.generators[l.gen()];
        if l.is_inverse() {
            g.inverse()
        } else {
            g.clone()
        }
    }

    /// Attracting arc of a letter (the repel arc of the generator for inverse letters).
    pub fn attract_arc(&self, l: Letter, factor: usize) -> Arc {
        let p = &self.pingpong[l.gen()][factor];
        if l.is_inverse() {
            p.repel
        } else {
            p.attract
        }
    }

    pub fn repel_arc(&self, l: Letter, factor: usize) -> Arc {
        self.attract_arc(l.inverse(), factor)
    }

    pub fn letter_count(&self) -> usize {
        2 * self.generators.len()
    }

    pub fn evaluate(&self, word: &[Letter]) -> GroupElement {
        let mut g = GroupElement::identity(self.r);
        for &l in word {
            g = &g * &self.letter_element(l);
        }
        g
    }

    /// A sub-system on the chosen factors.
    pub fn project(&self, factors: &[usize]) -> Result<SchottkySystem, SchottkyError> {
        let generators = self
            .generators
            .iter()
            .map(|g| GroupElement::new(factors.iter().map(|&i| *g.factor(i)).collect()))
            .collect();
        let pingpong = self.pingpong.iter().map(|p| factors.iter().map(|&i| p[i]).collect()).collect();
        SchottkySystem::new(factors.len(), generators, pingpong, self.tolerance)
    }
}

pub fn validate_ping_pong(system: &SchottkySystem) -> PingPongReport {
    let mut violations = Vec::new();
    let mut margins = vec![f64::INFINITY; system.r];
    for (gen, g) in system.generators.iter().enumerate() {
        for factor in 0..system.r {
            if loxodromic_data(g.factor(factor)).is_none() {
                violations.push(Violation::NotLoxodromic { gen, factor });
            }
        }
    }
    for (factor, margin) in margins.iter_mut().enumerate() {
        let arcs: Vec<((usize, ArcKind), Arc)> = (0..system.generator_count())
            .flat_map(|gen| {
                let p = &system.pingpong[gen][factor];
                [((gen, ArcKind::Attract), p.attract), ((gen, ArcKind::Repel), p.repel)]
            })
            .collect();
        for i in 0..arcs.len() {
            for j in i + 1..arcs.len() {
                let gap = arcs[i].1.gap(&arcs[j].1);
                *margin = margin.min(gap);
                if gap < system.tolerance {
                    violations.push(Violation::ArcsTooClose {
                        factor,
                        first: arcs[i].0,
                        second: arcs[j].0,
                        gap,
                    });
                }
            }
        }
        for (gen, g) in system.generators.iter().enumerate() {
            let p = &system.pingpong[gen][factor];
            let h = g.factor(factor);
            let hinv = h.inverse();
            let bad = p.repel.complement_samples(ABSORPTION_SAMPLES).find(|&th| !p.attract.contains(act_on_angle(h, th)));
            if let Some(theta) = bad {
                violations.push(Violation::Absorption { gen, factor, inverse: false, theta });
            }
            let bad = p.attract.complement_samples(ABSORPTION_SAMPLES).find(|&th| !p.repel.contains(act_on_angle(&hinv, th)));
            if let Some(theta) = bad {
                violations.push(Violation::Absorption { gen, factor, inverse: true, theta });
            }
        }
    }
    PingPongReport { margins, violations }
}

fn validated(system: SchottkySystem) -> Result<SchottkySystem, SchottkyError> {
    let report = validate_ping_pong(&system);
    if report.is_valid() {
        Ok(system)
    } else {
        Err(SchottkyError::Invalid(report))
    }
}

/// Zariski-density surrogate (a necessary-condition flag, not a proof): at least two
/// generators, pairwise distinct fixed points per factor, and (for `r >= 2`) two words of
/// length `<= max_len` with non-proportional Jordan vectors.
pub fn zariski_surrogate(system: &SchottkySystem, max_len: usize) -> bool {
    if system.generator_count() < 2 {
        return false;
    }
    let mut points: Vec<Vec<f64>> = vec![Vec::new(); system.r];
    for g in &system.generators {
        let Some(f) = fixed_flags(g) else { return false };
        for i in 0..system.r {
            points[i].push(f.attract.0[i].angle());
            points[i].push(f.repel.0[i].angle());
        }
    }
    for pts in &points {
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if angle_distance(pts[a], pts[b]) < system.tolerance {
                    return false;
                }
            }
        }
    }
    if system.r == 1 {
        return true;
    }
    let Ok(words) = enumerate_words(system, max_len.max(2)) else { return false };
    let mut first: Option<Vec<f64>> = None;
    for (_, g) in words.skip(1) {
        let lam = jordan_vector(&g);
        if lam.iter().any(|x| *x <= 0.0) {
            continue;
        }
        let n = math::sqrt(lam.iter().map(|x| x * x).sum());
        let u: Vec<f64> = lam.iter().map(|x| x / n).collect();
        match &first {
            None => first = Some(u),
            Some(f) => {
                if f.iter().zip(&u).any(|(a, b)| math::abs(a - b) > 1e-9) {
                    return true;
                }
            }
        }
    }
    false
}

/// `1 + sum_{n=1..L} 2k (2k-1)^{n-1}`, saturating.
pub fn word_count(generators: usize, max_len: usize) -> u64 {
    let k = generators as u64;
    if k == 0 {
        return 1;
    }
    let mut total: u64 = 1;
    let mut level: u64 = 2 * k;
    for _ in 0..max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(2 * k - 1);
    }
    total
}

/// Depth-first stream of all reduced words of length `<= max_len` with their products.
pub struct WordIter<'a> {
    system: &'a SchottkySystem,
    letters: Vec<GroupElement>,
    max_len: usize,
    first: Option<Letter>,
    path: Vec<(Letter, GroupElement)>,
    started: bool,
    done: bool,
}

impl<'a> WordIter<'a> {
    fn current(&self) -> (Word, GroupElement) {
        let w = Word(self.path.iter().map(|(l, _)| *l).collect());
        let g = self
            .path
            .last()
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| GroupElement::identity(self.system.r));
        (w, g)
    }

    fn push(&mut self, l: Letter) {
        let g = match self.path.last() {
            Some((_, g)) => g * &self.letters[l.0],
            None => self.letters[l.0].clone(),
        };
        self.path.push((l, g));
    }

    /// Next admissible letter after `after` (or the first one) following `prev`.
    fn next_letter(&self, prev: Option<Letter>, after: Option<Letter>) -> Option<Letter> {
        let start = after.map(|l| l.0 + 1).unwrap_or(0);
        (start..self.letters.len()).map(Letter).find(|&l| prev.is_none_or(|p| l != p.inverse()))
    }
}

impl Iterator for WordIter<'_> {
    type Item = (Word, GroupElement);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if let Some(f) = self.first {
                if self.max_len == 0 {
                    self.done = true;
                    return None;
                }
                self.push(f);
            }
            return Some(self.current());
        }
        let floor = usize::from(self.first.is_some());
        if self.path.len() < self.max_len {
            let prev = self.path.last().map(|(l, _)| *l);
            if let Some(l) = self.next_letter(prev, None) {
                self.push(l);
                return Some(self.current());
            }
        }
        while self.path.len() > floor {
            let (last, _) = self.path.pop().expect("non-empty path");
            let prev = self.path.last().map(|(l, _)| *l);
            if let Some(l) = self.next_letter(prev, Some(last)) {
                self.push(l);
                return Some(self.current());
            }
        }
        self.done = true;
        None
    }
}

fn word_iter(system: &SchottkySystem, max_len: usize, first: Option<Letter>) -> Result<WordIter<'_>, SchottkyError> {
    let count = word_count(system.generator_count(), max_len);
    if count > MAX_WORDS {
        return Err(SchottkyError::TooManyWords { count });
    }
    let letters = (0..system.letter_count()).map(|i| system.letter_element(Letter(i))).collect();
    Ok(WordIter { system, letters, max_len, first, path: Vec::new(), started: false, done: false })
}

/// All reduced words of length `<= max_len`, identity first, in depth-first order.
pub fn enumerate_words(system: &SchottkySystem, max_len: usize) -> Result<WordIter<'_>, SchottkyError> {
    word_iter(system, max_len, None)
}

/// The words of length `1..=max_len` that start with `first`; the streams for all
/// letters partition the non-trivial words.
pub fn enumerate_words_from(
    system: &SchottkySystem,
    first: Letter,
    max_len: usize,
) -> Result<WordIter<'_>, SchottkyError> {
    if first.0 >= system.letter_count() {
        return Err(SchottkyError::Precondition("letter out of range"));
    }
    word_iter(system, max_len, Some(first))
}

/// Combine two single-factor systems on the same free group into `(pi_1, pi_2)`.
pub fn self_joining(rep1: &SchottkySystem, rep2: &SchottkySystem) -> Result<SchottkySystem, SchottkyError> {
    for rep in [rep1, rep2] {
        if rep.r != 1 {
            return Err(SchottkyError::RankMismatch { expected: 1, found: rep.r });
        }
    }
    if rep1.generator_count() != rep2.generator_count() {
        return Err(SchottkyError::GeneratorCountMismatch {
            first: rep1.generator_count(),
            second: rep2.generator_count(),
        });
    }
    let rep1 = validated(rep1.clone())?;
    let rep2 = validated(rep2.clone())?;
    let generators = rep1
        .generators
        .iter()
        .zip(&rep2.generators)
        .map(|(a, b)| GroupElement::new(vec![*a.factor(0), *b.factor(0)]))
        .collect();
    let pingpong = rep1
        .pingpong
        .iter()
        .zip(&rep2.pingpong)
        .map(|(a, b)| vec![a[0], b[0]])
        .collect();
    SchottkySystem::new(2, generators, pingpong, rep1.tolerance.min(rep2.tolerance))
}

/// Single-factor two-generator system `g_j = k_{phi_j} a_t k_{phi_j}^{-1}` with
/// `phi = (phase, phase + pi/4)`: attracting arcs of half-width `w` at `phi_j`,
/// repelling arcs at `phi_j + pi/2`. Valid when `atan(e^{-t/2}) < w < pi/8`.
pub fn reference_fuchsian(t: f64, w: f64, phase: f64) -> Result<SchottkySystem, SchottkyError> {
    let mut generators = Vec::new();
    let mut pingpong = Vec::new();
    for j in 0..2 {
        let phi = phase + j as f64 * PI / 4.0;
        let g = FactorElement::loxodromic(phi, phi + PI / 2.0, t)
            .map_err(|_| SchottkyError::Precondition("invalid reference parameters"))?;
        generators.push(GroupElement::new(vec![g]));
        pingpong.push(vec![PingPong {
            attract: Arc::centered(phi, w),
            repel: Arc::centered(phi + PI / 2.0, w),
        }]);
    }
    SchottkySystem::new(1, generators, pingpong, DEFAULT_TOLERANCE)
}

/// Reference `r = 2` self-joining: the diagonal joining of one Fuchsian system with
/// itself, or a generic joining with a second, non-conjugate realization.
pub fn reference_self_joining(generic: bool) -> Result<SchottkySystem, SchottkyError> {
    let rep1 = reference_fuchsian(3.0, 0.35, 0.0)?;
    let rep2 = if generic { reference_fuchsian(4.5, 0.3, 0.2)? } else { rep1.clone() };
    self_joining(&rep1, &rep2)
}

/// Angle of a direction in the positive quadrant, measured from the first axis.
pub fn cone_angle(direction: &[f64]) -> f64 {
    math::atan2(direction[1], direction[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitCone {
    /// Unit Jordan directions of the fully loxodromic words.
    pub directions: Vec<Vec<f64>>,
    /// Per-coordinate range of `lambda / sum(lambda)` over the directions.
    pub simplex_bounds: Vec<(f64, f64)>,
    /// `[min, max]` angle of the directions (`r = 2` only).
    pub angle_interval: Option<(f64, f64)>,
}

impl LimitCone {
    pub fn width(&self) -> Option<f64> {
        self.angle_interval.map(|(a, b)| b - a)
    }

    /// Hausdorff distance between angle intervals.
    pub fn hausdorff(&self, other: &LimitCone) -> Option<f64> {
        let (a, b) = self.angle_interval?;
        let (c, d) = other.angle_interval?;
        Some(math::abs(a - c).max(math::abs(b - d)))
    }
}

/// Jordan directions of all fully loxodromic reduced words of length `1..=max_len`.
pub fn limit_cone(system: &SchottkySystem, max_len: usize) -> Result<LimitCone, SchottkyError> {
    if max_len == 0 {
        return Err(SchottkyError::Precondition("need max_len >= 1"));
    }
    let mut directions = Vec::new();
    for (_, g) in enumerate_words(system, max_len)?.skip(1) {
        let lam = jordan_vector(&g);
        if lam.iter().any(|x| *x <= 0.0) {
            continue;
        }
        let n = math::sqrt(lam.iter().map(|x| x * x).sum());
        directions.push(lam.iter().map(|x| x / n).collect::<Vec<f64>>());
    }
    if directions.is_empty() {
        return Err(SchottkyError::EmptyCone);
    }
    let r = system.r;
    let mut simplex_bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); r];
    for d in &directions {
        let s: f64 = d.iter().sum();
        for (b, x) in simplex_bounds.iter_mut().zip(d) {
            b.0 = b.0.min(x / s);
            b.1 = b.1.max(x / s);
        }
    }
    let angle_interval = (r == 2).then(|| {
        directions.iter().map(|d| cone_angle(d)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
            (lo.min(a), hi.max(a))
        })
    });
    Ok(LimitCone { directions, simplex_bounds, angle_interval })
}

/// Nested-interval estimate of the limit point coded by `letters`: the prefix of length
/// `depth` applied to the attracting-arc midpoint of the next letter.
pub fn limit_point(system: &SchottkySystem, letters: &[Letter], depth: usize) -> Result<BoundaryPoint, SchottkyError> {
    if letters.is_empty() || depth > letters.len() {
        return Err(SchottkyError::Precondition("need 1 <= len and depth <= len"));
    }
    if letters.iter().any(|l| l.0 >= system.letter_count()) {
        return Err(SchottkyError::Precondition("letter out of range"));
    }
    if !Word::is_reduced(letters) {
        return Err(SchottkyError::NotReduced);
    }
    let prefix = system.evaluate(&letters[..depth]);
    let next = letters[depth.min(letters.len() - 1)];
    Ok(BoundaryPoint(
        (0..system.r)
            .map(|i| {
                let m = system.attract_arc(next, i).midpoint();
                FactorBoundaryPoint::from_angle(act_on_angle(prefix.factor(i), m))
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::product::cartan_vector;
    use proptest::prelude::*;

    fn reference() -> SchottkySystem {
        reference_fuchsian(3.0, 0.35, 0.0).unwrap()
    }

    #[test]
    fn arcs() {
        let a = Arc::centered(0.0, 0.2);
        assert!(a.contains(0.1) && a.contains(PI - 0.1) && !a.contains(0.3));
        assert!((a.length() - 0.4).abs() < 1e-15);
        assert!(a.midpoint().abs() < 1e-15 || (a.midpoint() - PI).abs() < 1e-15);
        let b = Arc::new(0.5, 0.9);
        assert!((a.gap(&b) - 0.3).abs() < 1e-15);
        assert_eq!(a.gap(&Arc::new(0.1, 0.5)), 0.0);
        assert!(a.complement_samples(10).all(|t| !a.contains(t) || (t - 0.2).abs() < 1e-12 || (t - PI + 0.2).abs() < 1e-12));
    }

    #[test]
    fn reference_system_is_valid() {
        let s = reference();
        let report = validate_ping_pong(&s);
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!((report.margins[0] - (PI / 4.0 - 0.7)).abs() < 1e-12);
        assert!(zariski_surrogate(&s, 2));
    }

    #[test]
    fn absorption_oracle_at_boundary_samples() {
        // independent check: every generator of the reference maps the closure of each
        // non-repelling arc into its attracting arc
        let s = reference();
        for l in (0..4).map(Letter) {
            let g = s.letter_element(l);
            for m in (0..4).map(Letter).filter(|m| *m != l.inverse()) {
                let arc = s.attract_arc(m, 0);
                for k in 0..=1000 {
                    let th = arc.start + arc.length() * k as f64 / 1000.0;
                    assert!(s.attract_arc(l, 0).contains(act_on_angle(g.factor(0), th)));
                }
            }
        }
    }

    #[test]
    fn overlapping_arcs_are_named() {
        let bad = reference_fuchsian(3.0, 0.45, 0.0).unwrap();
        let report = validate_ping_pong(&bad);
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::ArcsTooClose { factor: 0, first: (0, ArcKind::Attract), second: (1, ArcKind::Attract), .. }
        )));
    }

    #[test]
    fn weak_generator_fails_absorption() {
        let weak = reference_fuchsian(0.5, 0.35, 0.0).unwrap();
        let report = validate_ping_pong(&weak);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Absorption { .. })));
    }

    #[test]
    fn one_generator_systems() {
        let g = GroupElement::new(vec![FactorElement::diagonal(3.0)]);
        let ok = PingPong { attract: Arc::centered(0.0, 0.4), repel: Arc::centered(PI / 2.0, 0.4) };
        let s = SchottkySystem::new(1, vec![g.clone()], vec![vec![ok]], DEFAULT_TOLERANCE).unwrap();
        assert!(validate_ping_pong(&s).is_valid());
        assert!(!zariski_surrogate(&s, 3));
        let clash = PingPong { attract: Arc::centered(0.0, 0.8), repel: Arc::centered(PI / 2.0, 0.8) };
        let s = SchottkySystem::new(1, vec![g], vec![vec![clash]], DEFAULT_TOLERANCE).unwrap();
        assert!(!validate_ping_pong(&s).is_valid());
    }

    #[test]
    fn parabolic_generator_is_rejected() {
        let g = GroupElement::new(vec![FactorElement::upper(1.0)]);
        let p = PingPong { attract: Arc::centered(0.0, 0.1), repel: Arc::centered(PI / 2.0, 0.1) };
        let s = SchottkySystem::new(1, vec![g], vec![vec![p]], DEFAULT_TOLERANCE).unwrap();
        assert!(validate_ping_pong(&s).violations.contains(&Violation::NotLoxodromic { gen: 0, factor: 0 }));
    }

    #[test]
    fn word_counts() {
        let s = reference();
        assert_eq!(enumerate_words(&s, 0).unwrap().count(), 1);
        assert_eq!(enumerate_words(&s, 2).unwrap().count(), 17);
        assert_eq!(word_count(2, 2), 17);
        assert_eq!(word_count(2, 8), 13121);
        assert_eq!(enumerate_words(&s, 6).unwrap().count() as u64, word_count(2, 6));
        assert!(matches!(enumerate_words(&s, 40), Err(SchottkyError::TooManyWords { .. })));
    }

    #[test]
    fn brute_force_word_oracle() {
        // all letter strings of length <= 4, filtered by reducedness
        let s = reference();
        let mut brute = std::collections::BTreeSet::new();
        for len in 0..=4u32 {
            for code in 0..4usize.pow(len) {
                let mut c = code;
                let w: Vec<Letter> = (0..len).map(|_| {
                    let l = Letter(c % 4);
                    c /= 4;
                    l
                }).collect();
                if Word::is_reduced(&w) {
                    brute.insert(w);
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (w, g) in enumerate_words(&s, 4).unwrap() {
            assert!(Word::is_reduced(&w.0));
            let mut direct = GroupElement::identity(1);
            for l in &w.0 {
                direct = &direct * &s.letter_element(*l);
            }
            assert!(g.dist(&direct) < 1e-9 * (1.0 + direct.factor(0).matrix().max_abs()));
            assert!(seen.insert(w.0));
        }
        assert_eq!(seen, brute);
    }

    #[test]
    fn first_letter_streams_partition() {
        let s = reference();
        let total: usize = (0..4).map(|l| enumerate_words_from(&s, Letter(l), 5).unwrap().count()).sum();
        assert_eq!(total as u64 + 1, word_count(2, 5));
        assert!(enumerate_words_from(&s, Letter(1), 3).unwrap().all(|(w, _)| w.0[0] == Letter(1)));
        assert_eq!(enumerate_words_from(&s, Letter(0), 0).unwrap().count(), 0);
    }

    #[test]
    fn self_joining_examples() {
        let diag = reference_self_joining(false).unwrap();
        assert!(validate_ping_pong(&diag).is_valid());
        for (_, g) in enumerate_words(&diag, 4).unwrap().skip(1) {
            let lam = jordan_vector(&g);
            assert!((lam[0] - lam[1]).abs() < 1e-9 * lam[0].max(1.0));
        }
        assert!(!zariski_surrogate(&diag, 3));

        // a conjugate realization has the same Jordan vectors
        let rep1 = reference();
        let k = FactorElement::rotation(0.3);
        let conj = SchottkySystem::new(
            1,
            rep1.generators().iter().map(|g| GroupElement::new(vec![k * *g.factor(0) * k.inverse()])).collect(),
            (0..2)
                .map(|j| {
                    let p = rep1.pingpong(j, 0);
                    vec![PingPong {
                        attract: Arc::new(p.attract.start + 0.3, p.attract.end + 0.3),
                        repel: Arc::new(p.repel.start + 0.3, p.repel.end + 0.3),
                    }]
                })
                .collect(),
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        let joined = self_joining(&rep1, &conj).unwrap();
        for (_, g) in enumerate_words(&joined, 4).unwrap().skip(1) {
            let lam = jordan_vector(&g);
            assert!((lam[0] - lam[1]).abs() < 1e-8 * lam[0].max(1.0));
        }

        let generic = reference_self_joining(true).unwrap();
        assert!(zariski_surrogate(&generic, 3));
        let distinct = enumerate_words(&generic, 4).unwrap().skip(1).any(|(_, g)| {
            let lam = jordan_vector(&g);
            (lam[0] / lam[1] - 3.0 / 4.5).abs() > 1e-3
        });
        assert!(distinct);

        assert!(matches!(self_joining(&rep1, &reference_fuchsian(3.0, 0.45, 0.0).unwrap()), Err(SchottkyError::Invalid(_))));
    }

    #[test]
    fn eigenvalue_oracle_on_words() {
        let s = reference_self_joining(true).unwrap();
        for (_, g) in enumerate_words(&s, 4).unwrap().skip(1) {
            let lam = jordan_vector(&g);
            for i in 0..2 {
                let tr = g.factor(i).trace().abs();
                let rho = 0.5 * (tr + (tr * tr - 4.0).sqrt());
                assert!((lam[i] - 2.0 * rho.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn limit_cone_examples() {
        let diag = reference_self_joining(false).unwrap();
        let c = limit_cone(&diag, 5).unwrap();
        assert!(c.width().unwrap() < 1e-6);
        for d in &c.directions {
            assert!((d[0] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        }
        let g = GroupElement::new(vec![FactorElement::diagonal(2.0), FactorElement::diagonal(1.0)]);
        let p = PingPong { attract: Arc::centered(0.0, 0.4), repel: Arc::centered(PI / 2.0, 0.4) };
        let single = SchottkySystem::new(2, vec![g], vec![vec![p, p]], DEFAULT_TOLERANCE).unwrap();
        let c = limit_cone(&single, 3).unwrap();
        assert!(c.width().unwrap() < 1e-12);
        let generic = reference_self_joining(true).unwrap();
        let c6 = limit_cone(&generic, 6).unwrap();
        let c7 = limit_cone(&generic, 7).unwrap();
        assert!(c6.width().unwrap() > 0.01);
        // monotone in L
        let (a6, b6) = c6.angle_interval.unwrap();
        let (a7, b7) = c7.angle_interval.unwrap();
        assert!(a7 <= a6 + 1e-9 && b7 >= b6 - 1e-9);
        assert!(c7.simplex_bounds.iter().all(|(lo, hi)| lo <= hi));
    }

    #[test]
    fn cartan_grows_linearly_in_word_length() {
        let s = reference_self_joining(true).unwrap();
        let mut slopes = Vec::new();
        for (w, g) in enumerate_words(&s, 8).unwrap().skip(1) {
            if w.len() >= 4 {
                for mu in cartan_vector(&g) {
                    slopes.push(mu / w.len() as f64);
                }
            }
        }
        let lo = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lo > 0.5, "{lo}");
    }

    #[test]
    fn limit_point_examples() {
        let s = reference();
        let g = Letter::generator(0);
        let attract = fixed_flags(&s.letter_element(g)).unwrap().attract.0[0].angle();
        let seq = vec![g; 12];
        let p = limit_point(&s, &seq, 12).unwrap();
        assert!(angle_distance(p.0[0].angle(), attract) < 1e-9);
        let p0 = limit_point(&s, &seq, 0).unwrap();
        assert!(angle_distance(p0.0[0].angle(), s.attract_arc(g, 0).midpoint()) < 1e-12);
        assert_eq!(limit_point(&s, &[g, g.inverse()], 1), Err(SchottkyError::NotReduced));
    }

    fn reduced_sequence(len: usize) -> impl Strategy<Value = Vec<Letter>> {
        proptest::collection::vec(0usize..3, len).prop_map(|steps| {
            let mut out = vec![Letter(0)];
            for s in steps {
                let prev = *out.last().unwrap();
                let choices: Vec<Letter> = (0..4).map(Letter).filter(|l| *l != prev.inverse()).collect();
                out.push(choices[s]);
            }
            out
        })
    }

    proptest! {
        #[test]
        fn limit_points_are_absorbed(seq in reduced_sequence(14), depth in 0usize..14) {
            let s = reference_self_joining(true).unwrap();
            let p = limit_point(&s, &seq, depth).unwrap();
            for i in 0..2 {
                let inside = (0..4).map(Letter).any(|l| s.attract_arc(l, i).contains(p.0[i].angle()));
                prop_assert!(inside);
            }
        }

        #[test]
        fn limit_points_converge_geometrically(seq in reduced_sequence(30)) {
            let s = reference();
            let d = |a: usize, b: usize| angle_distance(
                limit_point(&s, &seq, a).unwrap().0[0].angle(),
                limit_point(&s, &seq, b).unwrap().0[0].angle(),
            );
            let early = d(4, 8);
            let late = d(16, 20);
            prop_assert!(late <= early * 0.05 + 1e-13);
        }

        #[test]
        fn jordan_additive_on_cyclically_reduced_powers(seq in reduced_sequence(5), p in 2i64..5) {
            let s = reference_self_joining(true).unwrap();
            prop_assume!(seq.first().unwrap().inverse() != *seq.last().unwrap());
            let w = s.evaluate(&seq);
            let lam = jordan_vector(&w);
            let lp = jordan_vector(&w.pow(p));
            for i in 0..2 {
                prop_assert!((lp[i] - p as f64 * lam[i]).abs() < 1e-8 * (1.0 + lp[i]));
            }
        }
    }
}
