//! Strict JSON configuration with defaults, validation and a stable hash.

use std::path::PathBuf;

use horolab_core::quasimetric::{NilFactor, StratifiedSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{json_error, LabError};

/// A factor of the nilpotent group used by `cover`, `maximal` and `volume`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorSpec {
    Abelian(usize),
    Heisenberg,
}

/// Base point of an orbit for `recur` and `scenery`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPoint {
    /// `Gamma e`.
    Identity,
    /// The axis frame of the word with these letter indices (a periodic orbit).
    Axis(Vec<usize>),
    /// The rotation sending `e^+` to these per-factor angles.
    Angles(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub system: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub v: Option<Vec<f64>>,
    pub max_len: usize,
    pub horizon: f64,
    pub threshold: f64,
    #[serde(rename = "W")]
    pub words: usize,
    pub trials: usize,
    pub steps: usize,
    pub dt: f64,
    pub start: StartPoint,
    pub eps: f64,
    pub bound: f64,
    pub separation: f64,
    pub r: Vec<usize>,
    pub rho: f64,
    pub sigma: f64,
    pub phi: Option<Vec<f64>>,
    pub s: Option<f64>,
    pub space: Vec<FactorSpec>,
    pub family_sizes: Vec<usize>,
    /// Radii of the random `cover` families are log-uniform on this range.
    pub radius_range: [f64; 2],
    pub kappa_trials: usize,
    pub kappa_family: usize,
    pub torus_bits: u32,
    pub r_max: f64,
    pub radii: Vec<f64>,
    pub samples: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            system: None,
            seed: 7,
            out: None,
            v: None,
            max_len: 8,
            horizon: 200.0,
            threshold: 0.5,
            words: 8,
            trials: 200,
            steps: 100_000,
            dt: 0.05,
            start: StartPoint::Identity,
            eps: 1e-3,
            bound: 10.0,
            separation: 1.0,
            r: vec![2, 3, 4, 5],
            rho: 1.0,
            sigma: 1.0,
            phi: None,
            s: None,
            space: vec![FactorSpec::Abelian(1), FactorSpec::Abelian(1)],
            family_sizes: vec![100, 1000, 10_000],
            radius_range: [0.002, 0.05],
            kappa_trials: 1000,
            kappa_family: 40,
            torus_bits: 7,
            r_max: 0.25,
            radii: vec![0.25, 0.5, 1.0, 2.0],
            samples: 200_000,
        }
    }
}

fn positive(field: &str, x: f64) -> Result<(), LabError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(LabError::input(field, format!("must be finite and positive, got {x}")))
    }
}

fn at_least(field: &str, x: usize, min: usize) -> Result<(), LabError> {
    if x >= min {
        Ok(())
    } else {
        Err(LabError::input(field, format!("must be at least {min}, got {x}")))
    }
}

fn finite_list(field: &str, xs: &[f64]) -> Result<(), LabError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(LabError::input(&format!("{field}[{i}]"), "must be finite")),
        None if xs.is_empty() => Err(LabError::input(field, "must not be empty")),
        None => Ok(()),
    }
}

impl LabConfig {
    /// Strict parse: unknown keys are rejected and omitted keys take their defaults.
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let c: Self = serde_json::from_str(text).map_err(|e| json_error("config", &e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if let Some(p) = &self.system {
            if !p.is_file() {
                return Err(LabError::input("system", format!("{} does not exist", p.display())));
            }
        }
        if let Some(v) = &self.v {
            finite_list("v", v)?;
        }
        if let Some(phi) = &self.phi {
            finite_list("phi", phi)?;
        }
        if let Some(s) = self.s {
            positive("s", s)?;
        }
        at_least("max_len", self.max_len, 1)?;
        at_least("W", self.words, 1)?;
        at_least("trials", self.trials, 1)?;
        at_least("steps", self.steps, 1)?;
        at_least("kappa_trials", self.kappa_trials, 1)?;
        at_least("kappa_family", self.kappa_family, 1)?;
        at_least("samples", self.samples, 1)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(LabError::input("horizon", "must be finite and non-negative"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(LabError::input("eps", "must be finite and non-negative"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(LabError::input("sigma", "must be finite and non-negative"));
        }
        for (field, x) in [
            ("threshold", self.threshold),
            ("dt", self.dt),
            ("bound", self.bound),
            ("rho", self.rho),
            ("r_max", self.r_max),
        ] {
            positive(field, x)?;
        }
        if self.separation.is_nan() || self.separation < 0.0 {
            return Err(LabError::input("separation", "must be non-negative"));
        }
        for (i, r) in self.r.iter().enumerate() {
            at_least(&format!("r[{i}]"), *r, 2)?;
        }
        if self.r.is_empty() {
            return Err(LabError::input("r", "must not be empty"));
        }
        if self.space.is_empty() {
            return Err(LabError::input("space", "must not be empty"));
        }
        for (i, f) in self.space.iter().enumerate() {
            if *f == FactorSpec::Abelian(0) {
                return Err(LabError::input(&format!("space[{i}]"), "abelian factors need dimension >= 1"));
            }
        }
        for (i, n) in self.family_sizes.iter().enumerate() {
            at_least(&format!("family_sizes[{i}]"), *n, 1)?;
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(LabError::input("radius_range", "need 0 < lo <= hi"));
        }
        if !(1..=12).contains(&self.torus_bits) {
            return Err(LabError::input("torus_bits", "must be in 1..=12"));
        }
        for (i, x) in self.radii.iter().enumerate() {
            positive(&format!("radii[{i}]"), *x)?;
        }
        match &self.start {
            StartPoint::Angles(a) => finite_list("start.angles", a)?,
            StartPoint::Axis(w) if w.is_empty() => return Err(LabError::input("start.axis", "must not be empty")),
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization with the output path removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let canonical = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn nil_space(&self) -> StratifiedSpace {
        StratifiedSpace::new(
            self.space
                .iter()
                .map(|f| match f {
                    FactorSpec::Abelian(k) => NilFactor::Abelian(*k),
                    FactorSpec::Heisenberg => NilFactor::Heisenberg,
                })
                .collect(),
        )
    }
}
