//! The JSON format for Schottky systems.

use std::path::Path;

use horolab_core::product::GroupElement;
use horolab_core::rank_one::FactorElement;
use horolab_core::schottky::{Arc, PingPong, SchottkySystem};
use serde::{Deserialize, Serialize};

use crate::error::{json_error, LabError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PingPongEntry {
    pub factor: usize,
    pub gen: usize,
    pub attract: [f64; 2],
    pub repel: [f64; 2],
}

/// `generators[j][i]` is factor `i` of generator `j`, row-major `[a, b, c, d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub r: usize,
    pub generators: Vec<Vec<[f64; 4]>>,
    pub pingpong: Vec<PingPongEntry>,
    pub tolerance: f64,
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| json_error("system", &e))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::input("system", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_system(system: &SchottkySystem) -> Self {
        let generators = system
            .generators()
            .iter()
            .map(|g| g.factors().iter().map(|h| h.matrix().to_array()).collect())
            .collect();
        let mut pingpong = Vec::new();
        for gen in 0..system.generator_count() {
            for factor in 0..system.r() {
                let p = system.pingpong(gen, factor);
                pingpong.push(PingPongEntry {
                    factor,
                    gen,
                    attract: [p.attract.start, p.attract.end],
                    repel: [p.repel.start, p.repel.end],
                });
            }
        }
        Self { r: system.r(), generators, pingpong, tolerance: system.tolerance() }
    }

    /// Build the system; ping-pong validity is checked separately.
    pub fn build(&self) -> Result<SchottkySystem, LabError> {
        if self.r == 0 {
            return Err(LabError::input("system.r", "must be at least 1"));
        }
        let k = self.generators.len();
        let mut generators = Vec::with_capacity(k);
        for (j, g) in self.generators.iter().enumerate() {
            if g.len() != self.r {
                return Err(LabError::input(&format!("system.generators[{j}]"), format!("expected {} factors", self.r)));
            }
            let mut factors = Vec::with_capacity(self.r);
            for (i, m) in g.iter().enumerate() {
                let h = FactorElement::from_rows([[m[0], m[1]], [m[2], m[3]]])
                    .map_err(|e| LabError::input(&format!("system.generators[{j}][{i}]"), e))?;
                factors.push(h);
            }
            generators.push(GroupElement::new(factors));
        }
        let mut slots: Vec<Vec<Option<PingPong>>> = vec![vec![None; self.r]; k];
        for (n, p) in self.pingpong.iter().enumerate() {
            let field = format!("system.pingpong[{n}]");
            if p.gen >= k || p.factor >= self.r {
                return Err(LabError::input(&field, "gen or factor out of range"));
            }
            if p.attract.iter().chain(&p.repel).any(|x| !x.is_finite()) {
                return Err(LabError::input(&field, "arc endpoints must be finite"));
            }
            let slot = &mut slots[p.gen][p.factor];
            if slot.is_some() {
                return Err(LabError::input(&field, "duplicate (gen, factor) entry"));
            }
            *slot = Some(PingPong {
                attract: Arc::new(p.attract[0], p.attract[1]),
                repel: Arc::new(p.repel[0], p.repel[1]),
            });
        }
        let mut pingpong = Vec::with_capacity(k);
        for (j, row) in slots.into_iter().enumerate() {
            let mut out = Vec::with_capacity(self.r);
            for (i, p) in row.into_iter().enumerate() {
                out.push(p.ok_or_else(|| LabError::input("system.pingpong", format!("missing entry for gen {j}, factor {i}")))?);
            }
            pingpong.push(out);
        }
        SchottkySystem::new(self.r, generators, pingpong, self.tolerance).map_err(|e| LabError::input("system", e))
    }
}

/// Read and build a system file.
pub fn load_system(path: &Path) -> Result<SchottkySystem, LabError> {
    SystemFile::load(path)?.build()
}
