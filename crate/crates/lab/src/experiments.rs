//! One function per command. Each returns a summary record and a data artifact.

use std::collections::BTreeMap;

use horolab_core::dynamics::{
    axis_frame, dichotomy_config, dichotomy_table, fluctuation_trial, recurrence_scan, rotation_to, scenery_sample,
    summarize, trial_rng, OrbitPoint, ScanConfig, SceneryConfig, WordBall,
};
use horolab_core::growth::{delta_from_data, patterson_from_data, psi_tangent, two_rho_form, LinearForm, WordData};
use horolab_core::product::{BoundaryPoint, ChamberVector, GroupElement};
use horolab_core::quasimetric::{
    ball_volume, ball_volume_monte_carlo, besicovitch_cover, estimate_kappa, homogeneous_dimension,
    maximal_set_bound_check, QuasiBall, StratifiedSpace, TorusGrid,
};
use horolab_core::schottky::{limit_cone, validate_ping_pong, Letter, SchottkySystem};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{FactorSpec, LabConfig, StartPoint};
use crate::error::LabError;
use crate::system::load_system;

pub const COMMANDS: [&str; 10] =
    ["validate", "cone", "cover", "maximal", "volume", "ps", "tangent", "recur", "scenery", "dichotomy"];

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub parameters: LabConfig,
    pub metrics: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    None,
    Csv(String),
    Json(String),
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub record: ResultRecord,
    pub artifact: Artifact,
}

/// CSV rows that all start with `seed, config_hash`.
struct Table {
    seed: String,
    hash: String,
    out: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(cfg: &LabConfig, columns: &[String]) -> Self {
        let mut out = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["seed".to_string(), "config_hash".to_string()];
        header.extend(columns.iter().cloned());
        out.write_record(&header).expect("in-memory write");
        Self { seed: cfg.seed.to_string(), hash: cfg.hash(), out }
    }

    fn row(&mut self, cells: &[String]) {
        let mut rec = vec![self.seed.clone(), self.hash.clone()];
        rec.extend(cells.iter().cloned());
        self.out.write_record(&rec).expect("in-memory write");
    }

    fn finish(self) -> Artifact {
        let bytes = self.out.into_inner().expect("in-memory flush");
        Artifact::Csv(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

struct Metrics(BTreeMap<String, Value>);

impl Metrics {
    fn new() -> Self {
        Self(BTreeMap::new())
    }

    fn put(&mut self, key: &str, value: impl Serialize) {
        self.0.insert(key.to_string(), serde_json::to_value(value).expect("metric serializes"));
    }
}

fn outcome(name: &str, cfg: &LabConfig, metrics: Metrics, artifact: Artifact) -> Outcome {
    Outcome {
        record: ResultRecord {
            experiment: name.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            parameters: cfg.clone(),
            metrics: metrics.0,
        },
        artifact,
    }
}

fn system_of(cfg: &LabConfig) -> Result<SchottkySystem, LabError> {
    let path = cfg.system.as_ref().ok_or_else(|| LabError::input("system", "this command needs --system"))?;
    load_system(path)
}

/// Load the system and refuse to work with one that fails ping-pong.
fn valid_system(cfg: &LabConfig) -> Result<SchottkySystem, LabError> {
    let system = system_of(cfg)?;
    let report = validate_ping_pong(&system);
    if !report.is_valid() {
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(LabError::Validation(msgs.join("; ")));
    }
    Ok(system)
}

fn direction(cfg: &LabConfig, r: usize) -> Result<Vec<f64>, LabError> {
    let v = cfg.v.clone().ok_or_else(|| LabError::input("v", "this command needs --v"))?;
    if v.len() != r {
        return Err(LabError::input("v", format!("expected {r} components, got {}", v.len())));
    }
    Ok(v)
}

/// `--v` when given, otherwise all ones.
fn chamber_direction(cfg: &LabConfig, r: usize) -> Result<ChamberVector, LabError> {
    let v = match &cfg.v {
        Some(_) => direction(cfg, r)?,
        None => vec![1.0; r],
    };
    ChamberVector::interior(v).map_err(|e| LabError::input("v", e))
}

pub fn run_command(name: &str, cfg: &LabConfig) -> Result<Outcome, LabError> {
    match name {
        "validate" => validate(cfg),
        "cone" => cone(cfg),
        "cover" => cover(cfg),
        "maximal" => maximal(cfg),
        "volume" => volume(cfg),
        "ps" => ps(cfg),
        "tangent" => tangent(cfg),
        "recur" => recur(cfg),
        "scenery" => scenery(cfg),
        "dichotomy" => dichotomy(cfg),
        other => Err(LabError::input("command", format!("unknown command {other:?}"))),
    }
}

pub fn validate(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = system_of(cfg)?;
    let report = validate_ping_pong(&system);
    if !report.is_valid() {
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(LabError::Validation(msgs.join("; ")));
    }
    let mut m = Metrics::new();
    m.put("valid", true);
    m.put("margins", &report.margins);
    m.put("generators", system.generator_count());
    m.put("r", system.r());
    Ok(outcome("validate", cfg, m, Artifact::None))
}

pub fn cone(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = valid_system(cfg)?;
    let cone = limit_cone(&system, cfg.max_len).map_err(|e| LabError::numerical("cone", e))?;
    let r = system.r();
    let mut header = cols(&["index"]);
    if r == 2 {
        header.push("angle".into());
    }
    header.extend((1..=r).map(|i| format!("d_{i}")));
    let mut t = Table::new(cfg, &header);
    for (i, d) in cone.directions.iter().enumerate() {
        let mut row = vec![i.to_string()];
        if r == 2 {
            row.push(num(horolab_core::schottky::cone_angle(d)));
        }
        row.extend(d.iter().map(|x| num(*x)));
        t.row(&row);
    }
    let mut m = Metrics::new();
    m.put("directions", cone.directions.len());
    m.put("simplex_bounds", &cone.simplex_bounds);
    m.put("angle_interval", cone.angle_interval);
    m.put("width", cone.width());
    Ok(outcome("cone", cfg, m, t.finish()))
}

fn random_family<R: Rng>(dim: usize, n: usize, [lo, hi]: [f64; 2], rng: &mut R) -> Vec<QuasiBall> {
    (0..n)
        .map(|_| {
            let center = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let radius = if lo < hi { rng.random_range(lo.ln()..hi.ln()).exp() } else { lo };
            QuasiBall::new(center, radius)
        })
        .collect()
}

fn small_kappa(space: &StratifiedSpace, v: &ChamberVector, cfg: &LabConfig) -> Result<Option<usize>, LabError> {
    if !space.is_box_space() {
        return Ok(None);
    }
    let mut rng = trial_rng(cfg.seed, 1, 0);
    estimate_kappa(space, v, cfg.kappa_trials, cfg.kappa_family, &mut rng)
        .map(Some)
        .map_err(|e| LabError::numerical("kappa estimate", e))
}

pub fn cover(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let space = cfg.nil_space();
    let v = chamber_direction(cfg, space.factors().len())?;
    let kappa = small_kappa(&space, &v, cfg)?;
    let results: Vec<_> = cfg
        .family_sizes
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = trial_rng(cfg.seed, 0, i);
            let family = random_family(space.dim(), n, cfg.radius_range, &mut rng);
            besicovitch_cover(&space, &v, &family).map(|c| (n, c))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| LabError::numerical("cover", e))?;
    let mut t = Table::new(cfg, &cols(&["family_size", "selected", "multiplicity", "kappa_estimate"]));
    let kappa_cell = kappa.map(|k| k.to_string()).unwrap_or_default();
    for (n, c) in &results {
        t.row(&[n.to_string(), c.selected.len().to_string(), c.multiplicity.to_string(), kappa_cell.clone()]);
    }
    let mut m = Metrics::new();
    m.put("kappa_estimate", kappa);
    m.put("max_multiplicity", results.iter().map(|(_, c)| c.multiplicity).max());
    Ok(outcome("cover", cfg, m, t.finish()))
}

/// Union of `1..=4` random boxes on the torus grid, side `n/16 ..= n/4` cells.
fn random_region<R: Rng>(grid: &TorusGrid, rng: &mut R) -> Vec<bool> {
    let n = grid.side();
    let mut region = vec![false; grid.cells()];
    let boxes = rng.random_range(1..=4);
    for _ in 0..boxes {
        let lo: Vec<usize> = (0..grid.r).map(|_| rng.random_range(0..n)).collect();
        let len: Vec<usize> = (0..grid.r).map(|_| rng.random_range((n / 16).max(1)..=(n / 4).max(1))).collect();
        let mut idx = vec![0usize; grid.r];
        loop {
            let mut flat = 0;
            let mut stride = 1;
            for i in 0..grid.r {
                flat += ((lo[i] + idx[i]) % n) * stride;
                stride *= n;
            }
            region[flat] = true;
            let mut i = 0;
            while i < grid.r {
                idx[i] += 1;
                if idx[i] < len[i] {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == grid.r {
                break;
            }
        }
    }
    region
}

pub fn maximal(cfg: &LabConfig) -> Result<Outcome, LabError> {
    if cfg.space.iter().any(|f| *f != FactorSpec::Abelian(1)) {
        return Err(LabError::input("space", "the torus check needs line factors only"));
    }
    let r = cfg.space.len();
    let space = StratifiedSpace::abelian(r);
    let v = chamber_direction(cfg, r)?;
    let kappa = small_kappa(&space, &v, cfg)?.expect("line factors form a box space") as f64;
    let grid = TorusGrid::new(r, cfg.torus_bits);
    let checks: Vec<_> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(cfg.seed, 2, k);
            let omega1 = random_region(&grid, &mut rng);
            let omega2 = random_region(&grid, &mut rng);
            let alpha = rng.random_range(0.05..1.0);
            maximal_set_bound_check(&grid, &omega1, &omega2, alpha, &v, cfg.r_max, kappa).map(|c| (alpha, c))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| LabError::numerical("maximal", e))?;
    let mut t = Table::new(cfg, &cols(&["trial", "alpha", "lhs", "rhs", "holds"]));
    for (k, (alpha, c)) in checks.iter().enumerate() {
        t.row(&[k.to_string(), num(*alpha), num(c.lhs), num(c.rhs), c.holds().to_string()]);
    }
    let mut m = Metrics::new();
    m.put("kappa_estimate", kappa);
    m.put("holds", checks.iter().filter(|(_, c)| c.holds()).count());
    m.put("trials", checks.len());
    Ok(outcome("maximal", cfg, m, t.finish()))
}

fn log_log_slope(rs: &[f64], vols: &[f64]) -> f64 {
    let xs: Vec<f64> = rs.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = vols.iter().map(|x| x.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn volume(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let space = cfg.nil_space();
    let v = chamber_direction(cfg, space.factors().len())?;
    let q = homogeneous_dimension(&space, &v).map_err(|e| LabError::input("v", e))?;
    let rows: Vec<(f64, f64, f64)> = cfg
        .radii
        .par_iter()
        .enumerate()
        .map(|(i, &radius)| {
            let closed = ball_volume(&space, &v, radius)?;
            let mut rng = trial_rng(cfg.seed, 3, i);
            let mc = ball_volume_monte_carlo(&space, &v, radius, cfg.samples, &mut rng)?;
            Ok((radius, closed, mc))
        })
        .collect::<Result<_, horolab_core::quasimetric::QuasiError>>()
        .map_err(|e| LabError::numerical("volume", e))?;
    let mut t = Table::new(cfg, &cols(&["radius", "closed_form", "monte_carlo"]));
    for (radius, closed, mc) in &rows {
        t.row(&[num(*radius), num(*closed), num(*mc)]);
    }
    let radii: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut m = Metrics::new();
    m.put("homogeneous_dimension", q);
    if radii.len() >= 2 {
        m.put("slope_closed_form", log_log_slope(&radii, &rows.iter().map(|r| r.1).collect::<Vec<_>>()));
        m.put("slope_monte_carlo", log_log_slope(&radii, &rows.iter().map(|r| r.2).collect::<Vec<_>>()));
    }
    Ok(outcome("volume", cfg, m, t.finish()))
}

fn form(cfg: &LabConfig, r: usize) -> Result<LinearForm, LabError> {
    match &cfg.phi {
        Some(p) if p.len() != r => Err(LabError::input("phi", format!("expected {r} components, got {}", p.len()))),
        Some(p) => Ok(LinearForm(p.clone())),
        None => Ok(two_rho_form(r)),
    }
}

#[derive(Serialize)]
struct AtomOut {
    xi: Vec<f64>,
    w: f64,
}

pub fn ps(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = valid_system(cfg)?;
    let phi = form(cfg, system.r())?;
    let data = WordData::collect(&system, cfg.max_len).map_err(|e| LabError::numerical("ps", e))?;
    let delta = delta_from_data(&data, &phi).map_err(|e| LabError::numerical("critical exponent", e))?;
    let s = cfg.s.unwrap_or(delta.delta + 0.01);
    let nu = patterson_from_data(&data, &phi, s).map_err(|e| LabError::numerical("ps", e))?;
    let atoms: Vec<AtomOut> = nu.atoms.iter().map(|a| AtomOut { xi: a.point.angles(), w: a.weight }).collect();
    let mut m = Metrics::new();
    m.put("delta", delta.delta);
    m.put("s", s);
    m.put("atoms", atoms.len());
    m.put("mass_by_length", nu.mass_by_length());
    let text = serde_json::to_string_pretty(&atoms).expect("atoms serialize");
    Ok(outcome("ps", cfg, m, Artifact::Json(text)))
}

pub fn tangent(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = valid_system(cfg)?;
    let v = direction(cfg, system.r())?;
    let est = psi_tangent(&system, &v, cfg.max_len).map_err(|e| LabError::numerical("tangent", e))?;
    let residuals: Vec<f64> = est
        .samples
        .iter()
        .map(|(d, delta)| delta * d.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() - est.psi_gamma)
        .collect();
    let body = json!({
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "psi_gamma": est.psi_gamma,
        "phi_v": est.phi_v.0,
        "residuals": residuals,
    });
    let mut m = Metrics::new();
    m.put("psi_gamma", est.psi_gamma);
    m.put("phi_v", &est.phi_v.0);
    m.put("on_boundary", est.on_boundary);
    m.put("evaluated", est.evaluated);
    Ok(outcome("tangent", cfg, m, Artifact::Json(serde_json::to_string_pretty(&body).expect("serializes"))))
}

fn orbit_point(cfg: &LabConfig, system: &SchottkySystem) -> Result<OrbitPoint, LabError> {
    let g = match &cfg.start {
        StartPoint::Identity => GroupElement::identity(system.r()),
        StartPoint::Axis(letters) => {
            if let Some(i) = letters.iter().position(|l| *l >= system.letter_count()) {
                return Err(LabError::input(&format!("start.axis[{i}]"), "letter out of range"));
            }
            let word: Vec<Letter> = letters.iter().map(|l| Letter(*l)).collect();
            if !horolab_core::schottky::Word::is_reduced(&word) {
                return Err(LabError::input("start.axis", "word is not reduced"));
            }
            axis_frame(&system.evaluate(&word)).map_err(|e| LabError::numerical("start.axis", e))?
        }
        StartPoint::Angles(a) => {
            if a.len() != system.r() {
                return Err(LabError::input("start.angles", format!("expected {} angles", system.r())));
            }
            rotation_to(&BoundaryPoint::from_angles(a))
        }
    };
    Ok(OrbitPoint::new(g))
}

fn scan_config(cfg: &LabConfig) -> ScanConfig {
    ScanConfig { dt: cfg.dt, words: cfg.words, ..ScanConfig::default() }
}

pub fn recur(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = valid_system(cfg)?;
    let v = direction(cfg, system.r())?;
    let x = orbit_point(cfg, &system)?;
    let ball = WordBall::new(&system, cfg.words).map_err(|e| LabError::numerical("word ball", e))?;
    let scan = recurrence_scan(&ball, &x, &v, cfg.horizon, cfg.threshold, &scan_config(cfg))
        .map_err(|e| LabError::numerical("recur", e))?;
    let mut t = Table::new(cfg, &cols(&["t", "displacement", "returned"]));
    for (time, d) in scan.times.iter().zip(&scan.displacements) {
        t.row(&[num(*time), num(*d), (*d <= cfg.threshold).to_string()]);
    }
    let mut m = Metrics::new();
    m.put("verdict", scan.verdict.label());
    m.put("heuristic", true);
    m.put("returns", scan.return_times.len());
    m.put("last_return", scan.return_times.last());
    m.put("reductions", scan.reductions);
    m.put("grid_points", scan.times.len());
    Ok(outcome("recur", cfg, m, t.finish()))
}

pub fn scenery(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let system = valid_system(cfg)?;
    let r = system.r();
    let v = direction(cfg, r)?;
    let x = orbit_point(cfg, &system)?;
    let ball = WordBall::new(&system, cfg.words).map_err(|e| LabError::numerical("word ball", e))?;
    let sc = SceneryConfig { scan: scan_config(cfg), bound: cfg.bound, separation: cfg.separation };
    let elements =
        scenery_sample(&ball, &x, &v, cfg.horizon, cfg.eps, &sc).map_err(|e| LabError::numerical("scenery", e))?;
    let mut header = cols(&["t", "word", "defect"]);
    header.extend((1..=r).map(|i| format!("lambda_{i}")));
    let mut t = Table::new(cfg, &header);
    for e in &elements {
        let word: Vec<String> = e.word.0.iter().map(|l| l.0.to_string()).collect();
        let mut row = vec![num(e.t), word.join("."), num(e.defect)];
        match &e.lambda {
            Some(l) => row.extend(l.iter().map(|x| num(*x))),
            None => row.extend((0..r).map(|_| String::new())),
        }
        t.row(&row);
    }
    let mut m = Metrics::new();
    m.put("elements", elements.len());
    m.put("loxodromic", elements.iter().filter(|e| e.lambda.is_some()).count());
    Ok(outcome("scenery", cfg, m, t.finish()))
}

pub fn dichotomy(cfg: &LabConfig) -> Result<Outcome, LabError> {
    let configs: Vec<_> =
        cfg.r.iter().map(|&r| dichotomy_config(r, cfg.steps, cfg.trials, cfg.rho, cfg.sigma, cfg.seed)).collect();
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|i| (0..cfg.trials).map(move |k| (i, k))).collect();
    let stats: Vec<_> = jobs.par_iter().map(|&(i, k)| fluctuation_trial(&configs[i], k)).collect();
    let mut per_r: Vec<Vec<_>> = vec![Vec::new(); configs.len()];
    for (&(i, _), s) in jobs.iter().zip(stats) {
        per_r[i].push(s);
    }
    let rows: Vec<_> = configs.iter().zip(per_r).map(|(c, trials)| summarize(c, trials)).collect();
    let table = dichotomy_table(rows);
    let mut t = Table::new(
        cfg,
        &cols(&["label", "r", "trial", "returns", "min_late_distance", "growth_exponent"]),
    );
    for row in &table.rows {
        for s in &row.trials {
            t.row(&[
                "illustration".into(),
                row.r.to_string(),
                s.trial.to_string(),
                s.returns.to_string(),
                num(s.min_late_distance),
                num(s.growth_exponent),
            ]);
        }
    }
    let mut m = Metrics::new();
    m.put("label", "illustration");
    m.put(
        "table",
        table
            .rows
            .iter()
            .map(|s| {
                json!({
                    "r": s.r,
                    "median_returns": s.median_returns,
                    "transience_fraction": s.transience_fraction,
                    "median_growth_exponent": s.median_growth_exponent,
                })
            })
            .collect::<Vec<_>>(),
    );
    m.put("monotone", table.monotone);
    m.put("collapse_3_to_4", table.collapse_3_to_4);
    Ok(outcome("dichotomy", cfg, m, t.finish()))
}
