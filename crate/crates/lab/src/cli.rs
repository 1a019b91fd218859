//! Argument parsing, config assembly, worker pool and output writing.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::LabConfig;
use crate::error::LabError;
use crate::experiments::{run_command, Artifact, Outcome};

#[derive(Debug, Parser)]
#[command(name = "horolab", version, about = "Experiments on Schottky subgroups of products of PSL(2,R)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the ping-pong conditions of a system.
    Validate(Flags),
    /// Jordan directions of the words up to --max-len.
    Cone(Flags),
    /// Greedy Besicovitch covers of random quasi-ball families.
    Cover(Flags),
    /// The maximal ratio inequality on random torus configurations.
    Maximal(Flags),
    /// Quasi-ball volumes, closed form and Monte-Carlo.
    Volume(Flags),
    /// Patterson atoms as JSON.
    Ps(Flags),
    /// Tangent form of the growth indicator at --v.
    Tangent(Flags),
    /// Displacement scan along the flow in direction --v.
    Recur(Flags),
    /// Returning conjugated stabilizer elements along the flow.
    Scenery(Flags),
    /// Transverse random-walk illustration across ranks.
    Dichotomy(Flags),
}

impl Command {
    fn split(&self) -> (&'static str, &Flags) {
        match self {
            Self::Validate(f) => ("validate", f),
            Self::Cone(f) => ("cone", f),
            Self::Cover(f) => ("cover", f),
            Self::Maximal(f) => ("maximal", f),
            Self::Volume(f) => ("volume", f),
            Self::Ps(f) => ("ps", f),
            Self::Tangent(f) => ("tangent", f),
            Self::Recur(f) => ("recur", f),
            Self::Scenery(f) => ("scenery", f),
            Self::Dichotomy(f) => ("dichotomy", f),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config; flags given on the command line override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Comma-separated direction, e.g. `1,1`.
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "max-len")]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long = "W")]
    pub words: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Step count; accepts forms like `1e5`.
    #[arg(long)]
    pub steps: Option<String>,
    /// Comma-separated ranks for `dichotomy`.
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<String>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

fn floats(field: &str, text: &str) -> Result<Vec<f64>, LabError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| LabError::input(field, format!("{t:?}: {e}"))))
        .collect()
}

fn count(field: &str, text: &str) -> Result<usize, LabError> {
    let x: f64 = text.trim().parse().map_err(|e| LabError::input(field, format!("{text:?}: {e}")))?;
    if x < 0.0 || x.fract() != 0.0 || x > usize::MAX as f64 {
        return Err(LabError::input(field, format!("{text:?} is not a count")));
    }
    Ok(x as usize)
}

/// Config file (or defaults) with the command-line flags applied on top.
pub fn assemble(flags: &Flags) -> Result<LabConfig, LabError> {
    let mut c = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| LabError::input("config", format!("{}: {e}", p.display())))?;
            LabConfig::parse(&text)?
        }
        None => LabConfig::default(),
    };
    if let Some(x) = &flags.system {
        c.system = Some(x.clone());
    }
    if let Some(x) = &flags.v {
        c.v = Some(floats("v", x)?);
    }
    if let Some(x) = &flags.out {
        c.out = Some(x.clone());
    }
    if let Some(x) = &flags.phi {
        c.phi = Some(floats("phi", x)?);
    }
    if let Some(x) = &flags.steps {
        c.steps = count("steps", x)?;
    }
    if let Some(x) = &flags.r {
        c.r = x.split(',').map(|t| count("r", t)).collect::<Result<_, _>>()?;
    }
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(x) = flags.$f { c.$f = x; } )* };
    }
    take!(seed, max_len, horizon, threshold, words, trials, eps, rho, sigma, dt);
    if let Some(x) = flags.s {
        c.s = Some(x);
    }
    c.validate()?;
    Ok(c)
}

/// Worker count from `LAB_THREADS`, when set.
pub fn thread_budget() -> Result<Option<usize>, LabError> {
    match std::env::var("LAB_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(LabError::input("LAB_THREADS", format!("{s:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn run_in_pool(name: &str, cfg: &LabConfig) -> Result<Outcome, LabError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_budget()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| LabError::input("LAB_THREADS", e))?;
    pool.install(|| run_command(name, cfg))
}

fn write_outputs(outcome: &Outcome, cfg: &LabConfig) -> Result<(), LabError> {
    let record = serde_json::to_string_pretty(&outcome.record).expect("record serializes");
    let body = match &outcome.artifact {
        Artifact::None => None,
        Artifact::Csv(s) | Artifact::Json(s) => Some(s),
    };
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{record}").map_err(|e| LabError::input("stdout", e))?;
    match (&cfg.out, body) {
        (Some(path), Some(body)) => {
            std::fs::write(path, body).map_err(|e| LabError::input("out", format!("{}: {e}", path.display())))?
        }
        (None, Some(body)) => write!(stdout, "{body}").map_err(|e| LabError::input("stdout", e))?,
        _ => {}
    }
    Ok(())
}

/// Parse, run and report; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let (name, flags) = cli.command.split();
    let started = Instant::now();
    let result = assemble(flags).and_then(|cfg| {
        let outcome = run_in_pool(name, &cfg)?;
        write_outputs(&outcome, &cfg)
    });
    match result {
        Ok(()) => {
            eprintln!("{name}: done in {:.3} s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            e.exit_code()
        }
    }
}
