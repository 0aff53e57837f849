//! Parameter resolution: command-line flags over a TOML config file over defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use ladderskin::trajectory::{InitialState, TrajectoryConfig};
use ladderskin::{LadderConfig, Leg};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_ROOT_ENV: &str = "LADDERSKIN_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "ladderskin-runs";
pub const DEFAULT_N_TRAJ: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TTotal {
    Auto,
    Fixed(f64),
}

impl Serialize for TTotal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TTotal::Auto => s.serialize_str("auto"),
            TTotal::Fixed(t) => s.serialize_f64(*t),
        }
    }
}

impl std::str::FromStr for TTotal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(TTotal::Auto);
        }
        s.parse::<f64>()
            .map(TTotal::Fixed)
            .map_err(|_| format!("expected a number or \"auto\", got {s:?}"))
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Rung count; a comma-separated list for `gap-scan` and `trajectories`.
    #[arg(long = "N", value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Intrachain hopping.
    #[arg(long)]
    pub t: Option<f64>,
    /// Interchain hopping; a comma-separated list for `gap-scan`.
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Total evolution time or `auto` (2N).
    #[arg(long = "t-total")]
    pub t_total: Option<TTotal>,
    #[arg(long = "n-traj")]
    pub n_traj: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    /// `neel`, `domain-wall` or `sites:i,j,...` (1-based flattened sites).
    #[arg(long)]
    pub initial: Option<InitialState>,
    #[arg(long = "sample-interval")]
    pub sample_interval: Option<f64>,
    /// TOML file with the same keys (snake_case); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<OneOrMany<usize>>,
    t: Option<f64>,
    delta: Option<OneOrMany<f64>>,
    gamma: Option<f64>,
    dt: Option<f64>,
    t_total: Option<toml::Value>,
    n_traj: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    initial: Option<String>,
    sample_interval: Option<f64>,
    leg: Option<String>,
    order: Option<u8>,
}

/// Fully resolved parameter set, recorded verbatim in the manifest.
#[derive(Clone, Debug, Serialize)]
pub struct Params {
    pub n: Vec<usize>,
    pub t: f64,
    pub delta: Vec<f64>,
    pub gamma: f64,
    pub dt: f64,
    pub t_total: TTotal,
    pub n_traj: usize,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub initial: Option<InitialState>,
    pub sample_interval: f64,
    pub leg: Option<Leg>,
    pub order: Option<u8>,
    pub config_file: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Params {
    pub fn resolve(
        args: &CommonArgs,
        leg: Option<Leg>,
        order: Option<u8>,
        subcommand: &str,
    ) -> Result<Params, CliError> {
        let file = match &args.config {
            Some(p) => read_config(p)?,
            None => FileConfig::default(),
        };
        let n = if !args.n.is_empty() { args.n.clone() } else { file.n.map(OneOrMany::into_vec).unwrap_or_default() };
        let delta = if !args.delta.is_empty() {
            args.delta.clone()
        } else {
            file.delta.map(OneOrMany::into_vec).unwrap_or_default()
        };
        let t_total = match (args.t_total, &file.t_total) {
            (Some(t), _) => t,
            (None, Some(toml::Value::String(s))) => s.parse().map_err(usage)?,
            (None, Some(toml::Value::Float(x))) => TTotal::Fixed(*x),
            (None, Some(toml::Value::Integer(x))) => TTotal::Fixed(*x as f64),
            (None, Some(v)) => return Err(usage(format!("t_total must be a number or \"auto\", got {v}"))),
            (None, None) => TTotal::Auto,
        };
        let initial = match (&args.initial, &file.initial) {
            (Some(i), _) => Some(i.clone()),
            (None, Some(s)) => Some(s.parse().map_err(|e: ladderskin::Error| usage(e.to_string()))?),
            (None, None) => None,
        };
        let leg = match (leg, &file.leg) {
            (Some(l), _) => Some(l),
            (None, Some(s)) => Some(s.parse().map_err(|e: ladderskin::Error| usage(e.to_string()))?),
            (None, None) => None,
        };
        let workers = args
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let mut p = Params {
            n,
            t: args.t.or(file.t).unwrap_or(LadderConfig::DEFAULT_T),
            delta,
            gamma: args.gamma.or(file.gamma).unwrap_or(LadderConfig::DEFAULT_GAMMA),
            dt: args.dt.or(file.dt).unwrap_or(TrajectoryConfig::DEFAULT_DT),
            t_total,
            n_traj: args.n_traj.or(file.n_traj).unwrap_or(DEFAULT_N_TRAJ),
            seed: args.seed.or(file.seed).unwrap_or(0),
            workers,
            out_dir: PathBuf::new(),
            initial,
            sample_interval: args
                .sample_interval
                .or(file.sample_interval)
                .unwrap_or(TrajectoryConfig::DEFAULT_SAMPLE_INTERVAL),
            leg,
            order: order.or(file.order),
            config_file: args.config.clone(),
        };
        if p.workers == 0 {
            return Err(usage("--workers must be >= 1"));
        }
        if p.n_traj == 0 {
            return Err(usage("--n-traj must be >= 1"));
        }
        p.out_dir = match args.out_dir.clone().or(file.out_dir) {
            Some(d) => d,
            None => default_out_dir(subcommand, &p),
        };
        Ok(p)
    }

    /// The single `(N, δ)` point of a point-wise subcommand.
    pub fn single(&self, n_default: Option<usize>, delta_default: Option<f64>) -> Result<LadderConfig, CliError> {
        let n = match (self.n.as_slice(), n_default) {
            ([n], _) => *n,
            ([], Some(n)) => n,
            ([], None) => return Err(usage("--N is required")),
            _ => return Err(usage("this subcommand takes a single --N value")),
        };
        let delta = match (self.delta.as_slice(), delta_default) {
            ([d], _) => *d,
            ([], Some(d)) => d,
            ([], None) => return Err(usage("--delta is required")),
            _ => return Err(usage("this subcommand takes a single --delta value")),
        };
        self.ladder(n, delta)
    }

    pub fn ladder(&self, n: usize, delta: f64) -> Result<LadderConfig, CliError> {
        Ok(LadderConfig { n, t: self.t, delta, gamma: self.gamma }.validated()?)
    }

    pub fn trajectory_config(&self, cfg: &LadderConfig) -> Result<TrajectoryConfig, CliError> {
        let t_total = match self.t_total {
            TTotal::Auto => 2.0 * cfg.n as f64,
            TTotal::Fixed(t) => t,
        };
        Ok(TrajectoryConfig {
            dt: self.dt,
            t_total,
            sample_interval: self.sample_interval,
            seed: self.seed,
            trajectory_id: 0,
        }
        .validated()?)
    }
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("_")
}

fn default_out_dir(subcommand: &str, p: &Params) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    let mut name = format!("{subcommand}-N{}-delta{}-gamma{}", join(&p.n), join(&p.delta), p.gamma);
    if subcommand == "trajectories" {
        name.push_str(&format!("-seed{}", p.seed));
    }
    root.join(name)
}
