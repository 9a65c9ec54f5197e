//! Command-line surface of the `mope` binary.
//!
//! Every subcommand's argument struct serializes to the JSON object stored
//! in run manifests. Keys are the long flag names in snake case, so a run
//! manifest can be fed back through `--config`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Serialize, Serializer};

use mope_core::clustering::{DEFAULT_K_STEP, DEFAULT_SILHOUETTE_CAP};
use mope_core::gate::{DEFAULT_OFFLINE_BETA, DEFAULT_ONLINE_BETA};
use mope_core::offline::{GateMode, DEFAULT_CANDIDATE_CAP};
use mope_core::psm::DEFAULT_POOL_SIZE;

pub const DEFAULT_PORT: u16 = 8342;
pub const DEFAULT_CORS_ORIGINS: &str = "http://localhost:8080,http://127.0.0.1:8080";
pub const DEFAULT_CRACK_BUDGETS: &str =
    "1e1,1e2,1e3,1e4,1e5,1e6,1e7,1e8,1e9,1e10,1e11,1e12,1e13,1e14";

#[derive(Debug, Parser)]
#[command(
    name = "mope",
    version,
    about = "Train, query and serve mixtures of password experts",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// JSON file of flag values, keyed by long flag name. A run manifest
    /// written by an earlier command is accepted as well. Flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features, choose k by silhouette and write a cluster bundle.
    Cluster(ClusterArgs),
    /// Train one n-gram expert per cluster of a cluster bundle.
    TrainOffline(TrainOfflineArgs),
    /// Train edit-operation experts on (old, new) password pairs.
    TrainOnline(TrainOnlineArgs),
    /// Enumerate every password above a probability threshold.
    Generate(GenerateArgs),
    /// Estimate guess numbers by Monte Carlo sampling.
    GuessNumber(GuessNumberArgs),
    /// Crack fractions of a test set at a series of guess budgets.
    CrackEval(CrackEvalArgs),
    /// Extract (old, new) pairs from keyed password records.
    Pairs(PairsArgs),
    /// Rank likely new passwords for known old ones.
    Beam(BeamArgs),
    /// Top-k hit rates of an online bundle on held-out pairs.
    OnlineEval(OnlineEvalArgs),
    /// Distill an offline bundle into a single student expert.
    Distill(DistillArgs),
    /// Serve the strength meter over HTTP.
    Serve(ServeArgs),
    /// Print a bundle's manifest and per-cluster statistics.
    Inspect(InspectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cluster(_) => "cluster",
            Command::TrainOffline(_) => "train-offline",
            Command::TrainOnline(_) => "train-online",
            Command::Generate(_) => "generate",
            Command::GuessNumber(_) => "guess-number",
            Command::CrackEval(_) => "crack-eval",
            Command::Pairs(_) => "pairs",
            Command::Beam(_) => "beam",
            Command::OnlineEval(_) => "online-eval",
            Command::Distill(_) => "distill",
            Command::Serve(_) => "serve",
            Command::Inspect(_) => "inspect",
        }
    }
}

/// Subcommand names, used to find where `--config` values are spliced in.
pub const COMMAND_NAMES: &[&str] = &[
    "cluster",
    "train-offline",
    "train-online",
    "generate",
    "guess-number",
    "crack-eval",
    "pairs",
    "beam",
    "online-eval",
    "distill",
    "serve",
    "inspect",
];

/// Inclusive `min:max` range of cluster counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

impl FromStr for KRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
        let min = a.trim().parse().map_err(|_| format!("bad k {a:?}"))?;
        let max = b.trim().parse().map_err(|_| format!("bad k {b:?}"))?;
        if min < 2 || min > max {
            return Err(format!("need 2 <= MIN <= MAX, got {min}:{max}"));
        }
        Ok(KRange { min, max })
    }
}

impl fmt::Display for KRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.min, self.max)
    }
}

impl Serialize for KRange {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Comma-separated values given as one flag.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(|_| format!("cannot parse {p:?}")))
            .collect::<Result<Vec<T>, _>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err("empty list".into())
                } else {
                    Ok(List(v))
                }
            })
    }
}

impl<T: Serialize> Serialize for List<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// Training passwords, one per line.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,

    /// Bundle directory to write.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Candidate cluster counts as MIN:MAX.
    #[arg(long, default_value = "2:10")]
    pub k_range: KRange,

    /// Stride of the k scan.
    #[arg(long, default_value_t = DEFAULT_K_STEP)]
    pub k_step: usize,

    /// Silhouette threshold; the smallest k scoring above it wins.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Gate sharpness stored with the clusters.
    #[arg(long, default_value_t = DEFAULT_OFFLINE_BETA)]
    pub beta: f64,

    /// Rows sampled per silhouette estimate; 0 scores every row.
    #[arg(long, default_value_t = DEFAULT_SILHOUETTE_CAP)]
    pub silhouette_cap: usize,

    /// Model alphabet as a string of symbols (default: printable ASCII).
    #[arg(long)]
    pub alphabet: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOfflineArgs {
    /// Training passwords, one per line.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,

    /// Cluster bundle written by `cluster`.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// Where to write the offline bundle (default: the cluster bundle).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Longest n-gram context.
    #[arg(long, default_value_t = 5)]
    pub order: usize,

    /// Additive smoothing per symbol.
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,

    /// Weight of the corpus-wide counts inside each expert
    /// (default: cluster size over ten times the corpus size).
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Override the gate sharpness stored with the clusters.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOnlineArgs {
    /// Pairs as `old<TAB>new` lines.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,

    /// Bundle directory to write.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Reuse the clusters of an existing bundle instead of clustering the
    /// old passwords.
    #[arg(long, value_name = "DIR")]
    pub clusters: Option<PathBuf>,

    #[arg(long, default_value = "2:10")]
    pub k_range: KRange,

    #[arg(long, default_value_t = DEFAULT_K_STEP)]
    pub k_step: usize,

    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value_t = DEFAULT_SILHOUETTE_CAP)]
    pub silhouette_cap: usize,

    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,

    #[arg(long)]
    pub gamma: Option<f64>,

    /// Pairs further apart than this are skipped.
    #[arg(long, default_value_t = 4)]
    pub max_ed: usize,

    #[arg(long, default_value_t = DEFAULT_ONLINE_BETA)]
    pub beta: f64,

    #[arg(long, default_value_t = 150)]
    pub beam_width: usize,

    #[arg(long, default_value_t = 150)]
    pub top_k: usize,

    #[arg(long)]
    pub alphabet: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// Offline bundle.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// Probability threshold; every password at or above it is emitted.
    #[arg(long, default_value_t = 1e-7)]
    pub tau_gen: f64,

    #[arg(long, default_value_t = 1)]
    pub lmin: usize,

    /// Longest candidate (default: the bundle's maximum length).
    #[arg(long)]
    pub lmax: Option<usize>,

    /// Abort once this many candidates are emitted or pending.
    #[arg(long, default_value_t = DEFAULT_CANDIDATE_CAP)]
    pub cap: usize,

    /// Re-gate on every prefix (`per-step`) or pick experts once per
    /// candidate (`per-candidate`).
    #[arg(long, default_value = "per-step")]
    pub gate_mode: GateMode,

    /// Use the distilled student instead of the mixture.
    #[arg(long)]
    pub student: bool,

    /// Candidate file, `password<TAB>probability` per line.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GuessNumberArgs {
    /// Offline bundle.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// A single password to score.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub password: Option<String>,

    /// Passwords to score, one per line.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,

    /// Monte Carlo sample size.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub samples: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Re-gate on every prefix (`per-step`) or pick experts once per
    /// candidate (`per-candidate`).
    #[arg(long, default_value = "per-step")]
    pub gate_mode: GateMode,

    #[arg(long)]
    pub student: bool,

    /// Write results here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrackEvalArgs {
    /// One or more offline bundles, comma separated.
    #[arg(long, value_name = "DIR[,DIR...]")]
    pub model: List<PathBuf>,

    /// Test passwords, one per line.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,

    /// Ascending guess budgets, comma separated.
    #[arg(long, default_value = DEFAULT_CRACK_BUDGETS)]
    pub budgets: List<f64>,

    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub samples: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Re-gate on every prefix (`per-step`) or pick experts once per
    /// candidate (`per-candidate`).
    #[arg(long, default_value = "per-step")]
    pub gate_mode: GateMode,

    /// Add the curve of the per-password minimum across models.
    #[arg(long)]
    pub min_auto: bool,

    /// Also evaluate each bundle's distilled student.
    #[arg(long)]
    pub student: bool,

    /// Write the curves as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairsArgs {
    /// Records as `account_key<TAB>password` lines.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,

    #[arg(long, default_value_t = 4)]
    pub max_ed: usize,

    #[arg(long)]
    pub alphabet: Option<String>,

    /// Pair file, `old<TAB>new` per line.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BeamArgs {
    /// Online bundle.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// A single old password.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub src: Option<String>,

    /// Old passwords, one per line.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,

    /// Override the bundle's beam width.
    #[arg(long)]
    pub beam_width: Option<usize>,

    /// Override the bundle's candidate count.
    #[arg(long)]
    pub top_k: Option<usize>,

    /// Write `src<TAB>rank<TAB>candidate<TAB>score` lines here instead of
    /// standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OnlineEvalArgs {
    /// Online bundle.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// Held-out pairs, `old<TAB>new` per line.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,

    /// Guess budgets, comma separated.
    #[arg(long, default_value = "1,10,100")]
    pub budgets: List<usize>,

    #[arg(long)]
    pub beam_width: Option<usize>,

    #[arg(long)]
    pub top_k: Option<usize>,

    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistillArgs {
    /// Offline bundle; the student is added to it.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,

    /// Passwords whose prefixes are sampled for distillation.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: PathBuf,

    /// Weight of the teacher's soft targets against the observed labels.
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,

    /// Passwords drawn from the input.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value_t = 5)]
    pub order: usize,

    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,

    /// Passwords whose prefixes are used to report student fidelity.
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    /// Offline bundle backing the meter.
    #[arg(long, value_name = "DIR", env = "MOPE_MODEL_DIR")]
    pub model: Option<PathBuf>,

    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,

    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,

    /// Monte Carlo sample size drawn once at start-up.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub pool_size: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Score with the full mixture even when a student is present.
    #[arg(long)]
    pub full: bool,

    /// Origins allowed to call the API from a browser, comma separated.
    #[arg(long, env = "MOPE_CORS_ORIGINS", default_value = DEFAULT_CORS_ORIGINS)]
    pub cors_origins: List<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InspectArgs {
    /// Any bundle directory.
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
        let names: Vec<String> = Cli::command()
            .get_subcommands()
            .map(|c| c.get_name().to_string())
            .collect();
        assert_eq!(names, COMMAND_NAMES);
    }

    #[test]
    fn k_range_parses_and_prints() {
        let r: KRange = "2:10".parse().unwrap();
        assert_eq!(r, KRange { min: 2, max: 10 });
        assert_eq!(r.to_string(), "2:10");
        assert!("1:4".parse::<KRange>().is_err());
        assert!("5:3".parse::<KRange>().is_err());
        assert!("5".parse::<KRange>().is_err());
    }

    #[test]
    fn lists_parse() {
        let l: List<f64> = "1e1, 1e2,1e3".parse().unwrap();
        assert_eq!(l.0, vec![10.0, 100.0, 1000.0]);
        assert!("".parse::<List<f64>>().is_err());
        assert!("1,x".parse::<List<usize>>().is_err());
    }
}
