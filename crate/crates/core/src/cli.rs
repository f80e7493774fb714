//! Command-line front end.
//!
//! Every command resolves its parameters as defaults < `--config` file < flags,
//! computes all outputs in memory, then writes them atomically together with a
//! `manifest.toml` that can be passed back through `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::diffusion::{default_schedule, GaussianOracle, NoisyToy, ScoreProvider, DEFAULT_STEPS};
use crate::experiments::{
    ablation_degree, ablation_nodes, bound_csv, corrector_sweep, flows_csv, mds_csv, stats_csv, stats_verification,
    sweep_csv, synthetic_conformation, AblationSettings, ScoreModel, SweepGrid,
};
use crate::geometry::{pairwise_distances, PointSet};
use crate::io::{self, fmt_f64};
use crate::mds_oracle::{run_bound_check, run_mds_comparison, GdOptions};
use crate::metrics::{ad_score, cov_mat};
use crate::samplers::{init_from_prior, run_chain, Method, SamplerConfig};
use crate::seed::derive_seed;
use crate::Error;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SE3DIFF_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "se3diff", version, about = "Diffusion sampling and verification over SE(3)-invariant point sets")]
pub struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML file with a [params] table (a previous manifest works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $SE3DIFF_OUT or current directory].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Random regular graph plus Gaussian reference conformations.
    GenDataset(GenDatasetArgs),
    /// Run reverse chains against a generated dataset.
    Sample(SampleArgs),
    /// Check the scatter-mean objective against its error bound.
    VerifyBound(BoundArgs),
    /// Compare scatter-mean, gradient descent and classic MDS.
    MdsCompare(MdsArgs),
    /// Monte-Carlo moments of the one-step distance change.
    Stats(StatsArgs),
    /// Converged fraction over a grid of error levels and correctors.
    CorrectorSweep(SweepArgs),
    /// Flow curves across node counts or degrees.
    Ablation(AblationArgs),
    /// COV/MAT and AD between generated and reference populations.
    Metrics(MetricsArgs),
}

macro_rules! overlay {
    ($params:ident, $args:ident, $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $params.$field = v; } )*
    };
}

#[derive(Args, Debug, Clone)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GenDatasetParams {
    pub n: usize,
    pub degree: usize,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenDatasetParams {
    fn default() -> Self {
        Self { n: 20, degree: 4, count: 1, seed: 0 }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    /// Directory written by gen-dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// sde, ode, ode-full or ld.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub corrector: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// oracle or toy.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub a_t: Option<f64>,
    #[arg(long)]
    pub ld_step_scale: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub save_trajectories: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    pub dataset: PathBuf,
    pub method: String,
    pub steps: usize,
    pub corrector: f64,
    pub chains: usize,
    pub threshold: f64,
    pub model: String,
    pub delta: f64,
    pub a_t: f64,
    pub ld_step_scale: f64,
    pub record_every: usize,
    pub save_trajectories: bool,
    pub seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            method: "ode".into(),
            steps: 100,
            corrector: 16.0,
            chains: 100,
            threshold: 0.5,
            model: "oracle".into(),
            delta: 0.0,
            a_t: 0.0,
            ld_step_scale: 1e-3,
            record_every: 10,
            save_trajectories: false,
            seed: 0,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BoundArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub delta_min: Option<f64>,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BoundParams {
    pub trials: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub seed: u64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self { trials: 1000, n_min: 4, n_max: 20, delta_min: 0.0, delta_max: 0.5, seed: 0 }
    }
}

#[derive(Args, Debug, Clone)]
pub struct MdsArgs {
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub delta_min: Option<f64>,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub gd_iters: Option<usize>,
    #[arg(long)]
    pub gd_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MdsParams {
    pub trials: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub gd_iters: usize,
    pub gd_step: f64,
    pub seed: u64,
}

impl Default for MdsParams {
    fn default() -> Self {
        let gd = GdOptions::default();
        Self {
            trials: 500,
            n_min: 10,
            n_max: 19,
            delta_min: 0.0,
            delta_max: 0.5,
            gd_iters: gd.max_iters,
            gd_step: gd.step,
            seed: 0,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long = "g")]
    pub g: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StatsParams {
    pub taus: Vec<f64>,
    pub g: f64,
    pub distances: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for StatsParams {
    fn default() -> Self {
        Self { taus: vec![1e-4], g: 1.0, distances: vec![1.0, 2.0, 5.0], samples: 1_000_000, seed: 0 }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub correctors: Option<Vec<f64>>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    /// oracle or toy.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub deltas: Vec<f64>,
    pub correctors: Vec<f64>,
    pub chains: usize,
    pub steps: usize,
    pub threshold: f64,
    pub quantile: f64,
    pub n: usize,
    pub degree: usize,
    pub model: String,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        let g = SweepGrid::default();
        Self {
            deltas: g.deltas,
            correctors: g.correctors,
            chains: g.n_chains,
            steps: g.steps,
            threshold: g.threshold,
            quantile: g.quantile,
            n: 20,
            degree: 4,
            model: "toy".into(),
            seed: 0,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct AblationArgs {
    /// nodes or degree.
    #[arg(long)]
    pub kind: Option<String>,
    /// Node counts (kind = nodes) or degrees (kind = degree).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<usize>>,
    /// Node count for degree ablations.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub corrector: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AblationParams {
    pub kind: String,
    pub values: Vec<usize>,
    pub n: usize,
    pub corrector: f64,
    pub delta: f64,
    pub chains: usize,
    pub steps: usize,
    pub threshold: f64,
    pub model: String,
    pub seed: u64,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self {
            kind: "nodes".into(),
            values: vec![10, 20, 50, 100],
            n: 20,
            corrector: 16.0,
            delta: 0.0,
            chains: 100,
            steps: 100,
            threshold: 0.5,
            model: "toy".into(),
            seed: 0,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct MetricsArgs {
    /// Point-set files; multi-frame files contribute every frame.
    #[arg(long, num_args = 1..)]
    pub generated: Option<Vec<PathBuf>>,
    #[arg(long, num_args = 1..)]
    pub reference: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub generated: Vec<PathBuf>,
    pub reference: Vec<PathBuf>,
    pub threshold: f64,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self { generated: Vec::new(), reference: Vec::new(), threshold: 0.5 }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct Manifest<'a, P: Serialize> {
    command: &'a str,
    out: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    jobs: Option<usize>,
    params: &'a P,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<String>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    params: Option<toml::Table>,
}

/// Everything one command produces, written only after it all exists.
struct Outputs {
    files: Vec<(PathBuf, String)>,
    summary: String,
    /// Reported after the files are written; turns the exit status nonzero.
    failure: Option<String>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new(), summary: String::new(), failure: None }
    }

    fn file(&mut self, name: impl Into<PathBuf>, contents: String) {
        self.files.push((name.into(), contents));
    }
}

fn load_config(path: &Path, command: &str) -> CliResult<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
    let cfg: ConfigFile =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
    if let Some(c) = &cfg.command {
        if c != command {
            return Err(CliError::Usage(format!("{}: config is for '{c}', not '{command}'", path.display())));
        }
    }
    Ok(cfg)
}

fn params_from<P: DeserializeOwned + Default>(cfg: Option<&ConfigFile>, path: Option<&Path>) -> CliResult<P> {
    match cfg.and_then(|c| c.params.clone()) {
        Some(table) => P::deserialize(toml::Value::Table(table)).map_err(|e| {
            CliError::Usage(format!("{}: {}", path.map(|p| p.display().to_string()).unwrap_or_default(), e.message()))
        }),
        None => Ok(P::default()),
    }
}

fn parse_model(s: &str) -> CliResult<ScoreModel> {
    Ok(s.parse::<ScoreModel>()?)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenDataset(_) => "gen-dataset",
        Command::Sample(_) => "sample",
        Command::VerifyBound(_) => "verify-bound",
        Command::MdsCompare(_) => "mds-compare",
        Command::Stats(_) => "stats",
        Command::CorrectorSweep(_) => "corrector-sweep",
        Command::Ablation(_) => "ablation",
        Command::Metrics(_) => "metrics",
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run(cli: Cli) -> CliResult<String> {
    let name = command_name(&cli.command);
    let cfg = cli.config.as_deref().map(|p| load_config(p, name)).transpose()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.out.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let jobs = cli.jobs.or_else(|| cfg.as_ref().and_then(|c| c.jobs));
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let cfg_ref = cfg.as_ref();
    let cfg_path = cli.config.as_deref();

    macro_rules! dispatch {
        ($args:expr, $ty:ty, $exec:ident, [$($field:ident),* $(,)?]) => {{
            let args = $args;
            let mut params: $ty = params_from(cfg_ref, cfg_path)?;
            overlay!(params, args, $($field),*);
            let outputs = pool.install(|| $exec(&params))?;
            finish(name, &out, jobs, &params, outputs)
        }};
    }

    match &cli.command {
        Command::GenDataset(a) => dispatch!(a, GenDatasetParams, exec_gen_dataset, [n, degree, count, seed]),
        Command::Sample(a) => dispatch!(
            a,
            SampleParams,
            exec_sample,
            [dataset, method, steps, corrector, chains, threshold, model, delta, a_t, ld_step_scale, record_every, save_trajectories, seed]
        ),
        Command::VerifyBound(a) => {
            dispatch!(a, BoundParams, exec_verify_bound, [trials, n_min, n_max, delta_min, delta_max, seed])
        }
        Command::MdsCompare(a) => dispatch!(
            a,
            MdsParams,
            exec_mds_compare,
            [trials, n_min, n_max, delta_min, delta_max, gd_iters, gd_step, seed]
        ),
        Command::Stats(a) => dispatch!(a, StatsParams, exec_stats, [taus, g, distances, samples, seed]),
        Command::CorrectorSweep(a) => dispatch!(
            a,
            SweepParams,
            exec_sweep,
            [deltas, correctors, chains, steps, threshold, quantile, n, degree, model, seed]
        ),
        Command::Ablation(a) => dispatch!(
            a,
            AblationParams,
            exec_ablation,
            [kind, values, n, corrector, delta, chains, steps, threshold, model, seed]
        ),
        Command::Metrics(a) => dispatch!(a, MetricsParams, exec_metrics, [generated, reference, threshold]),
    }
}

fn finish<P: Serialize>(name: &str, out: &Path, jobs: Option<usize>, params: &P, outputs: Outputs) -> CliResult<String> {
    let manifest = Manifest { command: name, out, jobs, params };
    let manifest = toml::to_string(&manifest).map_err(|e| CliError::Runtime(Error::Config(e.to_string())))?;
    for (file, contents) in &outputs.files {
        io::write_atomic(&out.join(file), contents)?;
    }
    io::write_atomic(&out.join("manifest.toml"), &manifest)?;
    match outputs.failure {
        Some(msg) => {
            print!("{}", outputs.summary);
            Err(CliError::Runtime(Error::Contract(msg)))
        }
        None => Ok(outputs.summary),
    }
}

fn exec_gen_dataset(p: &GenDatasetParams) -> CliResult<Outputs> {
    if p.count == 0 {
        return Err(CliError::Usage("count must be at least 1".into()));
    }
    let mut o = Outputs::new();
    let first = synthetic_conformation(p.n, p.degree, derive_seed(p.seed, &[0]))?;
    o.file("edges.txt", io::edges_text(&first.graph));
    for i in 0..p.count {
        let points = if i == 0 {
            first.points.clone()
        } else {
            synthetic_conformation(p.n, p.degree, derive_seed(p.seed, &[i as u64]))?.points
        };
        o.file(format!("points_{i:03}.txt"), io::points_text(&points));
    }
    o.summary = format!("wrote {} conformation(s) with {} edges\n", p.count, first.graph.edges().len());
    Ok(o)
}

fn dataset_points(dir: &Path) -> CliResult<Vec<PointSet>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Runtime(Error::io(dir, e)))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("points_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Runtime(Error::Parse {
            path: dir.to_path_buf(),
            line: 0,
            msg: "no points_*.txt files in dataset".into(),
        }));
    }
    files.iter().map(|f| io::read_points(f).map_err(CliError::from)).collect()
}

fn exec_sample(p: &SampleParams) -> CliResult<Outputs> {
    if p.dataset.as_os_str().is_empty() {
        return Err(CliError::Usage("--dataset is required".into()));
    }
    let method: Method = p.method.parse()?;
    let model = parse_model(&p.model)?;
    if p.chains == 0 {
        return Err(CliError::Usage("chains must be at least 1".into()));
    }
    let conformations = dataset_points(&p.dataset)?;
    let n = conformations[0].n();
    if conformations.iter().any(|c| c.n() != n) {
        return Err(CliError::Runtime(Error::Contract("dataset conformations differ in size".into())));
    }
    let graph = io::read_edges(&p.dataset.join("edges.txt"), n)?;
    let schedule = default_schedule(DEFAULT_STEPS)?;
    let config = SamplerConfig {
        method,
        steps: p.steps,
        corrector: p.corrector,
        ld_step_scale: p.ld_step_scale,
        seed: 0,
        threshold: p.threshold,
        record_every: p.record_every,
        ..Default::default()
    };
    config.validate()?;
    let providers: Vec<Box<dyn ScoreProvider>> = conformations
        .iter()
        .map(|c| -> Box<dyn ScoreProvider> {
            let d0 = pairwise_distances(c);
            match model {
                ScoreModel::Oracle => Box::new(GaussianOracle { d0, a_t: p.a_t }),
                ScoreModel::Toy => Box::new(NoisyToy { graph: graph.clone(), d0, delta: p.delta }),
            }
        })
        .collect();
    let refs: Vec<_> = conformations.iter().map(pairwise_distances).collect();
    let spaced = schedule.respaced(p.steps)?;
    use rayon::prelude::*;
    let results: Vec<_> = (0..p.chains as u64)
        .into_par_iter()
        .map(|c| {
            let idx = c as usize % conformations.len();
            let init = init_from_prior(n, &spaced, derive_seed(p.seed, &[0, c]))?;
            let cfg = SamplerConfig { seed: derive_seed(p.seed, &[1, c]), ..config.clone() };
            Ok::<_, Error>((idx, run_chain(&init, &cfg, &spaced, providers[idx].as_ref(), Some(&graph), Some(&refs[idx]))))
        })
        .collect::<Result<_, _>>()?;

    let mut o = Outputs::new();
    let mut csv = String::from("chain,conformation,converged,converged_at,final_error,diverged\n");
    let mut finals = String::new();
    let mut converged = 0;
    for (c, (idx, r)) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                let fin = *r.error_trace.last().expect("reference supplied");
                let ok = fin < p.threshold;
                converged += ok as usize;
                let at = r.converged_at.map(|s| s.to_string()).unwrap_or_default();
                let _ = writeln!(csv, "{c},{idx},{ok},{at},{},false", fmt_f64(fin));
                let _ = writeln!(finals, "# chain {c}");
                finals.push_str(&io::points_text(&r.final_points));
                if p.save_trajectories {
                    o.file(format!("trajectory_{c:03}.txt"), io::trajectory_text(&r.trajectory));
                }
            }
            Err(Error::Divergence { .. }) => {
                let _ = writeln!(csv, "{c},{idx},false,,,true");
            }
            Err(e) => return Err(CliError::Runtime(Error::Contract(format!("chain {c}: {e}")))),
        }
    }
    o.file("chains.csv", csv);
    o.file("final.txt", finals);
    o.summary = format!("converged {converged}/{} chains (threshold {})\n", p.chains, p.threshold);
    Ok(o)
}

fn exec_verify_bound(p: &BoundParams) -> CliResult<Outputs> {
    let recs = run_bound_check((p.n_min, p.n_max), (p.delta_min, p.delta_max), p.trials, p.seed)?;
    let violations = recs.iter().filter(|r| !(r.f_approx <= r.bound + 1e-9)).count();
    let mut o = Outputs::new();
    o.file("bound.csv", bound_csv(&recs));
    o.summary = format!("{} trials, {violations} bound violations\n", recs.len());
    if violations > 0 {
        o.failure = Some(format!("{violations} trials exceed the bound"));
    }
    Ok(o)
}

fn exec_mds_compare(p: &MdsParams) -> CliResult<Outputs> {
    let gd = GdOptions { max_iters: p.gd_iters, step: p.gd_step, ..Default::default() };
    let recs = run_mds_comparison((p.n_min, p.n_max), (p.delta_min, p.delta_max), p.trials, p.seed, &gd)?;
    let total = recs.len().max(1) as f64;
    let gd_ok = recs.iter().filter(|r| r.f_gd <= r.f_approx + 1e-9).count() as f64 / total;
    let wins = recs.iter().filter(|r| r.f_approx < r.f_cmds).count() as f64 / total;
    let mut o = Outputs::new();
    o.file("mds_compare.csv", mds_csv(&recs));
    o.summary = format!(
        "{} trials: f_gd <= f_approx in {:.1}%, f_approx < f_cmds in {:.1}%\n",
        recs.len(),
        100.0 * gd_ok,
        100.0 * wins
    );
    Ok(o)
}

fn exec_stats(p: &StatsParams) -> CliResult<Outputs> {
    let rows = stats_verification(&p.taus, p.g, &p.distances, p.samples, p.seed)?;
    let mut o = Outputs::new();
    o.file("stats.csv", stats_csv(&rows));
    let mut s = String::new();
    for r in &rows {
        let _ = writeln!(
            s,
            "tau={:e} d={}: z_drift={:.2} z_second={:.2} z_laguerre={:.2}",
            r.tau,
            r.d,
            r.z_drift(),
            r.z_second(),
            r.z_laguerre()
        );
    }
    o.summary = s;
    Ok(o)
}

fn exec_sweep(p: &SweepParams) -> CliResult<Outputs> {
    let grid = SweepGrid {
        deltas: p.deltas.clone(),
        correctors: p.correctors.clone(),
        n_chains: p.chains,
        steps: p.steps,
        threshold: p.threshold,
        quantile: p.quantile,
        seed: p.seed,
        model: parse_model(&p.model)?,
    };
    let cells = corrector_sweep(&grid, p.n, p.degree)?;
    let mut o = Outputs::new();
    o.file("sweep.csv", sweep_csv(&cells));
    o.summary = format!("{} cells\n", cells.len());
    Ok(o)
}

fn exec_ablation(p: &AblationParams) -> CliResult<Outputs> {
    let settings = AblationSettings {
        n_chains: p.chains,
        steps: p.steps,
        delta: p.delta,
        threshold: p.threshold,
        seed: p.seed,
        model: parse_model(&p.model)?,
    };
    let curves = match p.kind.as_str() {
        "nodes" => ablation_nodes(&p.values, p.corrector, &settings)?,
        "degree" => ablation_degree(&p.values, p.n, p.corrector, &settings)?,
        other => return Err(CliError::Usage(format!("unknown ablation kind '{other}'"))),
    };
    let mut o = Outputs::new();
    o.file("flows.csv", flows_csv(&curves));
    let mut s = String::new();
    for c in &curves {
        let _ = writeln!(s, "{}: converged {:.2}, diverged {}", c.label, c.converged_fraction, c.diverged_chains);
    }
    o.summary = s;
    Ok(o)
}

fn read_population(files: &[PathBuf], what: &str) -> CliResult<Vec<PointSet>> {
    if files.is_empty() {
        return Err(CliError::Usage(format!("no {what} files given")));
    }
    let mut all = Vec::new();
    for f in files {
        all.extend(io::read_frames(f)?);
    }
    Ok(all)
}

fn exec_metrics(p: &MetricsParams) -> CliResult<Outputs> {
    let generated = read_population(&p.generated, "generated")?;
    let reference = read_population(&p.reference, "reference")?;
    let rep = cov_mat(&generated, &reference, p.threshold)?;
    let ad = ad_score(&generated, &reference)?;
    let mut o = Outputs::new();
    o.file(
        "metrics.csv",
        format!(
            "cov_r,mat_r,cov_p,mat_p,threshold\n{},{},{},{},{}\n",
            fmt_f64(rep.cov_r),
            fmt_f64(rep.mat_r),
            fmt_f64(rep.cov_p),
            fmt_f64(rep.mat_p),
            fmt_f64(rep.threshold)
        ),
    );
    o.file("ad.txt", format!("{}\n", fmt_f64(ad)));
    o.summary = format!("COV-R {:.3} MAT-R {:.4} COV-P {:.3} MAT-P {:.4} AD {:.4}\n", rep.cov_r, rep.mat_r, rep.cov_p, rep.mat_p, ad);
    Ok(o)
}
