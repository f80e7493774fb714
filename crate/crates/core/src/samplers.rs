//! Reverse-time samplers over point sets driven by distance scores.
//!
//! All samplers walk the schedule from step N down to 1. `Δσ²` below means
//! σ_k² − σ_{k−1}².

use crate::diffusion::{scatter_score, NoiseSchedule, ScoreProvider, ScoreQuery};
use crate::geometry::{pairwise_distances, DistanceMatrix, Field, Graph, PointSet, SymmetricPerturbation, EPS_DEG};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sde,
    OdeSimple,
    OdeFull,
    Ld,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(Method::Sde),
            "ode" | "ode-simple" => Ok(Method::OdeSimple),
            "ode-full" => Ok(Method::OdeFull),
            "ld" => Ok(Method::Ld),
            other => Err(Error::Parameter(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    pub steps: usize,
    /// Multiplier on the score drift (ODE and SDE only).
    pub corrector: f64,
    /// Langevin step scale δ in α_t = δσ_t².
    pub ld_step_scale: f64,
    pub seed: u64,
    /// Convergence threshold h on ‖d_t − d₀‖_∞.
    pub threshold: f64,
    pub record_every: usize,
    /// A chain diverges once its largest distance exceeds this multiple of the initial one.
    pub divergence_factor: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: Method::OdeSimple,
            steps: 100,
            corrector: 1.0,
            ld_step_scale: 1e-3,
            seed: 0,
            threshold: 0.5,
            record_every: 10,
            divergence_factor: 1e3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Parameter("steps must be at least 1".into()));
        }
        if !(self.corrector >= 1.0) {
            return Err(Error::Parameter(format!("corrector must be ≥ 1, got {}", self.corrector)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Parameter("threshold must be positive".into()));
        }
        if self.record_every < 1 {
            return Err(Error::Parameter("record_every must be at least 1".into()));
        }
        if self.method == Method::Ld && !(self.ld_step_scale > 0.0) {
            return Err(Error::Parameter("Langevin step scale must be positive".into()));
        }
        Ok(())
    }
}

/// Score source plus the topology its distance scores are scatter-meaned over.
/// Without a graph the complete graph with dense 1/(2(n−1)) weights is used.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub provider: &'a dyn ScoreProvider,
    pub graph: Option<&'a Graph>,
}

impl StepContext<'_> {
    fn coordinate_score_at(&self, points: &PointSet, sigma: f64, step: usize, seed: u64) -> Result<Field> {
        let d = pairwise_distances(points);
        let q = ScoreQuery { points, distances: &d, step, sigma, seed };
        self.provider.score(&q)?.into_coordinates(points, self.graph)
    }

    /// Provider output in coordinate space at schedule step `k`.
    pub fn coordinate_score(&self, points: &PointSet, k: usize, seed: u64) -> Result<Field> {
        self.coordinate_score_at(points, self.schedule.sigma(k), k, seed)
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.schedule.num_steps() {
            return Err(Error::Parameter(format!("step {k} outside 1..={}", self.schedule.num_steps())));
        }
        Ok(())
    }
}

fn provider_seed(seed: u64) -> u64 {
    seed::derive_seed(seed, &[0])
}

fn noise_seed(seed: u64) -> u64 {
    seed::derive_seed(seed, &[1])
}

/// C_{k−1} = C_k + corrector·Δσ²·s.
pub fn reverse_ode_step(points: &PointSet, ctx: &StepContext<'_>, k: usize, corrector: f64, seed: u64) -> Result<PointSet> {
    ctx.check_step(k)?;
    let s = ctx.coordinate_score(points, k, provider_seed(seed))?;
    Ok(points.shifted(&s, corrector * ctx.schedule.g2(k)))
}

/// Scatter-meaned −3/d term over the context topology.
fn inverse_distance_field(points: &PointSet, graph: Option<&Graph>) -> Result<Field> {
    let n = points.n();
    let d = pairwise_distances(points);
    let check = |i: usize, j: usize| if d.get(i, j) < EPS_DEG { Err(Error::DegenerateDistance { i, j }) } else { Ok(()) };
    match graph {
        Some(g) => g.edges().iter().try_for_each(|&(i, j)| check(i, j))?,
        None => (0..n).try_for_each(|i| (i + 1..n).try_for_each(|j| check(i, j)))?,
    }
    let term = SymmetricPerturbation::from_upper(n, |i, j| {
        let dij = d.get(i, j);
        if dij < EPS_DEG {
            0.0
        } else {
            -3.0 / dij
        }
    });
    scatter_score(points, graph, &term)
}

/// Reverse step of the full distance ODE: the drift is (∇_d log p − 3/d)
/// scatter-meaned, and the corrector scales all of it.
pub fn reverse_ode_full_step(
    points: &PointSet,
    ctx: &StepContext<'_>,
    k: usize,
    corrector: f64,
    seed: u64,
) -> Result<PointSet> {
    ctx.check_step(k)?;
    let extra = inverse_distance_field(points, ctx.graph)?;
    let s = ctx.coordinate_score(points, k, provider_seed(seed))?;
    let drift: Field = s.iter().zip(&extra).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
    Ok(points.shifted(&drift, corrector * ctx.schedule.g2(k)))
}

/// C_{k−1} = C_k + 2·corrector·Δσ²·s + √Δσ²·Z. The factor 2 is g²/G².
pub fn reverse_sde_step(points: &PointSet, ctx: &StepContext<'_>, k: usize, corrector: f64, seed: u64) -> Result<PointSet> {
    sde_step_with_noise_scale(points, ctx, k, corrector, seed, 1.0)
}

/// SDE step with the injected noise multiplied by `noise_scale`; 0 turns it off.
pub fn sde_step_with_noise_scale(
    points: &PointSet,
    ctx: &StepContext<'_>,
    k: usize,
    corrector: f64,
    seed: u64,
    noise_scale: f64,
) -> Result<PointSet> {
    ctx.check_step(k)?;
    let g2 = ctx.schedule.g2(k);
    let s = ctx.coordinate_score(points, k, provider_seed(seed))?;
    let drifted = points.shifted(&s, 2.0 * corrector * g2);
    if noise_scale == 0.0 || g2 == 0.0 {
        return Ok(drifted);
    }
    let z = seed::normal_rows(&mut seed::rng(noise_seed(seed)), points.n());
    Ok(drifted.shifted(&z, noise_scale * g2.sqrt()))
}

/// C ← C + α·s + √(2α)·Z with α = δσ_t².
pub fn langevin_step(points: &PointSet, sigma_t: f64, delta: f64, coordinate_score: &[[f64; 3]], seed: u64) -> Result<PointSet> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("Langevin step scale must be positive, got {delta}")));
    }
    let alpha = delta * sigma_t * sigma_t;
    let z = seed::normal_rows(&mut seed::rng(seed), points.n());
    Ok(points.shifted(coordinate_score, alpha).shifted(&z, (2.0 * alpha).sqrt()))
}

/// N(0, σ_T² I) starting configuration.
pub fn init_from_prior(n: usize, schedule: &NoiseSchedule, seed: u64) -> Result<PointSet> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 nodes, got {n}")));
    }
    let z = seed::normal_rows(&mut seed::rng(seed), n);
    PointSet::new(vec![[0.0; 3]; n]).map(|p| p.shifted(&z, schedule.terminal()))
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub final_points: PointSet,
    /// (step, points) snapshots in strictly decreasing step order, starting at N.
    pub trajectory: Vec<(usize, PointSet)>,
    /// First step index whose state is within the threshold.
    pub converged_at: Option<usize>,
    /// ‖d − d₀‖_∞ at each snapshot; empty without a reference.
    pub max_distance_error: Vec<f64>,
    /// ‖d − d₀‖_∞ at every step N, N−1, …, 0; empty without a reference.
    pub error_trace: Vec<f64>,
}

/// ‖d(points) − d₀‖_∞ over graph edges, or over all pairs without a graph.
pub fn max_distance_error(points: &PointSet, d0: &DistanceMatrix, graph: Option<&Graph>) -> f64 {
    let mut worst: f64 = 0.0;
    let mut visit = |i: usize, j: usize| worst = worst.max((points.distance(i, j) - d0.get(i, j)).abs());
    match graph {
        Some(g) => g.edges().iter().for_each(|&(i, j)| visit(i, j)),
        None => {
            for i in 0..points.n() {
                for j in i + 1..points.n() {
                    visit(i, j);
                }
            }
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

fn max_pairwise(points: &PointSet) -> f64 {
    pairwise_distances(points).max()
}

/// Runs one reverse chain with `config.steps` levels of `schedule` (respaced
/// when the schedule is longer).
pub fn run_chain(
    init: &PointSet,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    provider: &dyn ScoreProvider,
    graph: Option<&Graph>,
    d0: Option<&DistanceMatrix>,
) -> Result<ChainResult> {
    config.validate()?;
    if !init.is_finite() {
        return Err(Error::Parameter("initial point set is not finite".into()));
    }
    if let Some(d0) = d0 {
        if d0.n() != init.n() {
            return Err(Error::Parameter("reference distances and init differ in size".into()));
        }
    }
    let schedule = if schedule.num_steps() == config.steps { schedule.clone() } else { schedule.respaced(config.steps)? };
    let ctx = StepContext { schedule: &schedule, provider, graph };
    let n_steps = config.steps;
    let scale = max_pairwise(init).max(f64::MIN_POSITIVE);
    let limit = config.divergence_factor * scale;

    let mut points = init.clone();
    let mut trajectory = vec![(n_steps, points.clone())];
    let mut error_trace = Vec::new();
    let mut converged_at = None;
    if let Some(d0) = d0 {
        let e = max_distance_error(&points, d0, graph);
        error_trace.push(e);
        if e < config.threshold {
            converged_at = Some(n_steps);
        }
    }
    for k in (1..=n_steps).rev() {
        let step_seed = seed::derive_seed(config.seed, &[k as u64]);
        points = match config.method {
            Method::OdeSimple => reverse_ode_step(&points, &ctx, k, config.corrector, step_seed)?,
            Method::OdeFull => reverse_ode_full_step(&points, &ctx, k, config.corrector, step_seed)?,
            Method::Sde => reverse_sde_step(&points, &ctx, k, config.corrector, step_seed)?,
            Method::Ld => {
                let s = ctx.coordinate_score(&points, k, provider_seed(step_seed))?;
                langevin_step(&points, schedule.sigma(k), config.ld_step_scale, &s, noise_seed(step_seed))?
            }
        };
        let now = k - 1;
        if !points.is_finite() {
            return Err(Error::Divergence { step: now, reason: "non-finite coordinates".into() });
        }
        let spread = max_pairwise(&points);
        if spread > limit {
            return Err(Error::Divergence {
                step: now,
                reason: format!("largest distance {spread:.3e} exceeds {:.0e}× the initial {scale:.3e}", config.divergence_factor),
            });
        }
        if let Some(d0) = d0 {
            let e = max_distance_error(&points, d0, graph);
            error_trace.push(e);
            if converged_at.is_none() && e < config.threshold {
                converged_at = Some(now);
            }
        }
        if (n_steps - now).is_multiple_of(config.record_every) || now == 0 {
            trajectory.push((now, points.clone()));
        }
    }
    let max_distance_error = match d0 {
        Some(_) => trajectory.iter().map(|(s, _)| error_trace[n_steps - s]).collect(),
        None => Vec::new(),
    };
    Ok(ChainResult { final_points: points, trajectory, converged_at, max_distance_error, error_trace })
}
