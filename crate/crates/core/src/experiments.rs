//! Experiment suites: corrector sweeps, ablations and increment statistics,
//! plus their CSV renderings.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::diffusion::{
    default_schedule, laguerre_drift, mc_increment_stats, predicted_drift, predicted_second_moment, GaussianOracle,
    NoisyToy, ScoreProvider, DEFAULT_STEPS,
};
use crate::geometry::{pairwise_distances, random_regular_graph, DistanceMatrix, Graph, PointSet};
use crate::io::fmt_f64;
use crate::mds_oracle::{BoundRecord, MdsComparisonRecord};
use crate::samplers::{init_from_prior, run_chain, Method, SamplerConfig};
use crate::seed::{self, derive_seed};
use crate::{Error, Result};

/// Which score drives the sweep chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreModel {
    /// Exact Gaussian distance score; the error level is ignored.
    Oracle,
    /// Noisy unit-std toy model at each error level.
    Toy,
}

impl std::str::FromStr for ScoreModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ScoreModel::Oracle),
            "toy" => Ok(ScoreModel::Toy),
            other => Err(Error::Parameter(format!("unknown score model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub deltas: Vec<f64>,
    pub correctors: Vec<f64>,
    pub n_chains: usize,
    pub steps: usize,
    pub threshold: f64,
    pub quantile: f64,
    pub seed: u64,
    pub model: ScoreModel,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            deltas: vec![0.0, 0.1, 0.5, 1.0, 2.0],
            correctors: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 1280.0],
            n_chains: 100,
            steps: 100,
            threshold: 0.5,
            quantile: 0.9,
            seed: 0,
            model: ScoreModel::Toy,
        }
    }
}

impl SweepGrid {
    fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.correctors.is_empty() {
            return Err(Error::Parameter("sweep axes must be non-empty".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Parameter("need at least one chain per cell".into()));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::Parameter(format!("quantile must lie in (0, 1], got {}", self.quantile)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Parameter("threshold must be positive".into()));
        }
        if self.deltas.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Parameter("error levels must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub delta: f64,
    pub k: f64,
    /// Fraction of chains within the threshold at the final step.
    pub converged_fraction: f64,
    /// 1 − t/N at the first step t where the quantile of chains is within the threshold.
    pub convergence_time: Option<f64>,
    /// Set when more than half of the chains diverged.
    pub diverged: bool,
    pub diverged_chains: usize,
}

/// Synthetic target: a random regular graph and Gaussian reference coordinates.
#[derive(Debug, Clone)]
pub struct Conformation {
    pub graph: Graph,
    pub points: PointSet,
    pub d0: DistanceMatrix,
}

pub fn synthetic_conformation(n: usize, degree: usize, seed: u64) -> Result<Conformation> {
    let graph = random_regular_graph(n, degree, derive_seed(seed, &[0]))?;
    let points = PointSet::new(seed::normal_rows(&mut seed::rng(derive_seed(seed, &[1])), n))?;
    let d0 = pairwise_distances(&points);
    Ok(Conformation { graph, points, d0 })
}

fn provider_for(model: ScoreModel, conf: &Conformation, delta: f64) -> Box<dyn ScoreProvider> {
    match model {
        ScoreModel::Oracle => Box::new(GaussianOracle::new(conf.d0.clone())),
        ScoreModel::Toy => Box::new(NoisyToy { graph: conf.graph.clone(), d0: conf.d0.clone(), delta }),
    }
}

/// Error traces of `n_chains` reverse-ODE chains; `None` marks a diverged chain.
/// Chain c always starts from the same prior draw and noise stream, so cells
/// that differ only in δ or k are paired.
fn ode_traces(
    conf: &Conformation,
    model: ScoreModel,
    delta: f64,
    k: f64,
    n_chains: usize,
    steps: usize,
    threshold: f64,
    seed: u64,
) -> Result<Vec<Option<Vec<f64>>>> {
    let schedule = default_schedule(DEFAULT_STEPS)?.respaced(steps)?;
    let provider = provider_for(model, conf, delta);
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| {
            let init = init_from_prior(conf.points.n(), &schedule, derive_seed(seed, &[2, c]))?;
            let config = SamplerConfig {
                method: Method::OdeSimple,
                steps,
                corrector: k,
                seed: derive_seed(seed, &[3, c]),
                threshold,
                record_every: steps,
                ..Default::default()
            };
            match run_chain(&init, &config, &schedule, provider.as_ref(), Some(&conf.graph), Some(&conf.d0)) {
                Ok(r) => Ok(Some(r.error_trace)),
                Err(Error::Divergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn summarize(delta: f64, k: f64, traces: &[Option<Vec<f64>>], steps: usize, threshold: f64, quantile: f64) -> SweepCell {
    let total = traces.len() as f64;
    let fraction_at = |idx: usize| {
        traces.iter().filter(|t| t.as_ref().is_some_and(|t| t[idx] < threshold)).count() as f64 / total
    };
    let crossing = (0..=steps).find(|&idx| fraction_at(idx) >= quantile);
    let diverged_chains = traces.iter().filter(|t| t.is_none()).count();
    SweepCell {
        delta,
        k,
        converged_fraction: fraction_at(steps),
        // Trace index i holds the state at step N − i.
        convergence_time: crossing.map(|idx| 1.0 - (steps - idx) as f64 / steps as f64),
        diverged: 2 * diverged_chains > traces.len(),
        diverged_chains,
    }
}

/// Runs every (δ, k) cell on one shared synthetic conformation. Cells are
/// returned δ-major, in grid order.
pub fn corrector_sweep(grid: &SweepGrid, n: usize, degree: usize) -> Result<Vec<SweepCell>> {
    grid.validate()?;
    let conf = synthetic_conformation(n, degree, derive_seed(grid.seed, &[0]))?;
    let chain_seed = derive_seed(grid.seed, &[1]);
    let cells: Vec<(f64, f64)> =
        grid.deltas.iter().flat_map(|&d| grid.correctors.iter().map(move |&k| (d, k))).collect();
    cells
        .into_iter()
        .map(|(delta, k)| {
            let traces = ode_traces(&conf, grid.model, delta, k, grid.n_chains, grid.steps, grid.threshold, chain_seed)?;
            Ok(summarize(delta, k, &traces, grid.steps, grid.threshold, grid.quantile))
        })
        .collect()
}

/// Smallest k per δ whose final converged fraction reaches `quantile`,
/// in the order δ first appears. Columns with no converging k map to `None`.
pub fn min_converging_k(cells: &[SweepCell], quantile: f64) -> Vec<(f64, Option<f64>)> {
    let mut out: Vec<(f64, Option<f64>)> = Vec::new();
    for c in cells {
        let ok = !c.diverged && c.converged_fraction >= quantile;
        match out.iter_mut().find(|(d, _)| *d == c.delta) {
            Some((_, best)) => {
                if ok && best.is_none_or(|b| c.k < b) {
                    *best = Some(c.k);
                }
            }
            None => out.push((c.delta, ok.then_some(c.k))),
        }
    }
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSettings {
    pub n_chains: usize,
    pub steps: usize,
    pub delta: f64,
    pub threshold: f64,
    pub seed: u64,
    pub model: ScoreModel,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self { n_chains: 100, steps: 100, delta: 0.0, threshold: 0.5, seed: 0, model: ScoreModel::Toy }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowCurve {
    pub label: String,
    /// Step indices N, N−1, …, 0.
    pub steps: Vec<usize>,
    /// Mean and std of ‖d_t − d₀‖_∞ over the chains that did not diverge.
    pub flow_mean: Vec<f64>,
    pub flow_std: Vec<f64>,
    pub converged_fraction: f64,
    pub diverged_chains: usize,
}

fn flow_curve(label: String, n: usize, degree: usize, k: f64, s: &AblationSettings, seed: u64) -> Result<FlowCurve> {
    let conf = synthetic_conformation(n, degree, derive_seed(seed, &[0]))?;
    let traces = ode_traces(&conf, s.model, s.delta, k, s.n_chains, s.steps, s.threshold, derive_seed(seed, &[1]))?;
    let ok: Vec<&Vec<f64>> = traces.iter().flatten().collect();
    let len = s.steps + 1;
    let mut flow_mean = vec![f64::NAN; len];
    let mut flow_std = vec![f64::NAN; len];
    if !ok.is_empty() {
        let m = ok.len() as f64;
        for i in 0..len {
            let mean = ok.iter().map(|t| t[i]).sum::<f64>() / m;
            let var = ok.iter().map(|t| (t[i] - mean).powi(2)).sum::<f64>() / m;
            flow_mean[i] = mean;
            flow_std[i] = var.sqrt();
        }
    }
    let converged = ok.iter().filter(|t| t[s.steps] < s.threshold).count();
    Ok(FlowCurve {
        label,
        steps: (0..len).map(|i| s.steps - i).collect(),
        flow_mean,
        flow_std,
        converged_fraction: converged as f64 / traces.len() as f64,
        diverged_chains: traces.len() - ok.len(),
    })
}

/// Degree-4 graphs of each node count, all at corrector `k`.
pub fn ablation_nodes(node_counts: &[usize], k: f64, settings: &AblationSettings) -> Result<Vec<FlowCurve>> {
    if node_counts.is_empty() {
        return Err(Error::Parameter("no node counts given".into()));
    }
    node_counts
        .iter()
        .enumerate()
        .map(|(i, &n)| flow_curve(format!("n={n}"), n, 4, k, settings, derive_seed(settings.seed, &[i as u64])))
        .collect()
}

/// Regular graphs of each degree on `n` nodes, all at corrector `k`.
pub fn ablation_degree(degrees: &[usize], n: usize, k: f64, settings: &AblationSettings) -> Result<Vec<FlowCurve>> {
    if degrees.is_empty() {
        return Err(Error::Parameter("no degrees given".into()));
    }
    if let Some(d) = degrees.iter().find(|&&d| d < 4) {
        return Err(Error::Parameter(format!("degree {d} is below 4")));
    }
    degrees
        .iter()
        .enumerate()
        .map(|(i, &d)| flow_curve(format!("degree={d}"), n, d, k, settings, derive_seed(settings.seed, &[i as u64])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub tau: f64,
    pub g: f64,
    pub d: f64,
    pub mean_drift: f64,
    pub predicted_drift: f64,
    pub stderr: f64,
    pub second_moment: f64,
    pub predicted_second: f64,
    pub stderr2: f64,
    pub n: usize,
    pub laguerre_drift: f64,
}

fn z_score(observed: f64, expected: f64, stderr: f64) -> f64 {
    let diff = observed - expected;
    if diff == 0.0 {
        0.0
    } else {
        diff / stderr
    }
}

impl StatsRow {
    /// (MC drift − stated drift)/stderr.
    pub fn z_drift(&self) -> f64 {
        z_score(self.mean_drift, self.predicted_drift, self.stderr)
    }

    pub fn z_second(&self) -> f64 {
        z_score(self.second_moment, self.predicted_second, self.stderr2)
    }

    /// (MC drift − closed-form noncentral-chi drift)/stderr.
    pub fn z_laguerre(&self) -> f64 {
        z_score(self.mean_drift, self.laguerre_drift, self.stderr)
    }
}

/// Monte-Carlo moments for every (τ, d) pair, τ-major.
pub fn stats_verification(taus: &[f64], g: f64, ds: &[f64], n_samples: usize, seed: u64) -> Result<Vec<StatsRow>> {
    if taus.is_empty() || ds.is_empty() {
        return Err(Error::Parameter("tau and distance lists must be non-empty".into()));
    }
    if !(g >= 0.0) {
        return Err(Error::Parameter("G must be nonnegative".into()));
    }
    let mut rows = Vec::with_capacity(taus.len() * ds.len());
    for (i, &tau) in taus.iter().enumerate() {
        for (j, &d) in ds.iter().enumerate() {
            let st = mc_increment_stats([d, 0.0, 0.0], tau, g, n_samples, derive_seed(seed, &[i as u64, j as u64]))?;
            let laguerre = if g == 0.0 { 0.0 } else { laguerre_drift(d, tau, g)? };
            rows.push(StatsRow {
                tau,
                g,
                d,
                mean_drift: st.mean_drift,
                predicted_drift: predicted_drift(tau, g, d),
                stderr: st.stderr_mean,
                second_moment: st.second_moment,
                predicted_second: predicted_second_moment(tau, g),
                stderr2: st.stderr_second,
                n: st.n_samples,
                laguerre_drift: laguerre,
            });
        }
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("delta,k,converged_fraction,convergence_time,diverged\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(c.delta),
            fmt_f64(c.k),
            fmt_f64(c.converged_fraction),
            opt(c.convergence_time),
            c.diverged
        );
    }
    s
}

pub fn flows_csv(curves: &[FlowCurve]) -> String {
    let mut s = String::from("label,step,flow_mean,flow_std\n");
    for c in curves {
        for i in 0..c.steps.len() {
            let _ = writeln!(s, "{},{},{},{}", c.label, c.steps[i], fmt_f64(c.flow_mean[i]), fmt_f64(c.flow_std[i]));
        }
    }
    s
}

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut s = String::from(
        "tau,G,d,mean_drift,predicted_drift,stderr,second_moment,predicted_second,stderr2,n,laguerre_drift,z_drift,z_second,z_laguerre\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.tau),
            fmt_f64(r.g),
            fmt_f64(r.d),
            fmt_f64(r.mean_drift),
            fmt_f64(r.predicted_drift),
            fmt_f64(r.stderr),
            fmt_f64(r.second_moment),
            fmt_f64(r.predicted_second),
            fmt_f64(r.stderr2),
            r.n,
            fmt_f64(r.laguerre_drift),
            fmt_f64(r.z_drift()),
            fmt_f64(r.z_second()),
            fmt_f64(r.z_laguerre()),
        );
    }
    s
}

pub fn mds_csv(records: &[MdsComparisonRecord]) -> String {
    let mut s = String::from("n,delta,f_approx,f_gd,f_cmds,bound,seed\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.delta),
            fmt_f64(r.f_approx),
            fmt_f64(r.f_gd),
            fmt_f64(r.f_cmds),
            fmt_f64(r.bound),
            r.seed
        );
    }
    s
}

pub fn bound_csv(records: &[BoundRecord]) -> String {
    let mut s = String::from("n,delta,f_approx,bound,seed\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.n, fmt_f64(r.delta), fmt_f64(r.f_approx), fmt_f64(r.bound), r.seed);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> SweepGrid {
        SweepGrid {
            deltas: vec![0.0, 1.0],
            correctors: vec![1.0, 16.0],
            n_chains: 6,
            steps: 30,
            ..Default::default()
        }
    }

    #[test]
    fn sweep_shape_and_invariants() {
        let cells = corrector_sweep(&small_grid(), 10, 4).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[1].delta, cells[1].k), (0.0, 16.0));
        for c in &cells {
            assert!((0.0..=1.0).contains(&c.converged_fraction));
            if let Some(t) = c.convergence_time {
                assert!((0.0..=1.0).contains(&t));
            }
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = corrector_sweep(&small_grid(), 10, 4).unwrap();
        let b = corrector_sweep(&small_grid(), 10, 4).unwrap();
        assert_eq!(sweep_csv(&a), sweep_csv(&b));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let bad = SweepGrid { correctors: vec![], ..small_grid() };
        assert!(corrector_sweep(&bad, 10, 4).is_err());
        let bad = SweepGrid { quantile: 0.0, ..small_grid() };
        assert!(corrector_sweep(&bad, 10, 4).is_err());
        assert!(corrector_sweep(&small_grid(), 10, 3).is_err());
    }

    #[test]
    fn summary_time_and_flag() {
        // Three chains, 2 steps: chain 0 converges at trace index 1, chain 1 at 2, chain 2 diverged.
        let traces = vec![Some(vec![9.0, 0.1, 0.1]), Some(vec![9.0, 9.0, 0.1]), None];
        let c = summarize(0.0, 1.0, &traces, 2, 0.5, 0.6);
        assert!((c.converged_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.convergence_time, Some(1.0));
        assert!(!c.diverged);
        let c = summarize(0.0, 1.0, &traces, 2, 0.5, 0.3);
        assert_eq!(c.convergence_time, Some(0.5));
        let c = summarize(0.0, 1.0, &[None, None, Some(vec![0.0; 3])], 2, 0.5, 0.9);
        assert!(c.diverged);
        assert_eq!(c.convergence_time, None);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn min_k_per_column() {
        let cell = |delta, k, f| SweepCell {
            delta,
            k,
            converged_fraction: f,
            convergence_time: None,
            diverged: false,
            diverged_chains: 0,
        };
        let cells = [cell(0.0, 1.0, 0.5), cell(0.0, 4.0, 0.95), cell(1.0, 1.0, 0.0), cell(1.0, 4.0, 0.2)];
        assert_eq!(min_converging_k(&cells, 0.9), vec![(0.0, Some(4.0)), (1.0, None)]);
    }

    #[test]
    fn ablation_curves_share_axes() {
        let s = AblationSettings { n_chains: 4, steps: 20, ..Default::default() };
        let curves = ablation_nodes(&[10, 12], 16.0, &s).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].steps, curves[1].steps);
        assert!(curves.iter().flat_map(|c| &c.flow_mean).all(|x| *x >= 0.0));
        assert!(ablation_degree(&[3], 10, 1.0, &s).is_err());
        let deg = ablation_degree(&[4, 5, 6], 12, 16.0, &s).unwrap();
        assert_eq!(deg[2].label, "degree=6");
    }

    #[test]
    fn stats_zero_diffusion_rows() {
        let rows = stats_verification(&[1e-3], 0.0, &[1.0, 2.0], 1000, 1).unwrap();
        for r in &rows {
            assert_eq!((r.mean_drift, r.second_moment, r.predicted_drift, r.predicted_second), (0.0, 0.0, 0.0, 0.0));
            assert_eq!((r.z_drift(), r.z_second()), (0.0, 0.0));
        }
        assert!(stats_csv(&rows).starts_with("tau,G,d,mean_drift,predicted_drift,stderr,second_moment,predicted_second,stderr2,n,"));
    }
}
