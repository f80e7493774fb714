//! Metric-MDS objective, a smoothed gradient-descent reference solver, and the
//! single-edge perturbation comparison between scatter-mean, GD and c-MDS.

use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{
    norm, pairwise_distances, scatter_mean_shift, sub, DistanceMatrix, PointSet, Square, SymmetricPerturbation,
};
use crate::seed;
use crate::spectral::classic_mds;
use crate::{Error, Result};

/// Σ_{i<j} (‖x_i − x_j‖ − target_ij)².
pub fn mds_objective(points: &PointSet, target: &Square) -> f64 {
    let n = points.n();
    assert_eq!(target.n(), n, "dimension mismatch");
    let mut f = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = points.distance(i, j) - target.get(i, j);
            f += r * r;
        }
    }
    f
}

/// (2n² − 7n + 6) δ² / (2(n−1)²).
pub fn scatter_mean_bound(n: usize, delta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Parameter(format!("bound needs n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    Ok((2.0 * nf * nf - 7.0 * nf + 6.0) * delta * delta / (2.0 * (nf - 1.0) * (nf - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOptions {
    /// Smoothing inside the square root.
    pub eps: f64,
    /// First trial step; later trials start from twice the last accepted step.
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for GdOptions {
    fn default() -> Self {
        Self { eps: 1e-8, step: 1e-2, max_iters: 500, grad_tol: 1e-10, armijo: 1e-4, max_halvings: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct GdResult {
    pub points: PointSet,
    /// Exact objective at the initializer and after each accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn smoothed_objective(x: &[[f64; 3]], target: &Square, eps: f64) -> f64 {
    let n = x.len();
    let mut f = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = sub(x[i], x[j]);
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps).sqrt() - target.get(i, j);
            f += r * r;
        }
    }
    f
}

fn smoothed_gradient(x: &[[f64; 3]], target: &Square, eps: f64) -> Vec<[f64; 3]> {
    let n = x.len();
    let mut g = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sub(x[i], x[j]);
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps).sqrt();
            let c = 2.0 * (r - target.get(i, j)) / r;
            for k in 0..3 {
                g[i][k] += c * d[k];
                g[j][k] -= c * d[k];
            }
        }
    }
    g
}

fn exact_objective(x: &[[f64; 3]], target: &Square) -> f64 {
    let n = x.len();
    let mut f = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = norm(sub(x[i], x[j])) - target.get(i, j);
            f += r * r;
        }
    }
    f
}

/// Backtracking descent on Σ (√(‖x_i−x_j‖²+ε) − t_ij)².
///
/// A step is accepted only if it meets the Armijo condition on the smoothed
/// objective and does not raise the exact objective, so the exact objective
/// trace is nonincreasing.
pub fn smoothed_gd_mds(init: &PointSet, target: &Square, opts: &GdOptions) -> Result<GdResult> {
    if !(opts.eps > 0.0) || !(opts.step > 0.0) {
        return Err(Error::Parameter("GD needs eps > 0 and step > 0".into()));
    }
    if target.n() != init.n() {
        return Err(Error::Parameter("target and init sizes differ".into()));
    }
    let mut x = init.coords().to_vec();
    let mut f_s = smoothed_objective(&x, target, opts.eps);
    let mut f_e = exact_objective(&x, target);
    if !f_s.is_finite() {
        return Err(Error::Divergence { step: 0, reason: "non-finite objective at initializer".into() });
    }
    let mut trace = vec![f_e];
    let mut step = opts.step;
    let mut iterations = 0;
    for it in 0..opts.max_iters {
        let g = smoothed_gradient(&x, target, opts.eps);
        let gg: f64 = g.iter().flatten().map(|v| v * v).sum();
        if !gg.is_finite() {
            return Err(Error::Divergence { step: it, reason: "non-finite gradient".into() });
        }
        if gg.sqrt() < opts.grad_tol {
            break;
        }
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<[f64; 3]> =
                x.iter().zip(&g).map(|(a, b)| [a[0] - step * b[0], a[1] - step * b[1], a[2] - step * b[2]]).collect();
            let ts = smoothed_objective(&trial, target, opts.eps);
            let te = exact_objective(&trial, target);
            if ts.is_finite() && ts <= f_s - opts.armijo * step * gg && te <= f_e {
                x = trial;
                f_s = ts;
                f_e = te;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        trace.push(f_e);
        step *= 2.0;
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: iterations, reason: "non-finite iterate".into() });
    }
    Ok(GdResult { points: PointSet::from_raw(x), objective_trace: trace, iterations })
}

/// A Gaussian point set with one pair distance perturbed by δ.
#[derive(Debug, Clone)]
pub struct PerturbedInstance {
    pub points: PointSet,
    pub u: usize,
    pub v: usize,
    pub delta: f64,
    pub target: Square,
}

/// Draws n uniformly from the inclusive range and δ uniformly from (lo, hi].
pub fn sample_instance(n_range: (usize, usize), delta_range: (f64, f64), seed: u64) -> Result<PerturbedInstance> {
    let (nlo, nhi) = n_range;
    let (dlo, dhi) = delta_range;
    if nlo < 2 || nlo > nhi {
        return Err(Error::Parameter(format!("invalid node range [{nlo}, {nhi}]")));
    }
    if !(dlo <= dhi) || !dlo.is_finite() || !dhi.is_finite() {
        return Err(Error::Parameter(format!("invalid delta range ({dlo}, {dhi}]")));
    }
    let mut rng = seed::rng(seed);
    let n = rng.random_range(nlo..=nhi);
    let delta = dhi - (dhi - dlo) * rng.random::<f64>();
    let points = PointSet::new(seed::normal_rows(&mut rng, n))?;
    let u = rng.random_range(0..n);
    let mut v = rng.random_range(0..n - 1);
    if v >= u {
        v += 1;
    }
    let d = pairwise_distances(&points);
    let mut target = d.matrix().clone();
    target.set(u, v, d.get(u, v) + delta);
    target.set(v, u, d.get(u, v) + delta);
    Ok(PerturbedInstance { points, u: u.min(v), v: u.max(v), delta, target })
}

impl PerturbedInstance {
    pub fn n(&self) -> usize {
        self.points.n()
    }

    pub fn scatter_mean_estimate(&self) -> PointSet {
        scatter_mean_shift(&self.points, &SymmetricPerturbation::edge(self.n(), self.u, self.v, self.delta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub n: usize,
    pub delta: f64,
    pub f_approx: f64,
    pub bound: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsComparisonRecord {
    pub n: usize,
    pub delta: f64,
    pub f_approx: f64,
    /// NaN when the descent failed; see `gd_error`.
    pub f_gd: f64,
    pub f_cmds: f64,
    pub bound: f64,
    pub seed: u64,
    pub gd_error: Option<String>,
}

fn check_ranges(n_range: (usize, usize), delta_range: (f64, f64)) -> Result<()> {
    if n_range.0 < 2 || n_range.0 > n_range.1 {
        return Err(Error::Parameter(format!("invalid node range [{}, {}]", n_range.0, n_range.1)));
    }
    if !(delta_range.0 <= delta_range.1) {
        return Err(Error::Parameter("empty delta range".into()));
    }
    Ok(())
}

/// Scatter-mean objective against the error bound only.
pub fn run_bound_check(
    n_range: (usize, usize),
    delta_range: (f64, f64),
    trials: usize,
    master: u64,
) -> Result<Vec<BoundRecord>> {
    check_ranges(n_range, delta_range)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|idx| {
            let seed = seed::derive_seed(master, &[idx]);
            let inst = sample_instance(n_range, delta_range, seed)?;
            let f_approx = mds_objective(&inst.scatter_mean_estimate(), &inst.target);
            Ok(BoundRecord { n: inst.n(), delta: inst.delta, f_approx, bound: scatter_mean_bound(inst.n(), inst.delta)?, seed })
        })
        .collect()
}

pub fn run_mds_comparison(
    n_range: (usize, usize),
    delta_range: (f64, f64),
    trials: usize,
    master: u64,
    gd: &GdOptions,
) -> Result<Vec<MdsComparisonRecord>> {
    check_ranges(n_range, delta_range)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|idx| {
            let seed = seed::derive_seed(master, &[idx]);
            let inst = sample_instance(n_range, delta_range, seed)?;
            let approx = inst.scatter_mean_estimate();
            let f_approx = mds_objective(&approx, &inst.target);
            let (f_gd, gd_error) = match smoothed_gd_mds(&approx, &inst.target, gd) {
                Ok(r) => (mds_objective(&r.points, &inst.target), None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            let cmds = classic_mds(&DistanceMatrix::new(inst.target.clone())?)?;
            Ok(MdsComparisonRecord {
                n: inst.n(),
                delta: inst.delta,
                f_approx,
                f_gd,
                f_cmds: mds_objective(&cmds, &inst.target),
                bound: scatter_mean_bound(inst.n(), inst.delta)?,
                seed,
                gd_error,
            })
        })
        .collect()
}
