//! Noise schedules, forward perturbation, distance-space scores and the
//! statistics of a single distance under coordinate noise.

use rayon::prelude::*;

use crate::geometry::{
    norm, pairwise_distances, scatter_mean_field, scatter_mean_shift_sparse, DistanceMatrix, Field, Graph, PointSet,
    SymmetricPerturbation, EPS_DEG,
};
use crate::seed;
use crate::{Error, Result};

pub const BETA_MIN: f64 = 1e-7;
pub const BETA_MAX: f64 = 2e-3;
pub const DEFAULT_STEPS: usize = 5000;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Variance-exploding ladder σ_0 ≤ σ_1 ≤ … ≤ σ_T.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_sigmas(sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() < 2 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Parameter("schedule sigmas must be finite and nonnegative".into()));
        }
        if sigma.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("schedule sigmas must be nondecreasing".into()));
        }
        Ok(Self { sigma })
    }

    pub fn num_steps(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn terminal(&self) -> f64 {
        self.sigma[self.num_steps()]
    }

    /// G²(k) = σ_k² − σ_{k−1}² for 1 ≤ k ≤ T.
    pub fn g2(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.num_steps(), "step {k} out of range");
        self.sigma[k] * self.sigma[k] - self.sigma[k - 1] * self.sigma[k - 1]
    }

    /// Subsamples `steps` levels, evenly spaced in index, keeping both ends.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let t = self.num_steps();
        if steps == 0 || steps > t {
            return Err(Error::Parameter(format!("cannot respace a {t}-step schedule to {steps} steps")));
        }
        let sigma = (0..=steps).map(|i| self.sigma[(i * t + steps / 2) / steps]).collect();
        Ok(Self { sigma })
    }
}

/// β_k = β_min + (β_max − β_min)·sigmoid(s_k) with s_k evenly spaced on [−6, 6],
/// ᾱ_k = Π(1 − β_i), σ_k = √((1 − ᾱ_k)/ᾱ_k).
pub fn default_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Parameter(format!("schedule needs T ≥ 2, got {steps}")));
    }
    let mut sigma = Vec::with_capacity(steps + 1);
    sigma.push(0.0);
    let mut alpha_bar = 1.0;
    for k in 0..steps {
        let s = -6.0 + 12.0 * k as f64 / (steps - 1) as f64;
        let beta = BETA_MIN + (BETA_MAX - BETA_MIN) * sigmoid(s);
        alpha_bar *= 1.0 - beta;
        sigma.push(((1.0 - alpha_bar) / alpha_bar).sqrt());
    }
    NoiseSchedule::from_sigmas(sigma)
}

/// C_k = C_0 + σ_k Z.
pub fn forward_perturb(points0: &PointSet, schedule: &NoiseSchedule, k: usize, seed: u64) -> Result<PointSet> {
    if k > schedule.num_steps() {
        return Err(Error::Parameter(format!("step {k} exceeds schedule length {}", schedule.num_steps())));
    }
    let z = seed::normal_rows(&mut seed::rng(seed), points0.n());
    Ok(points0.shifted(&z, schedule.sigma(k)))
}

fn check_same_size(d: &DistanceMatrix, d0: &DistanceMatrix) -> Result<()> {
    if d.n() != d0.n() {
        return Err(Error::Parameter("distance matrices differ in size".into()));
    }
    Ok(())
}

/// −(d − d₀)/(2σ²) entrywise.
pub fn gaussian_distance_score(d: &DistanceMatrix, d0: &DistanceMatrix, sigma: f64) -> Result<SymmetricPerturbation> {
    mb_distance_score(d, d0, sigma, 0.0)
}

/// a_t/d − (d − d₀)/(2σ²) entrywise. With a_t = 0 no distance floor applies.
pub fn mb_distance_score(
    d: &DistanceMatrix,
    d0: &DistanceMatrix,
    sigma: f64,
    a_t: f64,
) -> Result<SymmetricPerturbation> {
    check_same_size(d, d0)?;
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let n = d.n();
    let inv = 1.0 / (2.0 * sigma * sigma);
    if a_t != 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                if d.get(i, j) < EPS_DEG {
                    return Err(Error::DegenerateDistance { i, j });
                }
            }
        }
    }
    Ok(SymmetricPerturbation::from_upper(n, |i, j| {
        let dij = d.get(i, j);
        let gauss = -(dij - d0.get(i, j)) * inv;
        if a_t == 0.0 {
            gauss
        } else {
            a_t / dij + gauss
        }
    }))
}

/// Scatter-means a distance-space score onto coordinates: sparse 1/(2·degree)
/// weights when a graph is given, otherwise dense 1/(2(n−1)).
pub fn scatter_score(points: &PointSet, graph: Option<&Graph>, score: &SymmetricPerturbation) -> Result<Field> {
    match graph {
        Some(g) => scatter_mean_shift_sparse(points, g, score, false),
        None => Ok(scatter_mean_field(points, score)),
    }
}

/// What a score provider sees at one reverse step.
pub struct ScoreQuery<'a> {
    pub points: &'a PointSet,
    pub distances: &'a DistanceMatrix,
    pub step: usize,
    pub sigma: f64,
    /// Stream for stochastic providers; fixed per (chain, step).
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutput {
    /// ∇_d log p; the caller scatter-means it.
    Distance(SymmetricPerturbation),
    /// Already in coordinate space, scatter-mean factor included.
    Coordinate(Field),
}

pub trait ScoreProvider: Send + Sync {
    fn score(&self, query: &ScoreQuery<'_>) -> Result<ScoreOutput>;
}

impl ScoreOutput {
    pub fn into_coordinates(self, points: &PointSet, graph: Option<&Graph>) -> Result<Field> {
        match self {
            ScoreOutput::Distance(s) => scatter_score(points, graph, &s),
            ScoreOutput::Coordinate(f) => {
                if f.len() != points.n() {
                    return Err(Error::Contract("coordinate score has the wrong number of rows".into()));
                }
                Ok(f)
            }
        }
    }
}

/// Analytic score of the Gaussian (a_t = 0) or Maxwell-Boltzmann kernel
/// around known reference distances.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub d0: DistanceMatrix,
    pub a_t: f64,
}

impl GaussianOracle {
    pub fn new(d0: DistanceMatrix) -> Self {
        Self { d0, a_t: 0.0 }
    }
}

impl ScoreProvider for GaussianOracle {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<ScoreOutput> {
        mb_distance_score(q.distances, &self.d0, q.sigma, self.a_t).map(ScoreOutput::Distance)
    }
}

/// Oracle score corrupted by σ-dependent noise and normalized to unit std,
/// standing in for an imperfect learned model.
#[derive(Debug, Clone)]
pub struct NoisyToy {
    pub graph: Graph,
    pub d0: DistanceMatrix,
    pub delta: f64,
}

impl ScoreProvider for NoisyToy {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<ScoreOutput> {
        noisy_toy_coordinate_score(q.points, &self.graph, &self.d0, q.sigma, self.delta, q.seed)
            .map(ScoreOutput::Coordinate)
    }
}

/// Population standard deviation of all entries.
pub fn field_std(f: &[[f64; 3]]) -> f64 {
    let m = (f.len() * 3) as f64;
    let mean = f.iter().flatten().sum::<f64>() / m;
    (f.iter().flatten().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m).sqrt()
}

/// Norm_std(sparse scatter-mean of the Gaussian score + ε), where
/// ε = 2(sigmoid(σδ) − ½)·δ·z with z standard normal per entry.
pub fn noisy_toy_coordinate_score(
    points: &PointSet,
    graph: &Graph,
    d0: &DistanceMatrix,
    sigma: f64,
    delta: f64,
    seed: u64,
) -> Result<Field> {
    if !(delta >= 0.0) {
        return Err(Error::Parameter(format!("error level must be nonnegative, got {delta}")));
    }
    if !graph.score_transform_valid() {
        return Err(Error::Parameter(format!("score transform needs minimum degree 4, graph has {}", graph.min_degree())));
    }
    let d = pairwise_distances(points);
    let score = gaussian_distance_score(&d, d0, sigma)?;
    let mut field = scatter_mean_shift_sparse(points, graph, &score, true)?;
    let amp = 2.0 * (sigmoid(sigma * delta) - 0.5) * delta;
    if amp != 0.0 {
        let z = seed::normal_rows(&mut seed::rng(seed), points.n());
        for (row, zr) in field.iter_mut().zip(&z) {
            for k in 0..3 {
                row[k] += amp * zr[k];
            }
        }
    }
    let std = field_std(&field);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Normalization);
    }
    Ok(field.into_iter().map(|r| [r[0] / std, r[1] / std, r[2] / std]).collect())
}

/// Clean coordinate-space target: the scatter-meaned Gaussian distance score.
pub fn coordinate_target(points: &PointSet, d0: &DistanceMatrix, sigma: f64, graph: Option<&Graph>) -> Result<Field> {
    let score = gaussian_distance_score(&pairwise_distances(points), d0, sigma)?;
    scatter_score(points, graph, &score)
}

/// Mean over `batch` draws of (σ_t/2)‖s(C_t) − target(C_t)‖², with t uniform
/// on 1..=T and C_t = C_0 + σ_t Z.
pub fn score_matching_loss(
    provider: &dyn ScoreProvider,
    points0: &PointSet,
    schedule: &NoiseSchedule,
    graph: Option<&Graph>,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    if batch == 0 {
        return Err(Error::Parameter("batch must be at least 1".into()));
    }
    let d0 = pairwise_distances(points0);
    let mut total = 0.0;
    for b in 0..batch as u64 {
        let mut rng = seed::rng(seed::derive_seed(seed, &[b, 0]));
        let t = rng.random_range(1..=schedule.num_steps());
        let sigma = schedule.sigma(t);
        let pts = forward_perturb(points0, schedule, t, seed::derive_seed(seed, &[b, 1]))?;
        let d = pairwise_distances(&pts);
        let q = ScoreQuery { points: &pts, distances: &d, step: t, sigma, seed: seed::derive_seed(seed, &[b, 2]) };
        let s = provider.score(&q)?.into_coordinates(&pts, graph)?;
        let target = coordinate_target(&pts, &d0, sigma, graph)?;
        let sq: f64 = s.iter().flatten().zip(target.iter().flatten()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += 0.5 * sigma * sq;
    }
    Ok(total / batch as f64)
}

/// Δd with d + Δd = ‖diff + √(2τ)·G·z‖, in the cancellation-free form
/// (2mᵀdiff + ‖m‖²)/(‖m + diff‖ + ‖diff‖).
pub fn exact_distance_increment(diff: [f64; 3], z: [f64; 3], tau: f64, g: f64) -> Result<f64> {
    let d = norm(diff);
    if d < EPS_DEG {
        return Err(Error::DegenerateDistance { i: 0, j: 1 });
    }
    let s = (2.0 * tau).sqrt() * g;
    let m = [s * z[0], s * z[1], s * z[2]];
    let num = 2.0 * (m[0] * diff[0] + m[1] * diff[1] + m[2] * diff[2]) + (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
    let moved = norm([diff[0] + m[0], diff[1] + m[1], diff[2] + m[2]]);
    Ok(num / (moved + d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementStats {
    /// Mean of d_t − d_{t+τ}.
    pub mean_drift: f64,
    /// Mean of (d_t − d_{t+τ})².
    pub second_moment: f64,
    pub stderr_mean: f64,
    pub stderr_second: f64,
    pub n_samples: usize,
}

const SHARD: usize = 1 << 16;

/// Monte-Carlo moments of the one-step distance change. Samples are drawn in
/// fixed-size shards with their own seeds, so the result does not depend on
/// the thread count.
pub fn mc_increment_stats(diff: [f64; 3], tau: f64, g: f64, n_samples: usize, seed: u64) -> Result<IncrementStats> {
    if n_samples < 100 {
        return Err(Error::Parameter(format!("need at least 100 samples, got {n_samples}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    if norm(diff) < EPS_DEG {
        return Err(Error::DegenerateDistance { i: 0, j: 1 });
    }
    let shards = n_samples.div_ceil(SHARD);
    let sums: Vec<Result<[f64; 3]>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let len = SHARD.min(n_samples - s * SHARD);
            let mut rng = seed::rng(seed::derive_seed(seed, &[s as u64]));
            let mut acc = [0.0; 3];
            for _ in 0..len {
                let z = [seed::standard_normal(&mut rng), seed::standard_normal(&mut rng), seed::standard_normal(&mut rng)];
                let x = -exact_distance_increment(diff, z, tau, g)?;
                let x2 = x * x;
                acc[0] += x;
                acc[1] += x2;
                acc[2] += x2 * x2;
            }
            Ok(acc)
        })
        .collect();
    let mut tot = [0.0; 3];
    for s in sums {
        let s = s?;
        for k in 0..3 {
            tot[k] += s[k];
        }
    }
    let n = n_samples as f64;
    let mean = tot[0] / n;
    let m2 = tot[1] / n;
    let var = ((tot[1] - n * mean * mean) / (n - 1.0)).max(0.0);
    let var2 = ((tot[2] - n * m2 * m2) / (n - 1.0)).max(0.0);
    Ok(IncrementStats {
        mean_drift: mean,
        second_moment: m2,
        stderr_mean: (var / n).sqrt(),
        stderr_second: (var2 / n).sqrt(),
        n_samples,
    })
}

/// Leading-order drift −3τG²/d as stated for the distance SDE.
pub fn predicted_drift(tau: f64, g: f64, d: f64) -> f64 {
    -3.0 * tau * g * g / d
}

/// Leading-order second moment 2τG².
pub fn predicted_second_moment(tau: f64, g: f64) -> f64 {
    2.0 * tau * g * g
}

/// d − E‖X‖ for X ~ N(μ, 2τG² I₃) with ‖μ‖ = d, using the closed-form mean of
/// the 3-dimensional noncentral chi distribution.
pub fn laguerre_drift(d: f64, tau: f64, g: f64) -> Result<f64> {
    if !(tau > 0.0) || !(g > 0.0) || !(d >= 0.0) {
        return Err(Error::Parameter("laguerre_drift needs tau > 0, G > 0, d ≥ 0".into()));
    }
    let s = (2.0 * tau).sqrt() * g;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    if d == 0.0 {
        return Ok(-2.0 * c * s);
    }
    let lam = d / s;
    let erf = libm::erf(lam / std::f64::consts::SQRT_2);
    let erfc = libm::erfc(lam / std::f64::consts::SQRT_2);
    // E‖X‖ = s[c·e^{−λ²/2} + (λ + 1/λ)·erf(λ/√2)]; d − sλ·erf = d·erfc.
    Ok(d * erfc - s * c * (-0.5 * lam * lam).exp() - (s / lam) * erf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Square;

    fn dm(rows: &[Vec<f64>]) -> DistanceMatrix {
        DistanceMatrix::new(Square::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn default_schedule_magnitude() {
        let s = default_schedule(5000).unwrap();
        assert_eq!(s.sigma(0), 0.0);
        assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
        assert!((8.0..=16.0).contains(&s.terminal()), "{}", s.terminal());
    }

    #[test]
    fn two_step_schedule() {
        let s = default_schedule(2).unwrap();
        assert!(s.sigma(1) < s.sigma(2) && s.sigma(2).is_finite());
        assert!(default_schedule(1).is_err());
    }

    #[test]
    fn g2_telescopes() {
        let s = default_schedule(5000).unwrap();
        let sum: f64 = (1..=5000).map(|k| s.g2(k)).sum();
        assert!((sum - s.terminal().powi(2)).abs() < 1e-9 * s.terminal().powi(2));
    }

    #[test]
    fn respacing_keeps_ends() {
        let s = default_schedule(5000).unwrap();
        let r = s.respaced(100).unwrap();
        assert_eq!(r.num_steps(), 100);
        assert_eq!(r.sigma(0), 0.0);
        assert_eq!(r.terminal(), s.terminal());
        assert_eq!(r.sigma(50), s.sigma(2500));
        assert_eq!(s.respaced(5000).unwrap(), s);
        assert!(s.respaced(5001).is_err());
    }

    #[test]
    fn forward_perturb_identity_and_replay() {
        let s = default_schedule(100).unwrap();
        let p = PointSet::new(seed::normal_rows(&mut seed::rng(1), 5)).unwrap();
        assert_eq!(forward_perturb(&p, &s, 0, 9).unwrap(), p);
        assert_eq!(forward_perturb(&p, &s, 50, 9).unwrap(), forward_perturb(&p, &s, 50, 9).unwrap());
    }

    #[test]
    fn forward_perturb_variance() {
        let s = default_schedule(5000).unwrap();
        let k = 3000;
        let p = PointSet::new(vec![[0.0; 3]; 2]).unwrap();
        let draws = 50_000;
        let mut sum2 = 0.0;
        let mut sum4 = 0.0;
        for i in 0..draws {
            let q = forward_perturb(&p, &s, k, i).unwrap();
            for x in q.coords().iter().flatten() {
                sum2 += x * x;
                sum4 += x.powi(4);
            }
        }
        let m = (draws * 6) as f64;
        let var = sum2 / m;
        let se = ((sum4 / m - var * var) / m).sqrt();
        assert!((var - s.sigma(k).powi(2)).abs() < 3.0 * se);
    }

    #[test]
    fn gaussian_score_values() {
        let d = dm(&[vec![0.0, 3.0], vec![3.0, 0.0]]);
        let d0 = dm(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(gaussian_distance_score(&d, &d0, 1.0).unwrap().get(0, 1), -0.5);
        assert_eq!(gaussian_distance_score(&d, &d0, 2.0).unwrap().get(0, 1), -0.125);
        assert_eq!(gaussian_distance_score(&d, &d, 1.0).unwrap(), SymmetricPerturbation::zeros(2));
        assert!(gaussian_distance_score(&d, &d0, 0.0).is_err());
    }

    #[test]
    fn gaussian_score_is_log_density_gradient() {
        let (d0, sigma, h) = (1.3, 0.7, 1e-5);
        let logp = |d: f64| -(d - d0) * (d - d0) / (4.0 * sigma * sigma);
        for d in [0.2, 1.0, 2.5] {
            let fd = (logp(d + h) - logp(d - h)) / (2.0 * h);
            let s = gaussian_distance_score(&dm(&[vec![0.0, d], vec![d, 0.0]]), &dm(&[vec![0.0, d0], vec![d0, 0.0]]), sigma)
                .unwrap();
            assert!((s.get(0, 1) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn mb_score_values() {
        let d = dm(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(mb_distance_score(&d, &d, 1.0, 1.0).unwrap().get(0, 1), 0.5);
        let d0 = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(mb_distance_score(&d, &d0, 1.0, 0.0).unwrap(), gaussian_distance_score(&d, &d0, 1.0).unwrap());
        let z = dm(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(mb_distance_score(&z, &d0, 1.0, 1.0), Err(Error::DegenerateDistance { .. })));
    }

    fn toy_setup() -> (PointSet, Graph, DistanceMatrix) {
        let g = crate::geometry::random_regular_graph(10, 4, 1).unwrap();
        let p0 = PointSet::new(seed::normal_rows(&mut seed::rng(2), 10)).unwrap();
        let p = PointSet::new(seed::normal_rows(&mut seed::rng(3), 10)).unwrap();
        (p, g, pairwise_distances(&p0))
    }

    #[test]
    fn noisy_toy_normalization_and_replay() {
        let (p, g, d0) = toy_setup();
        for delta in [0.0, 0.3, 2.0] {
            let f = noisy_toy_coordinate_score(&p, &g, &d0, 1.5, delta, 4).unwrap();
            assert!((field_std(&f) - 1.0).abs() < 1e-12);
            assert_eq!(f, noisy_toy_coordinate_score(&p, &g, &d0, 1.5, delta, 4).unwrap());
        }
    }

    #[test]
    fn noisy_toy_without_error_is_normalized_clean_score() {
        let (p, g, d0) = toy_setup();
        let clean = coordinate_target(&p, &d0, 1.5, Some(&g)).unwrap();
        let sd = field_std(&clean);
        let f = noisy_toy_coordinate_score(&p, &g, &d0, 1.5, 0.0, 99).unwrap();
        for (a, b) in f.iter().flatten().zip(clean.iter().flatten()) {
            assert!((a - b / sd).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_toy_zero_field_errors() {
        let (p, g, _) = toy_setup();
        let d = pairwise_distances(&p);
        assert!(matches!(noisy_toy_coordinate_score(&p, &g, &d, 1.0, 0.0, 1), Err(Error::Normalization)));
    }

    struct Offset {
        inner: GaussianOracle,
        graph: Graph,
        c: f64,
    }

    impl ScoreProvider for Offset {
        fn score(&self, q: &ScoreQuery<'_>) -> Result<ScoreOutput> {
            let f = self.inner.score(q)?.into_coordinates(q.points, Some(&self.graph))?;
            Ok(ScoreOutput::Coordinate(f.into_iter().map(|r| [r[0] + self.c, r[1] + self.c, r[2] + self.c]).collect()))
        }
    }

    #[test]
    fn score_matching_loss_behaviour() {
        let s = default_schedule(1000).unwrap();
        let g = crate::geometry::random_regular_graph(10, 4, 1).unwrap();
        let p0 = PointSet::new(seed::normal_rows(&mut seed::rng(2), 10)).unwrap();
        let d0 = pairwise_distances(&p0);
        let exact = GaussianOracle::new(d0.clone());
        assert!(score_matching_loss(&exact, &p0, &s, Some(&g), 8, 5).unwrap() < 1e-12);

        let l1 = score_matching_loss(&Offset { inner: exact.clone(), graph: g.clone(), c: 0.1 }, &p0, &s, Some(&g), 8, 5)
            .unwrap();
        let l2 = score_matching_loss(&Offset { inner: exact.clone(), graph: g.clone(), c: 0.2 }, &p0, &s, Some(&g), 8, 5)
            .unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-9);

        let toy = |delta| NoisyToy { graph: g.clone(), d0: d0.clone(), delta };
        let clean = score_matching_loss(&toy(0.0), &p0, &s, Some(&g), 32, 7).unwrap();
        let noisy = score_matching_loss(&toy(0.5), &p0, &s, Some(&g), 32, 7).unwrap();
        assert!(noisy > clean, "{noisy} vs {clean}");
    }

    #[test]
    fn increment_identity() {
        assert_eq!(exact_distance_increment([1.0, 0.0, 0.0], [0.0; 3], 0.3, 1.0).unwrap(), 0.0);
        let dd = exact_distance_increment([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.5, 1.0).unwrap();
        assert!((dd - 1.0).abs() < 1e-15);
        assert!(exact_distance_increment([0.0; 3], [1.0, 0.0, 0.0], 0.5, 1.0).is_err());
    }

    #[test]
    fn zero_diffusion_gives_zero_stats() {
        let st = mc_increment_stats([2.0, 0.0, 0.0], 1e-4, 0.0, 1000, 1).unwrap();
        assert_eq!((st.mean_drift, st.second_moment, st.stderr_mean, st.stderr_second), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn stats_do_not_depend_on_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_increment_stats([1.0, 1.0, 0.0], 1e-3, 1.0, 200_000, 3).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn laguerre_at_zero_distance() {
        let (tau, g) = (1e-4_f64, 1.0);
        let expect = -(2.0 * tau).sqrt() * g * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((laguerre_drift(0.0, tau, g).unwrap() - expect).abs() < 1e-18);
        assert!((laguerre_drift(1e-12, tau, g).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn laguerre_matches_quadrature() {
        // E‖X‖ by radial quadrature of the 3D noncentral chi density.
        let (d, s) = (0.7_f64, 0.5_f64);
        let pdf = |r: f64| {
            (2.0 / std::f64::consts::PI).sqrt() * r / (d * s)
                * (-(r * r + d * d) / (2.0 * s * s)).exp()
                * (r * d / (s * s)).sinh()
        };
        let (h, m) = (1e-4, 100_000);
        let mean: f64 = (0..m).map(|i| (i as f64 + 0.5) * h).map(|r| r * pdf(r) * h).sum();
        let tau = s * s / 2.0;
        assert!((laguerre_drift(d, tau, 1.0).unwrap() - (d - mean)).abs() < 1e-7);
    }

    #[test]
    fn laguerre_small_noise_limit() {
        // Leading behaviour of d − E‖X‖ is −2τG²/d, i.e. −s²/d.
        let (d, g) = (2.0, 1.0);
        for tau in [1e-4, 1e-6] {
            let lg = laguerre_drift(d, tau, g).unwrap();
            assert!((lg / (-2.0 * tau / d) - 1.0).abs() < 1e-6);
        }
    }
}
