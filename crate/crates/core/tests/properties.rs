mod common;

use common::*;
use proptest::prelude::*;

use se3diff::diffusion::{
    default_schedule, exact_distance_increment, mc_increment_stats, predicted_drift, GaussianOracle, NoiseSchedule,
    NoisyToy,
};
use se3diff::experiments::{ablation_nodes, corrector_sweep, AblationSettings, ScoreModel, SweepGrid};
use se3diff::geometry::{
    norm, pairwise_distances, random_regular_graph, scatter_mean_shift, scatter_mean_shift_sparse, Graph, PointSet,
    Square, SymmetricPerturbation,
};
use se3diff::mds_oracle::{mds_objective, scatter_mean_bound};
use se3diff::metrics::{ad_score, cov_mat, kabsch_align, rmsd};
use se3diff::samplers::{reverse_ode_full_step, reverse_ode_step, run_chain, Method, SamplerConfig, StepContext};
use se3diff::spectral::{classic_mds, gram_from_distances, spectral_coordinates, symmetric_eigendecomposition, EPS_PSD};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

fn perturbation(n: usize, s: u64) -> SymmetricPerturbation {
    let mut rng = se3diff::seed::rng(s);
    SymmetricPerturbation::from_upper(n, |_, _| se3diff::seed::standard_normal(&mut rng))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn distances_are_rigid_invariant(n in 2usize..30, s in any::<u64>(), scale in 0.1f64..100.0) {
        let p = random_points(n, s);
        let q = p.transformed(&random_rotation(s ^ 1), random_translation(s ^ 2, scale));
        let (a, b) = (pairwise_distances(&p), pairwise_distances(&q));
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-10 * (1.0 + scale));
            }
        }
    }

    #[test]
    fn scatter_mean_shift_is_equivariant(n in 3usize..25, s in any::<u64>()) {
        let p = random_points(n, s);
        let alpha = perturbation(n, s ^ 3);
        let (r, t) = (random_rotation(s ^ 4), random_translation(s ^ 5, 3.0));
        let lhs = scatter_mean_shift(&p.transformed(&r, t), &alpha);
        let rhs = scatter_mean_shift(&p, &alpha).transformed(&r, t);
        prop_assert!(max_abs_diff(lhs.coords(), rhs.coords()) < 1e-9);
    }

    #[test]
    fn sparse_equals_dense_on_complete_graph(n in 3usize..25, s in any::<u64>()) {
        let p = random_points(n, s);
        let alpha = perturbation(n, s ^ 6);
        let sparse = scatter_mean_shift_sparse(&p, &Graph::complete(n), &alpha, false).unwrap();
        let dense = scatter_mean_shift(&p, &alpha);
        let dense_field: Vec<[f64; 3]> =
            dense.coords().iter().zip(p.coords()).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
        prop_assert!(max_abs_diff(&sparse, &dense_field) < 1e-12);
    }

    #[test]
    fn spectral_roundtrip_and_rank(n in 4usize..40, s in any::<u64>()) {
        let p = random_points(n, s);
        let d = pairwise_distances(&p);
        let q = spectral_coordinates(&d).unwrap();
        let dq = pairwise_distances(&q);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((d.get(i, j) - dq.get(i, j)).abs() < 1e-6);
            }
        }
        let eig = symmetric_eigendecomposition(&gram_from_distances(&d).0).unwrap();
        let lmax = eig.values[0];
        prop_assert_eq!(eig.values.iter().filter(|&&v| v > EPS_PSD * lmax).count(), 3);
        prop_assert!(eig.values[3..].iter().all(|v| v.abs() <= EPS_PSD * lmax));
    }

    #[test]
    fn classic_mds_matches_spectral_up_to_rigid_motion(n in 4usize..30, s in any::<u64>()) {
        let d = pairwise_distances(&random_points(n, s));
        let a = spectral_coordinates(&d).unwrap();
        let b = classic_mds(&d).unwrap();
        // Eigenvector signs are arbitrary, so either chirality is a valid embedding.
        let mirrored = PointSet::new(b.coords().iter().map(|x| [x[0], x[1], -x[2]]).collect()).unwrap();
        let best = rmsd(&a, &b).unwrap().min(rmsd(&a, &mirrored).unwrap());
        prop_assert!(best < 1e-6);
    }

    #[test]
    fn bound_is_quadratic_in_delta(n in 2usize..200, delta in 1e-6f64..10.0, c in 0.01f64..20.0) {
        let lhs = scatter_mean_bound(n, c * delta).unwrap();
        let rhs = c * c * scatter_mean_bound(n, delta).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
    }

    #[test]
    fn mds_objective_is_rigid_invariant(n in 3usize..20, s in any::<u64>()) {
        let p = random_points(n, s);
        let other = pairwise_distances(&random_points(n, s ^ 7));
        let target = Square::from_fn(n, |i, j| other.get(i, j));
        let q = p.transformed(&random_rotation(s ^ 8), random_translation(s ^ 9, 5.0));
        let (a, b) = (mds_objective(&p, &target), mds_objective(&q, &target));
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn schedule_telescopes(sig in proptest::collection::vec(1e-4f64..3.0, 1..60)) {
        let mut acc = 0.0;
        let sigmas: Vec<f64> = std::iter::once(0.0).chain(sig.iter().map(|x| { acc += x; acc })).collect();
        let sched = NoiseSchedule::from_sigmas(sigmas).unwrap();
        let total: f64 = (1..=sched.num_steps()).map(|k| sched.g2(k)).sum();
        let t2 = sched.terminal() * sched.terminal();
        prop_assert!((total - t2).abs() <= 1e-12 * t2);
    }

    #[test]
    fn increment_matches_direct_norm(
        diff in prop::array::uniform3(-10.0f64..10.0),
        z in prop::array::uniform3(-5.0f64..5.0),
        tau in 1e-8f64..1.0,
        g in 0.01f64..3.0,
    ) {
        prop_assume!(norm(diff) > 1e-3);
        let s = (2.0 * tau).sqrt() * g;
        let direct = norm([diff[0] + s * z[0], diff[1] + s * z[1], diff[2] + s * z[2]]);
        let inc = exact_distance_increment(diff, z, tau, g).unwrap();
        prop_assert!((norm(diff) + inc - direct).abs() < 1e-12 * (1.0 + direct));
    }

    #[test]
    fn ode_steps_are_rigid_equivariant(n in 5usize..20, s in any::<u64>(), k in 1usize..=100) {
        let sched = default_schedule(5000).unwrap().respaced(100).unwrap();
        let d0 = pairwise_distances(&random_points(n, s ^ 10));
        let oracle = GaussianOracle::new(d0);
        let ctx = StepContext { schedule: &sched, provider: &oracle, graph: None };
        let p = random_points(n, s).transformed(&random_rotation(s ^ 11), [0.0; 3]);
        let p = PointSet::new(p.coords().iter().map(|x| x.map(|v| v * 3.0)).collect()).unwrap();
        let (r, t) = (random_rotation(s ^ 12), random_translation(s ^ 13, 4.0));
        for full in [false, true] {
            let step = |x: &PointSet| if full {
                reverse_ode_full_step(x, &ctx, k, 2.0, 0).unwrap()
            } else {
                reverse_ode_step(x, &ctx, k, 2.0, 0).unwrap()
            };
            let lhs = step(&p.transformed(&r, t));
            let rhs = step(&p).transformed(&r, t);
            prop_assert!(max_abs_diff(lhs.coords(), rhs.coords()) < 1e-9);
        }
    }

    #[test]
    fn metrics_are_rigid_invariant(n in 3usize..15, s in any::<u64>()) {
        let a = random_points(n, s);
        let b = random_points(n, s ^ 14);
        let a2 = a.transformed(&random_rotation(s ^ 15), random_translation(s ^ 16, 10.0));
        let b2 = b.transformed(&random_rotation(s ^ 17), random_translation(s ^ 18, 10.0));
        prop_assert!((rmsd(&a, &b).unwrap() - rmsd(&a2, &b2).unwrap()).abs() < 1e-9);
        let ad1 = ad_score(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let ad2 = ad_score(std::slice::from_ref(&a2), std::slice::from_ref(&b2)).unwrap();
        prop_assert!((ad1 - ad2).abs() < 1e-9);
        let m1 = cov_mat(&[a], &[b], 1.0).unwrap();
        let m2 = cov_mat(&[a2], &[b2], 1.0).unwrap();
        prop_assert!((m1.mat_r - m2.mat_r).abs() < 1e-9 && m1.cov_r == m2.cov_r);
    }

    #[test]
    fn kabsch_rmsd_is_self_consistent(n in 3usize..20, s in any::<u64>()) {
        let (a, b) = (random_points(n, s), random_points(n, s ^ 19));
        let (t, r) = kabsch_align(&a, &b).unwrap();
        let moved: Vec<[f64; 3]> = a.coords().iter().map(|x| t.apply_point(*x)).collect();
        let ss: f64 = moved.iter().flatten().zip(b.coords().iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!((r - (ss / n as f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn single_reference_mat_below_threshold_is_covered(n in 3usize..10, s in any::<u64>(), h in 0.1f64..3.0) {
        let gens: Vec<PointSet> = (0..4).map(|i| random_points(n, s ^ (20 + i))).collect();
        let rep = cov_mat(&gens, &[random_points(n, s ^ 30)], h).unwrap();
        if rep.mat_r < h {
            prop_assert_eq!(rep.cov_r, 1.0);
        }
    }
}

#[test]
fn drift_error_shrinks_with_tau() {
    for d in [1.0, 2.0] {
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&tau| {
                let st = mc_increment_stats([d, 0.0, 0.0], tau, 1.0, 400_000, 5).unwrap();
                (st.mean_drift - predicted_drift(tau, 1.0, d)).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "d={d}: {errs:?}");
    }
}

#[test]
fn two_node_ode_error_is_nonincreasing() {
    let sched = default_schedule(5000).unwrap().respaced(100).unwrap();
    for s in 0..20u64 {
        let p0 = random_points(2, 100 + s);
        let d0 = pairwise_distances(&p0);
        let oracle = GaussianOracle::new(d0.clone());
        let init = se3diff::samplers::init_from_prior(2, &sched, 200 + s).unwrap();
        let cfg = SamplerConfig { method: Method::OdeSimple, steps: 100, corrector: 1.0, ..Default::default() };
        let r = run_chain(&init, &cfg, &sched, &oracle, None, Some(&d0)).unwrap();
        assert!(r.error_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "seed {s}");
    }
}

#[test]
fn corrector_helps_noisy_toy() {
    for delta in [0.5, 1.0] {
        let grid = SweepGrid {
            deltas: vec![delta],
            correctors: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            model: ScoreModel::Toy,
            seed: 3,
            ..Default::default()
        };
        let cells = corrector_sweep(&grid, 20, 4).unwrap();
        let at_one = cells[0].converged_fraction;
        let best = cells[1..].iter().map(|c| c.converged_fraction).fold(0.0, f64::max);
        assert!(best >= at_one, "delta={delta}: k=1 {at_one}, best {best}");
    }
}

#[test]
fn node_count_has_limited_effect() {
    let settings = AblationSettings { delta: 0.0, model: ScoreModel::Toy, seed: 4, ..Default::default() };
    let curves = ablation_nodes(&[10, 20, 50], 16.0, &settings).unwrap();
    let fr: Vec<f64> = curves.iter().map(|c| c.converged_fraction).collect();
    let spread = fr.iter().cloned().fold(f64::MIN, f64::max) - fr.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.2, "{fr:?}");
}

#[test]
fn toy_without_error_is_rigid_equivariant() {
    let n = 12;
    let graph = random_regular_graph(n, 4, 1).unwrap();
    let d0 = pairwise_distances(&random_points(n, 2));
    let toy = NoisyToy { graph: graph.clone(), d0, delta: 0.0 };
    let sched = default_schedule(5000).unwrap().respaced(100).unwrap();
    let ctx = StepContext { schedule: &sched, provider: &toy, graph: Some(&graph) };
    let p = PointSet::new(random_points(n, 3).coords().iter().map(|x| x.map(|v| 5.0 * v)).collect()).unwrap();
    for s in 0..20 {
        let (r, t) = (random_rotation(s), random_translation(s + 100, 3.0));
        let lhs = reverse_ode_step(&p.transformed(&r, t), &ctx, 50, 4.0, 9).unwrap();
        let rhs = reverse_ode_step(&p, &ctx, 50, 4.0, 9).unwrap().transformed(&r, t);
        assert!(max_abs_diff(lhs.coords(), rhs.coords()) < 1e-9);
    }
}
