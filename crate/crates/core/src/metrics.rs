//! Rigid alignment and population metrics (COV/MAT, AD).

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::geometry::{apply_rigid, PointSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn apply(&self, points: &PointSet) -> PointSet {
        points.transformed(&self.rotation, self.translation)
    }

    pub fn apply_point(&self, x: [f64; 3]) -> [f64; 3] {
        apply_rigid(&self.rotation, self.translation, x)
    }
}

fn sum_squared_residual(a: &PointSet, b: &PointSet) -> f64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>())
        .sum()
}

/// Proper rotation and translation minimizing ‖R·moving + t − target‖_F,
/// with the resulting RMSD.
pub fn kabsch_align(moving: &PointSet, target: &PointSet) -> Result<(RigidTransform, f64)> {
    if moving.n() != target.n() {
        return Err(Error::Parameter(format!("cannot align {} nodes onto {}", moving.n(), target.n())));
    }
    if moving == target {
        return Ok((RigidTransform::identity(), 0.0));
    }
    let pc = Vector3::from(moving.centroid());
    let qc = Vector3::from(target.centroid());
    let mut h = Matrix3::zeros();
    for (p, q) in moving.coords().iter().zip(target.coords()) {
        h += (Vector3::from(*p) - pc) * (Vector3::from(*q) - qc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let sign = if sign == 0.0 { 1.0 } else { sign };
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    let t = qc - r * pc;
    let rotation = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ];
    let transform = RigidTransform { rotation, translation: [t[0], t[1], t[2]] };
    let aligned = transform.apply(moving);
    let rmsd = (sum_squared_residual(&aligned, target) / moving.n() as f64).sqrt();
    Ok((transform, rmsd))
}

pub fn rmsd(a: &PointSet, b: &PointSet) -> Result<f64> {
    kabsch_align(a, b).map(|(_, r)| r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub cov_r: f64,
    pub mat_r: f64,
    pub cov_p: f64,
    pub mat_p: f64,
    pub threshold: f64,
}

fn check_sets(generated: &[PointSet], reference: &[PointSet]) -> Result<usize> {
    let n = match (generated.first(), reference.first()) {
        (Some(g), Some(_)) => g.n(),
        _ => return Err(Error::Parameter("generated and reference sets must be non-empty".into())),
    };
    if generated.iter().chain(reference).any(|p| p.n() != n) {
        return Err(Error::Parameter("all point sets must have the same node count".into()));
    }
    Ok(n)
}

/// RMSD for every (generated, reference) pair, row-major by generated index.
pub fn rmsd_matrix(generated: &[PointSet], reference: &[PointSet]) -> Result<Vec<Vec<f64>>> {
    check_sets(generated, reference)?;
    generated
        .par_iter()
        .map(|g| reference.iter().map(|r| rmsd(g, r)).collect::<Result<Vec<_>>>())
        .collect()
}

/// COV counts items whose best match is strictly below `threshold`; MAT
/// averages the best-match RMSD. R sweeps the reference set, P the generated one.
pub fn cov_mat(generated: &[PointSet], reference: &[PointSet], threshold: f64) -> Result<MetricsReport> {
    let m = rmsd_matrix(generated, reference)?;
    let (ng, nr) = (generated.len(), reference.len());
    let best_for_ref: Vec<f64> = (0..nr).map(|r| (0..ng).map(|g| m[g][r]).fold(f64::INFINITY, f64::min)).collect();
    let best_for_gen: Vec<f64> = m.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let cov = |v: &[f64]| v.iter().filter(|&&x| x < threshold).count() as f64 / v.len() as f64;
    let mat = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricsReport {
        cov_r: cov(&best_for_ref),
        mat_r: mat(&best_for_ref),
        cov_p: cov(&best_for_gen),
        mat_p: mat(&best_for_gen),
        threshold,
    })
}

/// Mean over generated samples of min over references of the aligned
/// squared Frobenius distance ‖Align(X, X_r) − X_r‖².
pub fn ad_score(generated: &[PointSet], reference: &[PointSet]) -> Result<f64> {
    check_sets(generated, reference)?;
    let per_gen: Vec<f64> = generated
        .par_iter()
        .map(|g| {
            reference.iter().try_fold(f64::INFINITY, |best, r| {
                let (t, _) = kabsch_align(g, r)?;
                Ok::<_, Error>(best.min(sum_squared_residual(&t.apply(g), r)))
            })
        })
        .collect::<Result<_>>()?;
    Ok(per_gen.iter().sum::<f64>() / per_gen.len() as f64)
}
