//! Coordinates from distances: Gram-matrix embedding and classic MDS.

use nalgebra::DMatrix;

use crate::geometry::{DistanceMatrix, PointSet};
use crate::{Error, Result};

/// Relative threshold separating positive eigenvalues from numerical zero.
pub const EPS_PSD: f64 = 1e-8;
/// Relative floor below which a negative eigenvalue means the input is not Euclidean.
pub const EPS_FEAS: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;

/// Inner products of coordinates anchored at node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub DMatrix<f64>);

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Descending.
    pub values: Vec<f64>,
    /// Column i pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

fn squared(d: &DistanceMatrix) -> DMatrix<f64> {
    let n = d.n();
    DMatrix::from_fn(n, n, |i, j| d.get(i, j) * d.get(i, j))
}

pub fn gram_from_distances(d: &DistanceMatrix) -> GramMatrix {
    let sq = squared(d);
    let n = d.n();
    GramMatrix(DMatrix::from_fn(n, n, |i, j| 0.5 * (sq[(0, j)] + sq[(i, 0)] - sq[(i, j)])))
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn symmetric_eigendecomposition(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Contract("eigendecomposition needs a square matrix".into()));
    }
    let scale = a.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = m.norm();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition { values, vectors })
}

fn embed(eig: &EigenDecomposition, n: usize, keep: impl Fn(f64) -> bool) -> PointSet {
    let mut rows = vec![[0.0; 3]; n];
    for (c, &lambda) in eig.values.iter().take(3).enumerate() {
        if !keep(lambda) {
            continue;
        }
        let s = lambda.max(0.0).sqrt();
        for (r, row) in rows.iter_mut().enumerate() {
            row[c] = eig.vectors[(r, c)] * s;
        }
    }
    PointSet::from_raw(rows)
}

/// Coordinates realizing `d`, gauge-fixed with node 0 at the origin.
pub fn spectral_coordinates(d: &DistanceMatrix) -> Result<PointSet> {
    let gram = gram_from_distances(d);
    let eig = symmetric_eigendecomposition(&gram.0)?;
    let lmax = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let positive = eig.values.iter().filter(|&&l| l > EPS_PSD * lmax).count();
    if positive > 3 {
        return Err(Error::Infeasible(format!("{positive} positive Gram eigenvalues, at most 3 allowed")));
    }
    if let Some(&low) = eig.values.last() {
        if low < -EPS_FEAS * lmax {
            return Err(Error::Infeasible(format!("Gram eigenvalue {low:e} is negative beyond tolerance")));
        }
    }
    Ok(embed(&eig, d.n(), |l| l > EPS_PSD * lmax))
}

/// Double-centering MDS; negative eigenvalues are clamped to zero.
pub fn classic_mds(d: &DistanceMatrix) -> Result<PointSet> {
    let n = d.n();
    let sq = squared(d);
    let p = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = (&p * sq * &p) * -0.5;
    let b = (&b + b.transpose()) * 0.5;
    let eig = symmetric_eigendecomposition(&b)?;
    Ok(embed(&eig, n, |l| l > 0.0))
}
