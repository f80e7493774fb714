//! Point sets, graphs, pairwise distances and the scatter-mean update.

use std::collections::BTreeSet;

use rand::Rng;

use crate::seed;
use crate::{Error, Result};

/// Pairs closer than this have no defined direction; their gradient rows are zero.
pub const EPS_DEG: f64 = 1e-8;

/// An n×3 field of per-node vectors (coordinates, shifts, scores).
pub type Field = Vec<[f64; 3]>;

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Coordinates of n ≥ 2 nodes in 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    coords: Field,
}

impl PointSet {
    pub fn new(coords: Field) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Parameter(format!("point set needs at least 2 nodes, got {}", coords.len())));
        }
        if let Some(i) = coords.iter().position(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(Error::Parameter(format!("non-finite coordinate in row {i}")));
        }
        Ok(Self { coords })
    }

    /// Builds a point set without the finiteness check. Used inside samplers,
    /// which run their own divergence guard.
    pub(crate) fn from_raw(coords: Field) -> Self {
        debug_assert!(coords.len() >= 2);
        Self { coords }
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn row(&self, i: usize) -> [f64; 3] {
        self.coords[i]
    }

    pub fn into_coords(self) -> Field {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|x| x.is_finite())
    }

    /// `self + scale * field`.
    pub fn shifted(&self, field: &[[f64; 3]], scale: f64) -> PointSet {
        assert_eq!(field.len(), self.n(), "field size mismatch");
        let coords = self
            .coords
            .iter()
            .zip(field)
            .map(|(x, f)| [x[0] + scale * f[0], x[1] + scale * f[1], x[2] + scale * f[2]])
            .collect();
        PointSet { coords }
    }

    /// Applies x ↦ R x + t to every row.
    pub fn transformed(&self, r: &[[f64; 3]; 3], t: [f64; 3]) -> PointSet {
        let coords = self.coords.iter().map(|x| apply_rigid(r, t, *x)).collect();
        PointSet { coords }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for x in &self.coords {
            for k in 0..3 {
                c[k] += x[k];
            }
        }
        let n = self.n() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        norm(sub(self.coords[i], self.coords[j]))
    }
}

pub fn apply_rigid(r: &[[f64; 3]; 3], t: [f64; 3], x: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2] + t[0],
        r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2] + t[1],
        r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2] + t[2],
    ]
}

/// Dense row-major n×n matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Square {
    n: usize,
    data: Vec<f64>,
}

impl Square {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parameter("matrix is not square".into()));
        }
        Ok(Self { n, data: rows.concat() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn check_symmetric_zero_diag(&self, what: &str) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Parameter(format!("{what}: diagonal entry {i} is nonzero")));
            }
            for j in 0..i {
                if self.get(i, j) != self.get(j, i) {
                    return Err(Error::Parameter(format!("{what}: entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(())
    }
}

/// Symmetric, zero-diagonal, nonnegative matrix of pairwise lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Square);

impl DistanceMatrix {
    pub fn new(m: Square) -> Result<Self> {
        m.check_symmetric_zero_diag("distance matrix")?;
        if m.data.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Parameter("distance matrix has a negative or non-finite entry".into()));
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Square {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.max_abs()
    }
}

/// Symmetric, zero-diagonal matrix; entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricPerturbation(Square);

impl SymmetricPerturbation {
    pub fn new(m: Square) -> Result<Self> {
        m.check_symmetric_zero_diag("perturbation")?;
        Ok(Self(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Square::zeros(n))
    }

    /// `value` on the (u,v) and (v,u) entries, zero elsewhere.
    pub fn edge(n: usize, u: usize, v: usize, value: f64) -> Self {
        assert_ne!(u, v);
        let mut m = Square::zeros(n);
        m.set(u, v, value);
        m.set(v, u, value);
        Self(m)
    }

    /// Fills the upper triangle from `f(i, j)` with `i < j` and mirrors it.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Square::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Self(m)
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(Square { n: self.0.n, data: self.0.data.iter().map(|x| c * x).collect() })
    }

    pub fn matrix(&self) -> &Square {
        &self.0
    }
}

/// Simple undirected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Edges are stored as (min, max) and sorted.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Parameter(format!("edge ({u},{v}) out of range for {n} nodes")));
            }
            if u == v {
                return Err(Error::Parameter(format!("self-loop at node {u}")));
            }
            if !set.insert((u.min(v), u.max(v))) {
                return Err(Error::Parameter(format!("duplicate edge ({u},{v})")));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        Ok(Self { n, edges, neighbors })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::new(n, edges).expect("complete graph is simple")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn min_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Whether the 1/(2·degree) scatter-mean is admissible on this graph.
    pub fn score_transform_valid(&self) -> bool {
        self.min_degree() >= 4
    }
}

pub fn pairwise_distances(points: &PointSet) -> DistanceMatrix {
    let n = points.n();
    let mut m = Square::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let d = points.distance(i, j);
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    DistanceMatrix(m)
}

/// Unit direction from `v` to `u`, or zero for a degenerate pair.
pub fn unit_direction(points: &PointSet, u: usize, v: usize) -> [f64; 3] {
    let diff = sub(points.row(u), points.row(v));
    let d = norm(diff);
    if d < EPS_DEG {
        [0.0; 3]
    } else {
        [diff[0] / d, diff[1] / d, diff[2] / d]
    }
}

/// ∂d_uv/∂C as an n×3 field.
pub fn distance_gradient(points: &PointSet, u: usize, v: usize) -> Field {
    assert_ne!(u, v, "distance_gradient needs distinct nodes");
    let mut g = vec![[0.0; 3]; points.n()];
    let lam = unit_direction(points, u, v);
    g[u] = lam;
    g[v] = [-lam[0], -lam[1], -lam[2]];
    g
}

/// ½ Σ_ij α_ij ∂d_ij/∂C, summed over i<j.
pub fn weighted_product(alpha: &SymmetricPerturbation, points: &PointSet) -> Field {
    let n = points.n();
    assert_eq!(alpha.n(), n, "dimension mismatch");
    let mut out = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let a = alpha.get(i, j);
            if a == 0.0 {
                continue;
            }
            let lam = unit_direction(points, i, j);
            for k in 0..3 {
                out[i][k] += a * lam[k];
                out[j][k] -= a * lam[k];
            }
        }
    }
    out
}

/// Dense scatter-mean shift field: weighted_product / (2(n−1)).
pub fn scatter_mean_field(points: &PointSet, alpha: &SymmetricPerturbation) -> Field {
    let c = 1.0 / (2.0 * (points.n() - 1) as f64);
    weighted_product(alpha, points)
        .into_iter()
        .map(|r| [c * r[0], c * r[1], c * r[2]])
        .collect()
}

pub fn scatter_mean_shift(points: &PointSet, alpha: &SymmetricPerturbation) -> PointSet {
    points.shifted(&scatter_mean_field(points, alpha), 1.0)
}

/// Row i = (1/(2·deg_i)) Σ_{j∈N(i)} score_ij λ_ij. With `strict`, graphs whose
/// minimum degree is below 4 are rejected.
pub fn scatter_mean_shift_sparse(
    points: &PointSet,
    graph: &Graph,
    score: &SymmetricPerturbation,
    strict: bool,
) -> Result<Field> {
    let n = points.n();
    if graph.n() != n || score.n() != n {
        return Err(Error::Parameter("graph, score and point set sizes differ".into()));
    }
    if strict && !graph.score_transform_valid() {
        return Err(Error::Parameter(format!(
            "score transform needs minimum degree 4, graph has {}",
            graph.min_degree()
        )));
    }
    let mut out = vec![[0.0; 3]; n];
    for &(u, v) in graph.edges() {
        let s = score.get(u, v);
        if s == 0.0 {
            continue;
        }
        let lam = unit_direction(points, u, v);
        let cu = s / (2.0 * graph.degree(u) as f64);
        let cv = s / (2.0 * graph.degree(v) as f64);
        for k in 0..3 {
            out[u][k] += cu * lam[k];
            out[v][k] -= cv * lam[k];
        }
    }
    Ok(out)
}

const REGULAR_GRAPH_RETRIES: usize = 1000;

/// Uniform-ish simple k-regular graph from the pairing model with rejection.
pub fn random_regular_graph(n: usize, k: usize, seed: u64) -> Result<Graph> {
    if k < 4 {
        return Err(Error::Parameter(format!("degree must be at least 4, got {k}")));
    }
    if k >= n {
        return Err(Error::Parameter(format!("degree {k} must be below node count {n}")));
    }
    if !(n * k).is_multiple_of(2) {
        return Err(Error::Parameter(format!("n·k = {} is odd", n * k)));
    }
    let mut rng = seed::rng(seed);
    // Stubs are paired one at a time, rejecting loops and repeated edges; a
    // dead end restarts the whole attempt.
    'attempt: for _ in 0..REGULAR_GRAPH_RETRIES {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let mut seen = BTreeSet::new();
        while !stubs.is_empty() {
            let mut placed = false;
            for _ in 0..100 {
                let a = rng.random_range(0..stubs.len());
                let b = rng.random_range(0..stubs.len());
                let (u, v) = (stubs[a].min(stubs[b]), stubs[a].max(stubs[b]));
                if a == b || u == v || seen.contains(&(u, v)) {
                    continue;
                }
                seen.insert((u, v));
                let (hi, lo) = (a.max(b), a.min(b));
                stubs.swap_remove(hi);
                stubs.swap_remove(lo);
                placed = true;
                break;
            }
            if !placed {
                continue 'attempt;
            }
        }
        return Graph::new(n, seen);
    }
    Err(Error::Generation(format!(
        "no simple {k}-regular graph on {n} nodes after {REGULAR_GRAPH_RETRIES} pairings"
    )))
}
