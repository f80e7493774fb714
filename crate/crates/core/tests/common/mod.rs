#![allow(dead_code)]

use se3diff::geometry::PointSet;
use se3diff::seed;

pub type Rotation = [[f64; 3]; 3];

/// Proper rotation from a normalized Gaussian quaternion.
pub fn random_rotation(s: u64) -> Rotation {
    let mut rng = seed::rng(s);
    let q: Vec<f64> = (0..4).map(|_| seed::standard_normal(&mut rng)).collect();
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_translation(s: u64, scale: f64) -> [f64; 3] {
    let mut rng = seed::rng(s);
    [0, 1, 2].map(|_| scale * seed::standard_normal(&mut rng))
}

pub fn random_points(n: usize, s: u64) -> PointSet {
    PointSet::new(seed::normal_rows(&mut seed::rng(s), n)).unwrap()
}

pub fn rotate(r: &Rotation, x: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| r[i][0] * x[0] + r[i][1] * x[1] + r[i][2] * x[2])
}

pub fn max_abs_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
