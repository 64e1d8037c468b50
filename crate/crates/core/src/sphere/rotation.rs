//! Uniform random rotations of the sphere.

use rand::Rng;
use rand_distr::StandardNormal;

use super::geometry::Vec3;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn apply(r: &Mat3, p: &Vec3) -> Vec3 {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

pub fn transpose(r: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = r[j][i];
        }
    }
    t
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn det(r: &Mat3) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Haar-distributed element of SO(3): QR of a Gaussian matrix with the
/// triangular factor's diagonal made positive, then the last column
/// multiplied by sign(det).
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let mut g = [[0.0; 3]; 3];
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        if let Some(q) = gram_schmidt(&g) {
            let mut q = q;
            if det(&q) < 0.0 {
                for row in q.iter_mut() {
                    row[2] = -row[2];
                }
            }
            return q;
        }
    }
}

/// Q factor of a QR decomposition with positive diagonal in R (Gram-Schmidt
/// with one reorthogonalization pass).
fn gram_schmidt(g: &Mat3) -> Option<Mat3> {
    let mut cols: [Vec3; 3] = [[0.0; 3]; 3];
    for (j, col) in cols.iter_mut().enumerate() {
        *col = [g[0][j], g[1][j], g[2][j]];
    }
    for j in 0..3 {
        for _pass in 0..2 {
            for k in 0..j {
                let d: f64 = (0..3).map(|i| cols[j][i] * cols[k][i]).sum();
                for i in 0..3 {
                    cols[j][i] -= d * cols[k][i];
                }
            }
        }
        let r: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < 1e-12 {
            return None;
        }
        for i in 0..3 {
            cols[j][i] /= r;
        }
    }
    let mut q = [[0.0; 3]; 3];
    for j in 0..3 {
        for i in 0..3 {
            q[i][j] = cols[j][i];
        }
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rotations_are_special_orthogonal() {
        let mut rng = stream(1, "rotation-test", 0);
        for _ in 0..10_000 {
            let q = haar_rotation(&mut rng);
            let qtq = mul(&transpose(&q), &q);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq[i][j] - e).abs() < 1e-12);
                }
            }
            assert!((det(&q) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_vector_is_uniform_on_average() {
        let mut rng = stream(2, "rotation-test", 0);
        let n = 100_000;
        let mut s = [0.0; 3];
        for _ in 0..n {
            let q = haar_rotation(&mut rng);
            let v = apply(&q, &[0.0, 0.0, 1.0]);
            for k in 0..3 {
                s[k] += v[k];
            }
        }
        let m = (s.iter().map(|v| (v / n as f64).powi(2)).sum::<f64>()).sqrt();
        assert!(m <= 3.0 / (n as f64).sqrt(), "mean norm {m}");
    }

    #[test]
    fn rotation_determinism() {
        let a = haar_rotation(&mut stream(5, "r", 0));
        let b = haar_rotation(&mut stream(5, "r", 0));
        let c = haar_rotation(&mut stream(6, "r", 0));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
