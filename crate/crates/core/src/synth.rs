//! Synthetic signals and datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, UhwtError};
use crate::partition::Dataset;
use crate::rng::stream;
use crate::sphere::geometry::{normalize, Vec3};

/// Size of the fixed point set used to compute a signal's spread.
pub const SD_POINTS: usize = 100_000;

#[derive(Debug, Clone)]
pub enum SphereSignal {
    /// 2 tanh(x1) + cos(10 x2) + 2 x3.
    Fig5,
    /// Three great-circle ridges, one tilted by 35 degrees.
    Planes,
    /// User-supplied samples (x, y, z, f), evaluated by nearest neighbour.
    Samples(Vec<(Vec3, f64)>),
}

impl SphereSignal {
    /// Built-in signal by id. `irregular` has no closed form and must be
    /// supplied as samples.
    pub fn by_id(id: &str) -> Result<SphereSignal> {
        match id {
            "fig5" => Ok(SphereSignal::Fig5),
            "planes" => Ok(SphereSignal::Planes),
            "irregular" => Err(UhwtError::UnknownSignal(
                "irregular (no closed form; pass a CSV of x,y,z,f samples via --signal-file)".into(),
            )),
            other => Err(UhwtError::UnknownSignal(other.to_string())),
        }
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        match self {
            SphereSignal::Fig5 => 2.0 * p[0].tanh() + (10.0 * p[1]).cos() + 2.0 * p[2],
            SphereSignal::Planes => {
                let (s, c) = 35f64.to_radians().sin_cos();
                let n = (p[0] * c - p[1] * s + p[2] * s).powi(2);
                let ridge = |t: f64| (-16.0 * t).exp() + 1.5 * (-16.0 * t / 9.0).exp();
                ridge(p[2] * p[2]) + ridge(p[1] * p[1]) + ridge(n)
            }
            SphereSignal::Samples(s) => {
                let mut best = f64::NEG_INFINITY;
                let mut value = 0.0;
                for (q, f) in s {
                    let d = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
                    if d > best {
                        best = d;
                        value = *f;
                    }
                }
                value
            }
        }
    }

    /// Standard deviation of the signal over a fixed spiral point set.
    pub fn sd(&self) -> f64 {
        let vals: Vec<f64> = fibonacci_sphere(SD_POINTS).iter().map(|p| self.eval(p)).collect();
        crate::stats::sd(&vals)
    }
}

/// Deterministic, nearly uniform spiral point set.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Uniform points on the sphere from normalized Gaussian vectors.
pub fn uniform_sphere_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 1e-12 {
            out.push(normalize(&v));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SphereSample {
    pub data: Dataset,
    pub points: Vec<Vec3>,
    pub truth: Vec<f64>,
    pub noise_sd: f64,
}

/// Noisy samples of `signal`: y = f(x) + N(0, (noise_frac * sd(f))^2).
pub fn sphere_sample(signal: &SphereSignal, n: usize, noise_frac: f64, seed: u64, tag: &str) -> Result<SphereSample> {
    if n == 0 {
        return Err(UhwtError::EmptyInput);
    }
    let points = uniform_sphere_points(n, &mut stream(seed, &format!("{tag}-points"), 0));
    let truth: Vec<f64> = points.iter().map(|p| signal.eval(p)).collect();
    let noise_sd = if noise_frac > 0.0 { noise_frac * signal.sd() } else { 0.0 };
    let mut rng = stream(seed, &format!("{tag}-noise"), 0);
    let y: Vec<f64> = truth.iter().map(|f| f + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(SphereSample { data: Dataset::sphere(&points, y)?, points, truth, noise_sd })
}

pub fn generate_sphere_synthetic(signal_id: &str, n: usize, noise_frac: f64, seed: u64) -> Result<SphereSample> {
    sphere_sample(&SphereSignal::by_id(signal_id)?, n, noise_frac, seed, "train")
}

/// Noiseless test locations and signal values.
pub fn sphere_test_set(signal: &SphereSignal, n: usize, seed: u64) -> (Vec<Vec3>, Vec<f64>) {
    let points = uniform_sphere_points(n, &mut stream(seed, "test-points", 0));
    let truth = points.iter().map(|p| signal.eval(p)).collect();
    (points, truth)
}

/// Row-major image on [0, 1]: a two-tone background with a five-pointed star.
pub fn star_image(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let outer = 0.42 * size as f64;
    let inner = 0.18 * size as f64;
    let verts: Vec<(f64, f64)> = (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { outer } else { inner };
            let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
            (c + r * a.cos(), c + r * a.sin())
        })
        .collect();
    let mut img = vec![0.0; size * size];
    for row in 0..size {
        for col in 0..size {
            let (x, y) = (col as f64, row as f64);
            let background = if row < size * 2 / 3 { 0.2 } else { 0.35 };
            img[row * size + col] = if point_in_polygon(x, y, &verts) { 0.9 } else { background };
        }
    }
    img
}

fn point_in_polygon(x: f64, y: f64, v: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = v.len() - 1;
    for i in 0..v.len() {
        let (xi, yi) = v[i];
        let (xj, yj) = v[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Piecewise-constant test image with off-center rectangles, a disk and a
/// wedge, so that region boundaries rarely fall on dyadic midpoints.
pub fn blocks_image(rows: usize, cols: usize) -> Vec<f64> {
    let (h, w) = (rows as f64, cols as f64);
    let mut img = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 / h, c as f64 / w);
            let mut v = 0.1;
            if (0.13..0.71).contains(&x) && (0.07..0.38).contains(&y) {
                v = 0.8;
            }
            if (0.58..0.93).contains(&x) && (0.29..0.83).contains(&y) {
                v = 0.45;
            }
            if (x - 0.31).powi(2) + (y - 0.66).powi(2) < 0.21f64.powi(2) {
                v = 1.0;
            }
            if y > 0.86 && x < 0.2 + 0.5 * (y - 0.86) / 0.14 {
                v = 0.6;
            }
            img[r * cols + c] = v;
        }
    }
    img
}

/// `truth + N(0, sd^2)` per entry.
pub fn add_noise(truth: &[f64], sd: f64, seed: u64, tag: &str) -> Vec<f64> {
    let mut rng = stream(seed, tag, 0);
    truth.iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}
