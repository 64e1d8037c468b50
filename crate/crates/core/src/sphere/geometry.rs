//! Icosahedral base mesh and geodesic triangle predicates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};

pub type Vec3 = [f64; 3];

/// Tolerance for orientation determinants.
pub const EPS: f64 = 1e-12;

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: &Vec3) -> Vec3 {
    let r = norm(a);
    [a[0] / r, a[1] / r, a[2] / r]
}

/// det[a, b, c] = a · (b × c).
pub fn det3(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    dot(a, &cross(b, c))
}

pub fn arc_length(a: &Vec3, b: &Vec3) -> f64 {
    norm(&cross(a, b)).atan2(dot(a, b))
}

pub fn to_vec3(p: &[f64]) -> Vec3 {
    [p[0], p[1], p[2]]
}

/// Normalized chord midpoint of a great-circle arc.
pub fn geodesic_midpoint(a: &Vec3, b: &Vec3) -> Result<Vec3> {
    let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    if norm(&s) < 1e-12 {
        return Err(UhwtError::AntipodalPoints);
    }
    Ok(normalize(&s))
}

/// Orthogonal projection of `p` onto the arc from `a` to `b`.
pub fn project_to_edge(p: &Vec3, a: &Vec3, b: &Vec3) -> Option<Vec3> {
    let n = cross(a, b);
    let nn = norm(&n);
    if nn < 1e-15 {
        return None;
    }
    let n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let t = dot(p, &n);
    let q = [p[0] - t * n[0], p[1] - t * n[1], p[2] - t * n[2]];
    if norm(&q) < 1e-9 {
        return None;
    }
    let q = normalize(&q);
    // q lies on the arc iff it is between a and b going along n.
    if dot(&cross(a, &q), &n) < -EPS || dot(&cross(&q, b), &n) < -EPS {
        return None;
    }
    Some(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub v: [Vec3; 3],
}

impl Triangle {
    pub fn new(a: Vec3, b: Vec3, c: Vec3) -> Self {
        Triangle { v: [a, b, c] }
    }

    /// Signed orientation of `p` against each oriented edge; the minimum is
    /// nonnegative exactly for points inside the closed triangle.
    pub fn min_edge_det(&self, p: &Vec3) -> f64 {
        let v = &self.v;
        det3(&v[0], &v[1], p)
            .min(det3(&v[1], &v[2], p))
            .min(det3(&v[2], &v[0], p))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.contains_eps(p, EPS)
    }

    pub fn contains_eps(&self, p: &Vec3, eps: f64) -> bool {
        let v = &self.v;
        det3(&v[0], &v[1], p) >= -eps && det3(&v[1], &v[2], p) >= -eps && det3(&v[2], &v[0], p) >= -eps
    }

    /// Edge `e` runs from `v[e]` to `v[(e + 1) % 3]`.
    pub fn edge(&self, e: usize) -> (Vec3, Vec3) {
        (self.v[e], self.v[(e + 1) % 3])
    }

    pub fn opposite(&self, e: usize) -> Vec3 {
        self.v[(e + 2) % 3]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = self.edge(e);
        arc_length(&a, &b)
    }

    /// Lowest-index longest edge.
    pub fn longest_edge(&self) -> usize {
        let mut best = 0;
        let mut len = self.edge_length(0);
        for e in 1..3 {
            let l = self.edge_length(e);
            if l > len {
                best = e;
                len = l;
            }
        }
        best
    }

    pub fn centroid(&self) -> Vec3 {
        let v = &self.v;
        normalize(&[
            v[0][0] + v[1][0] + v[2][0],
            v[0][1] + v[1][1] + v[2][1],
            v[0][2] + v[1][2] + v[2][2],
        ])
    }

    /// Children of the cut from the opposite vertex through `xi` on edge `e`:
    /// (a, xi, c) and (xi, b, c).
    pub fn cut(&self, e: usize, xi: &Vec3) -> [Triangle; 2] {
        let (a, b) = self.edge(e);
        let c = self.opposite(e);
        [Triangle::new(a, *xi, c), Triangle::new(*xi, b, c)]
    }

    /// The four midpoint sub-triangles: corner at v0, corner at v1, central,
    /// corner at v2.
    pub fn quad(&self) -> Result<[Triangle; 4]> {
        let v = &self.v;
        let m01 = geodesic_midpoint(&v[0], &v[1])?;
        let m12 = geodesic_midpoint(&v[1], &v[2])?;
        let m20 = geodesic_midpoint(&v[2], &v[0])?;
        Ok([
            Triangle::new(v[0], m01, m20),
            Triangle::new(m01, v[1], m12),
            Triangle::new(m01, m12, m20),
            Triangle::new(m20, m12, v[2]),
        ])
    }
}

/// Which of the four midpoint sub-triangles `p` falls in.
pub fn quad_index(sub: &[Triangle; 4], p: &Vec3) -> usize {
    let (m01, m12, m20) = (sub[2].v[0], sub[2].v[1], sub[2].v[2]);
    if det3(&m01, &m20, p) > 0.0 {
        0
    } else if det3(&m12, &m01, p) > 0.0 {
        1
    } else if det3(&m20, &m12, p) > 0.0 {
        3
    } else {
        2
    }
}

/// Spherical excess: sum of interior angles minus pi.
pub fn spherical_area(t: &Triangle) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..3 {
        let a = t.v[k];
        let b = t.v[(k + 1) % 3];
        let c = t.v[(k + 2) % 3];
        let tb = tangent(&a, &b).ok_or(UhwtError::DegenerateTriangle)?;
        let tc = tangent(&a, &c).ok_or(UhwtError::DegenerateTriangle)?;
        total += norm(&cross(&tb, &tc)).atan2(dot(&tb, &tc));
    }
    Ok(total - std::f64::consts::PI)
}

fn tangent(a: &Vec3, b: &Vec3) -> Option<Vec3> {
    let d = dot(a, b);
    let t = [b[0] - d * a[0], b[1] - d * a[1], b[2] - d * a[2]];
    let r = norm(&t);
    if r < 1e-15 {
        None
    } else {
        Some([t[0] / r, t[1] / r, t[2] / r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    Balance,
    Balance4,
    Adapt,
    AdaptVertex,
}

impl std::str::FromStr for SplitRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "balance" => Ok(SplitRule::Balance),
            "balance4" => Ok(SplitRule::Balance4),
            "adapt" => Ok(SplitRule::Adapt),
            "adapt_vertex" | "adapt-vertex" => Ok(SplitRule::AdaptVertex),
            _ => Err(format!("unknown split rule `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Triangulation {
    pub fn face(&self, j: usize) -> Triangle {
        let f = self.faces[j];
        Triangle::new(self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]])
    }

    /// Smallest face id whose closed triangle contains `p`.
    pub fn locate(&self, p: &Vec3) -> usize {
        let mut best = 0;
        let mut best_det = f64::NEG_INFINITY;
        for j in 0..self.faces.len() {
            let t = self.face(j);
            if t.contains(p) {
                return j;
            }
            let d = t.min_edge_det(p);
            if d > best_det {
                best_det = d;
                best = j;
            }
        }
        best
    }
}

/// Golden-ratio icosahedron with outward counterclockwise faces.
pub fn icosahedron() -> Triangulation {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut raw: Vec<Vec3> = Vec::with_capacity(12);
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            raw.push([0.0, s1, s2 * phi]);
            raw.push([s1, s2 * phi, 0.0]);
            raw.push([s2 * phi, 0.0, s1]);
        }
    }
    raw.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let adjacent = |a: &Vec3, b: &Vec3| {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        (dot(&d, &d) - 4.0).abs() < 1e-9
    };
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            for k in j + 1..12 {
                if adjacent(&raw[i], &raw[j]) && adjacent(&raw[j], &raw[k]) && adjacent(&raw[i], &raw[k]) {
                    if det3(&raw[i], &raw[j], &raw[k]) > 0.0 {
                        faces.push([i, j, k]);
                    } else {
                        faces.push([i, k, j]);
                    }
                }
            }
        }
    }
    let vertices = raw.iter().map(normalize).collect();
    Triangulation { vertices, faces }
}
