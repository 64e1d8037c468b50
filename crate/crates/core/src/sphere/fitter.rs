//! Per-face UHWTs over the icosahedron.

use serde::{Deserialize, Serialize};

use super::geometry::{arc_length, geodesic_midpoint, icosahedron, project_to_edge, SplitRule, Triangle, Triangulation, Vec3};
use super::rotation::{apply, Mat3, IDENTITY};
use crate::error::Result;
use crate::grid::{collect_deep_coefficients, estimate_sigma_mad, pilot_depth};
use crate::partition::{contrast, Cell, Coefficients, Dataset, Geometry, GrowParams, Split, SplitKind, UhTree};

/// Bound on consecutive empty-side refinements of one cell.
const MAX_REFINE: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereFitParams {
    pub rule: SplitRule,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub early_stop_b: f64,
    pub soft_a: f64,
    pub sigma: Option<f64>,
}

impl Default for SphereFitParams {
    fn default() -> Self {
        SphereFitParams { rule: SplitRule::Adapt, max_depth: 64, min_leaf: 1, early_stop_b: 0.0, soft_a: 0.0, sigma: None }
    }
}

struct Scored {
    kind: SplitKind,
    first: usize,
    second: usize,
    w: f64,
}

fn score(kind: SplitKind, members: &[usize], data: &Dataset, y: &[f64]) -> Scored {
    let (mut na, mut nb, mut sa, mut sb) = (0usize, 0usize, 0.0, 0.0);
    for &i in members {
        if kind.first(data.point(i)) {
            na += 1;
            sa += y[i];
        } else {
            nb += 1;
            sb += y[i];
        }
    }
    let w = if na > 0 && nb > 0 { contrast(na as f64, sa, nb as f64, sb) } else { 0.0 };
    Scored { kind, first: na, second: nb, w }
}

fn edge_cut(t: &Triangle, e: usize, xi: Vec3) -> SplitKind {
    SplitKind::Edge { triangle: *t, edge: e, point: xi }
}

fn midpoint_cut(t: &Triangle, e: usize) -> Option<SplitKind> {
    let (a, b) = t.edge(e);
    geodesic_midpoint(&a, &b).ok().map(|m| edge_cut(t, e, m))
}

/// Geometry of the nonempty side of a one-sided split.
fn nonempty_side(s: &Scored, parent: &Geometry) -> Geometry {
    let [ga, gb] = s.kind.child_geometries(parent);
    if s.first > 0 {
        ga
    } else {
        gb
    }
}

fn argmax_index(cands: &[Scored], min_leaf: usize, tol: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, c) in cands.iter().enumerate() {
        if c.first < min_leaf || c.second < min_leaf {
            continue;
        }
        if best.is_none_or(|b| c.w.abs() > cands[b].w.abs() + tol) {
            best = Some(k);
        }
    }
    best
}

fn argmax(mut cands: Vec<Scored>, min_leaf: usize, tol: f64) -> Option<Scored> {
    argmax_index(&cands, min_leaf, tol).map(|k| cands.swap_remove(k))
}

fn adapt_vertex_candidates(t: &Triangle, cell: &Cell, data: &Dataset, y: &[f64]) -> Vec<Scored> {
    let mut out = Vec::new();
    for e in 0..3 {
        let (a, b) = t.edge(e);
        for &i in &cell.members {
            let Some(xi) = project_to_edge(&data.point3(i), &a, &b) else { continue };
            if arc_length(&xi, &a) < 1e-9 || arc_length(&xi, &b) < 1e-9 {
                continue;
            }
            out.push(score(edge_cut(t, e, xi), &cell.members, data, y));
        }
    }
    out
}

/// Propose a split of `cell` under `rule`. When a cut leaves one side
/// without members, the cell geometry is replaced by the occupied side and
/// the rule is applied again.
pub fn propose_split(cell: &mut Cell, rule: SplitRule, data: &Dataset, y: &[f64], min_leaf: usize) -> Option<SplitKind> {
    let min_leaf = min_leaf.max(1);
    let n = cell.members.len();
    if n < 2 * min_leaf {
        return None;
    }
    let scale = cell.members.iter().fold(0.0f64, |m, &i| m.max(y[i].abs()));
    let tol = 1e-12 * scale * (n as f64).sqrt();
    for _ in 0..MAX_REFINE {
        let t = match &cell.geometry {
            Geometry::TrianglePair { triangles } => {
                let s = score(SplitKind::Pair { triangles: *triangles }, &cell.members, data, y);
                if s.first >= min_leaf && s.second >= min_leaf {
                    return Some(s.kind);
                }
                if s.first > 0 && s.second > 0 {
                    return None;
                }
                cell.geometry = nonempty_side(&s, &cell.geometry);
                continue;
            }
            Geometry::Triangle { triangle } => *triangle,
            _ => return None,
        };
        if t.edge_length(t.longest_edge()) < 1e-13 {
            return None;
        }
        let one_sided = match rule {
            SplitRule::Balance => {
                let s = score(midpoint_cut(&t, t.longest_edge())?, &cell.members, data, y);
                if s.first >= min_leaf && s.second >= min_leaf {
                    return Some(s.kind);
                }
                if s.first > 0 && s.second > 0 {
                    return None;
                }
                s
            }
            SplitRule::Balance4 => {
                t.quad().ok()?;
                let s = score(SplitKind::Quad { triangle: t }, &cell.members, data, y);
                if s.first >= min_leaf && s.second >= min_leaf {
                    return Some(s.kind);
                }
                if s.first > 0 && s.second > 0 {
                    return None;
                }
                s
            }
            SplitRule::Adapt | SplitRule::AdaptVertex => {
                let mids: Vec<Scored> =
                    (0..3).filter_map(|e| midpoint_cut(&t, e)).map(|k| score(k, &cell.members, data, y)).collect();
                if rule == SplitRule::AdaptVertex {
                    let v = adapt_vertex_candidates(&t, cell, data, y);
                    if let Some(best) = argmax(v, min_leaf, tol) {
                        return Some(best.kind);
                    }
                }
                let mut mids = mids;
                if let Some(k) = argmax_index(&mids, min_leaf, tol) {
                    return Some(mids.swap_remove(k).kind);
                }
                let longest = t.longest_edge();
                let one_sided = |s: &Scored| s.first == 0 || s.second == 0;
                let pick = mids
                    .iter()
                    .position(|s| matches!(s.kind, SplitKind::Edge { edge, .. } if edge == longest) && one_sided(s))
                    .or_else(|| mids.iter().position(one_sided))?;
                mids.swap_remove(pick)
            }
        };
        cell.geometry = nonempty_side(&one_sided, &cell.geometry);
    }
    None
}

/// Split of a triangle cell under `rule`, if one is admissible.
pub fn split_triangle(cell: &Cell, rule: SplitRule, data: &Dataset, y: &[f64], min_leaf: usize) -> Option<Split> {
    let mut c = cell.clone();
    let kind = propose_split(&mut c, rule, data, y, min_leaf)?;
    Some(Split::new(kind, &c, data))
}

/// Face assignment of already-rotated points.
pub fn assign_faces(mesh: &Triangulation, data: &Dataset) -> Vec<Vec<usize>> {
    let mut faces = vec![Vec::new(); mesh.faces.len()];
    for i in 0..data.n() {
        faces[mesh.locate(&data.point3(i))].push(i);
    }
    faces
}

fn grow_face(mesh: &Triangulation, j: usize, members: Vec<usize>, data: &Dataset, y: &[f64], rule: SplitRule, grow: &GrowParams) -> UhTree {
    let root = Cell { geometry: Geometry::Triangle { triangle: mesh.face(j) }, members, depth: 0 };
    UhTree::grow(data, y, root, grow, |cell| propose_split(cell, rule, data, y, grow.min_leaf))
}

#[derive(Debug, Clone)]
pub struct SphereModel {
    pub rotation: Mat3,
    /// One tree per base face; `None` for faces without training points.
    pub faces: Vec<Option<UhTree>>,
    pub global_mean: f64,
    pub sigma_hat: f64,
    pub tau: f64,
    pub params: SphereFitParams,
    mesh: Triangulation,
}

pub fn rotate_dataset(data: &Dataset, r: &Mat3) -> Result<Dataset> {
    let pts: Vec<Vec3> = (0..data.n()).map(|i| apply(r, &data.point3(i))).collect();
    Dataset::sphere(&pts, data.responses().to_vec())
}

/// Pooled pilot noise estimate over all faces.
pub fn pilot_sigma_faces(mesh: &Triangulation, faces: &[Vec<usize>], data: &Dataset, y: &[f64], params: &SphereFitParams) -> f64 {
    let mut pooled = Vec::new();
    for (j, m) in faces.iter().enumerate() {
        if m.len() < 2 {
            continue;
        }
        let grow = GrowParams { max_depth: pilot_depth(params.max_depth, m.len()), min_leaf: 1, stop_threshold: 0.0 };
        let t = grow_face(mesh, j, m.clone(), data, y, params.rule, &grow);
        if let Ok(w) = collect_deep_coefficients(&t) {
            pooled.extend(w);
        }
    }
    estimate_sigma_mad(&pooled).unwrap_or(0.0)
}

/// Fit per-face trees on `rotated` (points already multiplied by `rotation`).
pub fn fit_rotated(rotated: &Dataset, y: &[f64], params: &SphereFitParams, rotation: Mat3) -> SphereModel {
    let mesh = icosahedron();
    let faces = assign_faces(&mesh, rotated);
    let sigma_hat = params.sigma.unwrap_or_else(|| {
        if params.early_stop_b > 0.0 || params.soft_a > 0.0 {
            pilot_sigma_faces(&mesh, &faces, rotated, y, params)
        } else {
            0.0
        }
    });
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf.max(1),
        stop_threshold: params.early_stop_b * sigma_hat,
    };
    let tau = params.soft_a * sigma_hat * (2.0 * (rotated.n() as f64).ln()).sqrt();
    let trees = faces
        .into_iter()
        .enumerate()
        .map(|(j, m)| {
            if m.is_empty() {
                None
            } else {
                let mut t = grow_face(&mesh, j, m, rotated, y, params.rule, &grow);
                t.shrink(tau);
                Some(t)
            }
        })
        .collect();
    SphereModel {
        rotation,
        faces: trees,
        global_mean: crate::stats::mean(y),
        sigma_hat,
        tau,
        params: params.clone(),
        mesh,
    }
}

pub fn fit_sphere(data: &Dataset, y: &[f64], params: &SphereFitParams, rotation: Option<Mat3>) -> Result<SphereModel> {
    match rotation {
        None => Ok(fit_rotated(data, y, params, IDENTITY)),
        Some(r) => Ok(fit_rotated(&rotate_dataset(data, &r)?, y, params, r)),
    }
}

impl SphereModel {
    /// Assemble a model from parts (used when loading from JSON).
    pub fn from_parts(rotation: Mat3, faces: Vec<Option<UhTree>>, global_mean: f64, sigma_hat: f64, tau: f64, params: SphereFitParams) -> Self {
        SphereModel { rotation, faces, global_mean, sigma_hat, tau, params, mesh: icosahedron() }
    }

    /// (face, tree) reached by an unrotated query.
    pub fn locate(&self, p: &Vec3) -> (usize, Vec3) {
        let q = apply(&self.rotation, p);
        (self.mesh.locate(&q), q)
    }

    pub fn predict(&self, p: &Vec3, which: Coefficients) -> f64 {
        let (j, q) = self.locate(p);
        match &self.faces[j] {
            Some(t) => t.eval(&q, which),
            None => self.global_mean,
        }
    }

    /// Fitted values at the training points the model was grown on.
    pub fn fitted(&self, n: usize, which: Coefficients) -> Vec<f64> {
        let mut out = vec![self.global_mean; n];
        for t in self.faces.iter().flatten() {
            t.fit_values_into(which, &mut out);
        }
        out
    }

    pub fn mesh(&self) -> &Triangulation {
        &self.mesh
    }
}

pub fn predict_sphere(model: &SphereModel, p: &Vec3, which: Coefficients) -> f64 {
    model.predict(p, which)
}
