//! Cells, splits, UH atoms and coefficients, trees and reconstruction.
//!
//! All masses are counting masses: a cell's mass is its number of training
//! points. An atom on a parent cell A with groups A+ and A- takes the values
//! `sqrt(n+ n- / n)/n+` and `-sqrt(n+ n- / n)/n-`, so it has zero sum and unit
//! counting norm, and the coefficient `sum_i y_i psi(x_i)` equals
//! `sqrt(n+ n- / n) (mean+ - mean-)`.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};
use crate::sphere::geometry::{det3, quad_index, to_vec3, Triangle, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Integer index lattice with the given axis sizes.
    Grid { shape: Vec<usize> },
    /// Arbitrary distinct points in R^d.
    Scattered { dim: usize },
    /// Unit vectors in R^3.
    Sphere,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    domain: Domain,
    dim: usize,
    coords: Vec<f64>,
    responses: Vec<f64>,
}

impl Dataset {
    /// Row-major lattice: point k has the multi-index of k as coordinates.
    pub fn grid(shape: &[usize], responses: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 || shape.is_empty() {
            return Err(UhwtError::EmptyInput);
        }
        if responses.len() != n {
            return Err(UhwtError::DimensionMismatch { expected: n, found: responses.len() });
        }
        let dim = shape.len();
        let mut coords = vec![0.0; n * dim];
        for k in 0..n {
            let mut r = k;
            for d in (0..dim).rev() {
                coords[k * dim + d] = (r % shape[d]) as f64;
                r /= shape[d];
            }
        }
        Ok(Dataset { domain: Domain::Grid { shape: shape.to_vec() }, dim, coords, responses })
    }

    pub fn scattered(points: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(UhwtError::EmptyInput);
        }
        let dim = points[0].len();
        Self::from_flat(Domain::Scattered { dim }, dim, flatten(points, dim)?, responses)
    }

    pub fn sphere(points: &[Vec3], responses: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(UhwtError::EmptyInput);
        }
        for p in points {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if (r - 1.0).abs() > 1e-9 {
                return Err(UhwtError::PreconditionViolated(format!("sphere point has norm {r}")));
            }
        }
        let coords = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::from_flat(Domain::Sphere, 3, coords, responses)
    }

    fn from_flat(domain: Domain, dim: usize, coords: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let n = coords.len() / dim.max(1);
        if n == 0 {
            return Err(UhwtError::EmptyInput);
        }
        if responses.len() != n {
            return Err(UhwtError::DimensionMismatch { expected: n, found: responses.len() });
        }
        let mut seen = HashSet::with_capacity(n);
        for k in 0..n {
            let key: Vec<u64> = coords[k * dim..(k + 1) * dim].iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(UhwtError::PreconditionViolated(format!("duplicate location at index {k}")));
            }
        }
        Ok(Dataset { domain, dim, coords, responses })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point3(&self, i: usize) -> Vec3 {
        to_vec3(self.point(i))
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.domain, Domain::Grid { .. })
    }

    /// Same locations, new responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        if responses.len() != self.n() {
            return Err(UhwtError::DimensionMismatch { expected: self.n(), found: responses.len() });
        }
        Ok(Dataset { responses, ..self.clone() })
    }

    /// Half-open bounding box padded by 1/2 on each side.
    pub fn bounding_box(&self) -> Geometry {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for i in 0..self.n() {
            for (d, &x) in self.point(i).iter().enumerate() {
                lo[d] = lo[d].min(x);
                hi[d] = hi[d].max(x);
            }
        }
        Geometry::Box {
            lo: lo.iter().map(|v| v - 0.5).collect(),
            hi: hi.iter().map(|v| v + 0.5).collect(),
        }
    }

    /// Cell holding every point: the padded box, or the whole sphere.
    pub fn root_cell(&self) -> Cell {
        let geometry = match self.domain {
            Domain::Sphere => Geometry::Whole,
            _ => self.bounding_box(),
        };
        Cell { geometry, members: (0..self.n()).collect(), depth: 0 }
    }
}

fn flatten(points: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len() * dim);
    for p in points {
        if p.len() != dim {
            return Err(UhwtError::DimensionMismatch { expected: dim, found: p.len() });
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Half-open box `lo <= x < hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Triangle { triangle: Triangle },
    /// Union of two triangles from a four-way midpoint split.
    TrianglePair { triangles: [Triangle; 2] },
    Whole,
}

impl Geometry {
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Geometry::Box { lo, hi } => p.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x < *h),
            Geometry::Triangle { triangle } => triangle.contains(&to_vec3(p)),
            Geometry::TrianglePair { triangles } => {
                let q = to_vec3(p);
                triangles[0].contains(&q) || triangles[1].contains(&q)
            }
            Geometry::Whole => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub geometry: Geometry,
    /// Sorted dataset indices.
    pub members: Vec<usize>,
    pub depth: usize,
}

impl Cell {
    /// Cell whose members are the dataset points inside `geometry`.
    pub fn from_geometry(geometry: Geometry, data: &Dataset, depth: usize) -> Self {
        let members = (0..data.n()).filter(|&i| geometry.contains(data.point(i))).collect();
        Cell { geometry, members, depth }
    }

    pub fn mass(&self) -> usize {
        self.members.len()
    }
}

pub fn cell_mass(cell: &Cell) -> usize {
    cell.mass()
}

/// Geometric description of a binary split. The first child is the plus
/// group unless the owning node is flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SplitKind {
    /// `x[dim] < threshold` goes first.
    Axis { dim: usize, threshold: f64 },
    /// Cut of `triangle` from the vertex opposite edge `edge` through `point`.
    Edge { triangle: Triangle, edge: usize, point: Vec3 },
    /// Midpoint split of `triangle` into {corner v0, central} and {corner v1, corner v2}.
    Quad { triangle: Triangle },
    /// Separation of a triangle pair into its two triangles.
    Pair { triangles: [Triangle; 2] },
}

impl SplitKind {
    /// Whether `p` belongs to the first child. Total on all of space.
    pub fn first(&self, p: &[f64]) -> bool {
        match self {
            SplitKind::Axis { dim, threshold } => p[*dim] < *threshold,
            SplitKind::Edge { triangle, edge, point } => {
                let c = triangle.opposite(*edge);
                det3(&c, point, &to_vec3(p)) <= 0.0
            }
            SplitKind::Quad { triangle } => {
                // Midpoints of a valid triangle always exist.
                let sub = triangle.quad().expect("non-antipodal triangle");
                matches!(quad_index(&sub, &to_vec3(p)), 0 | 2)
            }
            SplitKind::Pair { triangles } => {
                let q = to_vec3(p);
                triangles[0].min_edge_det(&q) >= triangles[1].min_edge_det(&q)
            }
        }
    }

    /// Geometry of the parent cell described by the split parameters.
    pub fn parent_geometry(&self) -> Option<Geometry> {
        match self {
            SplitKind::Axis { .. } => None,
            SplitKind::Edge { triangle, .. } | SplitKind::Quad { triangle } => {
                Some(Geometry::Triangle { triangle: *triangle })
            }
            SplitKind::Pair { triangles } => Some(Geometry::TrianglePair { triangles: *triangles }),
        }
    }

    /// Child geometries in (first, second) order.
    pub fn child_geometries(&self, parent: &Geometry) -> [Geometry; 2] {
        match self {
            SplitKind::Axis { dim, threshold } => match parent {
                Geometry::Box { lo, hi } => {
                    let mut hi_l = hi.clone();
                    hi_l[*dim] = *threshold;
                    let mut lo_r = lo.clone();
                    lo_r[*dim] = *threshold;
                    [Geometry::Box { lo: lo.clone(), hi: hi_l }, Geometry::Box { lo: lo_r, hi: hi.clone() }]
                }
                other => [other.clone(), other.clone()],
            },
            SplitKind::Edge { triangle, edge, point } => {
                let [a, b] = triangle.cut(*edge, point);
                [Geometry::Triangle { triangle: a }, Geometry::Triangle { triangle: b }]
            }
            SplitKind::Quad { triangle } => {
                let s = triangle.quad().expect("non-antipodal triangle");
                [
                    Geometry::TrianglePair { triangles: [s[0], s[2]] },
                    Geometry::TrianglePair { triangles: [s[1], s[3]] },
                ]
            }
            SplitKind::Pair { triangles } => [
                Geometry::Triangle { triangle: triangles[0] },
                Geometry::Triangle { triangle: triangles[1] },
            ],
        }
    }

    /// Members of `parent` routed to the (first, second) child.
    pub fn partition(&self, members: &[usize], data: &Dataset) -> (Vec<usize>, Vec<usize>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &i in members {
            if self.first(data.point(i)) {
                a.push(i);
            } else {
                b.push(i);
            }
        }
        (a, b)
    }
}

/// A split applied to a concrete cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

impl Split {
    pub fn new(kind: SplitKind, parent: &Cell, data: &Dataset) -> Self {
        let (plus, minus) = kind.partition(&parent.members, data);
        Split { kind, plus, minus }
    }

    pub fn children(&self, parent: &Cell) -> [Cell; 2] {
        let [ga, gb] = self.kind.child_geometries(&parent.geometry);
        [
            Cell { geometry: ga, members: self.plus.clone(), depth: parent.depth + 1 },
            Cell { geometry: gb, members: self.minus.clone(), depth: parent.depth + 1 },
        ]
    }
}

/// Piecewise-constant wavelet on a parent cell.
#[derive(Debug, Clone, PartialEq)]
pub struct UhAtom {
    pub kind: SplitKind,
    pub support: Geometry,
    pub value_plus: f64,
    pub value_minus: f64,
}

impl UhAtom {
    pub fn eval(&self, p: &[f64]) -> f64 {
        if !self.support.contains(p) {
            0.0
        } else if self.kind.first(p) {
            self.value_plus
        } else {
            self.value_minus
        }
    }
}

/// (value_plus, value_minus) for group sizes under the counting measure.
pub fn atom_levels(n_plus: usize, n_minus: usize) -> (f64, f64) {
    let (p, m) = (n_plus as f64, n_minus as f64);
    let s = (p * m / (p + m)).sqrt();
    (s / p, -s / m)
}

pub fn uh_atom(split: &Split, parent: &Cell) -> Result<UhAtom> {
    if split.plus.is_empty() || split.minus.is_empty() {
        return Err(UhwtError::EmptyChild);
    }
    let (value_plus, value_minus) = atom_levels(split.plus.len(), split.minus.len());
    Ok(UhAtom { kind: split.kind.clone(), support: parent.geometry.clone(), value_plus, value_minus })
}

/// `sqrt(n+ n- / n) (mean+ - mean-)` from group sizes and sums.
pub fn contrast(n_plus: f64, sum_plus: f64, n_minus: f64, sum_minus: f64) -> f64 {
    (n_plus * n_minus / (n_plus + n_minus)).sqrt() * (sum_plus / n_plus - sum_minus / n_minus)
}

pub fn uh_coefficient(split: &Split, responses: &[f64]) -> Result<f64> {
    if split.plus.is_empty() || split.minus.is_empty() {
        return Err(UhwtError::EmptyChild);
    }
    let sp: f64 = split.plus.iter().map(|&i| responses[i]).sum();
    let sm: f64 = split.minus.iter().map(|&i| responses[i]).sum();
    Ok(contrast(split.plus.len() as f64, sp, split.minus.len() as f64, sm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficients {
    Raw,
    Shrunk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub geometry: Geometry,
    /// Training members; empty for trees loaded from JSON.
    pub members: Vec<usize>,
    pub count: usize,
    pub mean: f64,
    pub split: Option<SplitKind>,
    /// (first, second) child ids.
    pub children: Option<[usize; 2]>,
    /// When set, the second child is the plus group.
    pub flipped: bool,
    pub w: Option<f64>,
    pub w_shrunk: Option<f64>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UhTree {
    pub nodes: Vec<Node>,
}

/// Growth controls shared by every fitter.
#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Nodes whose coefficient magnitude falls below this become leaves; 0 disables.
    pub stop_threshold: f64,
}

/// Spread below which a cell's responses count as constant.
fn is_constant(members: &[usize], y: &[f64]) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut scale = 0.0f64;
    for &i in members {
        lo = lo.min(y[i]);
        hi = hi.max(y[i]);
        scale = scale.max(y[i].abs());
    }
    hi - lo <= 1e-14 * scale
}

impl UhTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Root response mean.
    pub fn intercept(&self) -> f64 {
        self.nodes[0].mean
    }

    pub fn internal_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.id)
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id)
    }

    pub fn internal_count(&self) -> usize {
        self.internal_ids().count()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Breadth-first growth. `propose` may replace the cell geometry with a
    /// refinement before returning a split; it must only return splits whose
    /// children each hold at least `min_leaf` members.
    pub fn grow<F>(data: &Dataset, y: &[f64], root: Cell, params: &GrowParams, propose: F) -> UhTree
    where
        F: FnMut(&mut Cell) -> Option<SplitKind>,
    {
        let base_depth = root.depth;
        let gate = |node: &Node| {
            !(node.depth - base_depth >= params.max_depth
                || node.count < 2
                || node.count < 2 * params.min_leaf
                || is_constant(&node.members, y))
        };
        Self::build(data, y, root, gate, propose, params.stop_threshold)
    }

    /// Tree with splits chosen entirely by `split_of`; no data-driven stopping.
    pub fn assemble<F>(data: &Dataset, y: &[f64], root: Cell, mut split_of: F) -> UhTree
    where
        F: FnMut(&Cell) -> Option<SplitKind>,
    {
        Self::build(data, y, root, |node: &Node| node.count >= 2, |c: &mut Cell| split_of(c), 0.0)
    }

    fn build<G, F>(data: &Dataset, y: &[f64], root: Cell, gate: G, mut propose: F, stop_threshold: f64) -> UhTree
    where
        G: Fn(&Node) -> bool,
        F: FnMut(&mut Cell) -> Option<SplitKind>,
    {
        let mean_of = |m: &[usize]| {
            if m.is_empty() {
                0.0
            } else {
                m.iter().map(|&i| y[i]).sum::<f64>() / m.len() as f64
            }
        };
        let mut nodes = vec![Node {
            id: 0,
            parent: None,
            depth: root.depth,
            count: root.members.len(),
            mean: mean_of(&root.members),
            geometry: root.geometry,
            members: root.members,
            split: None,
            children: None,
            flipped: false,
            w: None,
            w_shrunk: None,
        }];
        let mut queue = VecDeque::from([0usize]);
        while let Some(id) = queue.pop_front() {
            let node = &nodes[id];
            if !gate(node) {
                continue;
            }
            let mut cell = Cell { geometry: node.geometry.clone(), members: node.members.clone(), depth: node.depth };
            let Some(kind) = propose(&mut cell) else {
                nodes[id].geometry = cell.geometry;
                continue;
            };
            let (a, b) = kind.partition(&cell.members, data);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let (sa, sb) = (a.iter().map(|&i| y[i]).sum::<f64>(), b.iter().map(|&i| y[i]).sum::<f64>());
            let w = contrast(a.len() as f64, sa, b.len() as f64, sb);
            if stop_threshold > 0.0 && w.abs() < stop_threshold {
                continue;
            }
            let [ga, gb] = kind.child_geometries(&cell.geometry);
            let depth = cell.depth + 1;
            let ids = [nodes.len(), nodes.len() + 1];
            for (k, (g, m, s)) in [(ga, a, sa), (gb, b, sb)].into_iter().enumerate() {
                let count = m.len();
                nodes.push(Node {
                    id: ids[k],
                    parent: Some(id),
                    depth,
                    geometry: g,
                    members: m,
                    count,
                    mean: s / count as f64,
                    split: None,
                    children: None,
                    flipped: false,
                    w: None,
                    w_shrunk: None,
                });
                queue.push_back(ids[k]);
            }
            let n = &mut nodes[id];
            n.geometry = cell.geometry;
            n.split = Some(kind);
            n.children = Some(ids);
            n.w = Some(w);
        }
        UhTree { nodes }
    }

    /// Single-node tree over `members`.
    pub fn leaf(geometry: Geometry, members: Vec<usize>, y: &[f64]) -> UhTree {
        let count = members.len();
        let mean = if count == 0 { 0.0 } else { members.iter().map(|&i| y[i]).sum::<f64>() / count as f64 };
        UhTree {
            nodes: vec![Node {
                id: 0,
                parent: None,
                depth: 0,
                geometry,
                members,
                count,
                mean,
                split: None,
                children: None,
                flipped: false,
                w: None,
                w_shrunk: None,
            }],
        }
    }

    /// (plus child, minus child, u) for the child of internal node `id` that holds `p`.
    fn step(&self, id: usize, p: &[f64]) -> (usize, f64) {
        let node = &self.nodes[id];
        let [a, b] = node.children.expect("internal node");
        let first = node.split.as_ref().expect("internal node").first(p);
        let child = if first { a } else { b };
        let plus = first != node.flipped;
        (child, if plus { 1.0 } else { -1.0 })
    }

    /// Path normalizer `c = sqrt(n) (n+/n-)^(u/2)` is applied as `u w / c`.
    fn increment(&self, id: usize, u: f64, which: Coefficients) -> f64 {
        let node = &self.nodes[id];
        let [a, b] = node.children.expect("internal node");
        let (np, nm) = if node.flipped {
            (self.nodes[b].count as f64, self.nodes[a].count as f64)
        } else {
            (self.nodes[a].count as f64, self.nodes[b].count as f64)
        };
        let w = match which {
            Coefficients::Raw => node.w.unwrap_or(0.0),
            Coefficients::Shrunk => node.w_shrunk.or(node.w).unwrap_or(0.0),
        };
        let n = node.count as f64;
        let c = if u > 0.0 { (n * np / nm).sqrt() } else { (n * nm / np).sqrt() };
        u * w / c
    }

    /// Leaf id reached by `p`.
    pub fn leaf_of(&self, p: &[f64]) -> usize {
        let mut id = 0;
        while !self.nodes[id].is_leaf() {
            id = self.step(id, p).0;
        }
        id
    }

    /// Reconstruction without the root-domain check.
    pub fn eval(&self, p: &[f64], which: Coefficients) -> f64 {
        let mut value = self.nodes[0].mean;
        let mut id = 0;
        while !self.nodes[id].is_leaf() {
            let (child, u) = self.step(id, p);
            value += self.increment(id, u, which);
            id = child;
        }
        value
    }

    pub fn reconstruct(&self, p: &[f64], which: Coefficients) -> Result<f64> {
        let inside = match &self.nodes[0].geometry {
            Geometry::Triangle { triangle } => triangle.contains_eps(&to_vec3(p), 1e-9),
            g => g.contains(p),
        };
        if !inside {
            return Err(UhwtError::OutOfDomain);
        }
        Ok(self.eval(p, which))
    }

    /// Reconstruction value on every node's region, top-down.
    pub fn node_values(&self, which: Coefficients) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        v[0] = self.nodes[0].mean;
        for node in &self.nodes {
            if let Some([a, b]) = node.children {
                let (ua, ub) = if node.flipped { (-1.0, 1.0) } else { (1.0, -1.0) };
                v[a] = v[node.id] + self.increment(node.id, ua, which);
                v[b] = v[node.id] + self.increment(node.id, ub, which);
            }
        }
        v
    }

    /// Fitted values at training members; entries outside the tree are untouched.
    pub fn fit_values_into(&self, which: Coefficients, out: &mut [f64]) {
        let v = self.node_values(which);
        for node in &self.nodes {
            if node.is_leaf() {
                for &i in &node.members {
                    out[i] = v[node.id];
                }
            }
        }
    }

    /// Soft-threshold every internal coefficient at `tau`.
    pub fn shrink(&mut self, tau: f64) {
        for node in &mut self.nodes {
            node.w_shrunk = node.w.map(|w| crate::stats::soft_threshold(w, tau));
        }
    }

    /// Swap the plus/minus labels of node `id`.
    pub fn swap_labels(&mut self, id: usize) {
        let node = &mut self.nodes[id];
        if node.is_leaf() {
            return;
        }
        node.flipped = !node.flipped;
        node.w = node.w.map(|w| -w);
        node.w_shrunk = node.w_shrunk.map(|w| -w);
    }

    /// Atom of internal node `id` with levels oriented by its labels.
    pub fn atom(&self, id: usize) -> Option<UhAtom> {
        let node = &self.nodes[id];
        let [a, b] = node.children?;
        let (na, nb) = (self.nodes[a].count, self.nodes[b].count);
        let (first, second) = if node.flipped {
            let (p, m) = atom_levels(nb, na);
            (m, p)
        } else {
            atom_levels(na, nb)
        };
        Some(UhAtom {
            kind: node.split.clone()?,
            support: node.geometry.clone(),
            value_plus: first,
            value_minus: second,
        })
    }

    /// Atom values at the training members of node `id` (zero elsewhere).
    pub fn atom_on_members(&self, id: usize, n: usize) -> Option<Vec<f64>> {
        let node = &self.nodes[id];
        let [a, b] = node.children?;
        let (na, nb) = (self.nodes[a].count, self.nodes[b].count);
        let (vp, vm) = atom_levels(na, nb);
        let s = if node.flipped { -1.0 } else { 1.0 };
        let mut out = vec![0.0; n];
        for &i in &self.nodes[a].members {
            out[i] = s * vp;
        }
        for &i in &self.nodes[b].members {
            out[i] = s * vm;
        }
        Some(out)
    }

    pub fn to_record(&self) -> TreeRecord {
        TreeRecord {
            root_geometry: self.nodes[0].geometry.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    parent: n.parent,
                    depth: n.depth,
                    split: n.split.clone(),
                    children: n.children,
                    flipped: n.flipped,
                    w: n.w,
                    w_shrunk: n.w_shrunk,
                    member_count: n.count,
                    mean: n.mean,
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &TreeRecord) -> Result<UhTree> {
        if rec.nodes.is_empty() {
            return Err(UhwtError::EmptyInput);
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(rec.nodes.len());
        for (k, r) in rec.nodes.iter().enumerate() {
            if r.id != k || r.split.is_some() != r.children.is_some() || r.split.is_some() != r.w.is_some() {
                return Err(UhwtError::Parse(format!("malformed node record {k}")));
            }
            if let Some([a, b]) = r.children {
                if a >= rec.nodes.len() || b >= rec.nodes.len() {
                    return Err(UhwtError::Parse(format!("child id out of range at node {k}")));
                }
            }
            nodes.push(Node {
                id: r.id,
                parent: r.parent,
                depth: r.depth,
                geometry: Geometry::Whole,
                members: Vec::new(),
                count: r.member_count,
                mean: r.mean,
                split: r.split.clone(),
                children: r.children,
                flipped: r.flipped,
                w: r.w,
                w_shrunk: r.w_shrunk,
            });
        }
        nodes[0].geometry = rec.root_geometry.clone();
        for k in 0..nodes.len() {
            if let Some(g) = nodes[k].split.as_ref().and_then(|s| s.parent_geometry()) {
                nodes[k].geometry = g;
            }
        }
        Ok(UhTree { nodes })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<UhTree> {
        UhTree::from_record(&serde_json::from_str(s)?)
    }
}

pub fn reconstruct(tree: &UhTree, p: &[f64], which: Coefficients) -> Result<f64> {
    tree.reconstruct(p, which)
}

/// Fitted values at all training locations of `data`.
pub fn tree_fit_values(tree: &UhTree, data: &Dataset, which: Coefficients) -> Vec<f64> {
    let mut out = vec![tree.intercept(); data.n()];
    tree.fit_values_into(which, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub split: Option<SplitKind>,
    pub children: Option<[usize; 2]>,
    #[serde(default)]
    pub flipped: bool,
    pub w: Option<f64>,
    #[serde(rename = "w_tilde")]
    pub w_shrunk: Option<f64>,
    pub member_count: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub root_geometry: Geometry,
    pub nodes: Vec<NodeRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::scattered(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), ys.to_vec()).unwrap()
    }

    /// Full binary tree on a 1-D line, splitting each cell at its middle member.
    fn halving_tree(data: &Dataset) -> UhTree {
        let params = GrowParams { max_depth: 64, min_leaf: 1, stop_threshold: 0.0 };
        let y = data.responses().to_vec();
        UhTree::grow(data, &y, data.root_cell(), &params, |cell| {
            let k = cell.members.len() / 2;
            let x0 = data.point(cell.members[k - 1])[0];
            let x1 = data.point(cell.members[k])[0];
            Some(SplitKind::Axis { dim: 0, threshold: 0.5 * (x0 + x1) })
        })
    }

    #[test]
    fn atom_level_examples() {
        let (p, m) = atom_levels(1, 1);
        assert_abs_diff_eq!(p, 0.707107, epsilon = 1e-6);
        assert_abs_diff_eq!(m, -0.707107, epsilon = 1e-6);
        let (p, m) = atom_levels(3, 1);
        assert_abs_diff_eq!(p, 0.288675, epsilon = 1e-6);
        assert_abs_diff_eq!(m, -0.866025, epsilon = 1e-6);
        assert_abs_diff_eq!(3.0 * p + m, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cell_mass_examples() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cell_mass(&d.root_cell()), 4);
        let empty = Cell::from_geometry(Geometry::Box { lo: vec![10.0], hi: vec![11.0] }, &d, 0);
        assert_eq!(cell_mass(&empty), 0);
        let split = Split::new(SplitKind::Axis { dim: 0, threshold: 1.5 }, &d.root_cell(), &d);
        let [l, r] = split.children(&d.root_cell());
        assert_eq!(l.mass() + r.mass(), 4);
    }

    #[test]
    fn atom_is_zero_outside_support() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        let root = d.root_cell();
        let split = Split::new(SplitKind::Axis { dim: 0, threshold: 0.5 }, &root, &d);
        let atom = uh_atom(&split, &root).unwrap();
        assert_eq!(atom.eval(&[100.0]), 0.0);
        assert!(atom.eval(&[0.0]) > 0.0);
    }

    #[test]
    fn empty_group_is_rejected() {
        let d = line(&[0.0, 1.0], &[1.0, 2.0]);
        let root = d.root_cell();
        let split = Split::new(SplitKind::Axis { dim: 0, threshold: 5.0 }, &root, &d);
        assert!(matches!(uh_atom(&split, &root), Err(UhwtError::EmptyChild)));
        assert!(matches!(uh_coefficient(&split, d.responses()), Err(UhwtError::EmptyChild)));
    }

    #[test]
    fn coefficient_examples() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 2.0, 2.0]);
        let root = d.root_cell();
        let split = Split::new(SplitKind::Axis { dim: 0, threshold: 1.5 }, &root, &d);
        assert_abs_diff_eq!(uh_coefficient(&split, d.responses()).unwrap(), -2.0, epsilon = 1e-15);
        let c = line(&[0.0, 1.0, 2.0], &[0.7, 0.7, 0.7]);
        let s = Split::new(SplitKind::Axis { dim: 0, threshold: 0.5 }, &c.root_cell(), &c);
        assert_abs_diff_eq!(uh_coefficient(&s, c.responses()).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coefficient_is_inner_product_with_atom() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let ys = [0.3, -1.2, 4.0, 2.2, 0.0, 1.5, -0.7, 3.3, 0.9];
        let d = line(&xs, &ys);
        let root = d.root_cell();
        for t in [0.5, 2.5, 5.5, 7.5] {
            let split = Split::new(SplitKind::Axis { dim: 0, threshold: t }, &root, &d);
            let atom = uh_atom(&split, &root).unwrap();
            let ip: f64 = (0..9).map(|i| ys[i] * atom.eval(d.point(i))).sum();
            assert_abs_diff_eq!(ip, uh_coefficient(&split, &ys).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn root_only_tree_gives_mean() {
        let d = line(&[0.0, 1.0, 2.0], &[1.0, 2.0, 6.0]);
        let t = UhTree::leaf(d.bounding_box(), vec![0, 1, 2], d.responses());
        assert_abs_diff_eq!(t.reconstruct(&[0.2], Coefficients::Raw).unwrap(), 3.0, epsilon = 1e-15);
        assert!(matches!(t.reconstruct(&[9.0], Coefficients::Raw), Err(UhwtError::OutOfDomain)));
    }

    #[test]
    fn full_tree_reconstructs_exactly() {
        let ys = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0];
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &ys);
        let t = halving_tree(&d);
        assert_eq!(t.leaf_ids().count(), 7);
        for i in 0..7 {
            let v = t.reconstruct(d.point(i), Coefficients::Raw).unwrap();
            assert!((v - ys[i]).abs() <= 1e-12 * ys[i].abs().max(1.0));
        }
        let fit = tree_fit_values(&t, &d, Coefficients::Raw);
        for i in 0..7 {
            assert!((fit[i] - ys[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zeroed_coefficients_give_constant() {
        let ys = [3.0, -1.0, 4.0, 1.0, -5.0];
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0], &ys);
        let mut t = halving_tree(&d);
        for n in &mut t.nodes {
            n.w = n.w.map(|_| 0.0);
        }
        for v in tree_fit_values(&t, &d, Coefficients::Raw) {
            assert_abs_diff_eq!(v, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn label_swap_is_invariant() {
        let ys = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0];
        let d = line(&(0..8).map(|i| i as f64).collect::<Vec<_>>(), &ys);
        let t = halving_tree(&d);
        let internal: Vec<usize> = t.internal_ids().collect();
        for &j in &internal {
            let mut s = t.clone();
            s.swap_labels(j);
            for q in [0.1, 1.2, 2.7, 3.3, 5.0, 6.9] {
                let a = t.eval(&[q], Coefficients::Raw);
                let b = s.eval(&[q], Coefficients::Raw);
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip_is_bit_faithful() {
        let ys = [0.1, 1.0 / 3.0, -2.0f64.sqrt(), 1e-300, 7.5];
        let d = line(&[0.0, 0.25, 0.5, 0.75, 1.0], &ys);
        let mut t = halving_tree(&d);
        t.shrink(0.01);
        let json = t.to_json().unwrap();
        let back = UhTree::from_json(&json).unwrap();
        for (a, b) in t.nodes.iter().zip(&back.nodes) {
            assert_eq!(a.w.map(f64::to_bits), b.w.map(f64::to_bits));
            assert_eq!(a.w_shrunk.map(f64::to_bits), b.w_shrunk.map(f64::to_bits));
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.split, b.split);
        }
        for q in [0.0, 0.3, 0.9] {
            assert_eq!(t.eval(&[q], Coefficients::Shrunk).to_bits(), back.eval(&[q], Coefficients::Shrunk).to_bits());
        }
        assert!(json.contains("\"kind\":\"axis\""));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::scattered(&[vec![1.0], vec![1.0]], vec![0.0, 1.0]).is_err());
        assert!(Dataset::sphere(&[[1.0, 0.0, 0.1]], vec![0.0]).is_err());
        assert!(Dataset::grid(&[2, 2], vec![0.0; 3]).is_err());
        let g = Dataset::grid(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(g.point(4), &[1.0, 1.0]);
    }
}
