//! Random UHWT prior, exact posterior recursion and posterior tree sampling.
//!
//! Trees here are axis-aligned: a split `(d, l)` sends `x_d < l` to the first
//! child. Split locations are uniform over admissible thresholds (midpoints
//! between consecutive distinct coordinates of the cell's points), so every
//! integral over `B` is a finite sum.

pub mod backfit;
pub mod mcmc;

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};
use crate::partition::{atom_levels, contrast, Dataset, Domain, SplitKind, UhTree};

pub use backfit::{backfit, conjugate_posterior, posterior_summary, BackfitParams, DrawRecord, PosteriorDraws, PosteriorSummary};
pub use mcmc::{log_acceptance, mcmc_step, move_log_prob, run_chain, ChainParams, Move, Target};

/// Default cap on distinct memoized cells in [`Phi`].
pub const PHI_CELL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuhwtPrior {
    /// p_split(depth) = split_base * split_decay^depth.
    pub split_base: f64,
    pub split_decay: f64,
    pub max_depth: usize,
    /// Relative weights for split dimensions; uniform when absent.
    pub dim_weights: Option<Vec<f64>>,
    /// Always split non-atomic cells (no stop branch).
    pub no_stop: bool,
}

impl Default for RuhwtPrior {
    fn default() -> Self {
        RuhwtPrior { split_base: 0.99, split_decay: 0.499, max_depth: 32, dim_weights: None, no_stop: false }
    }
}

impl RuhwtPrior {
    pub fn p_split(&self, depth: usize) -> f64 {
        if self.no_stop {
            1.0
        } else {
            self.split_base * self.split_decay.powi(depth as i32)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.split_base) && (0.0..=1.0).contains(&self.split_decay);
        if !ok {
            return Err(UhwtError::PreconditionViolated("split probability must lie in [0, 1)".into()));
        }
        if let Some(w) = &self.dim_weights {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(UhwtError::PreconditionViolated("dimension weights must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// lambda over the given valid dimensions.
    pub fn dim_probs(&self, dims: &[usize]) -> Vec<f64> {
        let raw: Vec<f64> = match &self.dim_weights {
            Some(w) => dims.iter().map(|&d| w.get(d).copied().unwrap_or(0.0)).collect(),
            None => vec![1.0; dims.len()],
        };
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    }
}

/// Prior on a single coefficient, with any latent variable integrated out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefPrior {
    Gaussian { sigma_w: f64 },
    Laplace { scale: f64 },
    /// Slab N(0, sigma_slab^2) with inclusion probability `pi`, observed with noise.
    SpikeSlab { pi: f64, sigma_slab: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModel {
    pub prior: CoefPrior,
    /// Noise standard deviation.
    pub sigma: f64,
}

fn log_normal_pdf(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - x * x / (2.0 * var)
}

impl CoefPrior {
    pub fn log_marginal(&self, w: f64, sigma: f64) -> f64 {
        match *self {
            CoefPrior::Gaussian { sigma_w } => log_normal_pdf(w, sigma_w * sigma_w),
            CoefPrior::Laplace { scale } => -(2.0 * scale).ln() - w.abs() / scale,
            CoefPrior::SpikeSlab { pi, sigma_slab } => {
                let slab = log_normal_pdf(w, sigma_slab * sigma_slab + sigma * sigma);
                let spike = log_normal_pdf(w, sigma * sigma);
                log_add(pi.ln() + slab, (1.0 - pi).ln() + spike)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CoefPrior::Gaussian { sigma_w } => sigma_w > 0.0,
            CoefPrior::Laplace { scale } => scale > 0.0,
            CoefPrior::SpikeSlab { pi, sigma_slab } => (0.0..=1.0).contains(&pi) && sigma_slab > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(UhwtError::PreconditionViolated(format!("invalid coefficient prior {self:?}")))
        }
    }
}

impl CoefficientModel {
    pub fn gaussian(sigma_w: f64, sigma: f64) -> Self {
        CoefficientModel { prior: CoefPrior::Gaussian { sigma_w }, sigma }
    }

    /// Marginal density M(w).
    pub fn marginal(&self, w: f64) -> f64 {
        self.log_marginal(w).exp()
    }

    pub fn log_marginal(&self, w: f64) -> f64 {
        self.prior.log_marginal(w, self.sigma)
    }

    /// log of exp(-SSE / (2 sigma^2)) (2 pi sigma^2)^(-(n-1)/2): the density of
    /// the n - 1 within-cell contrasts of a leaf.
    pub fn log_leaf(&self, n: usize, sse: f64) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let var = self.sigma * self.sigma;
        -sse / (2.0 * var) - 0.5 * (n - 1) as f64 * (2.0 * PI * var).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(UhwtError::PreconditionViolated("noise sigma must be positive".into()));
        }
        self.prior.validate()
    }
}

/// Density of w_{d,l}(A) for the split of `members` at `(d, l)`.
pub fn marginal_m(data: &Dataset, y: &[f64], members: &[usize], dim: usize, threshold: f64, model: &CoefficientModel) -> f64 {
    let (a, b) = split_members(data, members, dim, threshold);
    model.marginal(members_contrast(y, &a, &b))
}

/// Top-down Markov chain of latent node states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMarkov {
    /// `kernels[j][s][s']`; depths beyond the list reuse the last kernel.
    pub kernels: Vec<Vec<Vec<f64>>>,
    /// Coefficient prior in each state.
    pub models: Vec<CoefPrior>,
}

impl LatentMarkov {
    pub fn states(&self) -> usize {
        self.models.len()
    }

    pub fn kernel(&self, depth: usize) -> &Vec<Vec<f64>> {
        &self.kernels[depth.min(self.kernels.len() - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states();
        if k == 0 || self.kernels.is_empty() {
            return Err(UhwtError::PreconditionViolated("latent chain needs states and kernels".into()));
        }
        for kern in &self.kernels {
            if kern.len() != k || kern.iter().any(|row| row.len() != k) {
                return Err(UhwtError::PreconditionViolated("kernel shape does not match state count".into()));
            }
            for row in kern {
                if row.iter().any(|v| *v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(UhwtError::PreconditionViolated("kernel rows must be distributions".into()));
                }
            }
        }
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub(crate) fn log_sum(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::NEG_INFINITY, log_add)
}

/// Midpoints between consecutive distinct coordinates along `dim`.
pub fn admissible_thresholds(data: &Dataset, members: &[usize], dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = members.iter().map(|&i| data.point(i)[dim]).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Valid dimensions with their admissible thresholds.
pub fn split_options(data: &Dataset, members: &[usize]) -> Vec<(usize, Vec<f64>)> {
    (0..data.dim())
        .map(|d| (d, admissible_thresholds(data, members, d)))
        .filter(|(_, t)| !t.is_empty())
        .collect()
}

pub fn split_members(data: &Dataset, members: &[usize], dim: usize, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    members.iter().partition(|&&i| data.point(i)[dim] < threshold)
}

pub(crate) fn members_contrast(y: &[f64], a: &[usize], b: &[usize]) -> f64 {
    let sa: f64 = a.iter().map(|&i| y[i]).sum();
    let sb: f64 = b.iter().map(|&i| y[i]).sum();
    contrast(a.len() as f64, sa, b.len() as f64, sb)
}

pub(crate) fn members_sse(y: &[f64], m: &[usize]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mean = m.iter().map(|&i| y[i]).sum::<f64>() / m.len() as f64;
    m.iter().map(|&i| (y[i] - mean).powi(2)).sum()
}

/// Log prior probability of choosing `(dim, threshold)` given that `members` splits.
pub fn log_split_choice(prior: &RuhwtPrior, options: &[(usize, Vec<f64>)], dim: usize) -> f64 {
    let dims: Vec<usize> = options.iter().map(|o| o.0).collect();
    let lambda = prior.dim_probs(&dims);
    match options.iter().position(|o| o.0 == dim) {
        Some(k) => lambda[k].ln() - (options[k].1.len() as f64).ln(),
        None => f64::NEG_INFINITY,
    }
}

fn check_axis_domain(data: &Dataset) -> Result<()> {
    match data.domain() {
        Domain::Sphere => Err(UhwtError::PreconditionViolated("axis-aligned trees need a grid or scattered dataset".into())),
        _ => Ok(()),
    }
}

/// Bottom-up marginal likelihood recursion, memoized on (cell, depth, state).
pub struct Phi<'a> {
    data: &'a Dataset,
    y: &'a [f64],
    prior: &'a RuhwtPrior,
    model: &'a CoefficientModel,
    latent: Option<&'a LatentMarkov>,
    cap: usize,
    memo: HashMap<(Vec<usize>, usize, usize), f64>,
}

impl<'a> Phi<'a> {
    pub fn new(data: &'a Dataset, y: &'a [f64], prior: &'a RuhwtPrior, model: &'a CoefficientModel) -> Result<Self> {
        check_axis_domain(data)?;
        prior.validate_for_phi()?;
        model.validate()?;
        if y.len() != data.n() {
            return Err(UhwtError::DimensionMismatch { expected: data.n(), found: y.len() });
        }
        Ok(Phi { data, y, prior, model, latent: None, cap: PHI_CELL_CAP, memo: HashMap::new() })
    }

    pub fn with_latent(mut self, latent: &'a LatentMarkov) -> Result<Self> {
        latent.validate()?;
        self.latent = Some(latent);
        self.memo.clear();
        Ok(self)
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn cells(&self) -> usize {
        self.memo.len()
    }

    /// log Phi of the root. With latent states, `state` is the root's parent state.
    pub fn log_phi_root(&mut self, state: Option<usize>) -> Result<f64> {
        let members: Vec<usize> = (0..self.data.n()).collect();
        self.log_phi(&members, 0, state)
    }

    pub fn phi_root(&mut self, state: Option<usize>) -> Result<f64> {
        Ok(self.log_phi_root(state)?.exp())
    }

    fn log_stop(&self, members: &[usize]) -> f64 {
        self.model.log_leaf(members.len(), members_sse(self.y, members))
    }

    pub fn log_phi(&mut self, members: &[usize], depth: usize, state: Option<usize>) -> Result<f64> {
        if members.len() <= 1 {
            return Ok(0.0);
        }
        let key = (members.to_vec(), depth, state.unwrap_or(usize::MAX));
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let options = if depth < self.prior.max_depth { split_options(self.data, members) } else { Vec::new() };
        let value = if options.is_empty() {
            self.log_stop(members)
        } else {
            let p = self.prior.p_split(depth);
            let stop = if p < 1.0 { (1.0 - p).ln() + self.log_stop(members) } else { f64::NEG_INFINITY };
            let split = match (self.latent, state) {
                (Some(lat), Some(s)) => {
                    let row = lat.kernel(depth)[s].clone();
                    let mut acc = f64::NEG_INFINITY;
                    for (s2, rho) in row.iter().enumerate() {
                        if *rho > 0.0 {
                            let model = CoefficientModel { prior: lat.models[s2], sigma: self.model.sigma };
                            acc = log_add(acc, rho.ln() + self.log_split_sum(members, depth, &options, &model, Some(s2))?);
                        }
                    }
                    acc
                }
                (Some(_), None) => {
                    return Err(UhwtError::PreconditionViolated("latent recursion needs a parent state".into()))
                }
                _ => {
                    let model = *self.model;
                    self.log_split_sum(members, depth, &options, &model, None)?
                }
            };
            let split = if p > 0.0 { p.ln() + split } else { f64::NEG_INFINITY };
            log_add(stop, split)
        };
        if self.memo.len() >= self.cap {
            return Err(UhwtError::ExplosionGuard(self.cap));
        }
        self.memo.insert(key, value);
        Ok(value)
    }

    /// log sum over (d, l) of lambda_d B(l) M(w) Phi(l) Phi(r).
    fn log_split_sum(
        &mut self,
        members: &[usize],
        depth: usize,
        options: &[(usize, Vec<f64>)],
        model: &CoefficientModel,
        state: Option<usize>,
    ) -> Result<f64> {
        let mut acc = f64::NEG_INFINITY;
        for (d, ts) in options {
            let choice = log_split_choice(self.prior, options, *d);
            for &t in ts {
                acc = log_add(acc, choice + self.log_split_term(members, depth, *d, t, model, state)?);
            }
        }
        Ok(acc)
    }

    fn log_split_term(
        &mut self,
        members: &[usize],
        depth: usize,
        dim: usize,
        threshold: f64,
        model: &CoefficientModel,
        state: Option<usize>,
    ) -> Result<f64> {
        let (a, b) = split_members(self.data, members, dim, threshold);
        let w = members_contrast(self.y, &a, &b);
        Ok(model.log_marginal(w) + self.log_phi(&a, depth + 1, state)? + self.log_phi(&b, depth + 1, state)?)
    }

    /// Posterior probabilities of stopping and of each split at a cell (no latent states).
    pub fn split_posterior(&mut self, members: &[usize], depth: usize) -> Result<Vec<(SplitChoice, f64)>> {
        let options = if depth < self.prior.max_depth && members.len() > 1 {
            split_options(self.data, members)
        } else {
            Vec::new()
        };
        if options.is_empty() {
            return Ok(vec![(SplitChoice::Stop, 1.0)]);
        }
        let p = self.prior.p_split(depth);
        let model = *self.model;
        let mut logs = Vec::new();
        if p < 1.0 {
            logs.push((SplitChoice::Stop, (1.0 - p).ln() + self.log_stop(members)));
        }
        for (d, ts) in &options {
            let choice = log_split_choice(self.prior, &options, *d);
            for &t in ts {
                let term = p.ln() + choice + self.log_split_term(members, depth, *d, t, &model, None)?;
                logs.push((SplitChoice::Split { dim: *d, threshold: t }, term));
            }
        }
        let total = log_sum(logs.iter().map(|l| l.1));
        Ok(logs.into_iter().map(|(c, l)| (c, (l - total).exp())).collect())
    }
}

impl RuhwtPrior {
    fn validate_for_phi(&self) -> Result<()> {
        if self.no_stop {
            Ok(())
        } else {
            self.validate()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitChoice {
    Stop,
    Split { dim: usize, threshold: f64 },
}

/// Draw stop or `(d, l)` from the exact posterior at a cell.
pub fn posterior_split_sample<R: Rng + ?Sized>(phi: &mut Phi, members: &[usize], depth: usize, rng: &mut R) -> Result<SplitChoice> {
    let probs = phi.split_posterior(members, depth)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in &probs {
        acc += p;
        if u < acc {
            return Ok(*c);
        }
    }
    Ok(probs.last().map(|c| c.0).unwrap_or(SplitChoice::Stop))
}

/// Exact posterior tree draw by recursive sequential sampling.
pub fn sample_posterior_tree<R: Rng + ?Sized>(phi: &mut Phi, rng: &mut R) -> Result<BTree> {
    let data = phi.data;
    let mut tree = BTree::new(data.n());
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let (members, depth) = {
            let n = tree.node(id);
            (n.members.clone(), n.depth)
        };
        if let SplitChoice::Split { dim, threshold } = posterior_split_sample(phi, &members, depth, rng)? {
            let kids = tree.split_leaf(id, dim, threshold, data);
            stack.extend(kids);
        }
    }
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BNode {
    pub depth: usize,
    /// Sorted training indices in the cell.
    pub members: Vec<usize>,
    pub split: Option<(usize, f64)>,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
    /// Sampled coefficient (backfitting); zero otherwise.
    pub theta: f64,
}

impl BNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Arena tree used by the samplers. Node 0 is the root; pruned slots are reused.
#[derive(Debug, Clone, PartialEq)]
pub struct BTree {
    slots: Vec<Option<BNode>>,
    free: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BTreeRecord {
    Leaf { count: usize },
    Split { dim: usize, threshold: f64, theta: f64, children: Box<[BTreeRecord; 2]> },
}

impl BTree {
    pub fn new(n: usize) -> Self {
        let root = BNode { depth: 0, members: (0..n).collect(), split: None, children: None, parent: None, theta: 0.0 };
        BTree { slots: vec![Some(root)], free: Vec::new() }
    }

    pub fn node(&self, id: usize) -> &BNode {
        self.slots[id].as_ref().expect("live node")
    }

    pub fn node_mut(&mut self, id: usize) -> &mut BNode {
        self.slots[id].as_mut().expect("live node")
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i)
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.ids().filter(|&i| self.node(i).is_leaf()).collect()
    }

    pub fn internal(&self) -> Vec<usize> {
        self.ids().filter(|&i| !self.node(i).is_leaf()).collect()
    }

    pub fn len(&self) -> usize {
        self.slots.len() - self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn alloc(&mut self, node: BNode) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(node);
                i
            }
            None => {
                self.slots.push(Some(node));
                self.slots.len() - 1
            }
        }
    }

    /// Split a leaf; both sides must be nonempty.
    pub fn split_leaf(&mut self, id: usize, dim: usize, threshold: f64, data: &Dataset) -> [usize; 2] {
        let (members, depth) = {
            let n = self.node(id);
            debug_assert!(n.is_leaf());
            (n.members.clone(), n.depth)
        };
        let (a, b) = split_members(data, &members, dim, threshold);
        debug_assert!(!a.is_empty() && !b.is_empty());
        let mk = |m: Vec<usize>| BNode { depth: depth + 1, members: m, split: None, children: None, parent: Some(id), theta: 0.0 };
        let ia = self.alloc(mk(a));
        let ib = self.alloc(mk(b));
        let n = self.node_mut(id);
        n.split = Some((dim, threshold));
        n.children = Some([ia, ib]);
        [ia, ib]
    }

    /// Remove the (leaf) children of `id`.
    pub fn prune(&mut self, id: usize) {
        let kids = self.node_mut(id).children.take();
        self.node_mut(id).split = None;
        self.node_mut(id).theta = 0.0;
        if let Some(k) = kids {
            for c in k {
                debug_assert!(self.node(c).is_leaf());
                self.slots[c] = None;
                self.free.push(c);
            }
        }
    }

    /// Canonical string for the split structure.
    pub fn key(&self) -> String {
        fn rec(t: &BTree, id: usize, out: &mut String) {
            let n = t.node(id);
            match (n.split, n.children) {
                (Some((d, l)), Some([a, b])) => {
                    out.push_str(&format!("({d}:{l} "));
                    rec(t, a, out);
                    out.push(' ');
                    rec(t, b, out);
                    out.push(')');
                }
                _ => out.push('.'),
            }
        }
        let mut s = String::new();
        rec(self, 0, &mut s);
        s
    }

    pub fn to_record(&self) -> BTreeRecord {
        fn rec(t: &BTree, id: usize) -> BTreeRecord {
            let n = t.node(id);
            match (n.split, n.children) {
                (Some((dim, threshold)), Some([a, b])) => {
                    BTreeRecord::Split { dim, threshold, theta: n.theta, children: Box::new([rec(t, a), rec(t, b)]) }
                }
                _ => BTreeRecord::Leaf { count: n.members.len() },
            }
        }
        rec(self, 0)
    }

    /// Same partition as a [`UhTree`] with coefficients computed from `y`.
    pub fn to_uh_tree(&self, data: &Dataset, y: &[f64]) -> Result<UhTree> {
        check_axis_domain(data)?;
        let by_members: HashMap<&[usize], (usize, f64)> =
            self.ids().filter_map(|i| self.node(i).split.map(|s| (self.node(i).members.as_slice(), s))).collect();
        Ok(UhTree::assemble(data, y, data.root_cell(), |cell| {
            let mut m = cell.members.clone();
            m.sort_unstable();
            by_members.get(m.as_slice()).map(|&(dim, threshold)| SplitKind::Axis { dim, threshold })
        }))
    }

    /// sum over internal nodes of theta * psi at every training point.
    pub fn fitted(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.add_fitted(&mut out, 1.0);
        out
    }

    pub fn add_fitted(&self, out: &mut [f64], scale: f64) {
        for id in self.internal() {
            let node = self.node(id);
            if node.theta == 0.0 {
                continue;
            }
            let [a, b] = node.children.expect("internal");
            let (ma, mb) = (&self.node(a).members, &self.node(b).members);
            let (pa, pb) = atom_levels(ma.len(), mb.len());
            for &i in ma {
                out[i] += scale * node.theta * pa;
            }
            for &i in mb {
                out[i] += scale * node.theta * pb;
            }
        }
    }

    /// UH coefficient of every internal node for responses `y`.
    pub fn coefficients(&self, y: &[f64]) -> Vec<(usize, f64)> {
        self.internal()
            .into_iter()
            .map(|id| {
                let [a, b] = self.node(id).children.expect("internal");
                (id, members_contrast(y, &self.node(a).members, &self.node(b).members))
            })
            .collect()
    }
}

/// Recursive prior draw: stop with probability 1 - p_split(depth), otherwise
/// d ~ lambda and l uniform over admissible thresholds.
pub fn sample_prior_btree<R: Rng + ?Sized>(prior: &RuhwtPrior, data: &Dataset, rng: &mut R) -> Result<BTree> {
    prior.validate_for_phi()?;
    let mut tree = BTree::new(data.n());
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        let (members, depth) = {
            let n = tree.node(id);
            (n.members.clone(), n.depth)
        };
        if depth >= prior.max_depth || members.len() < 2 {
            continue;
        }
        let options = split_options(data, &members);
        if options.is_empty() || rng.random::<f64>() >= prior.p_split(depth) {
            continue;
        }
        let dims: Vec<usize> = options.iter().map(|o| o.0).collect();
        let lambda = prior.dim_probs(&dims);
        let k = sample_index(&lambda, rng);
        let ts = &options[k].1;
        let t = ts[rng.random_range(0..ts.len())];
        stack.extend(tree.split_leaf(id, options[k].0, t, data));
    }
    Ok(tree)
}

pub fn sample_prior_tree<R: Rng + ?Sized>(prior: &RuhwtPrior, data: &Dataset, rng: &mut R) -> Result<UhTree> {
    sample_prior_btree(prior, data, rng)?.to_uh_tree(data, data.responses())
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn line(xs: &[f64], y: &[f64]) -> Dataset {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Dataset::scattered(&pts, y.to_vec()).unwrap()
    }

    #[test]
    fn gaussian_marginal_at_zero() {
        let m = CoefficientModel::gaussian(1.0, 0.5);
        assert!((m.marginal(0.0) - 0.398942280401).abs() < 1e-9);
    }

    #[test]
    fn spike_slab_without_slab_is_spike() {
        let m = CoefficientModel { prior: CoefPrior::SpikeSlab { pi: 0.0, sigma_slab: 3.0 }, sigma: 0.7 };
        let spike = CoefficientModel::gaussian(0.7, 0.7);
        for w in [-2.0, 0.0, 0.3, 1.5] {
            assert_eq!(m.log_marginal(w), spike.log_marginal(w));
        }
    }

    #[test]
    fn atomic_cell_has_unit_phi() {
        let d = line(&[0.0], &[3.0]);
        let (p, m) = (RuhwtPrior::default(), CoefficientModel::gaussian(1.0, 1.0));
        let mut phi = Phi::new(&d, d.responses(), &p, &m).unwrap();
        assert_eq!(phi.phi_root(None).unwrap(), 1.0);
    }

    #[test]
    fn two_points_always_split_gives_m() {
        let d = line(&[0.0, 1.0], &[1.0, 2.5]);
        let prior = RuhwtPrior { split_base: 1.0, no_stop: true, ..Default::default() };
        let m = CoefficientModel::gaussian(1.3, 1.0);
        let mut phi = Phi::new(&d, d.responses(), &prior, &m).unwrap();
        let w = contrast(1.0, 1.0, 1.0, 2.5);
        assert!((phi.phi_root(None).unwrap() - m.marginal(w)).abs() < 1e-15);
    }

    #[test]
    fn prior_never_splitting_gives_root() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]);
        let prior = RuhwtPrior { split_base: 0.0, ..Default::default() };
        let mut rng = stream(1, "t", 0);
        for _ in 0..20 {
            assert_eq!(sample_prior_btree(&prior, &d, &mut rng).unwrap().len(), 1);
        }
    }

    #[test]
    fn root_split_rate_matches_prior() {
        let d = line(&[0.0, 1.0, 2.0], &[0.0; 3]);
        let prior = RuhwtPrior::default();
        let mut rng = stream(2, "t", 0);
        let n = 100_000;
        let splits = (0..n).filter(|_| sample_prior_btree(&prior, &d, &mut rng).unwrap().len() > 1).count();
        assert!((splits as f64 / n as f64 - 0.99).abs() < 0.01);
    }

    #[test]
    fn single_split_chosen_when_splitting() {
        let d = line(&[0.0, 1.0], &[0.0, 1.0]);
        let (p, m) = (RuhwtPrior::default(), CoefficientModel::gaussian(1.0, 1.0));
        let mut phi = Phi::new(&d, d.responses(), &p, &m).unwrap();
        let probs = phi.split_posterior(&[0, 1], 0).unwrap();
        assert_eq!(probs.len(), 2);
        assert_eq!(probs[1].0, SplitChoice::Split { dim: 0, threshold: 0.5 });
        assert!((probs.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_probabilities_follow_weights() {
        // Two splits of three points; posterior split odds equal the ratio of M * Phi * Phi.
        let d = line(&[0.0, 1.0, 2.0], &[0.0, 0.4, 2.0]);
        let prior = RuhwtPrior { no_stop: true, ..Default::default() };
        let m = CoefficientModel::gaussian(1.0, 1.0);
        let mut phi = Phi::new(&d, d.responses(), &prior, &m).unwrap();
        let probs = phi.split_posterior(&[0, 1, 2], 0).unwrap();
        // left split {0} | {1,2}: M(w_root) * M(w_{12}); right split {0,1} | {2}: M(w_root') * M(w_{01})
        let y = d.responses();
        let wa = contrast(1.0, y[0], 2.0, y[1] + y[2]) ;
        let wb = contrast(2.0, y[0] + y[1], 1.0, y[2]);
        let ga = m.marginal(wa) * m.marginal(contrast(1.0, y[1], 1.0, y[2]));
        let gb = m.marginal(wb) * m.marginal(contrast(1.0, y[0], 1.0, y[1]));
        assert!((probs[0].1 - ga / (ga + gb)).abs() < 1e-12);
        assert!((probs[1].1 - gb / (ga + gb)).abs() < 1e-12);
    }

    #[test]
    fn explosion_guard_trips() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let d = line(&xs, &xs);
        let (p, m) = (RuhwtPrior::default(), CoefficientModel::gaussian(1.0, 1.0));
        let mut phi = Phi::new(&d, d.responses(), &p, &m).unwrap().with_cap(10);
        assert!(matches!(phi.phi_root(None), Err(UhwtError::ExplosionGuard(10))));
    }

    #[test]
    fn latent_with_one_state_matches_plain() {
        let d = line(&[0.0, 1.0, 2.5, 3.0], &[0.2, -1.0, 0.7, 2.0]);
        let p = RuhwtPrior::default();
        let m = CoefficientModel::gaussian(1.2, 0.8);
        let lat = LatentMarkov { kernels: vec![vec![vec![1.0]]], models: vec![m.prior] };
        let plain = Phi::new(&d, d.responses(), &p, &m).unwrap().log_phi_root(None).unwrap();
        let latent = Phi::new(&d, d.responses(), &p, &m).unwrap().with_latent(&lat).unwrap().log_phi_root(Some(0)).unwrap();
        assert!((plain - latent).abs() < 1e-12);
    }

    #[test]
    fn uh_tree_conversion_keeps_partition() {
        let d = Dataset::grid(&[4, 4], (0..16).map(|i| (i * 7 % 5) as f64).collect()).unwrap();
        let prior = RuhwtPrior { split_base: 0.95, split_decay: 0.9, ..Default::default() };
        let mut rng = stream(5, "t", 0);
        let bt = sample_prior_btree(&prior, &d, &mut rng).unwrap();
        let ut = bt.to_uh_tree(&d, d.responses()).unwrap();
        assert_eq!(ut.nodes.len(), bt.len());
        assert_eq!(ut.internal_count(), bt.internal().len());
    }
}
