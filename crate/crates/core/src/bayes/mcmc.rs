//! GROW / PRUNE / SWAP Metropolis-Hastings over axis-aligned UH trees.
//!
//! The target is prior(T) * likelihood(T) with the same per-node factors as
//! [`super::Phi`]: internal nodes contribute p_split * lambda_d * B(l) * M(w),
//! leaves contribute (1 - p_split) (when they could split) times the leaf
//! density. Proposals draw `(d, l)` from lambda * B, and the Hastings ratio
//! includes the move-type probabilities, which change when a candidate set
//! becomes empty.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_split_choice, members_contrast, members_sse, sample_index, split_members, split_options, BTree, CoefficientModel, RuhwtPrior};
use crate::error::Result;
use crate::partition::Dataset;
use crate::rng::stream;

#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub data: &'a Dataset,
    pub y: &'a [f64],
    pub prior: &'a RuhwtPrior,
    pub model: &'a CoefficientModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    Grow { node: usize, dim: usize, threshold: f64 },
    Prune { node: usize },
    Swap { node: usize, dim: usize, threshold: f64 },
}

impl<'a> Target<'a> {
    pub fn growable(&self, tree: &BTree, id: usize) -> bool {
        let n = tree.node(id);
        n.is_leaf() && n.depth < self.prior.max_depth && n.members.len() >= 2
    }

    pub fn prunable(&self, tree: &BTree, id: usize) -> bool {
        match tree.node(id).children {
            Some([a, b]) => tree.node(a).is_leaf() && tree.node(b).is_leaf(),
            None => false,
        }
    }

    pub fn grow_set(&self, tree: &BTree) -> Vec<usize> {
        tree.ids().filter(|&i| self.growable(tree, i)).collect()
    }

    pub fn prune_set(&self, tree: &BTree) -> Vec<usize> {
        tree.ids().filter(|&i| self.prunable(tree, i)).collect()
    }

    /// Log factor of a leaf cell at `depth`.
    pub fn log_leaf(&self, members: &[usize], depth: usize) -> f64 {
        let dens = self.model.log_leaf(members.len(), members_sse(self.y, members));
        if depth < self.prior.max_depth && members.len() >= 2 {
            let p = self.prior.p_split(depth);
            if p >= 1.0 {
                return f64::NEG_INFINITY;
            }
            (1.0 - p).ln() + dens
        } else {
            dens
        }
    }

    /// log lambda_d B(l) for `(dim, threshold)` at a cell.
    pub fn log_choice(&self, members: &[usize], dim: usize) -> f64 {
        log_split_choice(self.prior, &split_options(self.data, members), dim)
    }

    /// Log factor of an internal cell split at `(dim, threshold)`.
    pub fn log_internal(&self, members: &[usize], depth: usize, dim: usize, threshold: f64) -> f64 {
        let (a, b) = split_members(self.data, members, dim, threshold);
        self.prior.p_split(depth).ln() + self.log_choice(members, dim) + self.model.log_marginal(members_contrast(self.y, &a, &b))
    }

    /// Unnormalized log posterior of the whole tree.
    pub fn log_target(&self, tree: &BTree) -> f64 {
        tree.ids()
            .map(|id| {
                let n = tree.node(id);
                match n.split {
                    Some((d, l)) => self.log_internal(&n.members, n.depth, d, l),
                    None => self.log_leaf(&n.members, n.depth),
                }
            })
            .sum()
    }
}

/// Probabilities of choosing GROW, PRUNE and SWAP given candidate-set sizes.
fn move_probs(grow: usize, prune: usize, swap_prob: f64) -> (f64, f64, f64) {
    let s = if prune > 0 { swap_prob } else { 0.0 };
    let rest = 1.0 - s;
    match (grow > 0, prune > 0) {
        (true, true) => (rest / 2.0, rest / 2.0, s),
        (true, false) => (rest, 0.0, s),
        (false, true) => (0.0, rest, s),
        (false, false) => (0.0, 0.0, 0.0),
    }
}

/// Candidate-set sizes after applying `mv`, computed locally.
fn counts_after(tree: &BTree, t: &Target, mv: &Move, grow: usize, prune: usize) -> (usize, usize) {
    let sibling_leaf = |id: usize| match tree.node(id).parent {
        Some(p) => {
            let [a, b] = tree.node(p).children.expect("internal");
            let s = if a == id { b } else { a };
            Some(tree.node(s).is_leaf())
        }
        None => None,
    };
    match *mv {
        Move::Grow { node, dim, threshold } => {
            let n = tree.node(node);
            let (a, b) = split_members(t.data, &n.members, dim, threshold);
            let kid_ok = |m: &Vec<usize>| (n.depth + 1 < t.prior.max_depth && m.len() >= 2) as usize;
            let g = grow - 1 + kid_ok(&a) + kid_ok(&b);
            let p = prune + 1 - (sibling_leaf(node) == Some(true)) as usize;
            (g, p)
        }
        Move::Prune { node } => {
            let [a, b] = tree.node(node).children.expect("internal");
            let g = grow + 1 - t.growable(tree, a) as usize - t.growable(tree, b) as usize;
            let p = prune - 1 + (sibling_leaf(node) == Some(true)) as usize;
            (g, p)
        }
        Move::Swap { .. } => (grow, prune),
    }
}

/// log q(T -> T') for the proposal mechanism in [`propose`].
pub fn move_log_prob(tree: &BTree, t: &Target, mv: &Move, swap_prob: f64) -> f64 {
    let (g, p) = (t.grow_set(tree).len(), t.prune_set(tree).len());
    let (pg, pp, ps) = move_probs(g, p, swap_prob);
    match *mv {
        Move::Grow { node, dim, .. } => pg.ln() - (g as f64).ln() + t.log_choice(&tree.node(node).members, dim),
        Move::Prune { .. } => pp.ln() - (p as f64).ln(),
        Move::Swap { node, dim, .. } => ps.ln() - (p as f64).ln() + t.log_choice(&tree.node(node).members, dim),
    }
}

fn log_acceptance_with(tree: &BTree, t: &Target, mv: &Move, swap_prob: f64, g: usize, p: usize) -> f64 {
    let (g2, p2) = counts_after(tree, t, mv, g, p);
    let (pg, pp, ps) = move_probs(g, p, swap_prob);
    let (pg2, pp2, ps2) = move_probs(g2, p2, swap_prob);
    match *mv {
        Move::Grow { node, dim, threshold } => {
            let n = tree.node(node);
            let (a, b) = split_members(t.data, &n.members, dim, threshold);
            let delta = t.log_internal(&n.members, n.depth, dim, threshold) + t.log_leaf(&a, n.depth + 1) + t.log_leaf(&b, n.depth + 1)
                - t.log_leaf(&n.members, n.depth);
            let fwd = pg.ln() - (g as f64).ln() + t.log_choice(&n.members, dim);
            let back = pp2.ln() - (p2 as f64).ln();
            delta + back - fwd
        }
        Move::Prune { node } => {
            let n = tree.node(node);
            let (dim, threshold) = n.split.expect("internal");
            let [a, b] = n.children.expect("internal");
            let delta = t.log_leaf(&n.members, n.depth)
                - t.log_internal(&n.members, n.depth, dim, threshold)
                - t.log_leaf(&tree.node(a).members, n.depth + 1)
                - t.log_leaf(&tree.node(b).members, n.depth + 1);
            let fwd = pp.ln() - (p as f64).ln();
            let back = pg2.ln() - (g2 as f64).ln() + t.log_choice(&n.members, dim);
            delta + back - fwd
        }
        Move::Swap { node, dim, threshold } => {
            let n = tree.node(node);
            let (d0, l0) = n.split.expect("internal");
            let [a0, b0] = n.children.expect("internal");
            let (a, b) = split_members(t.data, &n.members, dim, threshold);
            let delta = t.log_internal(&n.members, n.depth, dim, threshold) + t.log_leaf(&a, n.depth + 1) + t.log_leaf(&b, n.depth + 1)
                - t.log_internal(&n.members, n.depth, d0, l0)
                - t.log_leaf(&tree.node(a0).members, n.depth + 1)
                - t.log_leaf(&tree.node(b0).members, n.depth + 1);
            let fwd = ps.ln() - (p as f64).ln() + t.log_choice(&n.members, dim);
            let back = ps2.ln() - (p2 as f64).ln() + t.log_choice(&n.members, d0);
            delta + back - fwd
        }
    }
}

/// Log Metropolis-Hastings ratio for applying `mv` to `tree`.
pub fn log_acceptance(tree: &BTree, t: &Target, mv: &Move, swap_prob: f64) -> f64 {
    let (g, p) = (t.grow_set(tree).len(), t.prune_set(tree).len());
    log_acceptance_with(tree, t, mv, swap_prob, g, p)
}

fn draw_split<R: Rng + ?Sized>(t: &Target, members: &[usize], rng: &mut R) -> (usize, f64) {
    let options = split_options(t.data, members);
    let dims: Vec<usize> = options.iter().map(|o| o.0).collect();
    let k = sample_index(&t.prior.dim_probs(&dims), rng);
    let ts = &options[k].1;
    (options[k].0, ts[rng.random_range(0..ts.len())])
}

fn propose_with<R: Rng + ?Sized>(tree: &BTree, t: &Target, swap_prob: f64, grow: &[usize], prune: &[usize], rng: &mut R) -> Option<Move> {
    let (pg, pp, _) = move_probs(grow.len(), prune.len(), swap_prob);
    if grow.is_empty() && prune.is_empty() {
        return None;
    }
    let u: f64 = rng.random();
    if u < pg {
        let node = grow[rng.random_range(0..grow.len())];
        let (dim, threshold) = draw_split(t, &tree.node(node).members, rng);
        Some(Move::Grow { node, dim, threshold })
    } else if u < pg + pp {
        Some(Move::Prune { node: prune[rng.random_range(0..prune.len())] })
    } else {
        let node = prune[rng.random_range(0..prune.len())];
        let (dim, threshold) = draw_split(t, &tree.node(node).members, rng);
        Some(Move::Swap { node, dim, threshold })
    }
}

pub fn propose<R: Rng + ?Sized>(tree: &BTree, t: &Target, swap_prob: f64, rng: &mut R) -> Option<Move> {
    let (g, p) = (t.grow_set(tree), t.prune_set(tree));
    propose_with(tree, t, swap_prob, &g, &p, rng)
}

pub fn apply(tree: &mut BTree, data: &Dataset, mv: &Move) {
    match *mv {
        Move::Grow { node, dim, threshold } => {
            tree.split_leaf(node, dim, threshold, data);
        }
        Move::Prune { node } => tree.prune(node),
        Move::Swap { node, dim, threshold } => {
            tree.prune(node);
            tree.split_leaf(node, dim, threshold, data);
        }
    }
}

/// One Metropolis-Hastings step; returns whether the proposal was accepted.
pub fn mcmc_step<R: Rng + ?Sized>(tree: &mut BTree, t: &Target, swap_prob: f64, rng: &mut R) -> bool {
    let (g, p) = (t.grow_set(tree), t.prune_set(tree));
    let Some(mv) = propose_with(tree, t, swap_prob, &g, &p, rng) else {
        return false;
    };
    let lam = log_acceptance_with(tree, t, &mv, swap_prob, g.len(), p.len());
    let accept = lam >= 0.0 || rng.random::<f64>().ln() < lam;
    if accept {
        apply(tree, t.data, &mv);
    }
    accept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub steps: usize,
    pub burn_in: usize,
    pub swap_prob: f64,
    pub seed: u64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams { steps: 10_000, burn_in: 0, swap_prob: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub tree: BTree,
    pub accepted: usize,
    /// Visit counts per tree key after burn-in.
    pub visits: HashMap<String, usize>,
}

/// Single chain from the root-only tree.
pub fn run_chain(t: &Target, params: &ChainParams) -> Result<ChainResult> {
    t.prior.validate()?;
    t.model.validate()?;
    let mut rng = stream(params.seed, "mcmc", 0);
    let mut tree = BTree::new(t.data.n());
    let mut accepted = 0;
    let mut visits = HashMap::new();
    for step in 0..params.steps {
        accepted += mcmc_step(&mut tree, t, params.swap_prob, &mut rng) as usize;
        if step >= params.burn_in {
            *visits.entry(tree.key()).or_insert(0) += 1;
        }
    }
    Ok(ChainResult { tree, accepted, visits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64], y: &[f64]) -> Dataset {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Dataset::scattered(&pts, y.to_vec()).unwrap()
    }

    #[test]
    fn identical_swap_is_accepted() {
        let d = line(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.5, 2.0]);
        let prior = RuhwtPrior::default();
        let model = CoefficientModel::gaussian(1.0, 0.5);
        let t = Target { data: &d, y: d.responses(), prior: &prior, model: &model };
        let mut tree = BTree::new(4);
        tree.split_leaf(0, 0, 1.5, &d);
        let mv = Move::Swap { node: 0, dim: 0, threshold: 1.5 };
        assert!(log_acceptance(&tree, &t, &mv, 0.3).abs() < 1e-12);
    }

    #[test]
    fn local_ratio_matches_global_target() {
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.5, 2.0, -1.0]);
        let prior = RuhwtPrior::default();
        let model = CoefficientModel::gaussian(1.5, 0.5);
        let t = Target { data: &d, y: d.responses(), prior: &prior, model: &model };
        let mut tree = BTree::new(5);
        tree.split_leaf(0, 0, 1.5, &d);
        let mv = Move::Grow { node: 2, dim: 0, threshold: 3.5 };
        let mut after = tree.clone();
        apply(&mut after, &d, &mv);
        let back = Move::Prune { node: 2 };
        let lhs = t.log_target(&tree) + move_log_prob(&tree, &t, &mv, 0.0);
        let rhs = t.log_target(&after) + move_log_prob(&after, &t, &back, 0.0);
        assert!((log_acceptance(&tree, &t, &mv, 0.0) - (rhs - lhs)).abs() < 1e-10);
        assert!((log_acceptance(&after, &t, &back, 0.0) + (rhs - lhs)).abs() < 1e-10);
    }
}
