//! Brute-force reference computations and Monte Carlo checks of the risk bounds.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{log_add, log_sum, CoefficientModel, LatentMarkov, RuhwtPrior};
use crate::error::{Result, UhwtError};
use crate::partition::{atom_levels, Cell, Dataset, Split, SplitKind, UhTree};
use crate::rng::stream;
use crate::stats::{median, soft_threshold};

/// Mean training response in the query's leaf, recomputed from the data.
pub fn leafwise_fit(tree: &UhTree, data: &Dataset, y: &[f64], query: &[f64]) -> Result<f64> {
    if !tree.root().geometry.contains(query) {
        return Err(UhwtError::OutOfDomain);
    }
    let leaf = tree.leaf_of(query);
    let (mut s, mut c) = (0.0, 0usize);
    for i in 0..data.n() {
        if tree.leaf_of(data.point(i)) == leaf {
            s += y[i];
            c += 1;
        }
    }
    if c == 0 {
        return Err(UhwtError::EmptyChild);
    }
    Ok(s / c as f64)
}

pub fn sse(idx: &[usize], y: &[f64]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    idx.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

/// Parent SSE minus the children's SSE.
pub fn delta_cart(cell: &Cell, split: &Split, y: &[f64]) -> f64 {
    sse(&cell.members, y) - sse(&split.plus, y) - sse(&split.minus, y)
}

/// `sum (soft(theta + z) - theta)^2 <= 4 sum min(theta^2, tau^2)`, requiring `max |z| <= tau`.
pub fn soft_threshold_lemma_check(theta: &[f64], z: &[f64], tau: f64) -> Result<bool> {
    if theta.len() != z.len() {
        return Err(UhwtError::DimensionMismatch { expected: theta.len(), found: z.len() });
    }
    if z.iter().any(|v| v.abs() > tau) {
        return Err(UhwtError::PreconditionViolated("noise exceeds the threshold".into()));
    }
    let lhs: f64 = theta.iter().zip(z).map(|(t, e)| (soft_threshold(t + e, tau) - t).powi(2)).sum();
    let rhs: f64 = 4.0 * theta.iter().map(|t| (t * t).min(tau * tau)).sum::<f64>();
    Ok(lhs <= rhs)
}

/// Balanced partition of `n` equally spaced points on a line into `leaves` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n: usize,
    pub leaves: usize,
}

impl PartitionSpec {
    pub fn build(&self) -> Result<(Dataset, UhTree)> {
        if self.n == 0 || self.leaves == 0 || self.leaves > self.n {
            return Err(UhwtError::PreconditionViolated("need 1 <= leaves <= n".into()));
        }
        let data = Dataset::grid(&[self.n], vec![0.0; self.n])?;
        let target = self.n.div_ceil(self.leaves);
        let mut made = 1usize;
        let tree = UhTree::assemble(&data, data.responses(), data.root_cell(), |cell| {
            // Splits happen in breadth-first order, so counting them gives balanced leaves.
            if made >= self.leaves || cell.members.len() <= target.max(1) {
                return None;
            }
            made += 1;
            let mut xs: Vec<f64> = cell.members.iter().map(|&i| data.point(i)[0]).collect();
            xs.sort_by(f64::total_cmp);
            let h = xs.len() / 2;
            Some(SplitKind::Axis { dim: 0, threshold: 0.5 * (xs[h - 1] + xs[h]) })
        });
        Ok((data, tree))
    }
}

/// Piecewise-constant signal on the partition: chosen atoms with amplitudes
/// given in units of the threshold tau, random signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal {
    pub amplitudes_tau: Vec<f64>,
    pub offset: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub replicates: usize,
    pub n: usize,
    pub atoms: usize,
    pub leaves: usize,
    pub delta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub uh_violations: usize,
    pub leaf_violations: usize,
    pub uh_coverage: f64,
    pub leaf_coverage: f64,
    pub median_uh_error: f64,
    pub median_leaf_error: f64,
    pub uh_errors: Vec<f64>,
    pub leaf_errors: Vec<f64>,
}

/// Per-replicate errors and bound right-hand sides.
#[derive(Debug, Clone, Copy)]
struct Trial {
    uh_err: f64,
    uh_rhs: f64,
    leaf_err: f64,
    leaf_rhs: f64,
}

/// Atoms of `tree` normalized in L2 of the empirical measure: sqrt(n) times the unit-sum-of-squares atoms.
fn empirical_atoms(tree: &UhTree, n: usize) -> Vec<Vec<f64>> {
    let scale = (n as f64).sqrt();
    tree.internal_ids()
        .map(|id| {
            let node = &tree.nodes[id];
            let [a, b] = node.children.expect("internal");
            let (ma, mb) = (&tree.nodes[a].members, &tree.nodes[b].members);
            let (pa, pb) = atom_levels(ma.len(), mb.len());
            let mut v = vec![0.0; n];
            for &i in ma {
                v[i] = scale * pa;
            }
            for &i in mb {
                v[i] = scale * pb;
            }
            v
        })
        .collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Monte Carlo coverage of the two fixed-partition risk bounds.
pub fn oracle_bound_trial(spec: &PartitionSpec, signal: &SparseSignal, sigma: f64, delta: f64, replicates: usize, seed: u64) -> Result<BoundReport> {
    if !(0.0 < delta && delta < 1.0) || sigma < 0.0 {
        return Err(UhwtError::PreconditionViolated("need 0 < delta < 1 and sigma >= 0".into()));
    }
    let (data, tree) = spec.build()?;
    let n = data.n();
    let atoms = empirical_atoms(&tree, n);
    let m = atoms.len();
    if signal.amplitudes_tau.len() > m {
        return Err(UhwtError::PreconditionViolated("more active atoms than atoms".into()));
    }
    let tau = sigma * (2.0 / n as f64 * (2.0 * m.max(1) as f64 / delta).ln()).sqrt();
    let mut rng = stream(signal.seed, "oracle-signal", 0);
    let active = sample(&mut rng, m, signal.amplitudes_tau.len()).into_vec();
    let mut theta = vec![0.0; m];
    for (k, &j) in active.iter().enumerate() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        theta[j] = sign * signal.amplitudes_tau[k] * tau;
    }
    let mut f = vec![signal.offset; n];
    for (j, psi) in atoms.iter().enumerate() {
        for i in 0..n {
            f[i] += theta[j] * psi[i];
        }
    }
    let leaves: Vec<Vec<usize>> = tree.leaf_ids().map(|id| tree.nodes[id].members.clone()).collect();
    let m_min = leaves.iter().map(|l| l.len()).min().unwrap_or(1);
    // f is exactly piecewise constant on the partition, so f - f_P = 0.
    let uh_rhs = 4.0 * theta.iter().map(|t| (t * t).min(tau * tau)).sum::<f64>();
    let leaf_rhs = 4.0 * sigma * sigma / m_min as f64 * (2.0 * leaves.len() as f64 / delta).ln();

    let trials: Vec<Trial> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "oracle-noise", r as u64);
            let y: Vec<f64> = f.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            let ybar = y.iter().sum::<f64>() / n as f64;
            let mut uh = vec![ybar; n];
            for psi in &atoms {
                let c = soft_threshold(inner(&y, psi), tau);
                if c != 0.0 {
                    for i in 0..n {
                        uh[i] += c * psi[i];
                    }
                }
            }
            let mut leaf = vec![0.0; n];
            for l in &leaves {
                let mean = l.iter().map(|&i| y[i]).sum::<f64>() / l.len() as f64;
                for &i in l {
                    leaf[i] = mean;
                }
            }
            let err = |g: &[f64]| g.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
            Trial { uh_err: err(&uh), uh_rhs, leaf_err: err(&leaf), leaf_rhs }
        })
        .collect();
    // Rounding slack so that sigma = 0 does not count float noise as a violation.
    let slack = 1e-12 * f.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let uh_violations = trials.iter().filter(|t| t.uh_err > t.uh_rhs + slack).count();
    let leaf_violations = trials.iter().filter(|t| t.leaf_err > t.leaf_rhs + slack).count();
    let uh_errors: Vec<f64> = trials.iter().map(|t| t.uh_err).collect();
    let leaf_errors: Vec<f64> = trials.iter().map(|t| t.leaf_err).collect();
    let r = replicates.max(1) as f64;
    Ok(BoundReport {
        replicates,
        n,
        atoms: m,
        leaves: leaves.len(),
        delta,
        sigma,
        tau,
        uh_violations,
        leaf_violations,
        uh_coverage: 1.0 - uh_violations as f64 / r,
        leaf_coverage: 1.0 - leaf_violations as f64 / r,
        median_uh_error: if uh_errors.is_empty() { 0.0 } else { median(&uh_errors) },
        median_leaf_error: if leaf_errors.is_empty() { 0.0 } else { median(&leaf_errors) },
        uh_errors,
        leaf_errors,
    })
}

/// Split structure of an enumerated tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Leaf,
    Split { dim: usize, threshold: f64, children: Box<[Shape; 2]> },
}

impl Shape {
    /// Same format as [`crate::bayes::BTree::key`].
    pub fn key(&self) -> String {
        match self {
            Shape::Leaf => ".".into(),
            Shape::Split { dim, threshold, children } => format!("({dim}:{threshold} {} {})", children[0].key(), children[1].key()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    /// (tree key, posterior probability).
    pub trees: Vec<(String, f64)>,
    /// log of the total prior-weighted likelihood.
    pub log_total: f64,
}

impl Enumeration {
    pub fn prob(&self, key: &str) -> f64 {
        self.trees.iter().find(|t| t.0 == key).map(|t| t.1).unwrap_or(0.0)
    }
}

pub const ENUMERATION_MAX_N: usize = 5;

struct Enumerator<'a> {
    data: &'a Dataset,
    y: &'a [f64],
    prior: &'a RuhwtPrior,
    model: &'a CoefficientModel,
    latent: Option<&'a LatentMarkov>,
}

impl Enumerator<'_> {
    fn cuts(&self, members: &[usize]) -> Vec<(usize, Vec<f64>)> {
        let mut out = Vec::new();
        for d in 0..self.data.dim() {
            let mut xs: Vec<f64> = members.iter().map(|&i| self.data.point(i)[d]).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            if xs.len() > 1 {
                out.push((d, (1..xs.len()).map(|k| 0.5 * (xs[k - 1] + xs[k])).collect()));
            }
        }
        out
    }

    fn can_split(&self, members: &[usize], depth: usize) -> bool {
        depth < self.prior.max_depth && members.len() > 1
    }

    fn shapes(&self, members: &[usize], depth: usize) -> Vec<Shape> {
        let mut out = Vec::new();
        if !self.can_split(members, depth) {
            return vec![Shape::Leaf];
        }
        if self.prior.p_split(depth) < 1.0 {
            out.push(Shape::Leaf);
        }
        for (d, ts) in self.cuts(members) {
            for t in ts {
                let (a, b): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| self.data.point(i)[d] < t);
                let (la, lb) = (self.shapes(&a, depth + 1), self.shapes(&b, depth + 1));
                for sa in &la {
                    for sb in &lb {
                        out.push(Shape::Split { dim: d, threshold: t, children: Box::new([sa.clone(), sb.clone()]) });
                    }
                }
            }
        }
        out
    }

    fn leaf_log(&self, members: &[usize], depth: usize) -> f64 {
        let n = members.len();
        let mean = members.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse: f64 = members.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let dens = self.model.log_leaf(n, sse);
        if self.can_split(members, depth) {
            (1.0 - self.prior.p_split(depth)).ln() + dens
        } else {
            dens
        }
    }

    /// log prior * likelihood of `shape` rooted at a cell, given the parent state.
    fn weight(&self, shape: &Shape, members: &[usize], depth: usize, state: Option<usize>) -> f64 {
        match shape {
            Shape::Leaf => self.leaf_log(members, depth),
            Shape::Split { dim, threshold, children } => {
                let cuts = self.cuts(members);
                let dims: Vec<usize> = cuts.iter().map(|c| c.0).collect();
                let lambda = self.prior.dim_probs(&dims);
                let k = cuts.iter().position(|c| c.0 == *dim).expect("valid dimension");
                let choice = lambda[k].ln() - (cuts[k].1.len() as f64).ln();
                let (a, b): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| self.data.point(i)[*dim] < *threshold);
                let (na, nb) = (a.len() as f64, b.len() as f64);
                let ma = a.iter().map(|&i| self.y[i]).sum::<f64>() / na;
                let mb = b.iter().map(|&i| self.y[i]).sum::<f64>() / nb;
                let w = (na * nb / (na + nb)).sqrt() * (ma - mb);
                let base = self.prior.p_split(depth).ln() + choice;
                match (self.latent, state) {
                    (Some(lat), Some(s)) => {
                        let row = &lat.kernel(depth)[s];
                        let mut acc = f64::NEG_INFINITY;
                        for (s2, rho) in row.iter().enumerate() {
                            if *rho > 0.0 {
                                let model = CoefficientModel { prior: lat.models[s2], sigma: self.model.sigma };
                                acc = log_add(
                                    acc,
                                    rho.ln()
                                        + model.log_marginal(w)
                                        + self.weight(&children[0], &a, depth + 1, Some(s2))
                                        + self.weight(&children[1], &b, depth + 1, Some(s2)),
                                );
                            }
                        }
                        base + acc
                    }
                    _ => {
                        base + self.model.log_marginal(w)
                            + self.weight(&children[0], &a, depth + 1, None)
                            + self.weight(&children[1], &b, depth + 1, None)
                    }
                }
            }
        }
    }
}

/// Exact posterior over every admissible tree on a tiny dataset.
pub fn enumerate_posterior(
    data: &Dataset,
    y: &[f64],
    prior: &RuhwtPrior,
    model: &CoefficientModel,
    latent: Option<(&LatentMarkov, usize)>,
) -> Result<Enumeration> {
    if data.n() > ENUMERATION_MAX_N {
        return Err(UhwtError::TooLarge(format!("enumeration needs n <= {ENUMERATION_MAX_N}, got {}", data.n())));
    }
    let e = Enumerator { data, y, prior, model, latent: latent.map(|l| l.0) };
    let state = latent.map(|l| l.1);
    let members: Vec<usize> = (0..data.n()).collect();
    let shapes = e.shapes(&members, 0);
    let logs: Vec<f64> = shapes.iter().map(|s| e.weight(s, &members, 0, state)).collect();
    let log_total = log_sum(logs.iter().copied());
    let trees = shapes.iter().zip(&logs).map(|(s, l)| (s.key(), (l - log_total).exp())).collect();
    Ok(Enumeration { trees, log_total })
}

/// Total variation distance between an empirical histogram and an exact distribution.
pub fn total_variation(counts: &std::collections::HashMap<String, usize>, exact: &Enumeration) -> f64 {
    let total: usize = counts.values().sum();
    let mut tv = 0.0;
    for (k, p) in &exact.trees {
        let q = counts.get(k).copied().unwrap_or(0) as f64 / total as f64;
        tv += (p - q).abs();
    }
    for (k, c) in counts {
        if exact.prob(k) == 0.0 && !exact.trees.iter().any(|t| &t.0 == k) {
            tv += *c as f64 / total as f64;
        }
    }
    0.5 * tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::Phi;
    use crate::partition::Coefficients;

    fn line(xs: &[f64], y: &[f64]) -> Dataset {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Dataset::scattered(&pts, y.to_vec()).unwrap()
    }

    #[test]
    fn delta_cart_examples() {
        let d = Dataset::grid(&[4], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let root = d.root_cell();
        let split = Split::new(SplitKind::Axis { dim: 0, threshold: 1.5 }, &root, &d);
        assert!((delta_cart(&root, &split, d.responses()) - 4.0).abs() < 1e-12);
        let flat = vec![1.0; 4];
        assert_eq!(delta_cart(&root, &split, &flat), 0.0);
    }

    #[test]
    fn lemma_edge_cases() {
        assert!(soft_threshold_lemma_check(&[0.5, -0.2], &[0.0, 0.0], 1.0).unwrap());
        assert!(soft_threshold_lemma_check(&[0.0, 0.0], &[0.3, -0.9], 1.0).unwrap());
        assert!(matches!(soft_threshold_lemma_check(&[0.0], &[2.0], 1.0), Err(UhwtError::PreconditionViolated(_))));
    }

    #[test]
    fn leafwise_root_and_singletons() {
        let d = Dataset::grid(&[5], vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        let root = UhTree::leaf(d.bounding_box(), (0..5).collect(), d.responses());
        assert!((leafwise_fit(&root, &d, d.responses(), &[2.0]).unwrap() - 6.2).abs() < 1e-12);
        let full = crate::grid::grow_greedy(&d, d.responses(), &crate::grid::GridFitParams::default(), 0.0);
        for i in 0..5 {
            let q = [i as f64];
            assert_eq!(leafwise_fit(&full, &d, d.responses(), &q).unwrap(), d.responses()[i]);
            assert!((full.reconstruct(&q, Coefficients::Raw).unwrap() - d.responses()[i]).abs() < 1e-12);
        }
        assert!(matches!(leafwise_fit(&root, &d, d.responses(), &[9.0]), Err(UhwtError::OutOfDomain)));
    }

    #[test]
    fn partition_spec_is_balanced() {
        let (_, t) = PartitionSpec { n: 1024, leaves: 32 }.build().unwrap();
        assert_eq!(t.leaf_ids().count(), 32);
        assert!(t.leaf_ids().all(|id| t.nodes[id].members.len() == 32));
        let (_, t) = PartitionSpec { n: 64, leaves: 64 }.build().unwrap();
        assert_eq!(t.internal_count(), 63);
    }

    #[test]
    fn noiseless_bound_trial() {
        let s = SparseSignal { amplitudes_tau: vec![2.0, 1.0], offset: 0.3, seed: 1 };
        let r = oracle_bound_trial(&PartitionSpec { n: 64, leaves: 8 }, &s, 0.0, 0.1, 5, 2).unwrap();
        assert_eq!(r.uh_violations, 0);
        assert!(r.median_uh_error < 1e-20 && r.median_leaf_error < 1e-20);
    }

    #[test]
    fn enumeration_single_point() {
        let d = line(&[0.0], &[1.0]);
        let e = enumerate_posterior(&d, d.responses(), &RuhwtPrior::default(), &CoefficientModel::gaussian(1.0, 1.0), None).unwrap();
        assert_eq!(e.trees, vec![(".".to_string(), 1.0)]);
    }

    #[test]
    fn enumeration_symmetry_and_phi() {
        let d = line(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0]);
        let prior = RuhwtPrior::default();
        let m = CoefficientModel::gaussian(1.0, 0.5);
        let e = enumerate_posterior(&d, d.responses(), &prior, &m, None).unwrap();
        let l = e.prob("(0:0.5 . .)");
        let r = e.prob("(0:1.5 . .)");
        assert!(l > 0.0 && (l - r).abs() < 1e-12);
        let mut phi = Phi::new(&d, d.responses(), &prior, &m).unwrap();
        let lp = phi.log_phi_root(None).unwrap();
        assert!((lp.exp() / e.log_total.exp() - 1.0).abs() < 1e-9);
        let too_big = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 6]);
        assert!(matches!(enumerate_posterior(&too_big, too_big.responses(), &prior, &m, None), Err(UhwtError::TooLarge(_))));
    }
}
