//! Greedy UHWT fitting on grids and scattered points in R^d.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};
use crate::partition::{contrast, Cell, Coefficients, Dataset, GrowParams, SplitKind, UhTree};
use crate::stats;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFitParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Early stop multiplier b: nodes with max |w| < b * sigma become leaves.
    pub early_stop_b: f64,
    /// Reconstruction threshold multiplier a: tau = a * sigma * sqrt(2 ln n).
    pub soft_a: f64,
    /// Known noise level; estimated from a pilot tree when absent.
    pub sigma: Option<f64>,
    /// Only consider the count-median threshold along each dimension.
    pub median_splits_only: bool,
}

impl Default for GridFitParams {
    fn default() -> Self {
        GridFitParams { max_depth: 64, min_leaf: 1, early_stop_b: 0.0, soft_a: 0.0, sigma: None, median_splits_only: false }
    }
}

/// Distinct sorted coordinates along one dimension with member counts and
/// response sums.
struct Profile {
    values: Vec<f64>,
    counts: Vec<usize>,
    sums: Vec<f64>,
}

fn profile(data: &Dataset, members: &[usize], d: usize, y: Option<&[f64]>) -> Profile {
    let resp = |i: usize| y.map_or(0.0, |y| y[i]);
    if data.is_lattice() {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for &i in members {
            let c = data.point(i)[d] as i64;
            lo = lo.min(c);
            hi = hi.max(c);
        }
        let width = (hi - lo + 1) as usize;
        let mut counts = vec![0usize; width];
        let mut sums = vec![0.0; width];
        for &i in members {
            let k = (data.point(i)[d] as i64 - lo) as usize;
            counts[k] += 1;
            sums[k] += resp(i);
        }
        let mut p = Profile { values: Vec::new(), counts: Vec::new(), sums: Vec::new() };
        for k in 0..width {
            if counts[k] > 0 {
                p.values.push((lo + k as i64) as f64);
                p.counts.push(counts[k]);
                p.sums.push(sums[k]);
            }
        }
        p
    } else {
        let mut order: Vec<usize> = members.to_vec();
        order.sort_by(|&a, &b| data.point(a)[d].total_cmp(&data.point(b)[d]));
        let mut p = Profile { values: Vec::new(), counts: Vec::new(), sums: Vec::new() };
        for i in order {
            let x = data.point(i)[d];
            if p.values.last() == Some(&x) {
                *p.counts.last_mut().unwrap() += 1;
                *p.sums.last_mut().unwrap() += resp(i);
            } else {
                p.values.push(x);
                p.counts.push(1);
                p.sums.push(resp(i));
            }
        }
        p
    }
}

/// Admissible gaps of a profile as (gap index, left count).
fn admissible(p: &Profile, n: usize, min_leaf: usize, median_only: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut left = 0;
    for k in 0..p.values.len().saturating_sub(1) {
        left += p.counts[k];
        if left >= min_leaf && n - left >= min_leaf {
            out.push((k, left));
        }
    }
    if median_only && !out.is_empty() {
        let best = out.iter().copied().min_by_key(|&(_, l)| (2 * l).abs_diff(n)).unwrap();
        out = vec![best];
    }
    out
}

/// All admissible (dimension, threshold) pairs of a cell.
pub fn candidate_splits(cell: &Cell, data: &Dataset, min_leaf: usize) -> Vec<(usize, f64)> {
    candidates_with(cell, data, min_leaf, false)
}

pub(crate) fn candidates_with(cell: &Cell, data: &Dataset, min_leaf: usize, median_only: bool) -> Vec<(usize, f64)> {
    let n = cell.members.len();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    for d in 0..data.dim() {
        let p = profile(data, &cell.members, d, None);
        for (k, _) in admissible(&p, n, min_leaf.max(1), median_only) {
            out.push((d, 0.5 * (p.values[k] + p.values[k + 1])));
        }
    }
    out
}

/// Admissible split maximizing |w|; ties go to the smaller dimension, then
/// the smaller threshold.
pub fn greedy_split(cell: &Cell, data: &Dataset, y: &[f64], min_leaf: usize) -> Option<(usize, f64, f64)> {
    greedy_split_with(cell, data, y, min_leaf, false)
}

pub fn greedy_split_with(
    cell: &Cell,
    data: &Dataset,
    y: &[f64],
    min_leaf: usize,
    median_only: bool,
) -> Option<(usize, f64, f64)> {
    let n = cell.members.len();
    if n < 2 {
        return None;
    }
    let total: f64 = cell.members.iter().map(|&i| y[i]).sum();
    let scale = cell.members.iter().fold(0.0f64, |m, &i| m.max(y[i].abs()));
    let tol = 1e-12 * scale * (n as f64).sqrt();
    let mut best: Option<(usize, f64, f64)> = None;
    for d in 0..data.dim() {
        let p = profile(data, &cell.members, d, Some(y));
        let gaps = admissible(&p, n, min_leaf.max(1), median_only);
        let mut k0 = 0;
        let mut sl = 0.0;
        for (k, left) in gaps {
            while k0 <= k {
                sl += p.sums[k0];
                k0 += 1;
            }
            let w = contrast(left as f64, sl, (n - left) as f64, total - sl);
            if best.is_none_or(|b| w.abs() > b.2.abs() + tol) {
                best = Some((d, 0.5 * (p.values[k] + p.values[k + 1]), w));
            }
        }
    }
    best
}

/// Greedy tree with an explicit stop threshold (0 disables early stopping).
pub fn grow_greedy(data: &Dataset, y: &[f64], params: &GridFitParams, stop_threshold: f64) -> UhTree {
    let grow = GrowParams { max_depth: params.max_depth, min_leaf: params.min_leaf.max(1), stop_threshold };
    let median = params.median_splits_only;
    UhTree::grow(data, y, data.root_cell(), &grow, |cell| {
        greedy_split_with(cell, data, y, grow.min_leaf, median).map(|(dim, threshold, _)| SplitKind::Axis { dim, threshold })
    })
}

pub fn pilot_depth(max_depth: usize, n: usize) -> usize {
    let log = (n.max(1) as f64).log2().ceil() as usize;
    max_depth.min(log)
}

/// Noise level from a pilot tree grown without early stopping.
pub fn pilot_sigma(data: &Dataset, y: &[f64], params: &GridFitParams) -> f64 {
    let pilot_params = GridFitParams {
        max_depth: pilot_depth(params.max_depth, data.n()),
        min_leaf: 1,
        ..params.clone()
    };
    let pilot = grow_greedy(data, y, &pilot_params, 0.0);
    collect_deep_coefficients(&pilot).and_then(|w| estimate_sigma_mad(&w)).unwrap_or(0.0)
}

/// Greedy fit with early stopping at b * sigma.
pub fn fit_uhwt(data: &Dataset, y: &[f64], params: &GridFitParams) -> UhTree {
    let stop = if params.early_stop_b > 0.0 {
        params.early_stop_b * params.sigma.unwrap_or_else(|| pilot_sigma(data, y, params))
    } else {
        0.0
    };
    grow_greedy(data, y, params, stop)
}

pub fn estimate_sigma_mad(coefficients: &[f64]) -> Result<f64> {
    if coefficients.is_empty() {
        return Err(UhwtError::EmptyInput);
    }
    Ok(stats::mad(coefficients) / 0.6745)
}

/// Coefficients from the two deepest internal levels, or every internal
/// coefficient when that set is small both absolutely (< 10) and relative to
/// the tree (< half of the internal nodes).
pub fn collect_deep_coefficients(tree: &UhTree) -> Result<Vec<f64>> {
    let internal: Vec<(usize, f64)> =
        tree.nodes.iter().filter_map(|n| n.w.map(|w| (n.depth, w))).collect();
    if internal.is_empty() {
        return Err(UhwtError::NoInternalNodes);
    }
    let deepest = internal.iter().map(|&(d, _)| d).max().unwrap();
    let deep: Vec<f64> = internal.iter().filter(|&&(d, _)| d + 1 >= deepest).map(|&(_, w)| w).collect();
    if deep.len() < 10 && 2 * deep.len() < internal.len() {
        Ok(internal.iter().map(|&(_, w)| w).collect())
    } else {
        Ok(deep)
    }
}

pub use crate::stats::soft_threshold;

/// Denoised grid fit: a tree with soft-thresholded coefficients.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub tree: UhTree,
    pub sigma_hat: f64,
    pub tau: f64,
}

impl GridModel {
    pub fn predict(&self, p: &[f64]) -> Result<f64> {
        self.tree.reconstruct(p, Coefficients::Shrunk)
    }

    pub fn fitted(&self, data: &Dataset) -> Vec<f64> {
        crate::partition::tree_fit_values(&self.tree, data, Coefficients::Shrunk)
    }
}

pub fn denoise(data: &Dataset, y: &[f64], params: &GridFitParams) -> GridModel {
    let sigma_hat = params.sigma.unwrap_or_else(|| {
        if params.early_stop_b > 0.0 || params.soft_a > 0.0 {
            pilot_sigma(data, y, params)
        } else {
            0.0
        }
    });
    let mut tree = grow_greedy(data, y, params, params.early_stop_b * sigma_hat);
    let tau = params.soft_a * sigma_hat * (2.0 * (data.n() as f64).ln()).sqrt();
    tree.shrink(tau);
    GridModel { tree, sigma_hat, tau }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{tree_fit_values, Split};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::scattered(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>(), ys.to_vec()).unwrap()
    }

    fn sse(members: &[usize], y: &[f64]) -> f64 {
        let m = members.iter().map(|&i| y[i]).sum::<f64>() / members.len() as f64;
        members.iter().map(|&i| (y[i] - m).powi(2)).sum()
    }

    #[test]
    fn candidate_examples() {
        let d = line(&[1.0 / 3.0, 2.0 / 3.0, 1.0], &[0.0, 0.0, 0.0]);
        let c = candidate_splits(&d.root_cell(), &d, 1);
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c[0].1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c[1].1, 5.0 / 6.0, epsilon = 1e-15);
        assert!(candidate_splits(&d.root_cell(), &d, 2).is_empty());
        let one = line(&[0.0], &[1.0]);
        assert!(candidate_splits(&one.root_cell(), &one, 1).is_empty());
    }

    #[test]
    fn greedy_examples() {
        let d = line(&[1.0 / 3.0, 2.0 / 3.0, 1.0], &[0.0, 0.0, 10.0]);
        let (dim, l, w) = greedy_split(&d.root_cell(), &d, d.responses(), 1).unwrap();
        assert_eq!(dim, 0);
        assert_abs_diff_eq!(l, 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.abs(), (2.0f64 / 3.0).sqrt() * 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!((2.0f64 / 3.0).sqrt() * 10.0, 8.165, epsilon = 1e-3);

        let g = Dataset::grid(&[3, 4], vec![0.1; 12]).unwrap();
        let (dim, l, w) = greedy_split(&g.root_cell(), &g, g.responses(), 1).unwrap();
        assert_eq!((dim, l), (0, 0.5));
        assert!(w.abs() < 1e-12);
    }

    #[test]
    fn greedy_split_reduces_sse_by_w_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..48).map(|_| normal.sample(&mut rng)).collect();
        let g = Dataset::grid(&[6, 8], y.clone()).unwrap();
        let root = g.root_cell();
        let (dim, threshold, w) = greedy_split(&root, &g, &y, 1).unwrap();
        let s = Split::new(SplitKind::Axis { dim, threshold }, &root, &g);
        let delta = sse(&root.members, &y) - sse(&s.plus, &y) - sse(&s.minus, &y);
        assert!((delta - w * w).abs() <= 1e-9 * delta.abs().max(1.0));
    }

    #[test]
    fn step_signal_first_split_at_step() {
        let y: Vec<f64> = (0..20).map(|i| if i < 13 { 1.0 } else { 4.0 }).collect();
        let g = Dataset::grid(&[20], y.clone()).unwrap();
        let t = fit_uhwt(&g, &y, &GridFitParams::default());
        match t.nodes[0].split {
            Some(SplitKind::Axis { dim: 0, threshold }) => assert_eq!(threshold, 12.5),
            ref s => panic!("unexpected split {s:?}"),
        }
        // exhaustive scoring agrees
        let root = g.root_cell();
        let best = candidate_splits(&root, &g, 1)
            .into_iter()
            .map(|(d, l)| {
                let s = Split::new(SplitKind::Axis { dim: d, threshold: l }, &root, &g);
                (crate::partition::uh_coefficient(&s, &y).unwrap().abs(), l)
            })
            .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        assert_eq!(best.1, 12.5);
    }

    #[test]
    fn depth_zero_is_root_only() {
        let g = Dataset::grid(&[4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
        let p = GridFitParams { max_depth: 0, ..Default::default() };
        assert_eq!(fit_uhwt(&g, g.responses(), &p).nodes.len(), 1);
    }

    #[test]
    fn full_depth_has_singleton_leaves() {
        let y: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64 * 0.1).collect();
        let g = Dataset::grid(&[8, 8], y.clone()).unwrap();
        let t = fit_uhwt(&g, &y, &GridFitParams { max_depth: 6 + 6, ..Default::default() });
        for id in t.leaf_ids() {
            assert_eq!(t.nodes[id].count, 1);
        }
        let fit = tree_fit_values(&t, &g, Coefficients::Raw);
        for i in 0..64 {
            assert!((fit[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn mad_examples() {
        assert_eq!(estimate_sigma_mad(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(estimate_sigma_mad(&[-3.0, -1.0, 0.0, 1.0, 3.0]).unwrap(), 1.48258, epsilon = 1e-5);
        assert!(matches!(estimate_sigma_mad(&[]), Err(UhwtError::EmptyInput)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let s = estimate_sigma_mad(&x).unwrap();
        assert!((0.97..=1.03).contains(&s));
    }

    #[test]
    fn deep_coefficient_examples() {
        // single split
        let d = line(&[0.0, 1.0], &[0.0, 1.0]);
        let t = fit_uhwt(&d, d.responses(), &GridFitParams::default());
        assert_eq!(collect_deep_coefficients(&t).unwrap().len(), 1);
        // perfect depth-3 dyadic tree: 7 internal nodes on depths 0,1,2
        let y: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let g = Dataset::grid(&[8], y.clone()).unwrap();
        let t = grow_greedy(&g, &y, &GridFitParams { median_splits_only: true, ..Default::default() }, 0.0);
        assert_eq!(t.internal_count(), 7);
        let deep = collect_deep_coefficients(&t).unwrap();
        assert_eq!(deep.len(), 6);
        let root_only = fit_uhwt(&g, &y, &GridFitParams { max_depth: 0, ..Default::default() });
        assert!(matches!(collect_deep_coefficients(&root_only), Err(UhwtError::NoInternalNodes)));
    }

    #[test]
    fn denoise_limits() {
        let y: Vec<f64> = (0..32).map(|i| ((i * 13) % 7) as f64).collect();
        let g = Dataset::grid(&[32], y.clone()).unwrap();
        let exact = denoise(&g, &y, &GridFitParams::default());
        for (a, b) in exact.fitted(&g).iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
        let flat = denoise(&g, &y, &GridFitParams { soft_a: 1e9, sigma: Some(1.0), ..Default::default() });
        let mean = y.iter().sum::<f64>() / 32.0;
        for v in flat.fitted(&g) {
            assert_abs_diff_eq!(v, mean, epsilon = 1e-10);
        }
    }

    #[test]
    fn denoising_blocks_beats_noise() {
        let f: Vec<f64> = (0..64).map(|i| [0.0, 2.0, -1.0, 1.0][i / 16]).collect();
        let normal = Normal::new(0.0, 0.5).unwrap();
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = f.iter().map(|v| v + normal.sample(&mut rng)).collect();
            let g = Dataset::grid(&[64], y.clone()).unwrap();
            let m = denoise(&g, &y, &GridFitParams { soft_a: 0.5, ..Default::default() });
            if stats::mse(&m.fitted(&g), &f) < stats::mse(&y, &f) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "wins = {wins}");
    }

    #[test]
    fn thresholding_is_monotone_in_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..100).map(|i| (i / 25) as f64 + normal.sample(&mut rng)).collect();
        let g = Dataset::grid(&[10, 10], y.clone()).unwrap();
        let mut last = -1.0;
        for a in [0.0, 0.1, 0.3, 0.6, 1.0, 2.0] {
            let m = denoise(&g, &y, &GridFitParams { soft_a: a, sigma: Some(1.0), ..Default::default() });
            let sse = stats::mse(&m.fitted(&g), &y);
            assert!(sse >= last - 1e-12);
            last = sse;
        }
    }
}
