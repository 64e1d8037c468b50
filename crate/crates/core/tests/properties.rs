//! Property tests against brute-force reference computations written here.

use proptest::prelude::*;
use rand::Rng;
use uhwt::bayes::{conjugate_posterior, CoefficientModel, Phi, RuhwtPrior};
use uhwt::ensemble::{boost_grid, rre_fit, weighted_quantile, BoostParams};
use uhwt::grid::{denoise, fit_uhwt, GridFitParams};
use uhwt::io::{encode_tensor, parse_tensor, Tensor};
use uhwt::partition::{Coefficients, Dataset, UhTree};
use uhwt::rng::stream;
use uhwt::sphere::fitter::{fit_sphere, SphereFitParams};
use uhwt::sphere::geometry::SplitRule;
use uhwt::sphere::rotation::{det, haar_rotation, mul, transpose};
use uhwt::stats::soft_threshold;
use uhwt::synth::uniform_sphere_points;

fn grid_strategy(max_cells: usize) -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..9, 1..=3)
        .prop_filter("at least two cells", move |s| {
            let n: usize = s.iter().product();
            (2..=max_cells).contains(&n)
        })
        .prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            (Just(shape), prop::collection::vec(-10.0f64..10.0, n))
        })
}

fn mean_of(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

fn sse_of(idx: &[usize], y: &[f64]) -> f64 {
    let m = mean_of(idx, y);
    idx.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

/// Unit-norm atom built from the child member lists alone.
fn reference_atom(plus: &[usize], minus: &[usize], n: usize) -> Vec<f64> {
    let (np, nm) = (plus.len() as f64, minus.len() as f64);
    let na = np + nm;
    let mut v = vec![0.0; n];
    for &i in plus {
        v[i] = (nm / (na * np)).sqrt();
    }
    for &i in minus {
        v[i] = -(np / (na * nm)).sqrt();
    }
    v
}

fn children(t: &UhTree, id: usize) -> Option<(&[usize], &[usize])> {
    let [a, b] = t.nodes[id].children?;
    Some((&t.nodes[a].members, &t.nodes[b].members))
}

fn gram_deviation(basis: &[Vec<f64>]) -> f64 {
    let mut dev = 0.0f64;
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let g: f64 = basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum();
            dev = dev.max((g - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    dev
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn full_depth_grid_fit_reconstructs((shape, y) in grid_strategy(300)) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams::default());
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..data.n() {
            let r = t.reconstruct(data.point(i), Coefficients::Raw).unwrap();
            prop_assert!((r - y[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn atoms_are_orthonormal_with_zero_mean((shape, y) in grid_strategy(200), depth in 0usize..8) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let n = data.n();
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, ..Default::default() });
        let mut basis = vec![vec![1.0 / (n as f64).sqrt(); n]];
        for id in t.internal_ids() {
            let (a, b) = children(&t, id).unwrap();
            let psi = reference_atom(a, b, n);
            prop_assert!(psi.iter().sum::<f64>().abs() <= 1e-12);
            basis.push(psi);
        }
        prop_assert!(gram_deviation(&basis) <= 1e-10);
    }

    #[test]
    fn children_partition_parent((shape, y) in grid_strategy(200), depth in 0usize..8) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, ..Default::default() });
        for id in t.internal_ids() {
            let (a, b) = children(&t, id).unwrap();
            let mut joined: Vec<usize> = a.iter().chain(b).copied().collect();
            joined.sort_unstable();
            let mut parent = t.nodes[id].members.clone();
            parent.sort_unstable();
            prop_assert_eq!(joined.len(), a.len() + b.len());
            joined.dedup();
            prop_assert_eq!(joined, parent);
        }
    }

    #[test]
    fn partial_tree_matches_leaf_means((shape, y) in grid_strategy(200), depth in 0usize..6) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, ..Default::default() });
        for id in t.leaf_ids() {
            let leaf = &t.nodes[id].members;
            let m = mean_of(leaf, &y);
            for &i in leaf {
                let r = t.reconstruct(data.point(i), Coefficients::Raw).unwrap();
                prop_assert!((r - m).abs() <= 1e-10 * (1.0 + m.abs()));
            }
        }
    }

    #[test]
    fn coefficient_equals_sse_drop((shape, y) in grid_strategy(200), depth in 1usize..6) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, ..Default::default() });
        let mut total_w2 = 0.0;
        for id in t.internal_ids() {
            let (a, b) = children(&t, id).unwrap();
            let w = t.nodes[id].w.unwrap();
            let parent = &t.nodes[id].members;
            let drop = sse_of(parent, &y) - sse_of(a, &y) - sse_of(b, &y);
            let expect = ((a.len() * b.len()) as f64 / parent.len() as f64).sqrt() * (mean_of(a, &y) - mean_of(b, &y));
            prop_assert!((w.abs() - expect.abs()).abs() <= 1e-9 * (1.0 + expect.abs()));
            prop_assert!((drop - w * w).abs() <= 1e-9 * (w * w).max(sse_of(parent, &y)).max(1e-12));
            total_w2 += w * w;
        }
        let fit = uhwt::partition::tree_fit_values(&t, &data, Coefficients::Raw);
        let all: Vec<usize> = (0..data.n()).collect();
        let sse_fit: f64 = fit.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((sse_of(&all, &y) - total_w2 - sse_fit).abs() <= 1e-8 * (1.0 + sse_of(&all, &y)));
    }

    #[test]
    fn relabeling_preserves_reconstruction((shape, y) in grid_strategy(150), pick in any::<prop::sample::Index>()) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams::default());
        let ids: Vec<usize> = t.internal_ids().collect();
        let mut u = t.clone();
        u.swap_labels(ids[pick.index(ids.len())]);
        for i in 0..data.n() {
            let (a, b) = (t.reconstruct(data.point(i), Coefficients::Raw).unwrap(), u.reconstruct(data.point(i), Coefficients::Raw).unwrap());
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn depth_and_leaf_guards((shape, y) in grid_strategy(300), depth in 0usize..10, min_leaf in 1usize..6) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, min_leaf, ..Default::default() });
        prop_assert!(t.max_depth() <= depth);
        for id in t.leaf_ids() {
            if t.nodes[id].parent.is_some() {
                prop_assert!(t.nodes[id].members.len() >= min_leaf);
            }
        }
    }

    #[test]
    fn training_sse_grows_with_threshold((shape, y) in grid_strategy(256), a1 in 0.0f64..2.0, da in 0.0f64..2.0) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let sse = |a: f64| {
            let m = denoise(&data, &y, &GridFitParams { soft_a: a, sigma: Some(1.0), ..Default::default() });
            m.fitted(&data).iter().zip(&y).map(|(f, v)| (f - v).powi(2)).sum::<f64>()
        };
        prop_assert!(sse(a1) <= sse(a1 + da) + 1e-9);
    }

    #[test]
    fn soft_threshold_inequality(theta in prop::collection::vec(-5.0f64..5.0, 1..30), u in prop::collection::vec(-1.0f64..=1.0, 30), tau in 0.01f64..3.0) {
        let z: Vec<f64> = u.iter().take(theta.len()).map(|v| v * tau).collect();
        let lhs: f64 = theta.iter().zip(&z).map(|(t, e)| (soft_threshold(t + e, tau) - t).powi(2)).sum();
        let rhs: f64 = 4.0 * theta.iter().map(|t| (t * t).min(tau * tau)).sum::<f64>();
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
    }

    #[test]
    fn tensor_round_trip_is_bit_identical(shape in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut rng = stream(seed, "prop-tensor", 0);
        let values: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.random::<u64>() & 0x7fef_ffff_ffff_ffff)).collect();
        let t = Tensor::new(shape, values).unwrap();
        let back = parse_tensor(&encode_tensor(&t)).unwrap();
        prop_assert_eq!(back.shape, t.shape);
        prop_assert!(back.values.iter().zip(&t.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn tree_json_round_trip((shape, y) in grid_strategy(100)) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let t = fit_uhwt(&data, &y, &GridFitParams { soft_a: 0.3, sigma: Some(1.0), ..Default::default() });
        let back = UhTree::from_json(&t.to_json().unwrap()).unwrap();
        for i in 0..data.n() {
            let (a, b) = (t.eval(data.point(i), Coefficients::Shrunk), back.eval(data.point(i), Coefficients::Shrunk));
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sphere_fits_reconstruct_and_stay_orthonormal(seed in any::<u64>(), n in 2usize..300, rule in 0usize..4) {
        let rule = [SplitRule::Balance, SplitRule::Balance4, SplitRule::Adapt, SplitRule::AdaptVertex][rule];
        let mut rng = stream(seed, "prop-sphere", 0);
        let pts = uniform_sphere_points(n, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let data = Dataset::sphere(&pts, y.clone()).unwrap();
        let m = fit_sphere(&data, &y, &SphereFitParams { rule, ..Default::default() }, None).unwrap();
        let mut seen = 0;
        let mut basis = Vec::new();
        for t in m.faces.iter().flatten() {
            seen += t.root().members.len();
            let mut c = vec![0.0; n];
            for &i in &t.root().members {
                c[i] = 1.0 / (t.root().members.len() as f64).sqrt();
            }
            basis.push(c);
            for id in t.internal_ids() {
                let (a, b) = children(t, id).unwrap();
                basis.push(reference_atom(a, b, n));
            }
        }
        prop_assert_eq!(seen, n);
        prop_assert!(gram_deviation(&basis) <= 1e-10);
        for i in 0..n {
            prop_assert!((m.predict(&pts[i], Coefficients::Raw) - y[i]).abs() <= 1e-10 * 3.0);
        }
    }

    #[test]
    fn haar_rotations_are_proper(seed in any::<u64>()) {
        let r = haar_rotation(&mut stream(seed, "prop-rot", 0));
        let g = mul(&r, &transpose(&r));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[i][j] - want).abs() <= 1e-12);
            }
        }
        prop_assert!((det(&r) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn boosting_training_error_never_rises((shape, y) in grid_strategy(200), lr in 0.01f64..1.0) {
        let data = Dataset::grid(&shape, y.clone()).unwrap();
        let e = boost_grid(&data, &y, &BoostParams { stages: 15, learning_rate: lr, rotate: false, soft_c: 0.0, seed: 0 }, &GridFitParams { max_depth: 3, ..Default::default() }).unwrap();
        for w in e.train_sse.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn forest_weights_form_a_distribution(seed in any::<u64>(), n in 5usize..80, m in 1usize..6) {
        let mut rng = stream(seed, "prop-forest", 0);
        let pts = uniform_sphere_points(n, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::sphere(&pts, y.clone()).unwrap();
        let f = rre_fit(&data, &y, m, &SphereFitParams { min_leaf: 3, ..Default::default() }, seed).unwrap();
        let q = uniform_sphere_points(1, &mut rng)[0];
        let w = f.quantile_weights(&q);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let lo = weighted_quantile(&y, &w, 0.1).unwrap();
        let hi = weighted_quantile(&y, &w, 0.9).unwrap();
        prop_assert!(lo <= hi);
        // Mean prediction equals the weight-averaged response for unshrunk trees.
        let avg: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        prop_assert!((avg - f.predict(&q)).abs() <= 1e-9);
    }

    #[test]
    fn recursion_matches_reference_enumeration(ys in prop::collection::vec(-2.0f64..2.0, 1..=4), base in 0.2f64..1.0, decay in 0.2f64..1.0, sw in 0.3f64..2.0, s in 0.2f64..1.5) {
        let n = ys.len();
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let data = Dataset::scattered(&pts, ys.clone()).unwrap();
        let prior = RuhwtPrior { split_base: base, split_decay: decay, ..Default::default() };
        let model = CoefficientModel::gaussian(sw, s);
        let reference = reference_log_evidence(&ys, 0, n, 0, &prior, sw, s);
        let lp = Phi::new(&data, &ys, &prior, &model).unwrap().log_phi_root(None).unwrap();
        prop_assert!((lp - reference).exp_m1().abs() <= 1e-9);
    }
}

fn log_normal(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var)
}

/// Log evidence of the interval [lo, hi) of 1-D points at unit spacing, summing
/// over every tree explicitly rather than through a memoized recursion.
fn reference_log_evidence(y: &[f64], lo: usize, hi: usize, depth: usize, prior: &RuhwtPrior, sw: f64, s: f64) -> f64 {
    let idx: Vec<usize> = (lo..hi).collect();
    let n = idx.len();
    let leaf = -sse_of(&idx, y) / (2.0 * s * s) - (n as f64 - 1.0) / 2.0 * (2.0 * std::f64::consts::PI * s * s).ln();
    if n < 2 || depth >= prior.max_depth {
        return leaf;
    }
    let p = prior.split_base * prior.split_decay.powi(depth as i32);
    let k = (n - 1) as f64;
    let mut terms = vec![(1.0 - p).ln() + leaf];
    for cut in lo + 1..hi {
        let (a, b): (Vec<usize>, Vec<usize>) = ((lo..cut).collect(), (cut..hi).collect());
        let w = ((a.len() * b.len()) as f64 / n as f64).sqrt() * (mean_of(&a, y) - mean_of(&b, y));
        terms.push(p.ln() - k.ln() + log_normal(w, sw * sw) + reference_log_evidence(y, lo, cut, depth + 1, prior, sw, s) + reference_log_evidence(y, cut, hi, depth + 1, prior, sw, s));
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[test]
fn conjugate_update_matches_quadrature() {
    for &(w, tau, sigma) in &[(1.3, 1.0, 0.5), (-0.4, 0.3, 1.2), (2.5, 2.0, 2.0)] {
        // Posterior of theta given w ~ N(theta, sigma^2), theta ~ N(0, tau^2), by quadrature.
        let (lo, hi, steps) = (-15.0, 15.0, 300_000);
        let h = (hi - lo) / steps as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=steps {
            let t = lo + k as f64 * h;
            let wt = if k == 0 || k == steps { 0.5 } else { 1.0 };
            let d = wt * (log_normal(w - t, sigma * sigma) + log_normal(t, tau * tau)).exp();
            z += d;
            m1 += d * t;
            m2 += d * t * t;
        }
        let mean = m1 / z;
        let var = m2 / z - mean * mean;
        let (cm, cv) = conjugate_posterior(w, tau, sigma);
        assert!((cm - mean).abs() < 1e-6, "{cm} vs {mean}");
        assert!((cv - var).abs() < 1e-6, "{cv} vs {var}");
    }
}
