//! Randomized self-checks behind `uhwt verify`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::bayes::{sample_prior_tree, CoefficientModel, Phi, RuhwtPrior};
use crate::error::{Result, UhwtError};
use crate::grid::{fit_uhwt, GridFitParams};
use crate::oracle::{delta_cart, enumerate_posterior, leafwise_fit, oracle_bound_trial, soft_threshold_lemma_check, PartitionSpec, SparseSignal};
use crate::partition::{uh_coefficient, Coefficients, Dataset, Split, SplitKind, UhTree};
use crate::rng::stream;
use crate::sphere::fitter::{fit_sphere, SphereFitParams};
use crate::sphere::geometry::SplitRule;
use crate::synth::uniform_sphere_points;

fn normals<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random lattice of up to `max_cells` cells in 1 to 3 dimensions.
pub fn random_grid<R: Rng>(rng: &mut R, max_cells: usize) -> Dataset {
    loop {
        let d = rng.random_range(1..=3usize);
        let side = (max_cells as f64).powf(1.0 / d as f64).floor() as usize;
        let shape: Vec<usize> = (0..d).map(|_| rng.random_range(1..=side.max(1))).collect();
        let n: usize = shape.iter().product();
        if n >= 2 {
            return Dataset::grid(&shape, normals(n, rng)).expect("valid shape");
        }
    }
}

pub fn random_sphere<R: Rng>(rng: &mut R, n: usize) -> Dataset {
    let pts = uniform_sphere_points(n, rng);
    Dataset::sphere(&pts, normals(n, rng)).expect("unit points")
}

pub const RULES: [SplitRule; 4] = [SplitRule::Balance, SplitRule::Balance4, SplitRule::Adapt, SplitRule::AdaptVertex];

/// Largest relative reconstruction error of full-depth unshrunk fits.
pub fn reconstruction_error(grids: usize, spheres: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let rel = |fit: &[f64], y: &[f64]| {
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        fit.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    };
    for k in 0..grids {
        let mut rng = stream(seed, "verify-grid", k as u64);
        let data = random_grid(&mut rng, 4096);
        let y = data.responses().to_vec();
        let t = fit_uhwt(&data, &y, &GridFitParams::default());
        let fit: Vec<f64> = (0..data.n()).map(|i| t.reconstruct(data.point(i), Coefficients::Raw).unwrap_or(f64::NAN)).collect();
        worst = worst.max(rel(&fit, &y));
    }
    for k in 0..spheres {
        let mut rng = stream(seed, "verify-sphere", k as u64);
        let n = rng.random_range(2..=500usize);
        let data = random_sphere(&mut rng, n);
        let y = data.responses().to_vec();
        let rule = RULES[k % RULES.len()];
        let m = fit_sphere(&data, &y, &SphereFitParams { rule, ..Default::default() }, None).expect("sphere fit");
        let fit: Vec<f64> = (0..n).map(|i| m.predict(&data.point3(i), Coefficients::Raw)).collect();
        worst = worst.max(rel(&fit, &y));
    }
    worst
}

/// Max deviation of the Gram matrix of {leaf-block constants, atoms} from the identity.
/// The constants are one per root tree.
pub fn gram_deviation(trees: &[&UhTree], n: usize) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for t in trees {
        let root = &t.root().members;
        let mut c = vec![0.0; n];
        for &i in root {
            c[i] = 1.0 / (root.len() as f64).sqrt();
        }
        basis.push(c);
        basis.extend(t.internal_ids().filter_map(|id| t.atom_on_members(id, n)));
    }
    let mut dev = 0.0f64;
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let g: f64 = basis[a].iter().zip(&basis[b]).map(|(x, y)| x * y).sum();
            dev = dev.max((g - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    dev
}

pub fn orthonormality(instances: usize, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let prior = RuhwtPrior { split_base: 0.95, split_decay: 0.9, ..Default::default() };
    for k in 0..instances {
        let mut rng = stream(seed, "verify-ortho-grid", k as u64);
        let data = random_grid(&mut rng, 256);
        let t = sample_prior_tree(&prior, &data, &mut rng).expect("grid prior tree");
        worst = worst.max(gram_deviation(&[&t], data.n()));
        let mut rng = stream(seed, "verify-ortho-sphere", k as u64);
        let n = rng.random_range(2..=200usize);
        let data = random_sphere(&mut rng, n);
        let m = fit_sphere(&data, data.responses(), &SphereFitParams { rule: RULES[k % 4], ..Default::default() }, None).expect("sphere fit");
        let faces: Vec<&UhTree> = m.faces.iter().flatten().collect();
        worst = worst.max(gram_deviation(&faces, n));
    }
    worst
}

/// (max relative |delta - w^2|, max |leafwise - tree fit|).
pub fn cart_identities(splits: usize, trees: usize, seed: u64) -> (f64, f64) {
    let mut worst_delta = 0.0f64;
    let mut k = 0u64;
    let mut done = 0;
    while done < splits {
        let mut rng = stream(seed, "verify-cart", k);
        k += 1;
        let data = random_grid(&mut rng, 512);
        let d = rng.random_range(0..data.dim());
        let root = data.root_cell();
        let lo = root.members.iter().map(|&i| data.point(i)[d]).fold(f64::INFINITY, f64::min);
        let hi = root.members.iter().map(|&i| data.point(i)[d]).fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            continue;
        }
        let threshold = rng.random_range(lo..hi).floor() + 0.5;
        let split = Split::new(SplitKind::Axis { dim: d, threshold }, &root, &data);
        if split.plus.is_empty() || split.minus.is_empty() {
            continue;
        }
        let y = data.responses();
        let w = uh_coefficient(&split, y).expect("nonempty split");
        let delta = delta_cart(&root, &split, y);
        // Delta is a difference of sums of squares, so its rounding scales with the parent SSE.
        let scale = (w * w).max(crate::oracle::sse(&root.members, y));
        worst_delta = worst_delta.max((delta - w * w).abs() / scale.max(1e-300));
        done += 1;
    }
    let mut worst_leaf = 0.0f64;
    for k in 0..trees {
        let mut rng = stream(seed, "verify-leafwise", k as u64);
        let data = random_grid(&mut rng, 256);
        let y = data.responses().to_vec();
        let depth = rng.random_range(1..=6usize);
        let t = fit_uhwt(&data, &y, &GridFitParams { max_depth: depth, ..Default::default() });
        for i in 0..data.n() {
            let a = leafwise_fit(&t, &data, &y, data.point(i)).expect("in domain");
            let b = t.reconstruct(data.point(i), Coefficients::Raw).expect("in domain");
            worst_leaf = worst_leaf.max((a - b).abs());
        }
    }
    (worst_delta, worst_leaf)
}

/// Number of random instances violating the soft-threshold inequality.
pub fn lemma_violations(instances: usize, seed: u64) -> Result<usize> {
    let mut bad = 0;
    for k in 0..instances {
        let mut rng = stream(seed, "verify-lemma", k as u64);
        let m = rng.random_range(1..=20usize);
        let tau = rng.random_range(0.01..3.0);
        let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0) * tau).collect();
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0) * tau).collect();
        if !soft_threshold_lemma_check(&theta, &z, tau)? {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Largest relative gap between the recursion and brute-force enumeration.
pub fn enumeration_gap(instances: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = stream(seed, "verify-enum", k as u64);
        let n = rng.random_range(1..=5usize);
        let d = rng.random_range(1..=2usize);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0..4) as f64 + 0.1 * rng.random::<f64>()).collect()).collect();
        let data = Dataset::scattered(&pts, normals(n, &mut rng))?;
        let prior = RuhwtPrior { split_base: rng.random_range(0.3..1.0), split_decay: rng.random_range(0.2..1.0), ..Default::default() };
        let model = CoefficientModel::gaussian(rng.random_range(0.5..2.0), rng.random_range(0.2..1.5));
        let e = enumerate_posterior(&data, data.responses(), &prior, &model, None)?;
        let lp = Phi::new(&data, data.responses(), &prior, &model)?.log_phi_root(None)?;
        worst = worst.max((lp - e.log_total).exp_m1().abs());
    }
    Ok(worst)
}

/// Run one named check; returns (pass, details).
pub fn run_check(name: &str, instances: usize, replicates: usize, seed: u64) -> Result<(bool, Value)> {
    Ok(match name {
        "reconstruction" => {
            let e = reconstruction_error(instances, instances, seed);
            (e <= 1e-10, json!({ "max_relative_error": e }))
        }
        "orthonormality" => {
            let e = orthonormality(instances, seed);
            (e <= 1e-10, json!({ "max_gram_deviation": e }))
        }
        "cart" => {
            let (d, l) = cart_identities(100 * instances, instances, seed);
            (d <= 1e-9 && l <= 1e-10, json!({ "max_delta_relative_error": d, "max_leafwise_gap": l }))
        }
        "lemma" => {
            let v = lemma_violations(100 * instances, seed)?;
            (v == 0, json!({ "violations": v }))
        }
        "bounds" => {
            let delta = 0.1;
            let signal = SparseSignal { amplitudes_tau: vec![4.0, 3.0, 2.0, 1.5, 1.0, 0.5, 0.5, 0.25], offset: 0.0, seed };
            let r = oracle_bound_trial(&PartitionSpec { n: 64, leaves: 64 }, &signal, 1.0, delta, replicates, seed)?;
            let floor = 1.0 - delta - 0.07;
            (r.uh_coverage >= floor && r.leaf_coverage >= floor, json!({ "uh_coverage": r.uh_coverage, "leaf_coverage": r.leaf_coverage }))
        }
        "enumeration" => {
            let g = enumeration_gap(instances, seed)?;
            (g <= 1e-9, json!({ "max_relative_gap": g }))
        }
        other => return Err(UhwtError::PreconditionViolated(format!("unknown check `{other}`"))),
    })
}
