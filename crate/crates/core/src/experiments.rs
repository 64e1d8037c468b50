//! Reusable experiment runners shared by the CLI and the acceptance suite.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{boost_grid, boost_sphere, rre_fit, BoostEnsemble, BoostParams};
use crate::error::{Result, UhwtError};
use crate::grid::{denoise, GridFitParams};
use crate::partition::Dataset;
use crate::sphere::fitter::SphereFitParams;
use crate::sphere::geometry::Vec3;
use crate::stats;
use crate::synth::{add_noise, blocks_image, sphere_sample, sphere_test_set, uniform_sphere_points, SphereSignal};
use crate::rng::stream;

/// Mean squared error of a boosted ensemble against `truth` at each checkpoint.
pub fn checkpoint_mse(model: &BoostEnsemble, points: &[Vec<f64>], truth: &[f64], checkpoints: &[usize]) -> Vec<f64> {
    let sums = points
        .par_iter()
        .zip(truth.par_iter())
        .map(|(p, t)| model.predict_checkpoints(p, checkpoints).into_iter().map(|v| (v - t).powi(2)).collect::<Vec<f64>>())
        .reduce(|| vec![0.0; checkpoints.len()], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    sums.into_iter().map(|s| s / truth.len().max(1) as f64).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SphereBenchConfig {
    pub signal: String,
    pub n: usize,
    pub noise_frac: f64,
    pub test_n: usize,
    pub learning_rate: f64,
    pub checkpoints: Vec<usize>,
    pub soft_c: f64,
    pub base: SphereFitParams,
    /// Also fit identity-rotation boosting with the same settings.
    pub identity: bool,
    /// Forest size for mean aggregation; 0 skips the forest.
    pub forest_members: usize,
    pub seed: u64,
}

impl Default for SphereBenchConfig {
    fn default() -> Self {
        SphereBenchConfig {
            signal: "fig5".into(),
            n: 300,
            noise_frac: 0.1,
            test_n: 15300,
            learning_rate: 0.05,
            checkpoints: vec![500],
            soft_c: 0.0,
            base: SphereFitParams { min_leaf: 5, ..Default::default() },
            identity: false,
            forest_members: 0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereBenchReport {
    pub checkpoints: Vec<usize>,
    pub rr_boost: Vec<f64>,
    pub identity_boost: Option<Vec<f64>>,
    pub forest: Option<f64>,
    pub train_mse: f64,
}

/// Signal lookup that also accepts a user sample set.
pub fn resolve_signal(id: &str, samples: Option<Vec<(Vec3, f64)>>) -> Result<SphereSignal> {
    match samples {
        Some(s) if !s.is_empty() => Ok(SphereSignal::Samples(s)),
        Some(_) => Err(UhwtError::EmptyInput),
        None => SphereSignal::by_id(id),
    }
}

pub fn sphere_bench(cfg: &SphereBenchConfig, signal: &SphereSignal) -> Result<SphereBenchReport> {
    let mut checkpoints = cfg.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let stages = *checkpoints.last().ok_or_else(|| UhwtError::PreconditionViolated("no checkpoints".into()))?;
    if stages == 0 {
        return Err(UhwtError::PreconditionViolated("stage count must be positive".into()));
    }
    let train = sphere_sample(signal, cfg.n, cfg.noise_frac, cfg.seed, "train")?;
    let (test_pts, test_truth) = sphere_test_set(signal, cfg.test_n, cfg.seed);
    let test_pts: Vec<Vec<f64>> = test_pts.iter().map(|p| p.to_vec()).collect();
    let y = train.data.responses().to_vec();
    let bp = BoostParams { stages, learning_rate: cfg.learning_rate, rotate: true, soft_c: cfg.soft_c, seed: cfg.seed };
    let rr = boost_sphere(&train.data, &y, &bp, &cfg.base)?;
    let rr_boost = checkpoint_mse(&rr, &test_pts, &test_truth, &checkpoints);
    let train_fit: Vec<f64> = (0..train.data.n()).map(|i| rr.predict(train.data.point(i))).collect();
    let train_mse = stats::mse(&train_fit, &y);
    let identity_boost = if cfg.identity {
        let id = boost_sphere(&train.data, &y, &BoostParams { rotate: false, ..bp.clone() }, &cfg.base)?;
        Some(checkpoint_mse(&id, &test_pts, &test_truth, &checkpoints))
    } else {
        None
    };
    let forest = if cfg.forest_members > 0 {
        let f = rre_fit(&train.data, &y, cfg.forest_members, &cfg.base, cfg.seed)?;
        let sse: f64 = test_pts.par_iter().zip(test_truth.par_iter()).map(|(p, t)| (f.predict(&[p[0], p[1], p[2]]) - t).powi(2)).sum();
        Some(sse / test_truth.len().max(1) as f64)
    } else {
        None
    };
    Ok(SphereBenchReport { checkpoints, rr_boost, identity_boost, forest, train_mse })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileConfig {
    pub signal: String,
    pub n: usize,
    pub noise_frac: f64,
    pub members: usize,
    pub holdout: usize,
    pub lower: f64,
    pub upper: f64,
    pub base: SphereFitParams,
    pub seed: u64,
}

impl Default for QuantileConfig {
    fn default() -> Self {
        QuantileConfig {
            signal: "fig5".into(),
            n: 300,
            noise_frac: 0.1,
            members: 500,
            holdout: 1000,
            lower: 0.05,
            upper: 0.95,
            base: SphereFitParams { min_leaf: 5, ..Default::default() },
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileReport {
    pub coverage: f64,
    pub mean_width: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<Vec3>,
}

/// Forest prediction intervals, scored on fresh noisy responses.
pub fn quantile_coverage(cfg: &QuantileConfig, signal: &SphereSignal) -> Result<QuantileReport> {
    if !(cfg.lower > 0.0 && cfg.lower < cfg.upper && cfg.upper < 1.0) {
        return Err(UhwtError::InvalidQuantile(if cfg.lower > 0.0 && cfg.lower < 1.0 { cfg.upper } else { cfg.lower }));
    }
    let train = sphere_sample(signal, cfg.n, cfg.noise_frac, cfg.seed, "train")?;
    let y = train.data.responses().to_vec();
    let forest = rre_fit(&train.data, &y, cfg.members, &cfg.base, cfg.seed)?;
    let points = uniform_sphere_points(cfg.holdout, &mut stream(cfg.seed, "holdout-points", 0));
    let truth: Vec<f64> = points.iter().map(|p| signal.eval(p)).collect();
    let observed = add_noise(&truth, train.noise_sd, cfg.seed, "holdout-noise");
    let bounds: Vec<(f64, f64)> = points
        .par_iter()
        .map(|p| {
            let w = forest.quantile_weights(p);
            Ok((crate::ensemble::weighted_quantile(&y, &w, cfg.lower)?, crate::ensemble::weighted_quantile(&y, &w, cfg.upper)?))
        })
        .collect::<Result<_>>()?;
    let hits = bounds.iter().zip(&observed).filter(|((lo, hi), v)| *lo <= **v && **v <= *hi).count();
    let (lower, upper): (Vec<f64>, Vec<f64>) = bounds.into_iter().unzip();
    let mean_width = stats::mean(&upper.iter().zip(&lower).map(|(h, l)| h - l).collect::<Vec<_>>());
    Ok(QuantileReport { coverage: hits as f64 / cfg.holdout.max(1) as f64, mean_width, lower, upper, points })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageBoostConfig {
    pub size: usize,
    pub b_values: Vec<f64>,
    pub median_splits_only: bool,
    pub stages: usize,
    pub learning_rate: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for ImageBoostConfig {
    fn default() -> Self {
        ImageBoostConfig {
            size: 128,
            b_values: vec![0.1, 0.2, 0.25, 0.3, 0.4, 0.5],
            median_splits_only: false,
            stages: 100,
            learning_rate: 0.1,
            checkpoint_every: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageBoostRow {
    pub b: f64,
    pub single_mse: f64,
    pub checkpoints: Vec<usize>,
    pub boost_mse: Vec<f64>,
}

impl ImageBoostRow {
    pub fn best_boost(&self) -> f64 {
        self.boost_mse.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Single tree and boosting on a noisy blocks image, noise sd equal to the
/// image's own sd.
pub fn image_boost(cfg: &ImageBoostConfig) -> Result<Vec<ImageBoostRow>> {
    if cfg.size < 2 || cfg.stages == 0 || cfg.checkpoint_every == 0 {
        return Err(UhwtError::PreconditionViolated("size >= 2, stages and checkpoint_every positive".into()));
    }
    let truth = blocks_image(cfg.size, cfg.size);
    let y = add_noise(&truth, stats::sd(&truth), cfg.seed, "image-noise");
    let data = Dataset::grid(&[cfg.size, cfg.size], y.clone())?;
    let mut checkpoints: Vec<usize> = (1..=cfg.stages / cfg.checkpoint_every).map(|k| k * cfg.checkpoint_every).collect();
    if checkpoints.last() != Some(&cfg.stages) {
        checkpoints.push(cfg.stages);
    }
    let points: Vec<Vec<f64>> = (0..data.n()).map(|i| data.point(i).to_vec()).collect();
    cfg.b_values
        .iter()
        .map(|&b| {
            let p = GridFitParams { early_stop_b: b, median_splits_only: cfg.median_splits_only, ..Default::default() };
            let single = denoise(&data, &y, &p);
            let single_mse = stats::mse(&single.fitted(&data), &truth);
            let bp = BoostParams { stages: cfg.stages, learning_rate: cfg.learning_rate, rotate: false, soft_c: 0.0, seed: cfg.seed };
            let e = boost_grid(&data, &y, &bp, &p)?;
            Ok(ImageBoostRow { b, single_mse, boost_mse: checkpoint_mse(&e, &points, &truth, &checkpoints), checkpoints: checkpoints.clone() })
        })
        .collect()
}
