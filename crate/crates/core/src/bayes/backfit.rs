//! Bayesian backfitting of a sum of UH trees with conjugate coefficient draws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mcmc::{mcmc_step, Target};
use super::{BTree, BTreeRecord, CoefficientModel, RuhwtPrior};
use crate::error::{Result, UhwtError};
use crate::partition::Dataset;
use crate::rng::stream;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackfitParams {
    /// Number of trees.
    pub m: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub store_every: usize,
    /// Coefficient prior scale: theta ~ N(0, tau^2).
    pub tau: f64,
    /// Noise standard deviation.
    pub sigma: f64,
    /// Tree moves per component per sweep.
    pub n_inner: usize,
    pub swap_prob: f64,
    pub prior: RuhwtPrior,
    pub seed: u64,
}

impl Default for BackfitParams {
    fn default() -> Self {
        BackfitParams {
            m: 20,
            sweeps: 200,
            burn_in: 50,
            store_every: 1,
            tau: 1.0,
            sigma: 1.0,
            n_inner: 1,
            swap_prob: 0.0,
            prior: RuhwtPrior::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub sweep: usize,
    pub mu: f64,
    pub trees: Vec<BTreeRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct PosteriorDraws {
    /// Fitted values at the training locations, one vector per stored sweep.
    pub fits: Vec<Vec<f64>>,
    pub records: Vec<DrawRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// 97.5th minus 2.5th percentile.
    pub width95: Vec<f64>,
}

/// Posterior mean and variance of a coefficient given its empirical value `w`.
pub fn conjugate_posterior(w: f64, tau: f64, sigma: f64) -> (f64, f64) {
    let var = 1.0 / (1.0 / (tau * tau) + 1.0 / (sigma * sigma));
    (var * w / (sigma * sigma), var)
}

pub fn backfit(data: &Dataset, y: &[f64], params: &BackfitParams) -> Result<PosteriorDraws> {
    if params.m == 0 || params.sweeps == 0 || params.store_every == 0 {
        return Err(UhwtError::PreconditionViolated("m, sweeps and store_every must be positive".into()));
    }
    if y.len() != data.n() {
        return Err(UhwtError::DimensionMismatch { expected: data.n(), found: y.len() });
    }
    if !(params.tau > 0.0 && params.sigma > 0.0) {
        return Err(UhwtError::PreconditionViolated("tau and sigma must be positive".into()));
    }
    params.prior.validate()?;
    let n = data.n();
    // Marginally w ~ N(0, tau^2 + sigma^2) given the tree.
    let model = CoefficientModel::gaussian((params.tau.powi(2) + params.sigma.powi(2)).sqrt(), params.sigma);
    let mut rng = stream(params.seed, "backfit", 0);
    let mut trees: Vec<BTree> = (0..params.m).map(|_| BTree::new(n)).collect();
    let mut fits: Vec<Vec<f64>> = vec![vec![0.0; n]; params.m];
    let mut total = vec![0.0; n];
    let mut mu = stats::mean(y);
    let mut out = PosteriorDraws::default();
    let mut resid = vec![0.0; n];
    for sweep in 0..params.sweeps {
        for t in 0..params.m {
            for i in 0..n {
                total[i] -= fits[t][i];
                resid[i] = y[i] - mu - total[i];
            }
            let target = Target { data, y: &resid, prior: &params.prior, model: &model };
            for _ in 0..params.n_inner {
                mcmc_step(&mut trees[t], &target, params.swap_prob, &mut rng);
            }
            for (id, w) in trees[t].coefficients(&resid) {
                let (m, v) = conjugate_posterior(w, params.tau, params.sigma);
                let z: f64 = rng.sample(StandardNormal);
                trees[t].node_mut(id).theta = m + v.sqrt() * z;
            }
            fits[t] = trees[t].fitted(n);
            for i in 0..n {
                total[i] += fits[t][i];
            }
        }
        mu = (0..n).map(|i| y[i] - total[i]).sum::<f64>() / n as f64;
        if sweep >= params.burn_in && (sweep - params.burn_in) % params.store_every == 0 {
            out.fits.push(total.iter().map(|v| v + mu).collect());
            out.records.push(DrawRecord { sweep, mu, trees: trees.iter().map(|t| t.to_record()).collect() });
        }
    }
    Ok(out)
}

/// Pointwise mean, sample sd and central 95% width over draws.
pub fn posterior_summary(draws: &[Vec<f64>]) -> Result<PosteriorSummary> {
    if draws.len() < 2 {
        return Err(UhwtError::TooFewDraws(draws.len()));
    }
    let n = draws[0].len();
    let mut s = PosteriorSummary { mean: Vec::with_capacity(n), sd: Vec::with_capacity(n), width95: Vec::with_capacity(n) };
    let mut col = vec![0.0; draws.len()];
    for i in 0..n {
        for (k, d) in draws.iter().enumerate() {
            col[k] = d[i];
        }
        s.mean.push(stats::mean(&col));
        s.sd.push(stats::sd(&col));
        s.width95.push(stats::percentile(&col, 97.5) - stats::percentile(&col, 2.5));
    }
    Ok(s)
}
