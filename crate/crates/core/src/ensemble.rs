//! Random-rotation boosting and forests, grid boosting, and quantile forests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UhwtError};
use crate::grid::{grow_greedy, pilot_sigma, GridFitParams};
use crate::partition::{Coefficients, Dataset, UhTree};
use crate::rng::stream;
use crate::sphere::fitter::{fit_rotated, pilot_sigma_faces, rotate_dataset, SphereFitParams, SphereModel};
use crate::sphere::geometry::{icosahedron, Vec3};
use crate::sphere::fitter::assign_faces;
use crate::sphere::rotation::{haar_rotation, IDENTITY};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostParams {
    pub stages: usize,
    pub learning_rate: f64,
    pub rotate: bool,
    /// Per-stage threshold multiplier c: tau_t = c * sigma_t * sqrt(2 ln n).
    pub soft_c: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { stages: 100, learning_rate: 0.05, rotate: true, soft_c: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub enum WeakLearner {
    Sphere(SphereModel),
    Grid(UhTree),
}

impl WeakLearner {
    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            WeakLearner::Sphere(m) => m.predict(&[p[0], p[1], p[2]], Coefficients::Shrunk),
            WeakLearner::Grid(t) => t.eval(p, Coefficients::Shrunk),
        }
    }

    /// Values at the training points the learner was fit on.
    pub fn fitted(&self, n: usize) -> Vec<f64> {
        match self {
            WeakLearner::Sphere(m) => m.fitted(n, Coefficients::Shrunk),
            WeakLearner::Grid(t) => {
                let mut out = vec![t.intercept(); n];
                t.fit_values_into(Coefficients::Shrunk, &mut out);
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub learner: WeakLearner,
    pub sigma_hat: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct BoostEnsemble {
    pub intercept: f64,
    pub learning_rate: f64,
    pub stages: Vec<Stage>,
    /// Training SSE after each stage, starting with the constant fit.
    pub train_sse: Vec<f64>,
}

impl BoostEnsemble {
    pub fn predict(&self, p: &[f64]) -> f64 {
        self.predict_prefix(p, self.stages.len())
    }

    /// Prediction using only the first `g` stages.
    pub fn predict_prefix(&self, p: &[f64], g: usize) -> f64 {
        self.intercept + self.learning_rate * self.stages[..g.min(self.stages.len())].iter().map(|s| s.learner.eval(p)).sum::<f64>()
    }

    /// Predictions after each stage count in `checkpoints`.
    pub fn predict_checkpoints(&self, p: &[f64], checkpoints: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut acc = 0.0;
        let mut done = 0;
        for &g in checkpoints {
            let g = g.min(self.stages.len());
            if g < done {
                out.push(self.predict_prefix(p, g));
                continue;
            }
            for s in &self.stages[done..g] {
                acc += s.learner.eval(p);
            }
            done = g;
            out.push(self.intercept + self.learning_rate * acc);
        }
        out
    }
}

fn sse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum()
}

fn boost_loop<F>(y: &[f64], params: &BoostParams, mut fit_stage: F) -> Result<BoostEnsemble>
where
    F: FnMut(usize, &[f64]) -> Result<Stage>,
{
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(UhwtError::PreconditionViolated("learning rate must lie in (0, 1]".into()));
    }
    let n = y.len();
    let intercept = crate::stats::mean(y);
    let mut f = vec![intercept; n];
    let mut stages = Vec::with_capacity(params.stages);
    let mut trace = vec![sse(y, &f)];
    for t in 0..params.stages {
        let r: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let stage = fit_stage(t, &r)?;
        let g = stage.learner.fitted(n);
        for i in 0..n {
            f[i] += params.learning_rate * g[i];
        }
        trace.push(sse(y, &f));
        stages.push(stage);
    }
    Ok(BoostEnsemble { intercept, learning_rate: params.learning_rate, stages, train_sse: trace })
}

/// Boosting on the sphere, each stage fit on residuals in a fresh rotation.
pub fn boost_sphere(data: &Dataset, y: &[f64], params: &BoostParams, base: &SphereFitParams) -> Result<BoostEnsemble> {
    let n = data.n() as f64;
    let mesh = icosahedron();
    boost_loop(y, params, |t, r| {
        let rotation = if params.rotate { haar_rotation(&mut stream(params.seed, "boost-rotation", t as u64)) } else { IDENTITY };
        let rotated = if params.rotate { rotate_dataset(data, &rotation)? } else { data.clone() };
        let needs_sigma = params.soft_c > 0.0 || base.early_stop_b > 0.0;
        let sigma_hat = match base.sigma {
            Some(s) => s,
            None if needs_sigma => {
                let faces = assign_faces(&mesh, &rotated);
                pilot_sigma_faces(&mesh, &faces, &rotated, r, base)
            }
            None => 0.0,
        };
        let stage_params = SphereFitParams { soft_a: 0.0, sigma: Some(sigma_hat), ..base.clone() };
        let mut model = fit_rotated(&rotated, r, &stage_params, rotation);
        let tau = params.soft_c * sigma_hat * (2.0 * n.ln()).sqrt();
        for tree in model.faces.iter_mut().flatten() {
            tree.shrink(tau);
        }
        model.tau = tau;
        Ok(Stage { learner: WeakLearner::Sphere(model), sigma_hat, tau })
    })
}

/// Boosting on a grid (identity rotation).
pub fn boost_grid(data: &Dataset, y: &[f64], params: &BoostParams, base: &GridFitParams) -> Result<BoostEnsemble> {
    let n = data.n() as f64;
    boost_loop(y, params, |_, r| {
        let needs_sigma = params.soft_c > 0.0 || base.early_stop_b > 0.0;
        let sigma_hat = match base.sigma {
            Some(s) => s,
            None if needs_sigma => pilot_sigma(data, r, base),
            None => 0.0,
        };
        let mut tree = grow_greedy(data, r, base, base.early_stop_b * sigma_hat);
        let tau = params.soft_c * sigma_hat * (2.0 * n.ln()).sqrt();
        tree.shrink(tau);
        Ok(Stage { learner: WeakLearner::Grid(tree), sigma_hat, tau })
    })
}

/// Mean-aggregated ensemble of independently rotated sphere fits.
#[derive(Debug, Clone)]
pub struct ForestEnsemble {
    pub members: Vec<SphereModel>,
    pub n_train: usize,
}

pub fn rre_fit(data: &Dataset, y: &[f64], members: usize, base: &SphereFitParams, seed: u64) -> Result<ForestEnsemble> {
    if members == 0 {
        return Err(UhwtError::PreconditionViolated("forest needs at least one member".into()));
    }
    let models: Result<Vec<SphereModel>> = (0..members)
        .into_par_iter()
        .map(|m| {
            let r = haar_rotation(&mut stream(seed, "forest-rotation", m as u64));
            let rotated = rotate_dataset(data, &r)?;
            Ok(fit_rotated(&rotated, y, base, r))
        })
        .collect();
    Ok(ForestEnsemble { members: models?, n_train: data.n() })
}

impl ForestEnsemble {
    pub fn predict(&self, p: &Vec3) -> f64 {
        self.members.iter().map(|m| m.predict(p, Coefficients::Shrunk)).sum::<f64>() / self.members.len() as f64
    }

    pub fn member_predictions(&self, p: &Vec3) -> Vec<f64> {
        self.members.iter().map(|m| m.predict(p, Coefficients::Shrunk)).collect()
    }

    /// Weight of each training index: the average over members of the
    /// uniform distribution on the leaf holding the query.
    pub fn quantile_weights(&self, p: &Vec3) -> Vec<f64> {
        let n = self.n_train;
        let b = self.members.len() as f64;
        let mut w = vec![0.0; n];
        for m in &self.members {
            let (j, q) = m.locate(p);
            match &m.faces[j] {
                Some(t) => {
                    let leaf = &t.nodes[t.leaf_of(&q)];
                    let share = 1.0 / (b * leaf.members.len() as f64);
                    for &i in &leaf.members {
                        w[i] += share;
                    }
                }
                None => {
                    for v in w.iter_mut() {
                        *v += 1.0 / (b * n as f64);
                    }
                }
            }
        }
        w
    }

    pub fn quantile_predict(&self, y: &[f64], p: &Vec3, q: f64) -> Result<f64> {
        weighted_quantile(y, &self.quantile_weights(p), q)
    }
}

/// Smallest y whose cumulative weight reaches q.
pub fn weighted_quantile(y: &[f64], w: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(UhwtError::InvalidQuantile(q));
    }
    let mut idx: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    if idx.is_empty() {
        return Err(UhwtError::EmptyInput);
    }
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut cum = 0.0;
    for &i in &idx {
        cum += w[i];
        if cum >= q - 1e-12 {
            return Ok(y[i]);
        }
    }
    Ok(y[*idx.last().unwrap()])
}

pub fn quantile_weights(forest: &ForestEnsemble, p: &Vec3) -> Vec<f64> {
    forest.quantile_weights(p)
}

pub fn quantile_predict(forest: &ForestEnsemble, y: &[f64], p: &Vec3, q: f64) -> Result<f64> {
    forest.quantile_predict(y, p, q)
}
