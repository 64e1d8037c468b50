//! Exact posterior recursion, posterior sampling, MCMC and backfitting.

use uhwt::bayes::{backfit, posterior_summary, run_chain, sample_posterior_tree, BackfitParams, ChainParams, CoefficientModel, Phi, RuhwtPrior, Target};
use uhwt::oracle::{enumerate_posterior, total_variation};
use uhwt::partition::Dataset;
use uhwt::rng::stream;
use uhwt::synth::{add_noise, star_image};

fn main() -> uhwt::Result<()> {
    // Four points on a line: small enough to enumerate every tree.
    let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
    let y = vec![0.1, 1.5, -0.3, 0.9];
    let data = Dataset::scattered(&pts, y.clone())?;
    let prior = RuhwtPrior::default();
    let model = CoefficientModel::gaussian(1.0, 0.5);

    let mut phi = Phi::new(&data, &y, &prior, &model)?;
    let exact = enumerate_posterior(&data, &y, &prior, &model, None)?;
    println!("log phi(root) {:.6}, enumeration {:.6}, {} trees", phi.log_phi_root(None)?, exact.log_total, exact.trees.len());
    let draw = sample_posterior_tree(&mut phi, &mut stream(1, "example", 0))?;
    println!("exact posterior draw: {}", draw.key());

    let target = Target { data: &data, y: &y, prior: &prior, model: &model };
    let chain = run_chain(&target, &ChainParams { steps: 50_000, burn_in: 1000, swap_prob: 0.3, seed: 1 })?;
    println!("mcmc acceptance {:.3}, tv to exact {:.4}", chain.accepted as f64 / 50_000.0, total_variation(&chain.visits, &exact));

    // Sum of trees on a small noisy image.
    let size = 24;
    let truth = star_image(size);
    let noisy = add_noise(&truth, 0.1, 2, "example-noise");
    let grid = Dataset::grid(&[size, size], noisy.clone())?;
    let params = BackfitParams { m: 10, sweeps: 60, burn_in: 20, sigma: 0.1, tau: 0.5, seed: 2, ..Default::default() };
    let draws = backfit(&grid, &noisy, &params)?;
    let s = posterior_summary(&draws.fits)?;
    let mse = s.mean.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    let mean_sd = s.sd.iter().sum::<f64>() / s.sd.len() as f64;
    println!("backfit: {} draws, posterior mean mse {mse:.5}, mean sd {mean_sd:.4}", draws.fits.len());
    Ok(())
}
