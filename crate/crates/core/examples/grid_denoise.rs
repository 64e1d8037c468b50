//! Denoise a synthetic image with a single tree, sweeping the shrinkage knobs.

use uhwt::grid::{denoise, GridFitParams};
use uhwt::partition::Dataset;
use uhwt::stats;
use uhwt::synth::{add_noise, star_image};

fn main() -> uhwt::Result<()> {
    let size = 96;
    let truth = star_image(size);
    let y = add_noise(&truth, 0.15, 7, "example-noise");
    let data = Dataset::grid(&[size, size], y.clone())?;
    println!("noisy input mse {:.5}", stats::mse(&y, &truth));

    for (a, b) in [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.3, 0.3), (1.0, 1.0)] {
        let params = GridFitParams { soft_a: a, early_stop_b: b, ..Default::default() };
        let model = denoise(&data, &y, &params);
        let fit = model.fitted(&data);
        println!(
            "a={a:.1} b={b:.1}  sigma_hat={:.4}  nodes={:5}  mse={:.5}",
            model.sigma_hat,
            model.tree.internal_count(),
            stats::mse(&fit, &truth)
        );
    }

    // Median thresholds only: balanced, dyadic-like trees.
    let p = GridFitParams { early_stop_b: 0.5, median_splits_only: true, ..Default::default() };
    let m = denoise(&data, &y, &p);
    println!("median splits, b=0.5: mse={:.5}", stats::mse(&m.fitted(&data), &truth));
    Ok(())
}
