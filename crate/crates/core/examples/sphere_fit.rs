//! Single trees on the sphere under each triangle split rule.

use uhwt::partition::Coefficients;
use uhwt::sphere::fitter::{fit_sphere, SphereFitParams};
use uhwt::sphere::geometry::SplitRule;
use uhwt::stats;
use uhwt::synth::{sphere_sample, sphere_test_set, SphereSignal};

fn main() -> uhwt::Result<()> {
    let signal = SphereSignal::Fig5;
    let train = sphere_sample(&signal, 500, 0.1, 3, "train")?;
    let (test_pts, test_truth) = sphere_test_set(&signal, 4000, 3);
    let y = train.data.responses();

    for rule in [SplitRule::Balance, SplitRule::Balance4, SplitRule::Adapt, SplitRule::AdaptVertex] {
        for min_leaf in [1, 5] {
            let params = SphereFitParams { rule, min_leaf, ..Default::default() };
            let m = fit_sphere(&train.data, y, &params, None)?;
            let pred: Vec<f64> = test_pts.iter().map(|p| m.predict(p, Coefficients::Shrunk)).collect();
            let train_fit = m.fitted(train.data.n(), Coefficients::Shrunk);
            println!(
                "{rule:?} min_leaf={min_leaf}: train mse {:.2e}, test mse {:.4}",
                stats::mse(&train_fit, y),
                stats::mse(&pred, &test_truth)
            );
        }
    }

    let shrunk = SphereFitParams { early_stop_b: 0.5, soft_a: 0.5, ..Default::default() };
    let m = fit_sphere(&train.data, y, &shrunk, None)?;
    let pred: Vec<f64> = test_pts.iter().map(|p| m.predict(p, Coefficients::Shrunk)).collect();
    println!("adapt with a=b=0.5: sigma_hat {:.4} (true {:.4}), test mse {:.4}", m.sigma_hat, train.noise_sd, stats::mse(&pred, &test_truth));
    Ok(())
}
