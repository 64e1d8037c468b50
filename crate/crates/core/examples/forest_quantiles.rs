//! Prediction intervals from the leaf weights of a rotated forest.

use uhwt::ensemble::{rre_fit, weighted_quantile};
use uhwt::experiments::{quantile_coverage, QuantileConfig};
use uhwt::sphere::fitter::SphereFitParams;
use uhwt::synth::{sphere_sample, SphereSignal};

fn main() -> uhwt::Result<()> {
    let signal = SphereSignal::Fig5;
    let train = sphere_sample(&signal, 300, 0.1, 5, "train")?;
    let y = train.data.responses().to_vec();
    let base = SphereFitParams { min_leaf: 5, ..Default::default() };
    let forest = rre_fit(&train.data, &y, 200, &base, 5)?;

    for p in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]] {
        let w = forest.quantile_weights(&p);
        let lo = weighted_quantile(&y, &w, 0.05)?;
        let med = weighted_quantile(&y, &w, 0.5)?;
        let hi = weighted_quantile(&y, &w, 0.95)?;
        println!("{p:?}: truth {:.3}  mean {:.3}  median {med:.3}  90% [{lo:.3}, {hi:.3}]", signal.eval(&p), forest.predict(&p));
    }

    let cfg = QuantileConfig { members: 200, holdout: 1000, seed: 5, ..Default::default() };
    let r = quantile_coverage(&cfg, &signal)?;
    println!("coverage of fresh noisy responses: {:.3}, mean width {:.3}", r.coverage, r.mean_width);
    Ok(())
}
