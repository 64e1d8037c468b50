//! Random-rotation boosting against fixed-orientation boosting and a forest.

use uhwt::experiments::{sphere_bench, SphereBenchConfig};
use uhwt::synth::SphereSignal;

fn main() -> uhwt::Result<()> {
    let cfg = SphereBenchConfig {
        n: 300,
        test_n: 3000,
        checkpoints: vec![50, 100, 200],
        identity: true,
        forest_members: 100,
        seed: 1,
        ..Default::default()
    };
    let r = sphere_bench(&cfg, &SphereSignal::Fig5)?;
    println!("stages  rotated  identity");
    let id = r.identity_boost.clone().unwrap_or_default();
    for (k, g) in r.checkpoints.iter().enumerate() {
        println!("{g:6}  {:.4}   {:.4}", r.rr_boost[k], id[k]);
    }
    println!("forest of {}: {:.4}", cfg.forest_members, r.forest.unwrap_or(f64::NAN));
    println!("train mse {:.4}", r.train_mse);

    for soft_c in [0.0, 0.2, 0.4] {
        let c = SphereBenchConfig { checkpoints: vec![100], soft_c, test_n: 3000, ..Default::default() };
        let r = sphere_bench(&c, &SphereSignal::Fig5)?;
        println!("soft_c={soft_c:.1}: test mse {:.4}", r.rr_boost[0]);
    }
    Ok(())
}
