//! Monte Carlo check of the fixed-partition risk bounds.

use uhwt::oracle::{oracle_bound_trial, PartitionSpec, SparseSignal};

fn main() -> uhwt::Result<()> {
    let dense = SparseSignal { amplitudes_tau: vec![4.0, 3.0, 2.0, 1.5, 1.0, 0.5, 0.5, 0.25], offset: 0.0, seed: 1 };
    let r = oracle_bound_trial(&PartitionSpec { n: 64, leaves: 64 }, &dense, 1.0, 0.1, 200, 1)?;
    println!("n=64, 63 atoms: coverage uh {:.3}, leafwise {:.3}", r.uh_coverage, r.leaf_coverage);

    for amps in [vec![0.5, 0.75, 1.0], vec![2.0, 2.0, 2.0]] {
        let s = SparseSignal { amplitudes_tau: amps.clone(), offset: 0.0, seed: 1 };
        let r = oracle_bound_trial(&PartitionSpec { n: 1024, leaves: 32 }, &s, 1.0, 0.1, 100, 1)?;
        println!("n=1024, 32 leaves, amplitudes {amps:?} x tau: median error uh {:.5}, leafwise {:.5}", r.median_uh_error, r.median_leaf_error);
    }
    Ok(())
}
