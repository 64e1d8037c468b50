//! Fit a 3-D tensor, check exact reconstruction and round-trip the file format.

use uhwt::grid::{fit_uhwt, GridFitParams};
use uhwt::io::{parse_tensor, encode_tensor, Tensor};
use uhwt::partition::Coefficients;

fn main() -> uhwt::Result<()> {
    let shape = vec![8, 6, 5];
    let values: Vec<f64> = (0..8 * 6 * 5)
        .map(|k| {
            let (i, j, l) = (k / 30, (k / 5) % 6, k % 5);
            (i as f64 * 0.7).sin() + if j > 2 { 1.0 } else { 0.0 } - 0.1 * l as f64
        })
        .collect();
    let tensor = Tensor::new(shape, values)?;
    let bytes = encode_tensor(&tensor);
    let back = parse_tensor(&bytes)?;
    assert_eq!(back, tensor);
    println!("tensor file: {} bytes, round trip ok", bytes.len());

    let data = tensor.to_dataset()?;
    let y = data.responses().to_vec();
    let tree = fit_uhwt(&data, &y, &GridFitParams::default());
    let worst = (0..data.n())
        .map(|i| (tree.reconstruct(data.point(i), Coefficients::Raw).unwrap() - y[i]).abs())
        .fold(0.0, f64::max);
    println!("{} points, {} atoms, depth {}, max reconstruction error {worst:.2e}", data.n(), tree.internal_count(), tree.max_depth());

    let coarse = fit_uhwt(&data, &y, &GridFitParams { max_depth: 3, ..Default::default() });
    println!("depth-3 tree: {} leaves", coarse.leaf_ids().count());
    Ok(())
}
