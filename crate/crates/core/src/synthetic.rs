//! Reproducible synthetic regression data for experiments and tests.

use crate::error::Result;
use crate::kernel::{Dataset, Scaler};
use crate::rng::RngStream;

/// A smooth nonlinear response over `d` correlated features plus Gaussian noise,
/// loosely shaped like a tabular materials dataset (mixed scales, interactions,
/// saturation). Returned already standardized.
pub fn regression_dataset(n: usize, d: usize, seed: u64) -> Result<(Dataset, Scaler)> {
    let mut rng = RngStream::new(seed).substream(0x5EED);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let shared = rng.standard_normal();
        let row: Vec<f64> = (0..d)
            .map(|c| {
                let scale = 1.0 + c as f64;
                scale * (0.4 * shared + rng.standard_normal()) + 10.0 * c as f64
            })
            .collect();
        let z: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(c, v)| (v - 10.0 * c as f64) / (1.0 + c as f64))
            .collect();
        let mut f = 0.0;
        for (c, zc) in z.iter().enumerate() {
            let w = 1.0 / (1.0 + c as f64);
            f += w * (1.3 * zc).sin() + 0.3 * w * zc * zc.tanh();
        }
        if d >= 2 {
            f += 0.8 * (z[0] * z[1]).tanh();
        }
        y.push(5.0 * f + 20.0 + 1.5 * rng.standard_normal());
        x.extend(row);
    }
    Dataset::standardized(x, y, d)
}

/// Independent standard-normal features and labels; handy for solver tests.
pub fn gaussian_dataset(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed).substream(0xDA7A);
    let x = (0..n * d).map(|_| rng.standard_normal()).collect();
    let y = (0..n).map(|_| rng.standard_normal()).collect();
    Ok(Dataset::standardized(x, y, d)?.0)
}

pub fn gaussian_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed).substream(0xFEC7);
    (0..n).map(|_| rng.standard_normal()).collect()
}
