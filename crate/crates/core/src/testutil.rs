use crate::kernel::Dataset;
use crate::synthetic;

pub fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    synthetic::gaussian_dataset(n, d, seed).unwrap()
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    synthetic::gaussian_vector(n, seed)
}
