//! Test-only helpers: naive nested-loop kernels, finite-difference checks
//! and generators with known answers.

pub mod grad;
pub mod oracle;
pub mod scenes;
pub mod specgen;

use otoar_core::nn::Tensor;
use rand::Rng;

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive extents")
}

/// Largest absolute elementwise difference; infinite on length mismatch.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
