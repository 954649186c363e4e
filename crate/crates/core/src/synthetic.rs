//! Seeded synthetic data.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{Dataset, Label};

/// Balanced two-class Gaussian data: class `±1` has mean `±mean` on every
/// coordinate and unit variance. Labels alternate `+1, −1, ...`.
pub fn two_gaussians(n: usize, d: usize, mean: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> =
        (0..n).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
    let mut features = DMatrix::zeros(n, d);
    for i in 0..n {
        let center = labels[i].value() * mean;
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[(i, j)] = center + z;
        }
    }
    Dataset::new(features, labels, None).expect("generated data is well formed")
}
