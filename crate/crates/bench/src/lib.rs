//! Shared fixtures for the benchmark targets.

use gibbs_pruning::mask::{NeighbourhoodPartition, PruneFraction, WeightVector};
use gibbs_pruning::rng::RandomSource;

pub fn random_weights(n: usize, seed: u64) -> WeightVector {
    let mut rng = RandomSource::new(seed);
    WeightVector::new((0..n).map(|_| rng.next_normal() * 0.1).collect(), "bench").unwrap()
}

pub fn kernel_groups(kernels: usize) -> NeighbourhoodPartition {
    let groups = (0..kernels)
        .map(|g| (g * 9..(g + 1) * 9).collect())
        .collect();
    NeighbourhoodPartition::new(groups, kernels * 9).unwrap()
}

pub fn filter_groups(filters: usize, per_filter: usize) -> NeighbourhoodPartition {
    let groups = (0..filters)
        .map(|f| (f * per_filter..(f + 1) * per_filter).collect())
        .collect();
    NeighbourhoodPartition::new(groups, filters * per_filter).unwrap()
}

pub fn half() -> PruneFraction {
    PruneFraction::new(0.5).unwrap()
}
