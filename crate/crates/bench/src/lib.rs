//! Shared fixtures for the benchmarks.

use nalgebra::DVector;

use msenkf_core::scenario::Preset;
use msenkf_core::{sample_prior_coefficients, ScenarioConfig, SeedStream, StreamTag};

/// Desk scenario shrunk to benchmark-friendly sizes.
pub fn small_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(Preset::Desk);
    c.epsilon = 0.125;
    c.h_obs = 1.0 / 128.0;
    c.m = 16;
    c.j = 50;
    c.n = 5;
    c
}

/// Reproducible standard-normal vectors.
pub fn gaussian_vectors(seed: u64, dim: usize, count: usize) -> Vec<DVector<f64>> {
    let mut rng = SeedStream::new(seed, StreamTag::InitialEnsemble).rng(&[]);
    sample_prior_coefficients(&mut rng, dim, count)
}
