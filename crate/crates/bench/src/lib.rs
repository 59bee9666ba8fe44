//! Shared fixtures for the criterion benchmarks.

use fbsdep::harness::{presets, Preset};
use fbsdep::noise::{sample_noise, NoiseBundle};
use fbsdep::TimeGrid;

/// A small deterministic workload: preset plus a pre-sampled noise bundle.
pub fn fixture(name: &str, n_paths: usize, steps: usize) -> (Preset, NoiseBundle) {
    let preset = presets::preset(name).expect("shipped preset");
    let grid = TimeGrid::new(4.0, steps).expect("valid grid");
    let bundle = sample_noise(42, n_paths, grid, &preset.marks).expect("noise");
    (preset, bundle)
}
