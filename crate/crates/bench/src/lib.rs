//! Shared fixtures for the benchmarks.

use planmae_core::dataset::{gen_layout, render, LayoutConstraints};
use planmae_core::{Mode, Raster};

/// `n` rendered floorplans at `resolution`, fixed seeds.
pub fn floorplans(n: usize, mode: Mode, resolution: usize) -> Vec<Raster> {
    let c = LayoutConstraints::default();
    (0..n as u64)
        .map(|seed| {
            render(
                &gen_layout(seed, &c).expect("default constraints are satisfiable"),
                mode,
                resolution,
            )
        })
        .collect()
}
