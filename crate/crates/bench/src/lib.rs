//! Shared fixtures for the benchmarks.

use chd_core::corpus::{synthesize, Scenario};
use chd_core::mapgen::MapGenParams;
use chd_core::{GridPoint, PropagationParams, DEFAULT_EPS_CH};

/// One generated map with default propagation.
pub fn scenario(side: usize, seed: u64) -> Scenario {
    let params = MapGenParams {
        side,
        seed,
        ..MapGenParams::default()
    };
    let mut corpus = synthesize(&params, &PropagationParams::default(), 1, DEFAULT_EPS_CH, seed).expect("fixture map");
    corpus.scenarios.remove(0)
}

/// The free cell closest to the centre.
pub fn central_free_cell(sc: &Scenario) -> GridPoint {
    let c = (sc.map.side() / 2) as i32;
    let centre = GridPoint::new(c, c);
    sc.map
        .unoccupied_cells()
        .into_iter()
        .min_by(|a, b| a.dist(centre).total_cmp(&b.dist(centre)))
        .expect("map has free cells")
}
