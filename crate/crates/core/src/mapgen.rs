//! Synthetic urban building maps: axis-aligned rectangular buildings placed
//! by rejection sampling so that streets keep a minimum width.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{MapManifest, MapRow};
use crate::error::{Error, Result};
use crate::gridworld::BuildingMap;

/// Consecutive rejected placements after which generation gives up.
pub const MAX_PLACEMENT_FAILURES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct MapGenParams {
    pub side: usize,
    pub resolution: f64,
    pub altitude: f64,
    /// Fraction of cells to occupy, in `[0, 1)`.
    pub target_fill: f64,
    /// Inclusive bounds on the number of buildings.
    pub building_count: (usize, usize),
    /// Inclusive bounds on each footprint side, in cells.
    pub footprint: (usize, usize),
    /// Height bounds in meters.
    pub height: (f64, f64),
    /// Free cells required between any two buildings.
    pub min_street: usize,
    pub seed: u64,
}

impl Default for MapGenParams {
    fn default() -> Self {
        MapGenParams {
            side: crate::DEFAULT_SIDE,
            resolution: crate::DEFAULT_RESOLUTION_M,
            altitude: crate::DEFAULT_ALTITUDE_M,
            target_fill: 0.3,
            building_count: (1, 2000),
            footprint: (3, 12),
            height: (6.0, 60.0),
            min_street: 2,
            seed: 0,
        }
    }
}

impl MapGenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.side == 0 {
            return bad("side must be positive".into());
        }
        if !(0.0..1.0).contains(&self.target_fill) {
            return bad(format!("target_fill must be in [0, 1), got {}", self.target_fill));
        }
        if self.footprint.0 < 2 || self.footprint.0 > self.footprint.1 {
            return bad(format!(
                "footprint range must satisfy 2 <= min <= max, got {:?}",
                self.footprint
            ));
        }
        if self.footprint.0 > self.side {
            return bad("footprint does not fit in the map".into());
        }
        let (hmin, hmax) = self.height;
        if !(0.0 <= hmin && hmin <= hmax && hmax <= 200.0) {
            return bad(format!("height range must lie within [0, 200] m, got {:?}", self.height));
        }
        if self.building_count.0 > self.building_count.1 {
            return bad(format!("bad building count range {:?}", self.building_count));
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive".into());
        }
        Ok(())
    }

    /// Parameters of the `index`-th map of a corpus.
    pub fn for_index(&self, index: usize) -> MapGenParams {
        MapGenParams {
            seed: self.seed.wrapping_add(index as u64),
            ..self.clone()
        }
    }
}

/// Inclusive rectangle `rows r0..=r1`, `cols c0..=c1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Footprint {
    /// Number of free cells separating the two rectangles along the axis
    /// that separates them best; negative when they overlap.
    pub fn gap(&self, other: &Footprint) -> i64 {
        let gi = (other.r0 as i64 - self.r1 as i64 - 1).max(self.r0 as i64 - other.r1 as i64 - 1);
        let gj = (other.c0 as i64 - self.c1 as i64 - 1).max(self.c0 as i64 - other.c1 as i64 - 1);
        gi.max(gj)
    }

    pub fn area(&self) -> usize {
        (self.r1 - self.r0 + 1) * (self.c1 - self.c0 + 1)
    }
}

#[derive(Debug, Clone)]
pub struct Building {
    pub footprint: Footprint,
    pub height: f64,
}

/// A generated map together with the rectangles it was built from.
#[derive(Debug, Clone)]
pub struct Layout {
    pub map: BuildingMap,
    pub buildings: Vec<Building>,
}

pub fn generate_layout(params: &MapGenParams) -> Result<Layout> {
    params.validate()?;
    let side = params.side;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut heights = vec![0.0; side * side];
    let mut buildings: Vec<Building> = Vec::new();
    let total = (side * side) as f64;
    let mut occupied = 0usize;

    let done = |occupied: usize, count: usize| {
        occupied as f64 / total >= params.target_fill && count >= params.building_count.0
    };

    if params.target_fill > 0.0 {
        let mut failures = 0;
        while !done(occupied, buildings.len()) {
            if buildings.len() >= params.building_count.1 {
                return Err(Error::Generation(format!(
                    "reached {} buildings at fill {:.3} < target {}",
                    buildings.len(),
                    occupied as f64 / total,
                    params.target_fill
                )));
            }
            let h = rng.random_range(params.footprint.0..=params.footprint.1.min(side));
            let w = rng.random_range(params.footprint.0..=params.footprint.1.min(side));
            let r0 = rng.random_range(0..=side - h);
            let c0 = rng.random_range(0..=side - w);
            let fp = Footprint {
                r0,
                c0,
                r1: r0 + h - 1,
                c1: c0 + w - 1,
            };
            let fits = buildings
                .iter()
                .all(|b| b.footprint.gap(&fp) >= params.min_street as i64);
            let height = if params.height.0 == params.height.1 {
                params.height.0
            } else {
                (rng.random_range(params.height.0..=params.height.1) * 10.0).round() / 10.0
            };
            if !fits {
                failures += 1;
                if failures >= MAX_PLACEMENT_FAILURES {
                    return Err(Error::Generation(format!(
                        "target fill {} unreachable: {MAX_PLACEMENT_FAILURES} consecutive placements \
                         rejected at fill {:.3}",
                        params.target_fill,
                        occupied as f64 / total
                    )));
                }
                continue;
            }
            failures = 0;
            for r in fp.r0..=fp.r1 {
                for c in fp.c0..=fp.c1 {
                    heights[r * side + c] = height;
                }
            }
            if height >= params.altitude {
                occupied += fp.area();
            }
            buildings.push(Building {
                footprint: fp,
                height,
            });
        }
    }

    let map = BuildingMap::new(side, params.resolution, params.altitude, heights)?;
    Ok(Layout { map, buildings })
}

pub fn generate_map(params: &MapGenParams) -> Result<BuildingMap> {
    generate_layout(params).map(|l| l.map)
}

/// File name of the `index`-th map of a corpus.
pub fn map_file_name(index: usize) -> String {
    format!("map_{index:04}.chgrid")
}

/// Writes `n` maps seeded `seed + i` plus `manifest.csv` into `out_dir`.
pub fn generate_corpus(params: &MapGenParams, n: usize, out_dir: &Path) -> Result<MapManifest> {
    if n == 0 {
        return Err(Error::InvalidParam("corpus size must be at least 1".into()));
    }
    params.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let rows = (0..n)
        .into_par_iter()
        .map(|index| {
            let p = params.for_index(index);
            let map = generate_map(&p)?;
            let file = map_file_name(index);
            map.save(&out_dir.join(&file))?;
            Ok(MapRow {
                file,
                occupied_fraction: map.occupied_fraction(),
                seed: p.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = MapManifest { rows };
    manifest.write(&out_dir.join(crate::corpus::MAP_MANIFEST))?;
    Ok(manifest)
}
