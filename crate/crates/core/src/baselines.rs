//! Non-learned predictors: random sampling (RSP), building-neighbourhood
//! sampling (BNP) and their gradient-following counterparts over the true
//! coverage map (G-RSP, G-BNP).

use rand::Rng;

use crate::error::{Error, Result};
use crate::gridworld::{BuildingMap, GridPoint};
use crate::propagation::{cm_gradient, distance_to_building, CoverageMap};
use crate::rollout::{CoverageAccess, Predictor, View};

/// Neighbourhood radii used in the experiments, in meters.
pub const BNP_DISTANCES_M: [f64; 3] = [8.0, 16.0, 32.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnpConfig {
    /// Maximum distance from the nearest building cell, in meters.
    pub d_b: f64,
}

impl Default for BnpConfig {
    fn default() -> Self {
        BnpConfig { d_b: 8.0 }
    }
}

impl BnpConfig {
    pub fn new(d_b: f64) -> Result<Self> {
        if !(d_b > 0.0 && d_b.is_finite()) {
            return Err(Error::InvalidParam(format!("d_B must be positive, got {d_b}")));
        }
        Ok(BnpConfig { d_b })
    }
}

/// Uniform over unoccupied cells.
pub fn rsp_sample<R: Rng + ?Sized>(map: &BuildingMap, rng: &mut R) -> Result<GridPoint> {
    let free = map.unoccupied_cells();
    if free.is_empty() {
        return Err(Error::InvalidParam("map has no unoccupied cell".into()));
    }
    Ok(free[rng.random_range(0..free.len())])
}

/// Unoccupied cells within `d_B` of a building.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    side: usize,
    mask: Vec<bool>,
    cells: Vec<GridPoint>,
}

impl Neighborhood {
    pub fn new(map: &BuildingMap, cfg: BnpConfig) -> Result<Self> {
        if map.occupied_count() == 0 {
            return Err(Error::InvalidParam("map has no buildings to sample near".into()));
        }
        let dist = distance_to_building(map);
        let mask: Vec<bool> = dist
            .iter()
            .zip(map.occupancy())
            .map(|(&d, &occ)| !occ && d <= cfg.d_b)
            .collect();
        let cells: Vec<GridPoint> = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(n, _)| map.point(n))
            .collect();
        if cells.is_empty() {
            return Err(Error::InvalidParam(format!(
                "no unoccupied cell lies within {} m of a building",
                cfg.d_b
            )));
        }
        Ok(Neighborhood {
            side: map.side(),
            mask,
            cells,
        })
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.i >= 0
            && p.j >= 0
            && (p.i as usize) < self.side
            && (p.j as usize) < self.side
            && self.mask[p.i as usize * self.side + p.j as usize]
    }

    /// Members in row-major order.
    pub fn cells(&self) -> &[GridPoint] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Member closest to `p` (Euclidean); the first in row-major order wins ties.
    pub fn nearest(&self, p: GridPoint) -> GridPoint {
        let d2 = |q: GridPoint| {
            let (di, dj) = (i64::from(q.i - p.i), i64::from(q.j - p.j));
            di * di + dj * dj
        };
        let mut best = self.cells[0];
        let mut best_d = d2(best);
        for &q in &self.cells[1..] {
            let d = d2(q);
            if d < best_d {
                best = q;
                best_d = d;
            }
        }
        best
    }

    /// Uniform over members.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GridPoint {
        self.cells[rng.random_range(0..self.cells.len())]
    }
}

/// Uniform over unoccupied cells within `d_B` of a building.
pub fn bnp_sample<R: Rng + ?Sized>(map: &BuildingMap, cfg: BnpConfig, rng: &mut R) -> Result<GridPoint> {
    Ok(Neighborhood::new(map, cfg)?.sample(rng))
}

/// One unit-rate gradient-descent step: `p - round(grad)`, each axis capped
/// at `l` cells. A zero gradient leaves `p` in place.
pub fn grsp_step(cm: &CoverageMap, p: GridPoint, l: usize) -> GridPoint {
    let g = cm_gradient(cm, p);
    let l = l as f64;
    let step = |v: f64| (-v.round()).clamp(-l, l) as i32;
    p.offset(step(g[0]), step(g[1]))
}

/// [`grsp_step`], pulled back to the nearest neighbourhood member when the
/// candidate leaves the neighbourhood.
pub fn gbnp_step(cm: &CoverageMap, p: GridPoint, nb: &Neighborhood, l: usize) -> GridPoint {
    let candidate = grsp_step(cm, p, l);
    if nb.contains(candidate) {
        candidate
    } else {
        nb.nearest(candidate)
    }
}

/// G-RSP as a rollout predictor.
#[derive(Debug, Clone, Default)]
pub struct Grsp;

impl Grsp {
    pub fn new() -> Self {
        Grsp
    }
}

impl Predictor for Grsp {
    fn access(&self) -> CoverageAccess {
        CoverageAccess::FullMap
    }

    fn predict(&mut self, view: &View<'_>) -> Result<GridPoint> {
        Ok(grsp_step(view.coverage()?, view.position, view.step_limit))
    }
}

/// G-BNP as a rollout predictor for one map.
#[derive(Debug, Clone)]
pub struct Gbnp {
    nb: Neighborhood,
}

impl Gbnp {
    pub fn new(nb: Neighborhood) -> Self {
        Gbnp { nb }
    }
}

impl Predictor for Gbnp {
    fn access(&self) -> CoverageAccess {
        CoverageAccess::FullMap
    }

    fn predict(&mut self, view: &View<'_>) -> Result<GridPoint> {
        Ok(gbnp_step(view.coverage()?, view.position, &self.nb, view.step_limit))
    }
}
