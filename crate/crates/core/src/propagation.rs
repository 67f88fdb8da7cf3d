//! Deterministic synthetic coverage maps.
//!
//! RSRP at a cell is log-distance path loss from a single base station plus
//! a fixed penalty for every building cell the direct ray crosses (capped).
//! This produces hard shadow zones behind buildings, which is the geometry
//! coverage holes form in.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::raster::{Raster, RasterKind};
use crate::gridworld::{supercover, BuildingMap, GridPoint};

/// Antenna mounting height above ground or roof, meters.
pub const ANTENNA_OFFSET_M: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStation {
    pub cell: GridPoint,
    pub height_m: f64,
}

/// Optional log-normal shadowing term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shadowing {
    pub seed: u64,
    pub sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationParams {
    /// RSRP one cell away from the base station, dB.
    pub p0: f64,
    pub pathloss_exponent: f64,
    /// Loss per building cell crossed, dB.
    pub wall_loss: f64,
    /// Crossed cells beyond this count add no further loss.
    pub max_wall_losses: usize,
    /// Only building cells within this Euclidean distance (cells) of the
    /// receiver count as walls; `None` counts the whole ray.
    pub shadow_depth: Option<f64>,
    pub shadowing: Option<Shadowing>,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            p0: -30.0,
            pathloss_exponent: 3.0,
            wall_loss: 15.0,
            max_wall_losses: 4,
            shadow_depth: Some(3.0),
            shadowing: None,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent > 0.0) {
            return Err(Error::InvalidParam(format!(
                "path-loss exponent must be positive, got {}",
                self.pathloss_exponent
            )));
        }
        if !(self.wall_loss >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "wall loss must be non-negative, got {}",
                self.wall_loss
            )));
        }
        if self.shadow_depth.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::InvalidParam("shadow depth must be non-negative".into()));
        }
        if let Some(s) = self.shadowing {
            if !(s.sigma_db >= 0.0) {
                return Err(Error::InvalidParam("shadowing sigma must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// RSRP raster at the flight altitude. Building cells hold no measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    side: usize,
    resolution: f64,
    altitude: f64,
    rsrp: Vec<f64>,
    bs: BaseStation,
    eps_ch: f64,
}

impl CoverageMap {
    /// Builds a coverage map from raw values; `NaN` marks unmeasurable cells.
    pub fn from_values(
        side: usize,
        resolution: f64,
        altitude: f64,
        rsrp: Vec<f64>,
        bs: BaseStation,
        eps_ch: f64,
    ) -> Result<Self> {
        if rsrp.len() != side * side {
            return Err(Error::InvalidParam(format!(
                "expected {} RSRP values, got {}",
                side * side,
                rsrp.len()
            )));
        }
        if rsrp.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidParam("RSRP values must be finite or NaN".into()));
        }
        Ok(CoverageMap {
            side,
            resolution,
            altitude,
            rsrp,
            bs,
            eps_ch,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn base_station(&self) -> BaseStation {
        self.bs
    }

    pub fn eps_ch(&self) -> f64 {
        self.eps_ch
    }

    pub fn with_eps_ch(mut self, eps_ch: f64) -> Self {
        self.eps_ch = eps_ch;
        self
    }

    /// Row-major values, `NaN` where nothing can be measured.
    pub fn values(&self) -> &[f64] {
        &self.rsrp
    }

    fn contains(&self, p: GridPoint) -> bool {
        p.i >= 0 && p.j >= 0 && (p.i as usize) < self.side && (p.j as usize) < self.side
    }

    /// Measured RSRP at `p`, or `None` outside the grid and on buildings.
    pub fn rsrp(&self, p: GridPoint) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let v = self.rsrp[p.i as usize * self.side + p.j as usize];
        (!v.is_nan()).then_some(v)
    }

    /// Membership in the coverage-hole set (strictly below the threshold).
    pub fn is_ch(&self, p: GridPoint) -> bool {
        self.rsrp(p).is_some_and(|z| z < self.eps_ch)
    }

    /// `S_cmb^CH`: measurable cells strictly below the threshold.
    pub fn ch_set(&self) -> BTreeSet<GridPoint> {
        (0..self.side * self.side)
            .map(|n| GridPoint::new((n / self.side) as i32, (n % self.side) as i32))
            .filter(|&p| self.is_ch(p))
            .collect()
    }

    pub fn ch_count(&self) -> usize {
        self.rsrp.iter().filter(|z| **z < self.eps_ch).count()
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            kind: RasterKind::Rsrp,
            side: self.side,
            resolution: self.resolution,
            altitude: self.altitude,
            values: self.rsrp.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_raster().write(path)
    }

    /// Loads an `rsrp` raster; the base station and threshold are not part of
    /// the file format and come from the caller.
    pub fn load(path: &Path, bs: BaseStation, eps_ch: f64) -> Result<Self> {
        let r = Raster::read(path)?;
        if r.kind != RasterKind::Rsrp {
            return Err(Error::parse(path, "expected kind=rsrp"));
        }
        CoverageMap::from_values(r.side, r.resolution, r.altitude, r.values, bs, eps_ch)
            .map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// Uniformly random cell, antenna 2 m above ground or rooftop.
pub fn place_base_station(map: &BuildingMap, seed: u64) -> BaseStation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = map.side() * map.side();
    let cell = map.point(rng.random_range(0..n));
    BaseStation {
        cell,
        height_m: map.height(cell) + ANTENNA_OFFSET_M,
    }
}

/// Occupied cells 4-connected to `start` (empty if `start` is free).
fn building_component(map: &BuildingMap, start: GridPoint) -> Vec<bool> {
    let mut seen = vec![false; map.side() * map.side()];
    if !map.is_occupied(start) {
        return seen;
    }
    let mut queue = VecDeque::from([start]);
    seen[map.index(start)] = true;
    while let Some(p) = queue.pop_front() {
        for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let q = p.offset(di, dj);
            if map.is_occupied(q) && !seen[map.index(q)] {
                seen[map.index(q)] = true;
                queue.push_back(q);
            }
        }
    }
    seen
}

/// Number of building cells the ray from `bs` to `q` crosses, not counting
/// the building the antenna is mounted on. With `depth`, only cells within
/// that distance of `q` are counted.
pub fn wall_count(
    map: &BuildingMap,
    bs: GridPoint,
    q: GridPoint,
    own_roof: &[bool],
    depth: Option<f64>,
) -> usize {
    supercover(bs, q)
        .into_iter()
        .filter(|&c| map.is_occupied(c) && !own_roof[map.index(c)])
        .filter(|&c| depth.is_none_or(|r| c.dist(q) <= r))
        .count()
}

pub fn compute_coverage(
    map: &BuildingMap,
    bs: BaseStation,
    params: &PropagationParams,
    eps_ch: f64,
) -> Result<CoverageMap> {
    params.validate()?;
    if !map.contains(bs.cell) {
        return Err(Error::OutOfGrid(bs.cell, map.side()));
    }
    let side = map.side();
    let own_roof = building_component(map, bs.cell);

    let mut rsrp: Vec<f64> = (0..side)
        .into_par_iter()
        .flat_map_iter(|i| {
            let own_roof = &own_roof;
            (0..side).map(move |j| {
                let q = GridPoint::new(i as i32, j as i32);
                if map.is_occupied(q) {
                    return f64::NAN;
                }
                let d = q.dist(bs.cell).max(1.0);
                let walls = wall_count(map, bs.cell, q, own_roof, params.shadow_depth).min(params.max_wall_losses);
                params.p0 - 10.0 * params.pathloss_exponent * d.log10()
                    - params.wall_loss * walls as f64
            })
        })
        .collect();

    if let Some(s) = params.shadowing {
        let normal = Normal::new(0.0, s.sigma_db)
            .map_err(|e| Error::InvalidParam(format!("shadowing: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        for v in rsrp.iter_mut() {
            let x: f64 = normal.sample(&mut rng);
            if !v.is_nan() {
                *v += x;
            }
        }
    }

    CoverageMap::from_values(side, map.resolution(), map.altitude(), rsrp, bs, eps_ch)
}

/// Finite-difference RSRP gradient `(dZ/di, dZ/dj)` in dB per cell.
///
/// Central differences where both neighbours are measurable, one-sided where
/// only one is, zero where neither is.
pub fn cm_gradient(cm: &CoverageMap, p: GridPoint) -> [f64; 2] {
    let center = cm.rsrp(p);
    let axis = |minus: GridPoint, plus: GridPoint| -> f64 {
        match (cm.rsrp(minus), cm.rsrp(plus), center) {
            (Some(a), Some(b), _) => (b - a) / 2.0,
            (None, Some(b), Some(c)) => b - c,
            (Some(a), None, Some(c)) => c - a,
            _ => 0.0,
        }
    };
    [
        axis(p.offset(-1, 0), p.offset(1, 0)),
        axis(p.offset(0, -1), p.offset(0, 1)),
    ]
}

/// One-dimensional exact squared distance transform (lower envelope of
/// parabolas). `f` holds 0 at sites and `INF` elsewhere.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(q) => q,
        None => {
            out.fill(f64::INFINITY);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance in meters from every cell to the nearest building
/// cell; 0 on buildings, `+inf` everywhere when there are no buildings.
pub fn distance_to_building(map: &BuildingMap) -> Vec<f64> {
    let side = map.side();
    let occ = map.occupancy();
    let mut grid: Vec<f64> = occ
        .iter()
        .map(|&o| if o { 0.0 } else { f64::INFINITY })
        .collect();
    let mut col = vec![0.0; side];
    let mut out = vec![0.0; side];
    for j in 0..side {
        for i in 0..side {
            col[i] = grid[i * side + j];
        }
        edt_1d(&col, &mut out);
        for i in 0..side {
            grid[i * side + j] = out[i];
        }
    }
    for i in 0..side {
        let row = &mut grid[i * side..(i + 1) * side];
        col.copy_from_slice(row);
        edt_1d(&col, &mut out);
        row.copy_from_slice(&out);
    }
    grid.iter().map(|d2| d2.sqrt() * map.resolution()).collect()
}
