//! Grid geometry: building occupancy, line of sight, movement windows and
//! the permissible-move rule the UAV obeys at every step.
//!
//! Indices are 0-based. A [`GridPoint`] may lie outside the grid (predictors
//! can propose such points); [`BuildingMap::contains`] tells them apart.

mod line;
pub mod raster;

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
pub use line::supercover;
use raster::{Raster, RasterKind};

/// A cell `S(i, j)` of the grid: row `i`, column `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPoint {
    pub i: i32,
    pub j: i32,
}

impl GridPoint {
    pub const fn new(i: i32, j: i32) -> Self {
        GridPoint { i, j }
    }

    pub fn offset(self, di: i32, dj: i32) -> Self {
        GridPoint::new(self.i + di, self.j + dj)
    }

    /// Euclidean distance in cells.
    pub fn dist(self, other: GridPoint) -> f64 {
        let di = f64::from(self.i - other.i);
        let dj = f64::from(self.j - other.j);
        (di * di + dj * dj).sqrt()
    }
}

/// Building heights over an `L x L` grid plus the flight altitude that turns
/// them into an occupancy mask. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingMap {
    side: usize,
    resolution: f64,
    altitude: f64,
    heights: Vec<f64>,
    occupied: Vec<bool>,
}

impl BuildingMap {
    pub fn new(side: usize, resolution: f64, altitude: f64, heights: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParam("map side must be positive".into()));
        }
        if heights.len() != side * side {
            return Err(Error::InvalidParam(format!(
                "expected {} heights for side {side}, got {}",
                side * side,
                heights.len()
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !altitude.is_finite() {
            return Err(Error::InvalidParam("altitude must be finite".into()));
        }
        if let Some(h) = heights.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(Error::InvalidParam(format!(
                "building heights must be finite and non-negative, got {h}"
            )));
        }
        let occupied = heights.iter().map(|&h| h >= altitude).collect();
        Ok(BuildingMap {
            side,
            resolution,
            altitude,
            heights,
            occupied,
        })
    }

    /// A map without buildings.
    pub fn flat(side: usize, resolution: f64, altitude: f64) -> Result<Self> {
        BuildingMap::new(side, resolution, altitude, vec![0.0; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn altitude(&self) -> f64 {
        self.altitude
    }

    /// Row-major heights in meters.
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Row-major occupancy mask at the flight altitude.
    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.i >= 0 && p.j >= 0 && (p.i as usize) < self.side && (p.j as usize) < self.side
    }

    /// Row-major index of an in-grid point.
    ///
    /// Panics if `p` lies outside the grid.
    pub fn index(&self, p: GridPoint) -> usize {
        assert!(self.contains(p), "{p:?} outside {}x{} grid", self.side, self.side);
        p.i as usize * self.side + p.j as usize
    }

    pub fn point(&self, index: usize) -> GridPoint {
        GridPoint::new((index / self.side) as i32, (index % self.side) as i32)
    }

    pub fn height(&self, p: GridPoint) -> f64 {
        self.heights[self.index(p)]
    }

    /// Whether `p` is a building cell. Points outside the grid are not.
    pub fn is_occupied(&self, p: GridPoint) -> bool {
        self.contains(p) && self.occupied[self.index(p)]
    }

    /// All grid points in row-major order.
    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        (0..self.side * self.side).map(move |n| self.point(n))
    }

    /// `S_bld`: cells whose building height reaches the flight altitude.
    pub fn occupied_set(&self) -> BTreeSet<GridPoint> {
        self.points().filter(|&p| self.is_occupied(p)).collect()
    }

    pub fn unoccupied_cells(&self) -> Vec<GridPoint> {
        self.points().filter(|&p| !self.is_occupied(p)).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.occupied.len() as f64
    }

    /// Whether the straight segment between the centers of `a` and `b` touches
    /// a building cell other than the endpoints themselves.
    pub fn line_blocked(&self, a: GridPoint, b: GridPoint) -> bool {
        supercover(a, b)
            .into_iter()
            .any(|c| c != a && c != b && self.is_occupied(c))
    }

    /// `S_prm`: cells of the movement window around `p` that are neither
    /// buildings nor hidden behind one.
    pub fn permissible_set(&self, p: GridPoint, step_limit: usize) -> Result<PermissibleSet> {
        if !self.contains(p) {
            return Err(Error::OutOfGrid(p, self.side));
        }
        if self.is_occupied(p) {
            return Err(Error::Occupied(p));
        }
        let l = step_limit as i32;
        let width = 2 * step_limit + 1;
        let mut mask = vec![false; width * width];
        for di in -l..=l {
            for dj in -l..=l {
                let q = p.offset(di, dj);
                if self.contains(q) && !self.is_occupied(q) && !self.line_blocked(p, q) {
                    mask[(di + l) as usize * width + (dj + l) as usize] = true;
                }
            }
        }
        Ok(PermissibleSet {
            center: p,
            step_limit,
            mask,
        })
    }

    /// Moves from `from` toward `to` as far as the permissible set allows.
    pub fn clamp_to_path(&self, from: GridPoint, to: GridPoint, step_limit: usize) -> Result<GridPoint> {
        Ok(self.permissible_set(from, step_limit)?.clamp(to))
    }

    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.kind != RasterKind::Heights {
            return Err(Error::InvalidParam(format!(
                "expected a heights raster, got kind={}",
                raster.kind.as_str()
            )));
        }
        BuildingMap::new(
            raster.side,
            raster.resolution,
            raster.altitude,
            raster.values.clone(),
        )
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            kind: RasterKind::Heights,
            side: self.side,
            resolution: self.resolution,
            altitude: self.altitude,
            values: self.heights.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        BuildingMap::from_raster(&Raster::read(path)?).map_err(|e| match e {
            Error::InvalidParam(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_raster().write(path)
    }
}

/// `S_alw`: the `(2l+1) x (2l+1)` window around `p`, clipped to the grid, in
/// row-major order. Includes `p`.
pub fn allowed_window(p: GridPoint, step_limit: usize, side: usize) -> Vec<GridPoint> {
    let l = step_limit as i32;
    let n = side as i32;
    let mut out = Vec::new();
    for i in (p.i - l).max(0)..=(p.i + l).min(n - 1) {
        for j in (p.j - l).max(0)..=(p.j + l).min(n - 1) {
            out.push(GridPoint::new(i, j));
        }
    }
    out
}

/// Membership mask of `S_prm` over the movement window of one point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermissibleSet {
    center: GridPoint,
    step_limit: usize,
    mask: Vec<bool>,
}

impl PermissibleSet {
    pub fn center(&self) -> GridPoint {
        self.center
    }

    pub fn contains(&self, q: GridPoint) -> bool {
        let l = self.step_limit as i32;
        let di = q.i - self.center.i;
        let dj = q.j - self.center.j;
        if di.abs() > l || dj.abs() > l {
            return false;
        }
        let width = 2 * self.step_limit + 1;
        self.mask[(di + l) as usize * width + (dj + l) as usize]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = GridPoint> + '_ {
        let width = 2 * self.step_limit + 1;
        let l = self.step_limit as i32;
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(move |(n, _)| {
            self.center
                .offset((n / width) as i32 - l, (n % width) as i32 - l)
        })
    }

    pub fn to_set(&self) -> BTreeSet<GridPoint> {
        self.iter().collect()
    }

    /// The trajectory-update rule: walk the supercover cells from the center
    /// toward `to` and keep the farthest one that is permissible. Returns `to`
    /// itself when permissible and the center when nothing ahead is.
    pub fn clamp(&self, to: GridPoint) -> GridPoint {
        if self.contains(to) {
            return to;
        }
        supercover(self.center, to)
            .into_iter()
            .rev()
            .find(|&c| self.contains(c))
            .unwrap_or(self.center)
    }
}
