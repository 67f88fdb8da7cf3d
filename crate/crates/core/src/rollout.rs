//! Runs a predictor from a start cell for up to `k` moves.

use std::fmt::Write as _;
use std::path::Path;

use crate::ddqn::reaches_ch;
use crate::encoding::MeasurementLog;
use crate::error::{Error, Result};
use crate::gridworld::{BuildingMap, GridPoint};
use crate::propagation::CoverageMap;

/// What a predictor may read of the ground-truth coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageAccess {
    /// Only the measurements taken at visited cells.
    Measurements,
    /// The whole coverage map (gradient oracles).
    FullMap,
}

/// Everything a predictor sees before choosing its next waypoint.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub map: &'a BuildingMap,
    /// Present only for [`CoverageAccess::FullMap`] predictors.
    pub coverage: Option<&'a CoverageMap>,
    pub position: GridPoint,
    pub log: &'a MeasurementLog,
    pub step_limit: usize,
}

impl<'a> View<'a> {
    pub fn coverage(&self) -> Result<&'a CoverageMap> {
        self.coverage
            .ok_or_else(|| Error::InvalidParam("predictor needs full coverage access".into()))
    }
}

pub trait Predictor {
    fn access(&self) -> CoverageAccess;

    /// Next target cell. It may be off the grid or not permissible; the
    /// rollout clamps it along the straight path.
    fn predict(&mut self, view: &View<'_>) -> Result<GridPoint>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Start followed by every realized waypoint.
    pub waypoints: Vec<GridPoint>,
    /// RSRP measured at each waypoint.
    pub measurements: Vec<f64>,
    pub steps_taken: usize,
    pub found_ch: bool,
}

impl Trajectory {
    /// Final waypoint.
    pub fn prediction(&self) -> GridPoint {
        *self.waypoints.last().expect("trajectory holds its start")
    }

    /// Final waypoint had the budget been `k` moves. Exact for any `k` up to
    /// the budget the rollout ran with, since the loop stops the same way.
    pub fn prediction_at(&self, k: usize) -> GridPoint {
        self.waypoints[k.min(self.steps_taken)]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,i,j,rsrp\n");
        for (n, (p, z)) in self.waypoints.iter().zip(&self.measurements).enumerate() {
            let _ = writeln!(out, "{n},{},{},{z}", p.i, p.j);
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Measures at `start`, then repeats up to `k` times: stop if the last
/// measurement reaches the threshold, otherwise ask `predictor`, clamp the
/// move to the permissible path, move and measure.
pub fn rollout<P: Predictor + ?Sized>(
    map: &BuildingMap,
    cm: &CoverageMap,
    predictor: &mut P,
    start: GridPoint,
    k: usize,
    step_limit: usize,
) -> Result<Trajectory> {
    if !map.contains(start) {
        return Err(Error::OutOfGrid(start, map.side()));
    }
    if map.is_occupied(start) {
        return Err(Error::Occupied(start));
    }
    let eps = cm.eps_ch();
    let measure = |p: GridPoint| cm.rsrp(p).ok_or(Error::Occupied(p));
    let mut log = MeasurementLog::new();
    let z0 = measure(start)?;
    log.push(start, z0);
    let mut traj = Trajectory {
        waypoints: vec![start],
        measurements: vec![z0],
        steps_taken: 0,
        found_ch: reaches_ch(Some(z0), eps),
    };
    let coverage = (predictor.access() == CoverageAccess::FullMap).then_some(cm);
    let mut p = start;
    for _ in 0..k {
        if traj.found_ch {
            break;
        }
        let view = View {
            map,
            coverage,
            position: p,
            log: &log,
            step_limit,
        };
        let target = predictor.predict(&view)?;
        p = map.clamp_to_path(p, target, step_limit)?;
        let z = measure(p)?;
        log.push(p, z);
        traj.waypoints.push(p);
        traj.measurements.push(z);
        traj.steps_taken += 1;
        traj.found_ch = reaches_ch(Some(z), eps);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Grsp;
    use crate::propagation::BaseStation;

    fn ramp(side: usize, f: impl Fn(usize, usize) -> f64) -> (BuildingMap, CoverageMap) {
        let map = BuildingMap::flat(side, 4.0, 2.0).unwrap();
        let values = (0..side * side).map(|n| f(n / side, n % side)).collect();
        let bs = BaseStation {
            cell: GridPoint::new(0, 0),
            height_m: 10.0,
        };
        let cm = CoverageMap::from_values(side, 4.0, 2.0, values, bs, -100.0).unwrap();
        (map, cm)
    }

    /// Goes a fixed offset per call and records whether it saw the CM.
    struct Fixed(i32, i32, Vec<bool>);

    impl Predictor for Fixed {
        fn access(&self) -> CoverageAccess {
            CoverageAccess::Measurements
        }
        fn predict(&mut self, view: &View<'_>) -> Result<GridPoint> {
            self.2.push(view.coverage.is_some());
            Ok(view.position.offset(self.0, self.1))
        }
    }

    #[test]
    fn start_in_hole_takes_no_steps() {
        let (map, cm) = ramp(10, |_, _| -120.0);
        let t = rollout(&map, &cm, &mut Fixed(1, 0, vec![]), GridPoint::new(4, 4), 5, 2).unwrap();
        assert_eq!(t.steps_taken, 0);
        assert!(t.found_ch);
        assert_eq!(t.prediction(), GridPoint::new(4, 4));
    }

    #[test]
    fn zero_budget_returns_start() {
        let (map, cm) = ramp(10, |_, _| -80.0);
        let t = rollout(&map, &cm, &mut Fixed(1, 0, vec![]), GridPoint::new(4, 4), 0, 2).unwrap();
        assert!(!t.found_ch);
        assert_eq!(t.prediction(), GridPoint::new(4, 4));
    }

    #[test]
    fn gradient_walk_reaches_strip_in_two_steps() {
        // rsrp falls by 3 dB per row toward row 0; rows 0..=1 are holes.
        let (map, cm) = ramp(20, |i, _| -103.0 + 3.0 * i as f64 - if i <= 1 { 0.0 } else { 0.5 });
        let mut g = Grsp::new();
        let t = rollout(&map, &cm, &mut g, GridPoint::new(7, 5), 10, 3).unwrap();
        // Each step moves three rows down: 7 -> 4 -> 1.
        assert_eq!(t.waypoints, [GridPoint::new(7, 5), GridPoint::new(4, 5), GridPoint::new(1, 5)]);
        assert_eq!(t.steps_taken, 2);
        assert!(t.found_ch);
        assert_eq!(t.prediction_at(1), GridPoint::new(4, 5));
    }

    #[test]
    fn measurement_predictors_never_see_the_map() {
        let (map, cm) = ramp(10, |_, _| -80.0);
        let mut f = Fixed(0, 1, vec![]);
        let t = rollout(&map, &cm, &mut f, GridPoint::new(4, 0), 3, 2).unwrap();
        assert_eq!(f.2, [false, false, false]);
        assert_eq!(t.steps_taken, 3);
        assert_eq!(t.to_csv().lines().count(), 5);
        assert!(t.to_csv().starts_with("step,i,j,rsrp\n0,4,0,-80\n1,4,1,-80\n"));
    }

    #[test]
    fn occupied_start_is_an_error() {
        let mut h = vec![0.0; 25];
        h[12] = 30.0;
        let map = BuildingMap::new(5, 4.0, 2.0, h).unwrap();
        let (_, cm) = ramp(5, |_, _| -80.0);
        let err = rollout(&map, &cm, &mut Fixed(0, 1, vec![]), GridPoint::new(2, 2), 3, 1);
        assert!(matches!(err, Err(Error::Occupied(_))));
    }
}
