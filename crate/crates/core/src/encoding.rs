//! The agent's observation: circular-gradient encodings of the current
//! location and of past measurements, the normalized height map, and a
//! UAV-centered crop of all three. Also the action-index geometry.

use crate::error::{Error, Result};
use crate::gridworld::{BuildingMap, GridPoint};

/// Building height (m) that maps to 1.0 in the height plane.
pub const DEFAULT_HEIGHT_CEILING_M: f64 = 100.0;

/// Ordered `(location, RSRP dB)` pairs, one per visited waypoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementLog {
    entries: Vec<(GridPoint, f64)>,
}

impl MeasurementLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: GridPoint, rsrp: f64) {
        self.entries.push((p, rsrp));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<(GridPoint, f64)> {
        self.entries.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(GridPoint, f64)> {
        self.entries.iter()
    }
}

impl FromIterator<(GridPoint, f64)> for MeasurementLog {
    fn from_iter<I: IntoIterator<Item = (GridPoint, f64)>>(iter: I) -> Self {
        MeasurementLog {
            entries: iter.into_iter().collect(),
        }
    }
}

#[inline]
fn decay(c: f64, dist2: i64) -> f64 {
    (-c * (dist2 as f64).sqrt()).exp2()
}

/// `2^(-c * ||(i,j) - p||)` over an `L x L` grid.
pub fn encode_location(p: GridPoint, side: usize, c: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let di = (i as i64) - i64::from(p.i);
            let dj = (j as i64) - i64::from(p.j);
            out[i * side + j] = decay(c, di * di + dj * dj);
        }
    }
    out
}

/// Maps the CH threshold to 0 and 0 dB to 1; values below the threshold
/// become negative.
pub fn normalize_rsrp(z: f64, eps_ch: f64) -> f64 {
    (z - eps_ch) / -eps_ch
}

/// Sum of circular gradients, one per measurement, each scaled by the
/// normalized RSRP.
pub fn encode_measurements(log: &MeasurementLog, side: usize, c: f64, eps_ch: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for &(p, z) in log.iter() {
        let w = normalize_rsrp(z, eps_ch);
        for i in 0..side {
            for j in 0..side {
                let di = (i as i64) - i64::from(p.i);
                let dj = (j as i64) - i64::from(p.j);
                out[i * side + j] += w * decay(c, di * di + dj * dj);
            }
        }
    }
    out
}

/// `I_A` (3 x L x L) and `I_B` (3 x w x w, `w = 2l + 1`), row-major, planes
/// ordered location / measurements / heights.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensors {
    pub side: usize,
    pub window: usize,
    pub position: GridPoint,
    pub i_a: Vec<f64>,
    pub i_b: Vec<f64>,
}

impl StateTensors {
    pub fn plane_a(&self, plane: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.i_a[plane * n..(plane + 1) * n]
    }

    pub fn plane_b(&self, plane: usize) -> &[f64] {
        let n = self.window * self.window;
        &self.i_b[plane * n..(plane + 1) * n]
    }
}

/// Builds observations for one parameter set. Caches the decay kernel by
/// squared distance, so it is much faster than the free functions while
/// producing identical values.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub step_limit: usize,
    pub decay: f64,
    pub eps_ch: f64,
    pub height_ceiling: f64,
    kernel: Vec<f64>,
    kernel_side: usize,
}

impl Encoder {
    pub fn new(step_limit: usize, decay_c: f64, eps_ch: f64) -> Result<Self> {
        if !(decay_c > 0.0) {
            return Err(Error::InvalidParam(format!("decay constant must be positive, got {decay_c}")));
        }
        if !(eps_ch < 0.0) {
            return Err(Error::InvalidParam(format!("CH threshold must be negative, got {eps_ch}")));
        }
        Ok(Encoder {
            step_limit,
            decay: decay_c,
            eps_ch,
            height_ceiling: DEFAULT_HEIGHT_CEILING_M,
            kernel: Vec::new(),
            kernel_side: 0,
        })
    }

    pub fn with_height_ceiling(mut self, ceiling: f64) -> Self {
        self.height_ceiling = ceiling;
        self
    }

    pub fn window(&self) -> usize {
        2 * self.step_limit + 1
    }

    fn kernel_for(&mut self, side: usize) -> &[f64] {
        if self.kernel_side != side {
            let max = 2 * (side as i64 - 1).pow(2);
            self.kernel = (0..=max).map(|d2| decay(self.decay, d2)).collect();
            self.kernel_side = side;
        }
        &self.kernel
    }

    fn add_gradient(kernel: &[f64], out: &mut [f64], side: usize, p: GridPoint, w: f64) {
        for i in 0..side {
            let di = (i as i64) - i64::from(p.i);
            let row = &mut out[i * side..(i + 1) * side];
            for (j, o) in row.iter_mut().enumerate() {
                let dj = (j as i64) - i64::from(p.j);
                *o += w * kernel[(di * di + dj * dj) as usize];
            }
        }
    }

    /// The state `h(k)` at position `p` after the measurements in `log`.
    pub fn build_state(&mut self, map: &BuildingMap, p: GridPoint, log: &MeasurementLog) -> Result<StateTensors> {
        if !map.contains(p) {
            return Err(Error::OutOfGrid(p, map.side()));
        }
        if map.is_occupied(p) {
            return Err(Error::Occupied(p));
        }
        let side = map.side();
        let n = side * side;
        let eps_ch = self.eps_ch;
        let ceiling = self.height_ceiling;
        let window = self.window();
        let l = self.step_limit as i32;
        let kernel = self.kernel_for(side);

        let mut i_a = vec![0.0; 3 * n];
        {
            let (loc, rest) = i_a.split_at_mut(n);
            let (meas, heights) = rest.split_at_mut(n);
            // Location plane: value at p is exactly 1 because kernel[0] = 2^0.
            Self::add_gradient(kernel, loc, side, p, 1.0);
            for &(q, z) in log.iter() {
                Self::add_gradient(kernel, meas, side, q, normalize_rsrp(z, eps_ch));
            }
            for (h, &m) in heights.iter_mut().zip(map.heights()) {
                *h = (m / ceiling).min(1.0);
            }
        }

        let mut i_b = vec![0.0; 3 * window * window];
        for plane in 0..3 {
            for wi in 0..window {
                let i = p.i - l + wi as i32;
                if i < 0 || i as usize >= side {
                    continue;
                }
                for wj in 0..window {
                    let j = p.j - l + wj as i32;
                    if j < 0 || j as usize >= side {
                        continue;
                    }
                    i_b[plane * window * window + wi * window + wj] =
                        i_a[plane * n + i as usize * side + j as usize];
                }
            }
        }

        Ok(StateTensors {
            side,
            window,
            position: p,
            i_a,
            i_b,
        })
    }
}

/// Free-function form of [`Encoder::build_state`].
pub fn build_state(
    map: &BuildingMap,
    p: GridPoint,
    log: &MeasurementLog,
    step_limit: usize,
    c: f64,
    eps_ch: f64,
) -> Result<StateTensors> {
    Encoder::new(step_limit, c, eps_ch)?.build_state(map, p, log)
}

pub fn action_count(step_limit: usize) -> usize {
    let w = 2 * step_limit + 1;
    w * w
}

/// Row-major action index to displacement `(di, dj)`; the center index is
/// "stay put".
pub fn action_to_offset(index: usize, step_limit: usize) -> Result<(i32, i32)> {
    let count = action_count(step_limit);
    if index >= count {
        return Err(Error::ActionOutOfRange { index, count });
    }
    let w = 2 * step_limit + 1;
    let l = step_limit as i32;
    Ok(((index / w) as i32 - l, (index % w) as i32 - l))
}

pub fn offset_to_action(di: i32, dj: i32, step_limit: usize) -> Result<usize> {
    let l = step_limit as i32;
    if di.abs() > l || dj.abs() > l {
        return Err(Error::InvalidParam(format!(
            "offset ({di}, {dj}) exceeds step limit {step_limit}"
        )));
    }
    let w = 2 * step_limit + 1;
    Ok((di + l) as usize * w + (dj + l) as usize)
}
