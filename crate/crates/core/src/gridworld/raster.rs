//! `CHGRID/1` raster files.
//!
//! ```text
//! CHGRID 1
//! kind=heights
//! L=121 resolution_m=4 altitude_m=2
//! <L lines of L whitespace-separated values, row-major>
//! ```
//!
//! Missing values (occupied cells of an RSRP raster) are written as `nan`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

const MAGIC: &str = "CHGRID 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Heights,
    Rsrp,
}

impl RasterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RasterKind::Heights => "heights",
            RasterKind::Rsrp => "rsrp",
        }
    }
}

impl FromStr for RasterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "heights" => Ok(RasterKind::Heights),
            "rsrp" => Ok(RasterKind::Rsrp),
            other => Err(format!("unknown raster kind `{other}`")),
        }
    }
}

/// A square raster as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub kind: RasterKind,
    pub side: usize,
    pub resolution: f64,
    pub altitude: f64,
    pub values: Vec<f64>,
}

fn fmt_value(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        write!(out, "{v}").unwrap();
    }
}

impl Raster {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 8 + 64);
        out.push_str(MAGIC);
        out.push('\n');
        writeln!(out, "kind={}", self.kind.as_str()).unwrap();
        writeln!(
            out,
            "L={} resolution_m={} altitude_m={}",
            self.side, self.resolution, self.altitude
        )
        .unwrap();
        for row in self.values.chunks(self.side.max(1)) {
            for (n, v) in row.iter().enumerate() {
                if n > 0 {
                    out.push(' ');
                }
                fmt_value(&mut out, *v);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Raster> {
        let err = |m: String| Error::parse(path, m);
        let mut lines = text.lines();
        let magic = lines.next().ok_or_else(|| err("empty file".into()))?;
        if magic.trim() != MAGIC {
            return Err(err(format!("bad magic line `{magic}`")));
        }
        let kind_line = lines.next().ok_or_else(|| err("missing kind line".into()))?;
        let kind = kind_line
            .trim()
            .strip_prefix("kind=")
            .ok_or_else(|| err(format!("bad kind line `{kind_line}`")))?
            .parse::<RasterKind>()
            .map_err(err)?;

        let dims = lines.next().ok_or_else(|| err("missing header line".into()))?;
        let (mut side, mut resolution, mut altitude) = (None, None, None);
        for tok in dims.split_whitespace() {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("bad header token `{tok}`")))?;
            match key {
                "L" => side = value.parse::<usize>().ok(),
                "resolution_m" => resolution = value.parse::<f64>().ok(),
                "altitude_m" => altitude = value.parse::<f64>().ok(),
                _ => return Err(err(format!("unknown header key `{key}`"))),
            }
        }
        let side = side.ok_or_else(|| err("missing or invalid L".into()))?;
        let resolution = resolution.ok_or_else(|| err("missing or invalid resolution_m".into()))?;
        let altitude = altitude.ok_or_else(|| err("missing or invalid altitude_m".into()))?;

        let mut values = Vec::with_capacity(side * side);
        for row in 0..side {
            let line = lines
                .next()
                .ok_or_else(|| err(format!("expected {side} rows, found {row}")))?;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| err(format!("row {row}: bad value `{tok}`")))?;
                values.push(v);
            }
            if values.len() - before != side {
                return Err(err(format!(
                    "row {row}: expected {side} values, found {}",
                    values.len() - before
                )));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err("trailing data after last row".into()));
        }
        Ok(Raster {
            kind,
            side,
            resolution,
            altitude,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Raster> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Raster::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
