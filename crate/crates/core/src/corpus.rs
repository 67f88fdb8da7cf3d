//! Corpus manifests and loading.
//!
//! A corpus directory holds the building rasters written by
//! [`crate::mapgen::generate_corpus`] with their `manifest.csv`, and, once
//! coverage has been computed, one `rsrp` raster per map listed in
//! `coverage.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::{BuildingMap, GridPoint};
use crate::propagation::{compute_coverage, place_base_station, BaseStation, CoverageMap, PropagationParams};

pub const MAP_MANIFEST: &str = "manifest.csv";
pub const COVERAGE_MANIFEST: &str = "coverage.csv";

const MAP_HEADER: &str = "file,occupied_fraction,seed";
const COVERAGE_HEADER: &str = "file,rsrp_file,bs_i,bs_j,bs_height_m,ch_cells,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub file: String,
    pub occupied_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapManifest {
    pub rows: Vec<MapRow>,
}

fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(Error::parse(
                path,
                format!("expected header `{header}`, found `{}`", other.unwrap_or("")),
            ))
        }
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let fields: Vec<String> = l.split(',').map(|f| f.trim().to_string()).collect();
            if fields.len() != width {
                return Err(Error::parse(path, format!("row {}: expected {width} fields", n + 1)));
            }
            Ok(fields)
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, row: &[String], idx: usize, name: &str) -> Result<T> {
    row[idx]
        .parse()
        .map_err(|_| Error::parse(path, format!("bad {name} `{}`", row[idx])))
}

impl MapManifest {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(MAP_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{},{:.6},{}", r.file, r.occupied_fraction, r.seed).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let rows = read_csv(path, MAP_HEADER)?
            .into_iter()
            .map(|r| {
                Ok(MapRow {
                    file: r[0].clone(),
                    occupied_fraction: field(path, &r, 1, "occupied_fraction")?,
                    seed: field(path, &r, 2, "seed")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(MapManifest { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub file: String,
    pub rsrp_file: String,
    pub bs: BaseStation,
    pub ch_cells: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoverageManifest {
    pub rows: Vec<CoverageRow>,
}

impl CoverageManifest {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(COVERAGE_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.file, r.rsrp_file, r.bs.cell.i, r.bs.cell.j, r.bs.height_m, r.ch_cells, r.seed
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let rows = read_csv(path, COVERAGE_HEADER)?
            .into_iter()
            .map(|r| {
                Ok(CoverageRow {
                    file: r[0].clone(),
                    rsrp_file: r[1].clone(),
                    bs: BaseStation {
                        cell: GridPoint::new(field(path, &r, 2, "bs_i")?, field(path, &r, 3, "bs_j")?),
                        height_m: field(path, &r, 4, "bs_height_m")?,
                    },
                    ch_cells: field(path, &r, 5, "ch_cells")?,
                    seed: field(path, &r, 6, "seed")?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CoverageManifest { rows })
    }
}

/// Name of the RSRP raster written next to `map_file`.
pub fn rsrp_file_name(map_file: &str) -> String {
    match map_file.strip_suffix(".chgrid") {
        Some(stem) => format!("{stem}.rsrp.chgrid"),
        None => format!("{map_file}.rsrp.chgrid"),
    }
}

/// Places one base station per map (seeded `seed + index`), computes its
/// coverage and writes the rasters plus `coverage.csv` into `dir`.
pub fn generate_coverage(
    dir: &Path,
    params: &PropagationParams,
    eps_ch: f64,
    seed: u64,
) -> Result<CoverageManifest> {
    params.validate()?;
    let manifest = MapManifest::read(&dir.join(MAP_MANIFEST))?;
    let rows = manifest
        .rows
        .par_iter()
        .enumerate()
        .map(|(index, row)| {
            let map = BuildingMap::load(&dir.join(&row.file))?;
            let bs_seed = seed.wrapping_add(index as u64);
            let bs = place_base_station(&map, bs_seed);
            let cm = compute_coverage(&map, bs, params, eps_ch)?;
            let rsrp_file = rsrp_file_name(&row.file);
            cm.save(&dir.join(&rsrp_file))?;
            Ok(CoverageRow {
                file: row.file.clone(),
                rsrp_file,
                bs,
                ch_cells: cm.ch_count(),
                seed: bs_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cov = CoverageManifest { rows };
    cov.write(&dir.join(COVERAGE_MANIFEST))?;
    Ok(cov)
}

/// One map with its ground-truth coverage.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub map: BuildingMap,
    pub coverage: CoverageMap,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub scenarios: Vec<Scenario>,
}

impl Corpus {
    /// Loads every map listed in `coverage.csv` under `dir`.
    pub fn load(dir: &Path, eps_ch: f64) -> Result<Self> {
        let manifest = CoverageManifest::read(&dir.join(COVERAGE_MANIFEST))?;
        let scenarios = manifest
            .rows
            .par_iter()
            .map(|row| {
                let map = BuildingMap::load(&dir.join(&row.file))?;
                let coverage = CoverageMap::load(&dir.join(&row.rsrp_file), row.bs, eps_ch)?;
                if coverage.side() != map.side() {
                    return Err(Error::parse(
                        dir.join(&row.rsrp_file),
                        format!("side {} does not match map side {}", coverage.side(), map.side()),
                    ));
                }
                Ok(Scenario {
                    name: row.file.clone(),
                    map,
                    coverage,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            scenarios,
        })
    }

    pub fn from_scenarios(scenarios: Vec<Scenario>) -> Self {
        Corpus {
            dir: PathBuf::new(),
            scenarios,
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// Generates maps and coverage in memory, without touching the disk.
pub fn synthesize(
    map_params: &crate::mapgen::MapGenParams,
    prop: &PropagationParams,
    n: usize,
    eps_ch: f64,
    bs_seed: u64,
) -> Result<Corpus> {
    let scenarios = (0..n)
        .into_par_iter()
        .map(|index| {
            let map = crate::mapgen::generate_map(&map_params.for_index(index))?;
            let bs = place_base_station(&map, bs_seed.wrapping_add(index as u64));
            let coverage = compute_coverage(&map, bs, prop, eps_ch)?;
            Ok(Scenario {
                name: crate::mapgen::map_file_name(index),
                map,
                coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::from_scenarios(scenarios))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapgen::{generate_corpus, MapGenParams};

    #[test]
    fn corpus_files_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let params = MapGenParams {
            side: 31,
            footprint: (2, 5),
            target_fill: 0.2,
            seed: 40,
            ..MapGenParams::default()
        };
        let m = generate_corpus(&params, 3, dir.path()).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[2].seed, 42);
        for r in &m.rows {
            assert!(dir.path().join(&r.file).exists());
        }
        let back = MapManifest::read(&dir.path().join(MAP_MANIFEST)).unwrap();
        assert_eq!(back.rows.len(), 3);
        let again = generate_corpus(&params, 3, dir.path()).unwrap();
        assert_eq!(again.to_csv(), m.to_csv());

        let cov = generate_coverage(dir.path(), &PropagationParams::default(), -100.0, 9).unwrap();
        assert_eq!(cov.rows.len(), 3);
        let corpus = Corpus::load(dir.path(), -100.0).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.scenarios[0].coverage.ch_count(), cov.rows[0].ch_cells);
        let back = CoverageManifest::read(&dir.path().join(COVERAGE_MANIFEST)).unwrap();
        assert_eq!(back, cov);
    }

    #[test]
    fn missing_manifest_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = Corpus::load(dir.path(), -100.0).unwrap_err();
        assert!(err.to_string().contains("coverage.csv"), "{err}");
    }

    #[test]
    fn zero_size_corpus_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_corpus(&MapGenParams::default(), 0, dir.path()).is_err());
    }
}
