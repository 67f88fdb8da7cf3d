//! Precision/recall experiments over a corpus and their reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BnpConfig, Gbnp, Grsp, Neighborhood};
use crate::corpus::{Corpus, Scenario};
use crate::ddqn::GreedyAgent;
use crate::error::{Error, Result};
use crate::gridworld::GridPoint;
use crate::nn::QNetwork;
use crate::rollout::{rollout, Predictor, Trajectory};

pub const PRECISION_CSV: &str = "precision.csv";
pub const RECALL_CSV: &str = "recall.csv";
pub const RUN_LOG: &str = "runs.jsonl";
pub const SUMMARY_HEADER: &str = "method,k,n_sam,mean,std,n_maps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Rsp,
    Bnp,
    Grsp,
    Gbnp,
    Ddqn,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rsp, Method::Bnp, Method::Grsp, Method::Gbnp, Method::Ddqn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rsp => "rsp",
            Method::Bnp => "bnp",
            Method::Grsp => "grsp",
            Method::Gbnp => "gbnp",
            Method::Ddqn => "ddqn",
        }
    }

    /// Sampling methods predict their start point and ignore `k`.
    pub fn is_one_shot(self) -> bool {
        matches!(self, Method::Rsp | Method::Bnp)
    }

    /// Whether starts come from the building neighbourhood.
    pub fn near_buildings(self) -> bool {
        matches!(self, Method::Bnp | Method::Gbnp)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidParam("no methods given".into()));
        }
        Ok(out)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown method {s:?} (expected rsp, bnp, grsp, gbnp or ddqn)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Sample counts to report; smaller counts use prefixes of the same starts.
    pub n_sam: Vec<usize>,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub step_limit: usize,
    /// Decay of the agent's state encoding.
    pub decay: f64,
    pub bnp: BnpConfig,
    /// Share start cells across methods with the same start distribution.
    pub shared_starts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Rsp, Method::Bnp, Method::Grsp, Method::Gbnp],
            n_sam: vec![100],
            ks: vec![1, 2, 4],
            seed: 0,
            step_limit: crate::DEFAULT_STEP_LIMIT,
            decay: crate::DEFAULT_DECAY,
            bnp: BnpConfig::default(),
            shared_starts: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.ks.is_empty() || self.n_sam.is_empty() {
            return Err(Error::InvalidParam("methods, k and n_sam lists must be non-empty".into()));
        }
        if self.n_sam.contains(&0) {
            return Err(Error::InvalidParam("n_sam must be at least 1".into()));
        }
        if self.step_limit == 0 {
            return Err(Error::InvalidParam("step_limit must be positive".into()));
        }
        Ok(())
    }

    fn max_n_sam(&self) -> usize {
        self.n_sam.iter().copied().max().unwrap_or(0)
    }

    fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub n_sam: usize,
    pub n_true: usize,
    pub n_unique_true: usize,
    pub ch_cells: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision counts every prediction in the hole set, duplicates included;
/// recall counts distinct cells. Recall is 0 for an empty hole set.
pub fn metrics(predictions: &[GridPoint], ch: &BTreeSet<GridPoint>) -> Metrics {
    let hits: Vec<GridPoint> = predictions.iter().copied().filter(|p| ch.contains(p)).collect();
    let unique: BTreeSet<GridPoint> = hits.iter().copied().collect();
    let n = predictions.len();
    Metrics {
        n_sam: n,
        n_true: hits.len(),
        n_unique_true: unique.len(),
        ch_cells: ch.len(),
        precision: if n == 0 { 0.0 } else { hits.len() as f64 / n as f64 },
        recall: if ch.is_empty() {
            0.0
        } else {
            unique.len() as f64 / ch.len() as f64
        },
    }
}

/// One (map, method, k, n_sam) cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: String,
    pub method: String,
    pub k: usize,
    pub n_sam: usize,
    pub ch_cells: usize,
    pub n_true: usize,
    pub n_unique_true: usize,
    pub precision: f64,
    pub recall: f64,
    pub predictions: Vec<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine {
    Result(MapResult),
    Skipped { map: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub results: Vec<MapResult>,
    /// Maps left out, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn pool_rng(seed: u64, map: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((map as u64) << 8) | purpose);
    rng
}

/// The first `n` cells of a seeded shuffle of `cells`.
fn draw_starts(mut cells: Vec<GridPoint>, n: usize, rng: &mut ChaCha8Rng, what: &str, map: &str) -> Result<Vec<GridPoint>> {
    if cells.len() < n {
        return Err(Error::Eval(format!(
            "{map}: n_sam {n} exceeds the {} available {what} cells",
            cells.len()
        )));
    }
    cells.shuffle(rng);
    cells.truncate(n);
    Ok(cells)
}

fn dump_name(method: Method, map: &str, n: usize) -> String {
    let stem = map.strip_suffix(".chgrid").unwrap_or(map);
    format!("{method}_{stem}_{n:04}.csv")
}

/// Runs every configured method on every map with at least one coverage hole.
/// `ddqn` is required when the method list includes it. With `dump_dir`,
/// each rollout's trajectory is written there as CSV.
pub fn evaluate(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    ddqn: Option<&QNetwork<f32>>,
    dump_dir: Option<&Path>,
) -> Result<Evaluation> {
    cfg.validate()?;
    if cfg.methods.contains(&Method::Ddqn) {
        let net = ddqn.ok_or_else(|| Error::InvalidParam("ddqn evaluation needs a checkpoint".into()))?;
        if net.step_limit() != cfg.step_limit {
            return Err(Error::InvalidParam(format!(
                "checkpoint step limit {} differs from the configured {}",
                net.step_limit(),
                cfg.step_limit
            )));
        }
    }
    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let per_map = corpus
        .scenarios
        .par_iter()
        .enumerate()
        .map(|(index, sc)| evaluate_map(index, sc, cfg, ddqn, dump_dir))
        .collect::<Result<Vec<_>>>()?;
    let mut eval = Evaluation::default();
    for (sc, outcome) in corpus.scenarios.iter().zip(per_map) {
        match outcome {
            Some(rows) => eval.results.extend(rows),
            None => eval.skipped.push((sc.name.clone(), "no coverage holes".into())),
        }
    }
    Ok(eval)
}

fn evaluate_map(
    index: usize,
    sc: &Scenario,
    cfg: &ExperimentConfig,
    ddqn: Option<&QNetwork<f32>>,
    dump_dir: Option<&Path>,
) -> Result<Option<Vec<MapResult>>> {
    let ch = sc.coverage.ch_set();
    if ch.is_empty() {
        return Ok(None);
    }
    let n = cfg.max_n_sam();
    let kmax = cfg.max_k();
    let needs_nb = cfg.methods.iter().any(|m| m.near_buildings());
    let nb = needs_nb.then(|| Neighborhood::new(&sc.map, cfg.bnp)).transpose()?;

    let mut rows = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let purpose = if method.near_buildings() { 1 } else { 0 };
        let stream = if cfg.shared_starts { purpose } else { 2 + mi as u64 };
        let mut rng = pool_rng(cfg.seed, index, stream);
        let starts = match &nb {
            Some(nb) if method.near_buildings() => {
                draw_starts(nb.cells().to_vec(), n, &mut rng, "neighbourhood", &sc.name)?
            }
            _ => draw_starts(sc.map.unoccupied_cells(), n, &mut rng, "unoccupied", &sc.name)?,
        };

        // predictions[k index][start]
        let mut predictions = vec![Vec::with_capacity(n); cfg.ks.len()];
        if method.is_one_shot() {
            predictions.iter_mut().for_each(|p| p.extend_from_slice(&starts));
        } else {
            let mut predictor: Box<dyn Predictor> = match method {
                Method::Grsp => Box::new(Grsp::new()),
                Method::Gbnp => Box::new(Gbnp::new(nb.clone().expect("neighbourhood built"))),
                Method::Ddqn => Box::new(GreedyAgent::new(
                    ddqn.expect("checked above"),
                    cfg.decay,
                    sc.coverage.eps_ch(),
                )?),
                Method::Rsp | Method::Bnp => unreachable!("one-shot methods"),
            };
            for (si, &start) in starts.iter().enumerate() {
                let traj: Trajectory = rollout(&sc.map, &sc.coverage, predictor.as_mut(), start, kmax, cfg.step_limit)?;
                if let Some(dir) = dump_dir {
                    traj.save_csv(&dir.join(dump_name(method, &sc.name, si)))?;
                }
                for (ki, &k) in cfg.ks.iter().enumerate() {
                    predictions[ki].push(traj.prediction_at(k));
                }
            }
        }

        for (ki, &k) in cfg.ks.iter().enumerate() {
            for &n_sam in &cfg.n_sam {
                let preds = &predictions[ki][..n_sam];
                let m = metrics(preds, &ch);
                rows.push(MapResult {
                    map: sc.name.clone(),
                    method: method.as_str().to_owned(),
                    k,
                    n_sam,
                    ch_cells: m.ch_cells,
                    n_true: m.n_true,
                    n_unique_true: m.n_unique_true,
                    precision: m.precision,
                    recall: m.recall,
                    predictions: preds.iter().map(|p| [p.i, p.j]).collect(),
                });
            }
        }
    }
    Ok(Some(rows))
}

/// Mean and spread of one metric over maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub k: usize,
    pub n_sam: usize,
    pub mean: f64,
    /// Sample standard deviation across maps; 0 for a single map.
    pub std: f64,
    pub n_maps: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per (method, k, n_sam) aggregates, sorted by method name then k then n_sam.
pub fn summarize(results: &[MapResult], metric: impl Fn(&MapResult) -> f64) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.method.clone(), r.k, r.n_sam))
            .or_default()
            .push(metric(r));
    }
    groups
        .into_iter()
        .map(|((method, k, n_sam), values)| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                method,
                k,
                n_sam,
                mean,
                std,
                n_maps: values.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6},{}", r.method, r.k, r.n_sam, r.mean, r.std, r.n_maps);
    }
    out
}

/// Mean metric for one method and k at the largest reported `n_sam`.
pub fn lookup(rows: &[SummaryRow], method: Method, k: usize) -> Option<f64> {
    rows.iter()
        .filter(|r| r.method == method.as_str() && r.k == k)
        .max_by_key(|r| r.n_sam)
        .map(|r| r.mean)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `precision.csv`, `recall.csv`, one gnuplot `<method>.dat` per
/// method and the JSON-lines run log.
pub fn emit_report(eval: &Evaluation, out_dir: &Path) -> Result<()> {
    if eval.results.is_empty() {
        return Err(Error::Eval("no results to report (every map was skipped)".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let precision = summarize(&eval.results, |r| r.precision);
    let recall = summarize(&eval.results, |r| r.recall);
    write(&out_dir.join(PRECISION_CSV), &summary_csv(&precision))?;
    write(&out_dir.join(RECALL_CSV), &summary_csv(&recall))?;

    let mut dat: BTreeMap<&str, String> = BTreeMap::new();
    for (p, r) in precision.iter().zip(&recall) {
        let text = dat.entry(&p.method).or_insert_with(|| {
            format!(
                "# method {}\n# k n_sam precision_mean precision_std recall_mean recall_std n_maps\n",
                p.method
            )
        });
        let _ = writeln!(
            text,
            "{} {} {:.6} {:.6} {:.6} {:.6} {}",
            p.k, p.n_sam, p.mean, p.std, r.mean, r.std, p.n_maps
        );
    }
    for (method, text) in dat {
        write(&out_dir.join(format!("{method}.dat")), &text)?;
    }

    let mut log = String::new();
    for r in &eval.results {
        log.push_str(&serde_json::to_string(&LogLine::Result(r.clone())).expect("serializable"));
        log.push('\n');
    }
    for (map, reason) in &eval.skipped {
        let line = LogLine::Skipped {
            map: map.clone(),
            reason: reason.clone(),
        };
        log.push_str(&serde_json::to_string(&line).expect("serializable"));
        log.push('\n');
    }
    write(&out_dir.join(RUN_LOG), &log)
}

/// Reads a run log written by [`emit_report`].
pub fn read_run_log(path: &Path) -> Result<Evaluation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut eval = Evaluation::default();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: LogLine =
            serde_json::from_str(line).map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        match parsed {
            LogLine::Result(r) => eval.results.push(r),
            LogLine::Skipped { map, reason } => eval.skipped.push((map, reason)),
        }
    }
    Ok(eval)
}
