//! Subcommand bodies.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chd_core::baselines::BnpConfig;
use chd_core::corpus::{generate_coverage, Corpus};
use chd_core::ddqn::{AgentConfig, Trainer, TRAIN_LOG_HEADER};
use chd_core::eval::{emit_report, evaluate, read_run_log, ExperimentConfig, Method, RUN_LOG};
use chd_core::mapgen::{generate_corpus, MapGenParams};
use chd_core::nn::{Checkpoint, QNetwork};
use chd_core::PropagationParams;

use crate::settings::{file, layer, layer_opt, layer_switch, list, required, seed};
use crate::{EvalArgs, GenCoverageArgs, GenMapsArgs, ReportArgs, TrainArgs};

pub fn gen_maps(a: GenMapsArgs) -> Result<()> {
    let mut kv = file(a.config.as_deref())?;
    let mut p = MapGenParams::default();
    let mut n = 10usize;
    layer(&mut kv, "n", a.n, &mut n)?;
    layer(&mut kv, "l", a.l, &mut p.side)?;
    layer(&mut kv, "fill", a.fill, &mut p.target_fill)?;
    layer(&mut kv, "street", a.street, &mut p.min_street)?;
    layer(&mut kv, "footprint_min", a.footprint_min, &mut p.footprint.0)?;
    layer(&mut kv, "footprint_max", a.footprint_max, &mut p.footprint.1)?;
    layer(&mut kv, "resolution", a.resolution, &mut p.resolution)?;
    layer(&mut kv, "altitude", a.altitude, &mut p.altitude)?;
    let out: PathBuf = required(layer_opt(&mut kv, "out", a.out)?, "out")?;
    p.seed = seed(&mut kv, a.seed)?;
    kv.finish()?;

    let manifest = generate_corpus(&p, n, &out).with_context(|| format!("generating maps into {}", out.display()))?;
    let mean_fill = manifest.rows.iter().map(|r| r.occupied_fraction).sum::<f64>() / manifest.rows.len() as f64;
    eprintln!("wrote {} maps to {} (mean fill {mean_fill:.3})", manifest.rows.len(), out.display());
    Ok(())
}

pub fn gen_coverage(a: GenCoverageArgs) -> Result<()> {
    let mut kv = file(a.config.as_deref())?;
    let mut p = PropagationParams::default();
    let mut eps_ch = chd_core::DEFAULT_EPS_CH;
    layer(&mut kv, "p0", a.p0, &mut p.p0)?;
    layer(&mut kv, "exp", a.exp, &mut p.pathloss_exponent)?;
    layer(&mut kv, "wall_loss", a.wall_loss, &mut p.wall_loss)?;
    layer(&mut kv, "wall_cap", a.wall_cap, &mut p.max_wall_losses)?;
    layer(&mut kv, "eps_ch", a.eps_ch, &mut eps_ch)?;
    if let Some(depth) = layer_opt::<String>(&mut kv, "shadow_depth", a.shadow_depth)? {
        p.shadow_depth = match depth.as_str() {
            "none" => None,
            v => Some(v.parse().with_context(|| format!("bad shadow depth {v:?}"))?),
        };
    }
    let corpus: PathBuf = required(layer_opt(&mut kv, "corpus", a.corpus)?, "corpus")?;
    let seed = seed(&mut kv, a.seed)?;
    kv.finish()?;

    let manifest = generate_coverage(&corpus, &p, eps_ch, seed)
        .with_context(|| format!("computing coverage for {}", corpus.display()))?;
    let holes: usize = manifest.rows.iter().map(|r| r.ch_cells).sum();
    eprintln!(
        "wrote {} coverage maps to {} ({holes} coverage-hole cells in total)",
        manifest.rows.len(),
        corpus.display()
    );
    Ok(())
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut kv = file(a.config.as_deref())?;
    let mut cfg = AgentConfig::default();
    cfg.apply(&mut kv)?;
    layer(&mut kv, "gamma", a.gamma, &mut cfg.gamma)?;
    layer(&mut kv, "alpha", a.alpha, &mut cfg.alpha)?;
    layer(&mut kv, "eps_ch", a.eps_ch, &mut cfg.eps_ch)?;
    layer(&mut kv, "step_limit", a.step_limit, &mut cfg.step_limit)?;
    layer(&mut kv, "decay", a.decay, &mut cfg.decay)?;
    layer(&mut kv, "explore_start", a.explore_start, &mut cfg.explore_start)?;
    layer(&mut kv, "explore_end", a.explore_end, &mut cfg.explore_end)?;
    layer(&mut kv, "explore_steps", a.explore_steps, &mut cfg.explore_steps)?;
    layer(&mut kv, "buffer", a.buffer, &mut cfg.buffer)?;
    layer(&mut kv, "batch", a.batch, &mut cfg.batch)?;
    layer(&mut kv, "lr", a.lr, &mut cfg.lr)?;
    layer(&mut kv, "target_sync", a.target_sync, &mut cfg.target_sync)?;
    layer(&mut kv, "max_episode_len", a.max_episode_len, &mut cfg.max_episode_len)?;
    let mut episodes = 1000u64;
    layer(&mut kv, "episodes", a.episodes, &mut episodes)?;
    let corpus_dir: PathBuf = required(layer_opt(&mut kv, "corpus", a.corpus)?, "corpus")?;
    let out: PathBuf = required(layer_opt(&mut kv, "out", a.out)?, "out")?;
    let log = layer_opt(&mut kv, "log", a.log)?.unwrap_or_else(|| log_path(&out));
    let resume: Option<PathBuf> = layer_opt(&mut kv, "resume", a.resume)?;
    let seed = seed(&mut kv, a.seed)?;
    kv.finish()?;
    cfg.validate()?;

    let corpus = Corpus::load(&corpus_dir, cfg.eps_ch)?;
    let mut trainer = match &resume {
        Some(path) => Trainer::resume(cfg, seed, &Checkpoint::load(path)?)?,
        None => Trainer::new(cfg, seed)?,
    };
    let mut sink = if resume.is_some() && log.exists() {
        OpenOptions::new().append(true).open(&log)
    } else {
        std::fs::File::create(&log).and_then(|mut f| writeln!(f, "{TRAIN_LOG_HEADER}").map(|_| f))
    }
    .with_context(|| format!("opening training log {}", log.display()))?;

    let first = trainer.episodes();
    let mut found = 0u64;
    trainer.train(&corpus, episodes, |ep| {
        found += u64::from(ep.found_ch);
        writeln!(sink, "{}", ep.csv_row()).map_err(|e| chd_core::Error::Io { path: log.clone(), source: e })?;
        let done = ep.episode + 1 - first;
        if done % 100 == 0 {
            eprintln!("episode {}: {} holes found in the last 100", ep.episode + 1, found);
            found = 0;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&out)?;
    eprintln!(
        "trained {} episodes ({} in total, {} environment steps); wrote {}",
        episodes,
        trainer.episodes(),
        trainer.env_steps(),
        out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut kv = file(a.config.as_deref())?;
    let mut cfg = ExperimentConfig::default();
    let methods = layer_opt::<String>(&mut kv, "methods", a.methods)?;
    if let Some(m) = methods {
        cfg.methods = Method::parse_list(&m)?;
    }
    if let Some(k) = layer_opt::<String>(&mut kv, "k", a.k)? {
        cfg.ks = list(&k, "k")?;
    }
    if let Some(n) = layer_opt::<String>(&mut kv, "n_sam", a.n_sam)? {
        cfg.n_sam = list(&n, "n_sam")?;
    }
    let ckpt_path: Option<PathBuf> = layer_opt(&mut kv, "ckpt", a.ckpt)?;
    let step_limit = layer_opt(&mut kv, "step_limit", a.step_limit)?;
    let decay = layer_opt(&mut kv, "decay", a.decay)?;
    let mut d_b = cfg.bnp.d_b;
    layer(&mut kv, "d_b", a.d_b, &mut d_b)?;
    cfg.bnp = BnpConfig::new(d_b)?;
    let mut eps_ch = chd_core::DEFAULT_EPS_CH;
    layer(&mut kv, "eps_ch", a.eps_ch, &mut eps_ch)?;
    let dump = layer_switch(&mut kv, "dump_trajectories", a.dump_trajectories)?;
    cfg.shared_starts = !layer_switch(&mut kv, "independent_starts", a.independent_starts)?;
    let corpus_dir: PathBuf = required(layer_opt(&mut kv, "corpus", a.corpus)?, "corpus")?;
    let out: PathBuf = required(layer_opt(&mut kv, "out", a.out)?, "out")?;
    cfg.seed = seed(&mut kv, a.seed)?;
    kv.finish()?;

    let net = match &ckpt_path {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            let net = QNetwork::<f32>::from_checkpoint(&ckpt)?;
            cfg.step_limit = net.step_limit();
            if let Some(d) = ckpt.meta("decay").and_then(|v| v.parse().ok()) {
                cfg.decay = d;
            }
            Some(net)
        }
        None if cfg.methods.contains(&Method::Ddqn) => bail!("method ddqn needs --ckpt"),
        None => None,
    };
    if let Some(l) = step_limit {
        cfg.step_limit = l;
    }
    if let Some(d) = decay {
        cfg.decay = d;
    }

    let corpus = Corpus::load(&corpus_dir, eps_ch)?;
    let dump_dir = dump.then(|| out.join("trajectories"));
    let result = evaluate(&corpus, &cfg, net.as_ref(), dump_dir.as_deref())?;
    for (map, reason) in &result.skipped {
        eprintln!("skipped {map}: {reason}");
    }
    emit_report(&result, &out)?;
    eprintln!(
        "evaluated {} maps x {} methods; reports in {}",
        corpus.len() - result.skipped.len(),
        cfg.methods.len(),
        out.display()
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut kv = file(a.config.as_deref())?;
    let out: PathBuf = required(layer_opt(&mut kv, "out", a.out)?, "out")?;
    let run_log = layer_opt(&mut kv, "run_log", a.run_log)?.unwrap_or_else(|| out.join(RUN_LOG));
    kv.finish()?;
    let result = read_run_log(&run_log)?;
    emit_report(&result, &out)?;
    eprintln!("rebuilt reports from {} in {}", run_log.display(), out.display());
    Ok(())
}
