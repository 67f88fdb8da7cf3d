//! The training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss, reaches_ch, reward, select_action, td_target, AgentConfig, ReplayBuffer, Sample};
use crate::corpus::Corpus;
use crate::encoding::{action_to_offset, Encoder, MeasurementLog};
use crate::error::{Error, Result};
use crate::gridworld::GridPoint;
use crate::nn::{Adam, Checkpoint, QNetwork};

pub const TRAIN_LOG_HEADER: &str = "episode,steps,return,found_ch,epsilon,loss_mean";

const TARGET_PREFIX: &str = "target.";

/// A replay entry stored compactly: the episode's visited points and
/// measurements up to and including the next state. The state before the
/// action is the trail minus its last entry. States are rebuilt on sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub map: usize,
    pub trail: Vec<(GridPoint, f64)>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub map: usize,
    pub steps: usize,
    pub ret: f64,
    pub found_ch: bool,
    pub epsilon: f64,
    pub loss_mean: Option<f64>,
}

impl EpisodeLog {
    pub fn csv_row(&self) -> String {
        let loss = self.loss_mean.map_or("nan".to_owned(), |l| format!("{l:.6}"));
        format!(
            "{},{},{},{},{:.6},{}",
            self.episode,
            self.steps,
            self.ret,
            u8::from(self.found_ch),
            self.epsilon,
            loss
        )
    }
}

pub struct Trainer {
    cfg: AgentConfig,
    seed: u64,
    policy: QNetwork<f32>,
    target: QNetwork<f32>,
    opt: Adam<f32>,
    buffer: ReplayBuffer<Transition>,
    encoder: Encoder,
    episodes: u64,
    env_steps: u64,
    grad_steps: u64,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn meta_u64(ckpt: &Checkpoint, key: &str) -> Result<u64> {
    ckpt.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::InvalidParam(format!("checkpoint meta {key} missing or invalid")))
}

impl Trainer {
    /// Fresh networks drawn from `seed`; the target starts as a copy.
    pub fn new(cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let policy = QNetwork::new(cfg.step_limit, &mut stream(seed, 0));
        let mut target = QNetwork::zeros(cfg.step_limit);
        target.copy_weights(&policy)?;
        Ok(Trainer {
            encoder: Encoder::new(cfg.step_limit, cfg.decay, cfg.eps_ch)?,
            buffer: ReplayBuffer::new(cfg.buffer),
            opt: Adam::new(cfg.lr),
            cfg,
            seed,
            policy,
            target,
            episodes: 0,
            env_steps: 0,
            grad_steps: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// counters, both networks and the optimizer state carry over; the replay
    /// memory starts empty.
    pub fn resume(cfg: AgentConfig, seed: u64, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg, seed)?;
        t.policy = QNetwork::from_checkpoint(ckpt)?;
        if t.policy.step_limit() != t.cfg.step_limit {
            return Err(Error::InvalidParam(format!(
                "checkpoint step limit {} differs from the configured {}",
                t.policy.step_limit(),
                t.cfg.step_limit
            )));
        }
        let names = t.param_names();
        for (name, dst) in names.iter().zip(t.target.params_mut()) {
            ckpt.read_into(&format!("{TARGET_PREFIX}{name}"), dst)?;
        }
        let sizes: Vec<usize> = t.policy.params().iter().map(|(_, p)| p.len()).collect();
        if let Some(mut opt) = Adam::read_state(ckpt, &names, &sizes)? {
            opt.lr = t.cfg.lr;
            t.opt = opt;
        }
        t.episodes = meta_u64(ckpt, "episodes")?;
        t.env_steps = meta_u64(ckpt, "env_steps")?;
        t.grad_steps = meta_u64(ckpt, "grad_steps")?;
        Ok(t)
    }

    fn param_names(&self) -> Vec<String> {
        self.policy.params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &QNetwork<f32> {
        &self.policy
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    /// Policy weights plus everything [`Trainer::resume`] needs.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.policy.to_checkpoint();
        ckpt.set_meta("seed", self.seed);
        ckpt.set_meta("episodes", self.episodes);
        ckpt.set_meta("env_steps", self.env_steps);
        ckpt.set_meta("grad_steps", self.grad_steps);
        ckpt.set_meta("decay", self.cfg.decay);
        ckpt.set_meta("eps_ch", self.cfg.eps_ch);
        for (name, t) in self.target.params() {
            ckpt.push(&format!("{TARGET_PREFIX}{name}"), t);
        }
        self.opt.write_state(&self.param_names(), &mut ckpt);
        ckpt
    }

    /// Runs `episodes` more episodes, handing each log to `sink`.
    pub fn train(
        &mut self,
        corpus: &Corpus,
        episodes: u64,
        mut sink: impl FnMut(&EpisodeLog) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..episodes {
            let log = self.run_episode(corpus)?;
            sink(&log)?;
        }
        Ok(())
    }

    fn training_starts(corpus: &Corpus, map: usize, eps_ch: f64) -> Vec<GridPoint> {
        let sc = &corpus.scenarios[map];
        sc.map
            .unoccupied_cells()
            .into_iter()
            .filter(|&p| !reaches_ch(sc.coverage.rsrp(p), eps_ch))
            .collect()
    }

    pub fn run_episode(&mut self, corpus: &Corpus) -> Result<EpisodeLog> {
        if corpus.is_empty() {
            return Err(Error::InvalidParam("training corpus is empty".into()));
        }
        let episode = self.episodes;
        let mut rng = stream(self.seed, episode + 1);
        let (map_index, starts) = loop {
            let m = rng.random_range(0..corpus.len());
            let starts = Self::training_starts(corpus, m, self.cfg.eps_ch);
            if !starts.is_empty() {
                break (m, starts);
            }
            if (0..corpus.len()).all(|m| Self::training_starts(corpus, m, self.cfg.eps_ch).is_empty()) {
                return Err(Error::InvalidParam("no map has a start cell outside the coverage holes".into()));
            }
        };
        let sc = &corpus.scenarios[map_index];
        let l = self.cfg.step_limit;
        let mut p = starts[rng.random_range(0..starts.len())];
        let z0 = sc.coverage.rsrp(p).expect("start cells are measurable");
        let mut trail = vec![(p, z0)];
        let mut log: MeasurementLog = trail.iter().copied().collect();

        let mut ret = 0.0;
        let mut found = false;
        let mut epsilon = self.cfg.exploration(self.env_steps);
        let mut losses = Vec::new();
        let mut steps = 0;
        while steps < self.cfg.max_episode_len {
            let state = self.encoder.build_state(&sc.map, p, &log)?;
            epsilon = self.cfg.exploration(self.env_steps);
            let action = select_action(&self.policy, &state, epsilon, &mut rng)?;
            let (di, dj) = action_to_offset(action, l)?;
            let predicted = p.offset(di, dj);
            let perm = sc.map.permissible_set(p, l)?;
            let actual = perm.clamp(predicted);
            let z = sc.coverage.rsrp(actual);
            let r = reward(predicted, &perm, z, self.cfg.eps_ch);
            let terminal = reaches_ch(z, self.cfg.eps_ch);
            let z = z.expect("permissible cells are measurable");
            trail.push((actual, z));
            log.push(actual, z);
            self.buffer.push(Transition {
                map: map_index,
                trail: trail.clone(),
                action,
                reward: r,
                terminal,
            });
            self.env_steps += 1;
            steps += 1;
            ret += r;
            p = actual;

            if let Some(l) = self.gradient_step(corpus, &mut rng)? {
                losses.push(l);
            }
            if terminal {
                found = true;
                break;
            }
        }
        self.episodes += 1;
        let loss_mean = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        Ok(EpisodeLog {
            episode,
            map: map_index,
            steps,
            ret,
            found_ch: found,
            epsilon,
            loss_mean,
        })
    }

    fn decode(&mut self, corpus: &Corpus, t: &Transition) -> Result<Sample> {
        let sc = corpus.scenarios.get(t.map).ok_or_else(|| {
            Error::InvalidParam(format!("replay entry refers to missing map {}", t.map))
        })?;
        let n = t.trail.len() - 1;
        let before: MeasurementLog = t.trail[..n].iter().copied().collect();
        let state = self.encoder.build_state(&sc.map, t.trail[n - 1].0, &before)?;
        let next = if t.terminal {
            None
        } else {
            let after: MeasurementLog = t.trail.iter().copied().collect();
            Some(self.encoder.build_state(&sc.map, t.trail[n].0, &after)?)
        };
        Ok(Sample {
            state,
            action: t.action,
            reward: t.reward,
            next,
        })
    }

    fn gradient_step(&mut self, corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let Some(batch) = self.buffer.sample(self.cfg.batch, rng) else { return Ok(None) };
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        let samples = batch
            .iter()
            .map(|t| self.decode(corpus, t))
            .collect::<Result<Vec<_>>>()?;
        let targets = td_target(&samples, &self.policy, &self.target, self.cfg.gamma)?;
        self.policy.zero_grad();
        let value = loss(&samples, &targets, &mut self.policy, self.cfg.alpha)?;
        if !value.is_finite() {
            return Err(Error::Diverged(format!(
                "loss is {value} at episode {}, gradient step {}",
                self.episodes, self.grad_steps
            )));
        }
        self.opt.step(&mut self.policy.params_mut())?;
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync) {
            self.target.copy_weights(&self.policy)?;
        }
        Ok(Some(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize;
    use crate::mapgen::MapGenParams;
    use crate::propagation::PropagationParams;

    fn tiny_corpus() -> Corpus {
        let params = MapGenParams {
            side: 25,
            footprint: (2, 4),
            target_fill: 0.15,
            seed: 3,
            ..MapGenParams::default()
        };
        synthesize(&params, &PropagationParams::default(), 2, -100.0, 9).unwrap()
    }

    fn tiny_config() -> AgentConfig {
        AgentConfig {
            step_limit: 3,
            batch: 4,
            buffer: 64,
            max_episode_len: 5,
            explore_steps: 50,
            target_sync: 7,
            lr: 1e-3,
            ..AgentConfig::default()
        }
    }

    fn run(seed: u64, episodes: u64, corpus: &Corpus) -> (Vec<String>, Trainer) {
        let mut t = Trainer::new(tiny_config(), seed).unwrap();
        let mut rows = Vec::new();
        t.train(corpus, episodes, |log| {
            rows.push(log.csv_row());
            Ok(())
        })
        .unwrap();
        (rows, t)
    }

    #[test]
    fn zero_episodes_keep_initial_weights() {
        let corpus = tiny_corpus();
        let (rows, t) = run(4, 0, &corpus);
        assert!(rows.is_empty());
        let fresh = Trainer::new(tiny_config(), 4).unwrap();
        assert_eq!(t.policy(), fresh.policy());
    }

    #[test]
    fn same_seed_same_log() {
        let corpus = tiny_corpus();
        let (a, ta) = run(5, 6, &corpus);
        let (b, tb) = run(5, 6, &corpus);
        assert_eq!(a, b);
        assert_eq!(ta.policy(), tb.policy());
        assert!(ta.grad_steps() > 0);
    }

    #[test]
    fn episode_invariants() {
        let corpus = tiny_corpus();
        let cfg = tiny_config();
        let mut t = Trainer::new(cfg.clone(), 6).unwrap();
        let mut total = 0;
        t.train(&corpus, 10, |log| {
            assert!(log.steps >= 1 && log.steps <= cfg.max_episode_len);
            assert!(log.ret <= 0.0 && log.ret >= -1.25 * cfg.max_episode_len as f64);
            total += log.steps as u64;
            Ok(())
        })
        .unwrap();
        assert_eq!(t.env_steps(), total);
        for tr in t.buffer.iter() {
            assert!([0.0, -1.25, -0.25].contains(&tr.reward));
            assert_eq!(tr.terminal, tr.reward == 0.0);
            let (from, to) = (tr.trail[tr.trail.len() - 2].0, tr.trail[tr.trail.len() - 1].0);
            let perm = corpus.scenarios[tr.map].map.permissible_set(from, cfg.step_limit).unwrap();
            assert!(perm.contains(to) || to == from);
        }
    }

    #[test]
    fn resume_continues_counters() {
        let corpus = tiny_corpus();
        let (_, t) = run(7, 4, &corpus);
        let ckpt = t.checkpoint();
        let back = Checkpoint::from_reader(&ckpt.to_bytes().unwrap()[..], std::path::Path::new("m")).unwrap();
        let mut r = Trainer::resume(tiny_config(), 7, &back).unwrap();
        assert_eq!(r.episodes(), 4);
        assert_eq!(r.env_steps(), t.env_steps());
        assert_eq!(r.policy(), t.policy());
        assert_eq!(r.target, t.target);
        let log = r.run_episode(&corpus).unwrap();
        assert_eq!(log.episode, 4);
        assert!(r.env_steps() > t.env_steps());
    }

    #[test]
    fn csv_row_format() {
        let log = EpisodeLog {
            episode: 3,
            map: 0,
            steps: 2,
            ret: -0.5,
            found_ch: true,
            epsilon: 0.25,
            loss_mean: None,
        };
        assert_eq!(log.csv_row(), "3,2,-0.5,1,0.250000,nan");
    }
}
