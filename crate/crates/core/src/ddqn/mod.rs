//! Double deep Q-learning: rewards, exploration, bootstrap targets, the
//! auxiliary-penalised loss, replay and the training loop.

mod replay;
mod train;

pub use replay::ReplayBuffer;
pub use train::{EpisodeLog, Trainer, Transition, TRAIN_LOG_HEADER};

use std::path::Path;

use rand::Rng;

use crate::config::KeyValues;
use crate::encoding::{action_to_offset, Encoder, StateTensors};
use crate::error::{Error, Result};
use crate::gridworld::{GridPoint, PermissibleSet};
use crate::nn::{argmax, QNetwork, Scalar};
use crate::rollout::{CoverageAccess, Predictor, View};

pub const REWARD_FOUND: f64 = 0.0;
pub const REWARD_INVALID: f64 = -1.25;
pub const REWARD_STEP: f64 = -0.25;

/// Whether a measurement ends an episode. Uses `<=`, unlike the strict
/// coverage-hole set extraction.
pub fn reaches_ch(z: Option<f64>, eps_ch: f64) -> bool {
    z.is_some_and(|z| z <= eps_ch)
}

/// Reward for moving toward `predicted` and measuring `z_next` where the UAV
/// actually ended up. Reaching a hole wins over the invalid-move penalty.
pub fn reward(predicted: GridPoint, permissible: &PermissibleSet, z_next: Option<f64>, eps_ch: f64) -> f64 {
    if reaches_ch(z_next, eps_ch) {
        REWARD_FOUND
    } else if !permissible.contains(predicted) {
        REWARD_INVALID
    } else {
        REWARD_STEP
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub eps_ch: f64,
    pub step_limit: usize,
    pub decay: f64,
    pub explore_start: f64,
    pub explore_end: f64,
    pub explore_steps: u64,
    pub buffer: usize,
    pub batch: usize,
    pub lr: f64,
    pub target_sync: u64,
    pub max_episode_len: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            alpha: 1.0,
            eps_ch: crate::DEFAULT_EPS_CH,
            step_limit: crate::DEFAULT_STEP_LIMIT,
            decay: crate::DEFAULT_DECAY,
            explore_start: 1.0,
            explore_end: 0.05,
            explore_steps: 50_000,
            buffer: 50_000,
            batch: 32,
            lr: 1e-4,
            target_sync: 1000,
            max_episode_len: 30,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.decay > 0.0) {
            return bad(format!("decay must be positive, got {}", self.decay));
        }
        if !(self.eps_ch < 0.0) {
            return bad(format!("eps_ch must be negative, got {}", self.eps_ch));
        }
        for (name, v) in [("explore_start", self.explore_start), ("explore_end", self.explore_end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.step_limit == 0 || self.batch == 0 || self.target_sync == 0 || self.max_episode_len == 0 {
            return bad("step_limit, batch, target_sync and max_episode_len must be positive".into());
        }
        if self.buffer < self.batch {
            return bad(format!("buffer {} is smaller than batch {}", self.buffer, self.batch));
        }
        Ok(())
    }

    /// Linear exploration schedule over environment steps.
    pub fn exploration(&self, env_steps: u64) -> f64 {
        if self.explore_steps == 0 {
            return self.explore_end;
        }
        let frac = (env_steps as f64 / self.explore_steps as f64).min(1.0);
        self.explore_start * (1.0 - frac) + self.explore_end * frac
    }

    /// Applies and consumes the keys this config knows.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("gamma", &mut self.gamma)?;
        kv.take_into("alpha", &mut self.alpha)?;
        kv.take_into("eps_ch", &mut self.eps_ch)?;
        kv.take_into("step_limit", &mut self.step_limit)?;
        kv.take_into("decay", &mut self.decay)?;
        kv.take_into("explore_start", &mut self.explore_start)?;
        kv.take_into("explore_end", &mut self.explore_end)?;
        kv.take_into("explore_steps", &mut self.explore_steps)?;
        kv.take_into("buffer", &mut self.buffer)?;
        kv.take_into("batch", &mut self.batch)?;
        kv.take_into("lr", &mut self.lr)?;
        kv.take_into("target_sync", &mut self.target_sync)?;
        kv.take_into("max_episode_len", &mut self.max_episode_len)?;
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("gamma", self.gamma);
        kv.insert("alpha", self.alpha);
        kv.insert("eps_ch", self.eps_ch);
        kv.insert("step_limit", self.step_limit);
        kv.insert("decay", self.decay);
        kv.insert("explore_start", self.explore_start);
        kv.insert("explore_end", self.explore_end);
        kv.insert("explore_steps", self.explore_steps);
        kv.insert("buffer", self.buffer);
        kv.insert("batch", self.batch);
        kv.insert("lr", self.lr);
        kv.insert("target_sync", self.target_sync);
        kv.insert("max_episode_len", self.max_episode_len);
        kv
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::read(path)?;
        let mut cfg = AgentConfig::default();
        cfg.apply(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values().to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Epsilon-greedy: a uniform draw below `explore` picks a uniform action,
/// otherwise the greedy one (first maximum in row-major order).
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    s: &StateTensors,
    explore: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&explore) {
        return Err(Error::InvalidParam(format!("exploration probability {explore} outside [0, 1]")));
    }
    if rng.random::<f64>() < explore {
        return Ok(rng.random_range(0..net.action_count()));
    }
    Ok(argmax(&net.forward(s)?))
}

/// One decoded replay entry.
#[derive(Debug, Clone)]
pub struct Sample {
    pub state: StateTensors,
    pub action: usize,
    pub reward: f64,
    /// `None` for terminal transitions.
    pub next: Option<StateTensors>,
}

/// Double-DQN targets: the policy net picks the bootstrap action, the target
/// net scores it. Terminal samples bootstrap nothing.
pub fn td_target<T: Scalar>(
    samples: &[Sample],
    policy: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: f64,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let Some(next) = &s.next else { return Ok(s.reward) };
            let a = argmax(&policy.forward(next)?);
            let q = target.forward(next)?[a];
            Ok(s.reward + gamma * q.to_f64())
        })
        .collect()
}

/// Single-network target `r + gamma * max_a' Q(h', a')`.
pub fn dqn_target<T: Scalar>(samples: &[Sample], net: &QNetwork<T>, gamma: f64) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let Some(next) = &s.next else { return Ok(s.reward) };
            let q = net.forward(next)?;
            Ok(s.reward + gamma * q[argmax(&q)].to_f64())
        })
        .collect()
}

/// Mean of `(y - q)^2 + alpha * r^2`.
pub fn loss_value(q: &[f64], y: &[f64], r: &[f64], alpha: f64) -> f64 {
    let n = q.len() as f64;
    q.iter()
        .zip(y)
        .zip(r)
        .map(|((q, y), r)| (y - q).powi(2) + alpha * r * r)
        .sum::<f64>()
        / n
}

/// Evaluates the batch loss and accumulates its gradient into `policy`'s
/// grad buffers (callers zero them first). Targets and the reward penalty
/// are constants, so only `Q(h, a)` carries gradient.
pub fn loss<T: Scalar>(samples: &[Sample], targets: &[f64], policy: &mut QNetwork<T>, alpha: f64) -> Result<f64> {
    if samples.len() != targets.len() || samples.is_empty() {
        return Err(Error::Shape(format!(
            "{} samples but {} targets",
            samples.len(),
            targets.len()
        )));
    }
    let b = samples.len() as f64;
    let mut qs = Vec::with_capacity(samples.len());
    for (s, &y) in samples.iter().zip(targets) {
        let (q, cache) = policy.forward_cached(&s.state)?;
        let qa = q.get(s.action).ok_or(Error::ActionOutOfRange {
            index: s.action,
            count: q.len(),
        })?;
        let qa = qa.to_f64();
        let mut dq = vec![T::ZERO; q.len()];
        dq[s.action] = T::from_f64(-2.0 * (y - qa) / b);
        policy.backward(&cache, &dq)?;
        qs.push(qa);
    }
    let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
    Ok(loss_value(&qs, targets, &rewards, alpha))
}

/// The trained policy acting greedily; sees only its own measurements.
#[derive(Debug, Clone)]
pub struct GreedyAgent<'a, T> {
    net: &'a QNetwork<T>,
    encoder: Encoder,
}

impl<'a, T: Scalar> GreedyAgent<'a, T> {
    pub fn new(net: &'a QNetwork<T>, decay: f64, eps_ch: f64) -> Result<Self> {
        Ok(GreedyAgent {
            net,
            encoder: Encoder::new(net.step_limit(), decay, eps_ch)?,
        })
    }
}

impl<T: Scalar> Predictor for GreedyAgent<'_, T> {
    fn access(&self) -> CoverageAccess {
        CoverageAccess::Measurements
    }

    fn predict(&mut self, view: &View<'_>) -> Result<GridPoint> {
        if view.step_limit != self.net.step_limit() {
            return Err(Error::InvalidParam(format!(
                "network step limit {} differs from the rollout's {}",
                self.net.step_limit(),
                view.step_limit
            )));
        }
        let state = self.encoder.build_state(view.map, view.position, view.log)?;
        let action = argmax(&self.net.forward(&state)?);
        let (di, dj) = action_to_offset(action, self.net.step_limit())?;
        Ok(view.position.offset(di, dj))
    }
}
