//! Difficulty-gated exploration and advantage-filtered replay.
//!
//! A prompt whose whole regular group earns zero reward is difficult; such
//! prompts get one tempered rollout of `G'` samples, of which only the
//! positive-advantage trajectories survive. Survivors above the advantage
//! threshold `A0` enter a bounded most-recent replay buffer that is sampled
//! every `f_replay` steps for an extra actor update.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::objective::group_advantages;
use crate::policy::PolicyParams;
use crate::rollout::{rollout_group, RolloutGroup, Trajectory, TrajectorySource};
use crate::seeding::StreamSeed;
use crate::tasks::TaskInstance;

/// Controller hyperparameters. `explore` and `replay` gate the two
/// mechanisms so the same pipeline also runs the plain and clip-higher
/// baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UecConfig {
    /// Regular rollout group size G.
    pub g: usize,
    /// Exploration group size G'.
    pub g_prime: usize,
    /// Exploration temperature t'.
    pub t_prime: f64,
    /// Replay buffer capacity s'.
    pub s_prime: usize,
    /// Steps between replay updates.
    pub f_replay: u64,
    /// Advantage threshold for buffering (strict inequality).
    pub a0: f64,
    /// Trajectories per replay update; default matches the main update size.
    pub replay_batch: Option<usize>,
    pub explore: bool,
    pub replay: bool,
}

impl Default for UecConfig {
    fn default() -> Self {
        Self {
            g: 5,
            g_prime: 20,
            t_prime: 1.2,
            s_prime: 512,
            f_replay: 5,
            a0: 1.0,
            replay_batch: None,
            explore: true,
            replay: true,
        }
    }
}

impl UecConfig {
    /// Exploration only runs when it actually expands the sampling space;
    /// with `G' = G` and `t' = 1` the controller reduces to the plain
    /// filtered-group path.
    pub fn exploration_active(&self) -> bool {
        self.explore && (self.g_prime > self.g || self.t_prime != 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 2 {
            return Err(LabError::invalid("G must be >= 2"));
        }
        if self.g_prime < 2 {
            return Err(LabError::invalid("G' must be >= 2"));
        }
        if !(self.t_prime > 0.0) {
            return Err(LabError::invalid("t' must be positive"));
        }
        if self.s_prime == 0 {
            return Err(LabError::invalid("s' must be >= 1"));
        }
        if self.f_replay == 0 {
            return Err(LabError::invalid("f_replay must be >= 1"));
        }
        if self.replay_batch == Some(0) {
            return Err(LabError::invalid("replay_batch must be >= 1"));
        }
        Ok(())
    }
}

/// Bounded most-recent store of high-advantage trajectories.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: VecDeque<Trajectory>,
    capacity: usize,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity,
            total_pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn entries(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter()
    }

    /// Append candidates with advantage strictly above `a0` in arrival order,
    /// evicting the oldest entries beyond capacity. Returns how many were
    /// stored.
    pub fn push_filtered(&mut self, candidates: &[Trajectory], a0: f64) -> usize {
        let mut stored = 0;
        for c in candidates {
            if c.advantage > a0 {
                self.entries.push_back(c.clone());
                self.total_pushed += 1;
                stored += 1;
                if self.entries.len() > self.capacity {
                    self.entries.pop_front();
                }
            }
        }
        stored
    }

    /// Uniform sample without replacement of `min(size, len)` entries, tagged
    /// as replay; sampled entries remain in the buffer. An empty buffer
    /// yields an empty batch.
    pub fn sample(&self, size: usize, seed: u64) -> Vec<Trajectory> {
        let n = self.entries.len();
        let k = size.min(n);
        if k == 0 {
            return Vec::new();
        }
        let mut rng = crate::seeding::rng_from(seed);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rand::Rng::gen_range(&mut rng, i..n);
            indices.swap(i, j);
        }
        indices[..k]
            .iter()
            .map(|&i| {
                let mut t = self.entries[i].clone();
                t.source = TrajectorySource::Replay;
                t
            })
            .collect()
    }

    /// Debug dump: one trajectory line per entry plus its insertion index.
    pub fn to_lines(&self) -> String {
        let first_index = self.total_pushed - self.entries.len() as u64;
        self.entries
            .iter()
            .enumerate()
            .map(|(i, t)| format!("buf idx={} {}", first_index + i as u64, t.to_line()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A prompt is difficult iff every reward in its regular group is zero.
pub fn is_difficult(group: &RolloutGroup) -> bool {
    group.trajectories.iter().all(|t| t.reward <= 0.0)
}

/// Regular retention O_R: trajectories with nonzero advantage.
pub fn filter_regular(group: &RolloutGroup) -> Vec<Trajectory> {
    group
        .trajectories
        .iter()
        .filter(|t| t.advantage != 0.0)
        .cloned()
        .collect()
}

/// Exploratory retention O_H: trajectories with strictly positive advantage.
pub fn filter_exploratory(group: &RolloutGroup) -> Vec<Trajectory> {
    group
        .trajectories
        .iter()
        .filter(|t| t.advantage > 0.0)
        .cloned()
        .collect()
}

/// Tempered exploration rollout of G' samples with advantages normalized
/// within the exploration group alone.
pub fn explore(
    old: &PolicyParams,
    task: &TaskInstance,
    cfg: &UecConfig,
    eps_std: f64,
    seed: u64,
    birth_step: u64,
) -> Result<RolloutGroup> {
    let mut group = rollout_group(old, task, cfg.g_prime, cfg.t_prime, seed, birth_step)?;
    let advantages = group_advantages(&group.rewards(), eps_std)?;
    for (t, a) in group.trajectories.iter_mut().zip(advantages) {
        t.advantage = a;
    }
    Ok(group)
}

/// Everything one controller pass produces for the trainer and the metrics.
#[derive(Debug, Default)]
pub struct StepOutcome {
    /// Trajectories for the actor update (retained regular plus exploratory).
    pub o_eff: Vec<Trajectory>,
    pub regular_groups: Vec<RolloutGroup>,
    pub exploration_groups: Vec<RolloutGroup>,
    pub difficult_prompts: usize,
    pub explored_prompts: usize,
    pub pushed_to_buffer: usize,
}

/// One collection pass of the controller over a minibatch: regular rollouts
/// for every task; exploration, filtering and buffering for difficult ones.
pub fn uec_step(
    old: &PolicyParams,
    buffer: &mut ReplayBuffer,
    minibatch: &[&TaskInstance],
    cfg: &UecConfig,
    eps_std: f64,
    step_seed: &StreamSeed,
    global_step: u64,
) -> Result<StepOutcome> {
    let mut out = StepOutcome::default();
    let regular_seed = step_seed.scoped("regular").value();
    let explore_seed = step_seed.scoped("explore").value();
    for task in minibatch {
        let mut group = rollout_group(old, task, cfg.g, 1.0, regular_seed, global_step)?;
        let advantages = group_advantages(&group.rewards(), eps_std)?;
        for (t, a) in group.trajectories.iter_mut().zip(advantages) {
            t.advantage = a;
        }
        if !is_difficult(&group) {
            out.o_eff.extend(filter_regular(&group));
        } else {
            out.difficult_prompts += 1;
            if cfg.exploration_active() {
                out.explored_prompts += 1;
                let exploration = explore(old, task, cfg, eps_std, explore_seed, global_step)?;
                let o_h = filter_exploratory(&exploration);
                // Buffer candidates: O_H plus positive-advantage regular
                // samples (empty for an all-fail group under binary rewards,
                // kept for shape fidelity).
                let mut candidates = o_h.clone();
                candidates.extend(group.trajectories.iter().filter(|t| t.advantage > 0.0).cloned());
                out.pushed_to_buffer += buffer.push_filtered(&candidates, cfg.a0);
                out.o_eff.extend(o_h);
                out.exploration_groups.push(exploration);
            }
        }
        out.regular_groups.push(group);
    }
    Ok(out)
}
