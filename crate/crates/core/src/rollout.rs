//! Group rollout collection under a frozen old-policy snapshot.
//!
//! Each trajectory in a group is sampled from its own rng stream derived as
//! hash(seed, prompt_id, index), so per-prompt rollouts could run in parallel
//! without changing results; the group's trajectory order is fixed by the
//! sub-seed index.

use crate::error::{LabError, Result};
use crate::policy::PolicyParams;
use crate::seeding::{derive_seed, rng_from};
use crate::tasks::TaskInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Regular,
    Exploratory,
    Replay,
}

impl TrajectorySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectorySource::Regular => "regular",
            TrajectorySource::Exploratory => "exploratory",
            TrajectorySource::Replay => "replay",
        }
    }
}

/// One sampled response with rewards, advantages, and both old-policy
/// log-probability tracks (sampling temperature and temperature 1).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub prompt_id: String,
    pub tokens: Vec<u32>,
    /// Old-policy log-probabilities at the sampling temperature.
    pub behavior_logprobs: Vec<f64>,
    /// Old-policy log-probabilities at temperature 1; the importance-ratio
    /// denominator for every update, tempered samples included.
    pub old_logprobs_t1: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
    pub source: TrajectorySource,
    pub birth_step: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Debug-dump line with 9 significant digits on the real-valued tracks.
    pub fn to_line(&self) -> String {
        let fmt = |xs: &[f64]| {
            xs.iter()
                .map(|x| format!("{x:.8e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let toks = self
            .tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "traj id={} step={} src={} reward={:.8e} adv={:.8e} tokens={} blp={} olp={}",
            self.prompt_id,
            self.birth_step,
            self.source.as_str(),
            self.reward,
            self.advantage,
            toks,
            fmt(&self.behavior_logprobs),
            fmt(&self.old_logprobs_t1),
        )
    }
}

/// G (or G') trajectories for one prompt plus the sampling temperature used.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub trajectories: Vec<Trajectory>,
    pub group_size: usize,
    pub temperature: f64,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards().into_iter().fold(0.0, f64::max)
    }
}

/// Frozen copy of the live parameters; unaffected by later updates.
pub fn snapshot(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

/// Collect a verified rollout group from a frozen snapshot. Trajectories are
/// tagged regular at temperature 1 and exploratory otherwise; advantages are
/// left at zero for the caller to fill.
pub fn rollout_group(
    old: &PolicyParams,
    task: &TaskInstance,
    group_size: usize,
    temperature: f64,
    seed: u64,
    birth_step: u64,
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(LabError::invalid(
            "group_size must be >= 2 (group normalization needs at least 2 samples)",
        ));
    }
    let source = if temperature == 1.0 {
        TrajectorySource::Regular
    } else {
        TrajectorySource::Exploratory
    };
    let mut trajectories = Vec::with_capacity(group_size);
    for index in 0..group_size {
        let stream = derive_seed(seed, &[task.prompt_id.as_bytes(), &(index as u64).to_le_bytes()]);
        let mut rng = rng_from(stream);
        let sampled =
            old.sample_sequence(&task.prompt_id, temperature, task.max_len, task.terminal, &mut rng)?;
        let reward = task.verify(&sampled.tokens);
        trajectories.push(Trajectory {
            prompt_id: task.prompt_id.clone(),
            tokens: sampled.tokens,
            behavior_logprobs: sampled.behavior_logprobs,
            old_logprobs_t1: sampled.t1_logprobs,
            reward,
            advantage: 0.0,
            source,
            birth_step,
        });
    }
    Ok(RolloutGroup {
        prompt_id: task.prompt_id.clone(),
        trajectories,
        group_size,
        temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ContextKey;
    use crate::tasks::make_combination_lock;

    fn uniform_policy(vocab: usize) -> PolicyParams {
        PolicyParams::new_tabular(vocab).unwrap()
    }

    #[test]
    fn snapshot_is_unaffected_by_live_updates() {
        let mut live = uniform_policy(4);
        let frozen = snapshot(&live);
        let ctx = ContextKey::root("q");
        let before = frozen.action_distribution(&ctx, 1.0).unwrap();
        let lp_before = frozen.sequence_logprob("q", &[0, 1], 1.0).unwrap();
        for i in 0..10 {
            live.set_logits(ctx.clone(), vec![i as f64, 0.0, 0.0, 0.0]).unwrap();
        }
        let after = frozen.action_distribution(&ctx, 1.0).unwrap();
        assert_eq!(before, after);
        // Bit-identical sequence logprob after 10 live updates.
        assert_eq!(lp_before.to_bits(), frozen.sequence_logprob("q", &[0, 1], 1.0).unwrap().to_bits());
        // Snapshot of snapshot agrees everywhere we look.
        let again = snapshot(&frozen);
        assert_eq!(again.action_distribution(&ctx, 1.0).unwrap(), after);
    }

    #[test]
    fn group_size_below_two_is_invalid() {
        let task = make_combination_lock(4, 1, 1).unwrap();
        let err = rollout_group(&uniform_policy(4), &task, 1, 1.0, 0, 0).unwrap_err();
        assert!(matches!(err, LabError::InvalidArgument(_)));
    }

    #[test]
    fn deterministic_accepting_policy_gets_full_reward() {
        let task = make_combination_lock(4, 2, 11).unwrap();
        let code = task.accepting.iter().next().unwrap().clone();
        let mut p = uniform_policy(4);
        let mut prefix = Vec::new();
        for &tok in &code {
            let mut logits = vec![-1e9; 4];
            logits[tok as usize] = 0.0;
            p.set_logits(ContextKey::new(task.prompt_id.clone(), prefix.clone()), logits)
                .unwrap();
            prefix.push(tok);
        }
        let g = rollout_group(&p, &task, 5, 1.0, 3, 0).unwrap();
        assert_eq!(g.trajectories.len(), 5);
        for t in &g.trajectories {
            assert_eq!(t.tokens, code);
            assert_eq!(t.reward, 1.0);
            assert_eq!(t.source, TrajectorySource::Regular);
        }
    }

    #[test]
    fn rollouts_are_reproducible_and_do_not_mutate_inputs() {
        let task = make_combination_lock(4, 2, 5).unwrap();
        let p = uniform_policy(4);
        let a = rollout_group(&p, &task, 5, 1.0, 42, 7).unwrap();
        let b = rollout_group(&p, &task, 5, 1.0, 42, 7).unwrap();
        for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.reward, y.reward);
            // Byte-for-byte reproducible tracks.
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.behavior_logprobs), bits(&y.behavior_logprobs));
            assert_eq!(bits(&x.old_logprobs_t1), bits(&y.old_logprobs_t1));
            assert_eq!(x.birth_step, 7);
        }
    }

    #[test]
    fn mean_success_count_matches_binomial_expectation() {
        // Uniform policy on a vocab-4 code_len-1 lock: per-sample success 1/4,
        // so a group of 5 succeeds 1.25 times in expectation.
        let task = make_combination_lock(4, 1, 2).unwrap();
        let p = uniform_policy(4);
        let mut total = 0.0;
        let reps = 10_000;
        for rep in 0..reps {
            let g = rollout_group(&p, &task, 5, 1.0, rep as u64, 0).unwrap();
            total += g.rewards().iter().sum::<f64>();
        }
        let mean = total / reps as f64;
        assert!((mean - 1.25).abs() < 0.05, "mean success count {mean}");
    }

    #[test]
    fn tempered_sampling_diverges_from_t1_track_on_nonconstant_logits() {
        let task = make_combination_lock(4, 2, 5).unwrap();
        let mut p = uniform_policy(4);
        p.set_logits(ContextKey::root(task.prompt_id.clone()), vec![1.0, 0.5, -0.5, 0.0])
            .unwrap();
        let g = rollout_group(&p, &task, 5, 1.2, 9, 0).unwrap();
        for t in &g.trajectories {
            assert_eq!(t.source, TrajectorySource::Exploratory);
            assert!((t.behavior_logprobs[0] - t.old_logprobs_t1[0]).abs() > 1e-9);
        }
        // At temperature 1 both tracks coincide elementwise.
        let g1 = rollout_group(&p, &task, 5, 1.0, 9, 0).unwrap();
        for t in &g1.trajectories {
            assert_eq!(t.behavior_logprobs, t.old_logprobs_t1);
        }
    }

    #[test]
    fn stored_t1_track_matches_recomputation() {
        let task = make_combination_lock(4, 2, 5).unwrap();
        let mut p = uniform_policy(4);
        p.set_logits(ContextKey::root(task.prompt_id.clone()), vec![0.7, -0.3, 0.1, 0.0])
            .unwrap();
        let g = rollout_group(&p, &task, 5, 1.2, 13, 0).unwrap();
        for t in &g.trajectories {
            let recomputed = p.sequence_logprob(&t.prompt_id, &t.tokens, 1.0).unwrap();
            let stored: f64 = t.old_logprobs_t1.iter().sum();
            assert!((recomputed - stored).abs() < 1e-12);
        }
    }
}
