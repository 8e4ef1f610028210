//! Group-normalized advantages, importance ratios, and the clipped surrogate
//! objective with optional KL penalty, plus its exact gradient for tabular
//! and linear softmax policies.
//!
//! Asymmetric clip bounds (`eps_high > eps_low`) realize the clip-higher
//! variant; symmetric bounds recover the standard objective. Where the min
//! selects the clamped constant the gradient is zero, with ties broken toward
//! the unclipped branch.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::policy::{ContextKey, Gradient, PolicyParams};
use crate::rollout::Trajectory;

/// How the KL penalty term is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    /// Full-vocabulary `sum p_new log(p_new/p_ref)` at each visited context.
    Exact,
    /// Per-sampled-token estimator `rho - 1 - ln rho`, `rho = p_ref/p_new`.
    K3,
}

/// Scalars of the clipped surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    /// Degenerate-std guard: groups with reward std below this get zero
    /// advantages.
    pub eps_std: f64,
    pub kl_mode: KlMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.2,
            beta: 0.0,
            eps_std: 1e-8,
            kl_mode: KlMode::Exact,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps_low) || !self.eps_low.is_finite() {
            return Err(LabError::invalid("eps_low must be in [0, 1]"));
        }
        if self.eps_high < 0.0 || !self.eps_high.is_finite() {
            return Err(LabError::invalid("eps_high must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(LabError::invalid("beta must be >= 0"));
        }
        if self.eps_std <= 0.0 {
            return Err(LabError::invalid("eps_std must be positive"));
        }
        Ok(())
    }
}

/// Group-normalized advantages: `(R_i - mean) / std` with the population
/// standard deviation; a group whose std falls below `eps_std` maps to all
/// zeros, which drops all-fail and all-pass groups from the update.
pub fn group_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return Err(LabError::invalid("group_advantages needs at least 2 rewards"));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < eps_std {
        return Ok(vec![0.0; n]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Per-token importance ratios `exp(log pi_new - old_logprobs_t1)`.
pub fn importance_ratios(new_params: &PolicyParams, trajectory: &Trajectory) -> Result<Vec<f64>> {
    let mut ratios = Vec::with_capacity(trajectory.len());
    for (t, &tok) in trajectory.tokens.iter().enumerate() {
        let ctx = ContextKey::new(trajectory.prompt_id.clone(), trajectory.tokens[..t].to_vec());
        let logp = new_params.log_action_distribution(&ctx, 1.0)?;
        let r = (logp[tok as usize] - trajectory.old_logprobs_t1[t]).exp();
        if !r.is_finite() || r <= 0.0 {
            return Err(LabError::corrupt(format!("non-finite importance ratio {r}")));
        }
        ratios.push(r);
    }
    Ok(ratios)
}

/// One token's clipped surrogate term:
/// `min(r * A, clamp(r, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, cfg: &ObjectiveConfig) -> f64 {
    let clamped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    (ratio * advantage).min(clamped * advantage)
}

/// Exact KL divergence `KL(new || ref)` over the vocabulary at one context.
pub fn kl_exact(new: &PolicyParams, reference: &PolicyParams, ctx: &ContextKey) -> Result<f64> {
    let p = new.action_distribution(ctx, 1.0)?;
    let q = reference.action_distribution(ctx, 1.0)?;
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        if *qi <= 0.0 {
            return Err(LabError::invalid("zero reference probability in exact KL"));
        }
        if *pi > 0.0 {
            kl += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(kl.max(0.0))
}

/// k3 single-sample KL estimator at the sampled token:
/// `rho - 1 - ln rho` with `rho = p_ref(token) / p_new(token)`; non-negative.
pub fn kl_k3(
    new: &PolicyParams,
    reference: &PolicyParams,
    ctx: &ContextKey,
    token: u32,
) -> Result<f64> {
    let lp_new = new.log_action_distribution(ctx, 1.0)?;
    let lp_ref = reference.log_action_distribution(ctx, 1.0)?;
    let log_rho = lp_ref[token as usize] - lp_new[token as usize];
    Ok(log_rho.exp() - 1.0 - log_rho)
}

/// KL penalty dispatcher used by the objective.
pub fn kl_penalty(
    new: &PolicyParams,
    reference: &PolicyParams,
    ctx: &ContextKey,
    token: u32,
    mode: KlMode,
) -> Result<f64> {
    match mode {
        KlMode::Exact => kl_exact(new, reference, ctx),
        KlMode::K3 => kl_k3(new, reference, ctx, token),
    }
}

/// Clip bookkeeping for the clip-fraction metric.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClipStats {
    pub clipped_tokens: usize,
    pub total_tokens: usize,
}

impl ClipStats {
    pub fn fraction(&self) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.clipped_tokens as f64 / self.total_tokens as f64
        }
    }

    pub fn merge(&mut self, other: ClipStats) {
        self.clipped_tokens += other.clipped_tokens;
        self.total_tokens += other.total_tokens;
    }
}

/// Objective value, exact parameter-space gradient, and clip statistics for a
/// batch of trajectories with filled advantages:
/// mean over trajectories of `(1/|o|) * sum_t [clipped_term - beta * KL]`.
pub fn objective_and_gradient(
    new_params: &PolicyParams,
    reference: Option<&PolicyParams>,
    batch: &[Trajectory],
    cfg: &ObjectiveConfig,
) -> Result<(f64, Gradient, ClipStats)> {
    if batch.is_empty() {
        return Err(LabError::invalid("objective needs a non-empty batch"));
    }
    if cfg.beta > 0.0 && reference.is_none() {
        return Err(LabError::invalid("beta > 0 requires a reference policy"));
    }
    let mut objective = 0.0;
    let mut grad = Gradient::zeros_like(new_params);
    let mut stats = ClipStats::default();
    let n = batch.len() as f64;
    for traj in batch {
        if traj.is_empty() {
            return Err(LabError::invalid("trajectory with no tokens in batch"));
        }
        let w = 1.0 / (n * traj.len() as f64);
        for (t, &tok) in traj.tokens.iter().enumerate() {
            let ctx = ContextKey::new(traj.prompt_id.clone(), traj.tokens[..t].to_vec());
            let logp = new_params.log_action_distribution(&ctx, 1.0)?;
            let ratio = (logp[tok as usize] - traj.old_logprobs_t1[t]).exp();
            if !ratio.is_finite() {
                return Err(LabError::corrupt("non-finite importance ratio"));
            }
            let adv = traj.advantage;
            let clamped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
            let unclipped = ratio * adv;
            let clipped = clamped * adv;
            stats.total_tokens += 1;
            if unclipped <= clipped {
                // Unclipped branch selected (ties included): d/dtheta r*A =
                // r*A * grad log pi.
                objective += w * unclipped;
                new_params.accumulate_logprob_grad(&mut grad, &ctx, tok, w * unclipped)?;
            } else {
                // Clamped constant selected: zero gradient.
                objective += w * clipped;
                stats.clipped_tokens += 1;
            }
            if cfg.beta > 0.0 {
                let reference = reference.unwrap();
                let kl = kl_penalty(new_params, reference, &ctx, tok, cfg.kl_mode)?;
                objective -= w * cfg.beta * kl;
                match cfg.kl_mode {
                    KlMode::Exact => {
                        new_params.accumulate_kl_grad(&mut grad, reference, &ctx, -w * cfg.beta)?;
                    }
                    KlMode::K3 => {
                        // d(rho - 1 - ln rho) = (1 - rho) * grad log pi_new(tok).
                        let lp_ref = reference.log_action_distribution(&ctx, 1.0)?;
                        let rho = (lp_ref[tok as usize] - logp[tok as usize]).exp();
                        new_params.accumulate_logprob_grad(
                            &mut grad,
                            &ctx,
                            tok,
                            -w * cfg.beta * (1.0 - rho),
                        )?;
                    }
                }
            }
        }
    }
    if !objective.is_finite() {
        return Err(LabError::corrupt("non-finite objective"));
    }
    Ok((objective, grad, stats))
}
