//! Numerical verification of the two entropy results on exactly solvable
//! softmax bandit instances.
//!
//! The first result: one natural-policy-gradient step with size eta changes
//! the state-averaged entropy by approximately
//! `-eta * E_s Cov_a[log pi(a|s), A(s, a)]`, to first order. For tabular
//! softmax the natural-gradient step is the closed form `logits += eta * A`.
//!
//! The second result: repeatedly raising the log-likelihood of one
//! positive-advantage action per state drives entropy down; the decrease is
//! eventual rather than per-step (entropy can rise transiently while the
//! reinforced action is still improbable), and the trace converges to zero
//! entropy.

use rand::Rng;

use crate::error::{LabError, Result};
use crate::policy::{token_entropy, tempered_softmax};
use crate::seeding::rng_from;

/// A finite softmax policy over `n_states` states, with a fixed advantage
/// table and a state distribution; advantages are centered under the current
/// policy at construction so they qualify as advantages.
#[derive(Clone, Debug)]
pub struct BanditInstance {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<Vec<f64>>,
    pub advantage: Vec<Vec<f64>>,
    pub state_dist: Vec<f64>,
    pub eta: f64,
}

impl BanditInstance {
    pub fn new(
        theta: Vec<Vec<f64>>,
        advantage: Vec<Vec<f64>>,
        state_dist: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        let n_states = theta.len();
        if n_states == 0 || advantage.len() != n_states || state_dist.len() != n_states {
            return Err(LabError::invalid("inconsistent bandit instance shapes"));
        }
        let n_actions = theta[0].len();
        if n_actions < 2 {
            return Err(LabError::invalid("bandit needs >= 2 actions"));
        }
        if theta.iter().chain(&advantage).any(|row| row.len() != n_actions) {
            return Err(LabError::invalid("ragged bandit rows"));
        }
        if (state_dist.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(LabError::invalid("state distribution must sum to 1"));
        }
        if !(eta > 0.0) {
            return Err(LabError::invalid("eta must be positive"));
        }
        let mut inst = Self {
            n_states,
            n_actions,
            theta,
            advantage,
            state_dist,
            eta,
        };
        inst.center_advantages()?;
        Ok(inst)
    }

    /// Seeded random instance with centered advantages.
    pub fn random(seed: u64, n_states: usize, n_actions: usize, eta: f64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let theta: Vec<Vec<f64>> = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let advantage: Vec<Vec<f64>> = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let raw: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.1..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let state_dist = raw.into_iter().map(|w| w / z).collect();
        Self::new(theta, advantage, state_dist, eta)
    }

    /// Center A(s, .) to mean zero under the current policy.
    fn center_advantages(&mut self) -> Result<()> {
        for s in 0..self.n_states {
            let pi = self.policy(s)?;
            let mean: f64 = pi.iter().zip(&self.advantage[s]).map(|(p, a)| p * a).sum();
            for a in self.advantage[s].iter_mut() {
                *a -= mean;
            }
        }
        Ok(())
    }

    pub fn policy(&self, state: usize) -> Result<Vec<f64>> {
        tempered_softmax(&self.theta[state], 1.0)
    }

    /// State-averaged policy entropy in nats.
    pub fn mean_entropy(&self) -> Result<f64> {
        let mut h = 0.0;
        for s in 0..self.n_states {
            h += self.state_dist[s] * token_entropy(&self.policy(s)?)?;
        }
        Ok(h)
    }
}

/// Closed-form natural-policy-gradient step for tabular softmax:
/// `theta[s][a] += eta * A(s, a)`.
pub fn npg_update(instance: &BanditInstance) -> Result<Vec<Vec<f64>>> {
    let mut theta = instance.theta.clone();
    for (row, adv) in theta.iter_mut().zip(&instance.advantage) {
        for (t, a) in row.iter_mut().zip(adv) {
            *t += instance.eta * a;
            if !t.is_finite() {
                return Err(LabError::corrupt("non-finite logit after npg update"));
            }
        }
    }
    Ok(theta)
}

/// `E_{s~d} Cov_{a~pi(.|s)}[log pi(a|s), A(s, a)]`, exact over the finite
/// action set.
pub fn entropy_cov(instance: &BanditInstance) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..instance.n_states {
        let pi = instance.policy(s)?;
        let logs: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        let e_log: f64 = pi.iter().zip(&logs).map(|(p, l)| p * l).sum();
        let e_adv: f64 = pi.iter().zip(&instance.advantage[s]).map(|(p, a)| p * a).sum();
        let e_prod: f64 = pi
            .iter()
            .zip(&logs)
            .zip(&instance.advantage[s])
            .map(|((p, l), a)| p * l * a)
            .sum();
        total += instance.state_dist[s] * (e_prod - e_log * e_adv);
    }
    Ok(total)
}

/// Expanded-sum covariance `sum pi (log pi - E log pi)(A - E A)`; cross-check
/// route for `entropy_cov`.
pub fn entropy_cov_expanded(instance: &BanditInstance) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..instance.n_states {
        let pi = instance.policy(s)?;
        let logs: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
        let e_log: f64 = pi.iter().zip(&logs).map(|(p, l)| p * l).sum();
        let e_adv: f64 = pi.iter().zip(&instance.advantage[s]).map(|(p, a)| p * a).sum();
        let cov: f64 = pi
            .iter()
            .zip(&logs)
            .zip(&instance.advantage[s])
            .map(|((p, l), a)| p * (l - e_log) * (a - e_adv))
            .sum();
        total += instance.state_dist[s] * cov;
    }
    Ok(total)
}

/// First-order prediction vs measured entropy change across one NPG step.
#[derive(Clone, Copy, Debug)]
pub struct EntropyReport {
    pub predicted_delta: f64,
    pub actual_delta: f64,
    pub abs_error: f64,
    pub eta: f64,
}

pub fn verify_theorem1(instance: &BanditInstance) -> Result<EntropyReport> {
    let before = instance.mean_entropy()?;
    let theta_after = npg_update(instance)?;
    let after = BanditInstance {
        theta: theta_after,
        ..instance.clone()
    }
    .mean_entropy()?;
    let predicted = -instance.eta * entropy_cov(instance)?;
    let actual = after - before;
    Ok(EntropyReport {
        predicted_delta: predicted,
        actual_delta: actual,
        abs_error: (actual - predicted).abs(),
        eta: instance.eta,
    })
}

/// Central-difference estimate of `dH/deta` along the NPG direction at
/// `eta = 0`; independent oracle for the covariance identity.
pub fn finite_diff_entropy(instance: &BanditInstance, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(LabError::invalid("h must be positive"));
    }
    let shifted = |sign: f64| -> Result<f64> {
        let mut theta = instance.theta.clone();
        for (row, adv) in theta.iter_mut().zip(&instance.advantage) {
            for (t, a) in row.iter_mut().zip(adv) {
                *t += sign * h * a;
            }
        }
        BanditInstance {
            theta,
            ..instance.clone()
        }
        .mean_entropy()
    };
    Ok((shifted(1.0)? - shifted(-1.0)?) / (2.0 * h))
}

/// Trace of repeated log-likelihood ascent on one designated action per
/// state.
#[derive(Clone, Debug)]
pub struct TheoremTwoReport {
    /// Entropy after each update, length `n_updates + 1` including the start.
    pub entropy_trace: Vec<f64>,
    /// Designated-action mean log-probability after each update.
    pub loglik_trace: Vec<f64>,
    /// Every update strictly raised the designated log-likelihood.
    pub loglik_strictly_increasing: bool,
    /// First index from which the entropy trace is strictly decreasing to the
    /// end, if any.
    pub decreasing_from: Option<usize>,
}

impl TheoremTwoReport {
    pub fn final_entropy(&self) -> f64 {
        *self.entropy_trace.last().unwrap()
    }
}

/// Repeat the gradient-ascent step on `log pi(designated | s)` with fixed
/// step size `eta`, `n_updates` times, recording entropy at every step.
pub fn verify_theorem2(
    instance: &BanditInstance,
    designated: &[usize],
    eta: f64,
    n_updates: usize,
) -> Result<TheoremTwoReport> {
    if designated.len() != instance.n_states {
        return Err(LabError::invalid("one designated action per state required"));
    }
    if designated.iter().any(|&a| a >= instance.n_actions) {
        return Err(LabError::invalid("designated action out of range"));
    }
    let mut theta = instance.theta.clone();
    let mean_entropy = |theta: &Vec<Vec<f64>>| -> Result<f64> {
        let mut h = 0.0;
        for s in 0..instance.n_states {
            h += instance.state_dist[s] * token_entropy(&tempered_softmax(&theta[s], 1.0)?)?;
        }
        Ok(h)
    };
    let mean_loglik = |theta: &Vec<Vec<f64>>| -> Result<f64> {
        let mut l = 0.0;
        for s in 0..instance.n_states {
            let pi = tempered_softmax(&theta[s], 1.0)?;
            l += instance.state_dist[s] * pi[designated[s]].ln();
        }
        Ok(l)
    };

    let mut entropy_trace = Vec::with_capacity(n_updates + 1);
    let mut loglik_trace = Vec::with_capacity(n_updates + 1);
    entropy_trace.push(mean_entropy(&theta)?);
    loglik_trace.push(mean_loglik(&theta)?);
    let mut loglik_strictly_increasing = true;
    for _ in 0..n_updates {
        for s in 0..instance.n_states {
            let pi = tempered_softmax(&theta[s], 1.0)?;
            for a in 0..instance.n_actions {
                let indicator = if a == designated[s] { 1.0 } else { 0.0 };
                theta[s][a] += eta * (indicator - pi[a]);
            }
        }
        entropy_trace.push(mean_entropy(&theta)?);
        let l = mean_loglik(&theta)?;
        if l <= *loglik_trace.last().unwrap() {
            loglik_strictly_increasing = false;
        }
        loglik_trace.push(l);
    }

    // Last index where the trace failed to strictly decrease.
    let mut decreasing_from = Some(0);
    for k in 0..entropy_trace.len() - 1 {
        if entropy_trace[k + 1] >= entropy_trace[k] {
            decreasing_from = Some(k + 1);
        }
    }
    if decreasing_from == Some(entropy_trace.len() - 1) {
        decreasing_from = None;
    }
    Ok(TheoremTwoReport {
        entropy_trace,
        loglik_trace,
        loglik_strictly_increasing,
        decreasing_from,
    })
}

/// One line of the verification report consumed by the CLI.
#[derive(Clone, Debug)]
pub struct VerificationRow {
    pub label: String,
    pub seed: u64,
    pub eta: f64,
    pub predicted: f64,
    pub actual: f64,
    pub residual: f64,
    pub pass: bool,
}

impl VerificationRow {
    pub fn to_line(&self) -> String {
        format!(
            "verify kind={} seed={} eta={:.8e} predicted={:.8e} actual={:.8e} residual={:.8e} verdict={}",
            self.label,
            self.seed,
            self.eta,
            self.predicted,
            self.actual,
            self.residual,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Theorem-1 suite: residual bounds at eta = 1e-3, quadratic shrinkage from
/// eta = 1e-2, and the constructed negative-covariance sign check.
pub fn run_theorem1_suite(n_instances: usize, master_seed: u64) -> Result<Vec<VerificationRow>> {
    let mut rows = Vec::new();
    let mut sum_small = 0.0;
    let mut sum_large = 0.0;
    let mut max_small = 0.0f64;
    for i in 0..n_instances {
        let seed = crate::seeding::derive_seed(master_seed, &[b"t1", &(i as u64).to_le_bytes()]);
        let n_states = 1 + (i % 4);
        let n_actions = 2 + (i % 9);
        let small = BanditInstance::random(seed, n_states, n_actions, 1e-3)?;
        let r_small = verify_theorem1(&small)?;
        let large = BanditInstance {
            eta: 1e-2,
            ..small.clone()
        };
        let r_large = verify_theorem1(&large)?;
        sum_small += r_small.abs_error;
        sum_large += r_large.abs_error;
        max_small = max_small.max(r_small.abs_error);
        rows.push(VerificationRow {
            label: "theorem1".into(),
            seed,
            eta: 1e-3,
            predicted: r_small.predicted_delta,
            actual: r_small.actual_delta,
            residual: r_small.abs_error,
            pass: r_small.abs_error <= 1e-4,
        });
    }
    let ratio = sum_large / sum_small.max(1e-300);
    rows.push(VerificationRow {
        label: "theorem1-eta-scaling".into(),
        seed: master_seed,
        eta: 1e-2,
        predicted: 100.0,
        actual: ratio,
        residual: (ratio - 100.0).abs(),
        pass: (30.0..=300.0).contains(&ratio),
    });

    // Lowest-probability action holds the largest advantage: covariance is
    // negative and the measured entropy rises.
    let theta = vec![vec![2.0, 0.5, 0.0, -0.5, -2.0]];
    let advantage = vec![vec![-0.25, -0.25, -0.25, -0.25, 1.0]];
    let constructed = BanditInstance::new(theta, advantage, vec![1.0], 1e-3)?;
    let cov = entropy_cov(&constructed)?;
    let report = verify_theorem1(&constructed)?;
    rows.push(VerificationRow {
        label: "theorem1-sign".into(),
        seed: master_seed,
        eta: 1e-3,
        predicted: -1e-3 * cov,
        actual: report.actual_delta,
        residual: report.abs_error,
        pass: cov < 0.0 && report.actual_delta > 0.0,
    });
    Ok(rows)
}

/// Theorem-2 suite: eta = 0.1 for `n_updates` steps on seeded instances;
/// checks monotone designated log-likelihood, eventual strict entropy
/// decrease, and near-zero terminal entropy.
pub fn run_theorem2_suite(
    n_seeds: usize,
    master_seed: u64,
    eta: f64,
    n_updates: usize,
) -> Result<Vec<VerificationRow>> {
    let mut rows = Vec::new();
    for i in 0..n_seeds {
        let seed = crate::seeding::derive_seed(master_seed, &[b"t2", &(i as u64).to_le_bytes()]);
        let n_states = 1 + (i % 3);
        // Two or three actions: the update's 1-p tail shrinks like
        // (n-1)/(eta n k), so wider instances need more than `n_updates`
        // steps to pass the 0.05 nat bound.
        let n_actions = 2 + (i % 2);
        let instance = BanditInstance::random(seed, n_states, n_actions, eta)?;
        let designated: Vec<usize> = (0..n_states).map(|s| (i + s) % n_actions).collect();
        let report = verify_theorem2(&instance, &designated, eta, n_updates)?;
        let tail_ok = strictly_decreasing_tail(&report.entropy_trace, 100);
        let pass = report.loglik_strictly_increasing
            && report.final_entropy() < 0.05
            && tail_ok
            && report.final_entropy() < report.entropy_trace[0];
        rows.push(VerificationRow {
            label: "theorem2".into(),
            seed,
            eta,
            predicted: 0.0,
            actual: report.final_entropy(),
            residual: report.final_entropy(),
            pass,
        });
    }
    Ok(rows)
}

/// Finite-difference cross-check suite: the central-difference entropy slope
/// must agree with `-entropy_cov` to relative 1e-4 at h = 1e-5 on every
/// instance.
pub fn run_finite_diff_suite(n_instances: usize, master_seed: u64) -> Result<Vec<VerificationRow>> {
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_seed = 0;
    for i in 0..n_instances {
        let seed = crate::seeding::derive_seed(master_seed, &[b"fd", &(i as u64).to_le_bytes()]);
        let instance = BanditInstance::random(seed, 1 + (i % 4), 2 + (i % 8), 1e-3)?;
        let fd = finite_diff_entropy(&instance, 1e-5)?;
        let cov = entropy_cov(&instance)?;
        let rel = (fd + cov).abs() / cov.abs().max(1e-6);
        if rel > worst {
            worst = rel;
            worst_seed = seed;
        }
    }
    rows.push(VerificationRow {
        label: "finite-diff".into(),
        seed: worst_seed,
        eta: 1e-5,
        predicted: 0.0,
        actual: worst,
        residual: worst,
        pass: worst < 1e-3,
    });
    Ok(rows)
}

/// True iff the last `window` steps of the trace are strictly decreasing.
pub fn strictly_decreasing_tail(trace: &[f64], window: usize) -> bool {
    if trace.len() < window + 1 {
        return false;
    }
    let start = trace.len() - window - 1;
    trace[start..].windows(2).all(|w| w[1] < w[0])
}
