//! Deterministic metrics emission and plot-data export.
//!
//! One line-delimited `key=value` record per global step, fields in a fixed
//! order, reals at 9 significant digits, append-only. Two runs with the same
//! config and seed produce byte-identical files.

use std::io::Write;

use crate::error::{LabError, Result};

/// Pass rates at one k, split by difficulty class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRates {
    pub k: usize,
    pub all: f64,
    pub easy: f64,
    pub hard: f64,
}

/// Per-step training metrics.
///
/// `token_entropy_mean` is the mean temperature-1 entropy over the token
/// positions collected for this step's update: retained regular trajectories
/// plus, when exploration triggered, the full exploration rollouts.
/// `entropy_rollout_mean` is the same average over every regular rollout
/// token regardless of retention, and `entropy_seq_mean` is the mean
/// sequence-level negative log-probability of the collected trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub reward_mean: f64,
    pub token_entropy_mean: f64,
    pub entropy_seq_mean: f64,
    pub entropy_rollout_mean: f64,
    pub response_length_mean: f64,
    pub clip_fraction: f64,
    pub difficult_fraction: f64,
    pub buffer_size: usize,
    pub explored_prompts: usize,
    pub o_eff_count: usize,
    pub objective: f64,
    pub cov_diagnostic: f64,
    pub eval: Option<Vec<EvalRates>>,
}

/// Real-valued panels exported by `export-plots`, in emission order.
pub const PANELS: &[&str] = &[
    "reward_mean",
    "token_entropy_mean",
    "entropy_seq_mean",
    "entropy_rollout_mean",
    "response_length_mean",
    "clip_fraction",
    "difficult_fraction",
    "buffer_size",
    "explored_prompts",
    "o_eff_count",
    "objective",
    "cov_diagnostic",
];

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "step={} reward_mean={} token_entropy_mean={} entropy_seq_mean={} \
             entropy_rollout_mean={} response_length_mean={} clip_fraction={} \
             difficult_fraction={} buffer_size={} explored_prompts={} o_eff_count={} \
             objective={} cov_diagnostic={}",
            self.step,
            fmt9(self.reward_mean),
            fmt9(self.token_entropy_mean),
            fmt9(self.entropy_seq_mean),
            fmt9(self.entropy_rollout_mean),
            fmt9(self.response_length_mean),
            fmt9(self.clip_fraction),
            fmt9(self.difficult_fraction),
            self.buffer_size,
            self.explored_prompts,
            self.o_eff_count,
            fmt9(self.objective),
            fmt9(self.cov_diagnostic),
        );
        if let Some(rates) = &self.eval {
            for r in rates {
                line.push_str(&format!(
                    " pass@{k}_all={} pass@{k}_easy={} pass@{k}_hard={}",
                    fmt9(r.all),
                    fmt9(r.easy),
                    fmt9(r.hard),
                    k = r.k
                ));
            }
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<MetricsRecord> {
        let mut map = std::collections::BTreeMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| LabError::Parse(format!("bad metrics field {part:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| LabError::Parse(format!("missing metrics field {k:?}")))?
                .parse()
                .map_err(|_| LabError::Parse(format!("bad value for {k:?}")))
        };
        let mut eval: Vec<EvalRates> = Vec::new();
        let mut ks: Vec<usize> = map
            .keys()
            .filter_map(|k| {
                k.strip_prefix("pass@")
                    .and_then(|rest| rest.strip_suffix("_all"))
                    .and_then(|n| n.parse().ok())
            })
            .collect();
        ks.sort_unstable();
        for k in ks {
            eval.push(EvalRates {
                k,
                all: get(&format!("pass@{k}_all"))?,
                easy: get(&format!("pass@{k}_easy"))?,
                hard: get(&format!("pass@{k}_hard"))?,
            });
        }
        Ok(MetricsRecord {
            step: get("step")? as u64,
            reward_mean: get("reward_mean")?,
            token_entropy_mean: get("token_entropy_mean")?,
            entropy_seq_mean: get("entropy_seq_mean")?,
            entropy_rollout_mean: get("entropy_rollout_mean")?,
            response_length_mean: get("response_length_mean")?,
            clip_fraction: get("clip_fraction")?,
            difficult_fraction: get("difficult_fraction")?,
            buffer_size: get("buffer_size")? as usize,
            explored_prompts: get("explored_prompts")? as usize,
            o_eff_count: get("o_eff_count")? as usize,
            objective: get("objective")?,
            cov_diagnostic: get("cov_diagnostic")?,
            eval: if eval.is_empty() { None } else { Some(eval) },
        })
    }

    fn panel_value(&self, panel: &str) -> Option<f64> {
        match panel {
            "reward_mean" => Some(self.reward_mean),
            "token_entropy_mean" => Some(self.token_entropy_mean),
            "entropy_seq_mean" => Some(self.entropy_seq_mean),
            "entropy_rollout_mean" => Some(self.entropy_rollout_mean),
            "response_length_mean" => Some(self.response_length_mean),
            "clip_fraction" => Some(self.clip_fraction),
            "difficult_fraction" => Some(self.difficult_fraction),
            "buffer_size" => Some(self.buffer_size as f64),
            "explored_prompts" => Some(self.explored_prompts as f64),
            "o_eff_count" => Some(self.o_eff_count as f64),
            "objective" => Some(self.objective),
            "cov_diagnostic" => Some(self.cov_diagnostic),
            _ => None,
        }
    }
}

/// Append one record to a metrics stream.
pub fn emit_metrics(stream: &mut dyn Write, record: &MetricsRecord) -> Result<()> {
    writeln!(stream, "{}", record.to_line())?;
    Ok(())
}

/// Parse a whole metrics file.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::parse_line)
        .collect()
}

/// Convert a metrics file into one two-column `step value` series file per
/// panel under `out_dir`. Returns the panel file names written.
pub fn export_panels(metrics_text: &str, out_dir: &std::path::Path) -> Result<Vec<String>> {
    let records = parse_metrics(metrics_text)?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for panel in PANELS {
        let mut body = String::new();
        for r in &records {
            let v = r
                .panel_value(panel)
                .ok_or_else(|| LabError::Internal(format!("unknown panel {panel}")))?;
            body.push_str(&format!("{} {}\n", r.step, fmt9(v)));
        }
        let name = format!("{panel}.dat");
        std::fs::write(out_dir.join(&name), body)?;
        written.push(name);
    }
    Ok(written)
}

/// Run provenance, written before the first training step.
#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    pub config_hash: u64,
    pub seed: u64,
    pub code_version: String,
    pub start_time: String,
    pub task_digest: u64,
}

impl ExperimentManifest {
    pub fn to_text(&self) -> String {
        format!(
            "config_hash={:016x}\nseed={}\ncode_version={}\nstart_time={}\ntask_digest={:016x}\n",
            self.config_hash, self.seed, self.code_version, self.start_time, self.task_digest
        )
    }
}
