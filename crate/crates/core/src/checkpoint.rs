//! Policy checkpoints: a flat key-value text document mapping context-key or
//! feature-index strings to logit vectors, under a header with the parameter
//! kind, vocab size, featurizer id and global step. Reals are written with
//! enough digits to round-trip bit-exactly.

use std::path::Path;

use crate::error::{LabError, Result};
use crate::policy::{Featurizer, PolicyKind, PolicyParams};

const MAGIC: &str = "uec-lab-checkpoint v1";

pub fn checkpoint_to_string(params: &PolicyParams, global_step: u64) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!(
        "kind {}\n",
        match params.kind() {
            PolicyKind::Tabular => "tabular",
            PolicyKind::Linear => "linear",
        }
    ));
    out.push_str(&format!("vocab_size {}\n", params.vocab_size()));
    out.push_str(&format!(
        "featurizer {}\n",
        params.featurizer_id().unwrap_or_else(|| "-".into())
    ));
    out.push_str(&format!("step {global_step}\n"));
    for (key, row) in params.rows() {
        out.push_str("row ");
        out.push_str(&key);
        for v in row {
            out.push_str(&format!(" {v:.17e}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, global_step: u64) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, checkpoint_to_string(params, global_step))?;
    Ok(())
}

pub fn checkpoint_from_string(text: &str) -> Result<(PolicyParams, u64)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(LabError::Parse("not a checkpoint file".into()));
    }
    let mut kind = None;
    let mut vocab_size = None;
    let mut featurizer = None;
    let mut step = None;
    let mut header_done = false;
    let mut params: Option<PolicyParams> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (tag, rest) = line
            .split_once(' ')
            .ok_or_else(|| LabError::Parse(format!("bad checkpoint line {line:?}")))?;
        match tag {
            "kind" if !header_done => kind = Some(rest.to_string()),
            "vocab_size" if !header_done => {
                vocab_size = Some(
                    rest.parse::<usize>()
                        .map_err(|_| LabError::Parse("bad vocab_size".into()))?,
                )
            }
            "featurizer" if !header_done => featurizer = Some(rest.to_string()),
            "step" if !header_done => {
                step = Some(rest.parse::<u64>().map_err(|_| LabError::Parse("bad step".into()))?)
            }
            "row" => {
                if params.is_none() {
                    header_done = true;
                    params = Some(build_params(&kind, vocab_size, &featurizer)?);
                }
                let mut parts = rest.split(' ');
                let key = parts
                    .next()
                    .ok_or_else(|| LabError::Parse("row without key".into()))?;
                let values = parts
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| LabError::Parse(format!("bad logit value {v:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                params.as_mut().unwrap().insert_row(key, values)?;
            }
            other => return Err(LabError::Parse(format!("unknown checkpoint tag {other:?}"))),
        }
    }
    let params = match params {
        Some(p) => p,
        None => build_params(&kind, vocab_size, &featurizer)?,
    };
    let step = step.ok_or_else(|| LabError::Parse("checkpoint missing step".into()))?;
    Ok((params, step))
}

fn build_params(
    kind: &Option<String>,
    vocab_size: Option<usize>,
    featurizer: &Option<String>,
) -> Result<PolicyParams> {
    let vocab = vocab_size.ok_or_else(|| LabError::Parse("checkpoint missing vocab_size".into()))?;
    match kind.as_deref() {
        Some("tabular") => PolicyParams::new_tabular(vocab),
        Some("linear") => {
            let id = featurizer
                .as_deref()
                .filter(|f| *f != "-")
                .ok_or_else(|| LabError::Parse("linear checkpoint missing featurizer".into()))?;
            PolicyParams::new_linear(vocab, Featurizer::parse(id)?)
        }
        _ => Err(LabError::Parse("checkpoint missing kind".into())),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, u64)> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_string(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ContextKey;

    #[test]
    fn tabular_roundtrip_is_bit_exact() {
        let mut p = PolicyParams::new_tabular(4).unwrap();
        p.set_logits(ContextKey::root("q1"), vec![0.1, -2.0 / 3.0, 1e-17, 3.5])
            .unwrap();
        p.set_logits(ContextKey::new("q2", vec![1, 2]), vec![7.0, 0.0, -1.25, 2.0_f64.sqrt()])
            .unwrap();
        let text = checkpoint_to_string(&p, 42);
        let (q, step) = checkpoint_from_string(&text).unwrap();
        assert_eq!(step, 42);
        for ctx in [ContextKey::root("q1"), ContextKey::new("q2", vec![1, 2])] {
            let a = p.logits(&ctx).unwrap();
            let b = q.logits(&ctx).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Unseen contexts still uniform after reload.
        let d = q.action_distribution(&ContextKey::root("new"), 1.0).unwrap();
        assert!((d[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn linear_roundtrip_preserves_weights() {
        let f = Featurizer { ngram: 2, dim: 8 };
        let mut p = PolicyParams::new_linear(3, f).unwrap();
        let ctx = ContextKey::new("q", vec![0]);
        let mut g = crate::policy::Gradient::zeros_like(&p);
        if let crate::policy::Gradient::Linear(buf) = &mut g {
            for (i, v) in buf.iter_mut().enumerate() {
                *v = (i as f64) * 0.017 - 0.1;
            }
        }
        p.apply_gradient(&g, 1.0).unwrap();
        let text = checkpoint_to_string(&p, 7);
        let (q, _) = checkpoint_from_string(&text).unwrap();
        let a = p.logits(&ctx).unwrap();
        let b = q.logits(&ctx).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(checkpoint_from_string("nonsense").is_err());
        assert!(checkpoint_from_string("uec-lab-checkpoint v1\nkind tabular\n").is_err());
    }
}
