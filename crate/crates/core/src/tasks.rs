//! Synthetic verifiable-reward sequence tasks with controllable difficulty.
//!
//! Three families: combination locks (exactly one accepting code), multipath
//! trees (several accepting leaves at a fixed depth), and modular-arithmetic
//! chains (single-token answer plus a terminal token). Every instance stores
//! its exact uniform-policy acceptance probability, computed at construction
//! by enumerating the full generation tree, so the difficulty label and all
//! sampling statistics are checkable by brute force.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{LabError, Result};
use crate::seeding::{derive_seed, fnv1a, rng_from};

/// Enumeration budget: `vocab^max_len` states at most.
pub const ENUMERATION_BUDGET: u64 = 1_000_000;

/// Acceptance probability at or below this is labeled hard.
pub const HARD_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(LabError::Parse(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// Constructor arguments; enough to rebuild an instance deterministically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskRecipe {
    CombinationLock { vocab: usize, code_len: usize, seed: u64 },
    MultipathTree { vocab: usize, depth: usize, n_accepting: usize, seed: u64 },
    ModChain { vocab: usize, n_ops: usize, seed: u64 },
}

impl TaskRecipe {
    pub fn family(&self) -> &'static str {
        match self {
            TaskRecipe::CombinationLock { .. } => "lock",
            TaskRecipe::MultipathTree { .. } => "tree",
            TaskRecipe::ModChain { .. } => "mod",
        }
    }

    pub fn build(&self) -> Result<TaskInstance> {
        match *self {
            TaskRecipe::CombinationLock { vocab, code_len, seed } => {
                make_combination_lock(vocab, code_len, seed)
            }
            TaskRecipe::MultipathTree { vocab, depth, n_accepting, seed } => {
                make_multipath_tree(vocab, depth, n_accepting, seed)
            }
            TaskRecipe::ModChain { vocab, n_ops, seed } => make_mod_chain(vocab, n_ops, seed),
        }
    }
}

/// One verifiable-reward task.
#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub prompt_id: String,
    pub difficulty: Difficulty,
    pub vocab_size: usize,
    pub max_len: usize,
    pub terminal: Option<u32>,
    pub accepting: BTreeSet<Vec<u32>>,
    /// Exact uniform-policy acceptance probability as a rational.
    pub acceptance_num: u64,
    pub acceptance_den: u64,
    pub recipe: TaskRecipe,
}

impl TaskInstance {
    /// Binary reward: 1 iff the output, with trailing terminal tokens
    /// stripped, is an accepting sequence. Pure function of its inputs.
    pub fn verify(&self, output: &[u32]) -> f64 {
        let mut end = output.len();
        if let Some(term) = self.terminal {
            while end > 0 && output[end - 1] == term {
                end -= 1;
            }
        }
        if end == 0 {
            return 0.0;
        }
        if self.accepting.contains(&output[..end]) {
            1.0
        } else {
            0.0
        }
    }

    /// Exact acceptance probability under the uniform policy.
    pub fn uniform_acceptance(&self) -> f64 {
        self.acceptance_num as f64 / self.acceptance_den as f64
    }

    /// Digest of the accepting set and shape; used to validate reloads.
    pub fn digest(&self) -> u64 {
        let mut h = fnv1a(0xcbf29ce484222325, &(self.vocab_size as u64).to_le_bytes());
        h = fnv1a(h, &(self.max_len as u64).to_le_bytes());
        h = fnv1a(h, &self.terminal.map_or(u64::MAX, u64::from).to_le_bytes());
        for seq in &self.accepting {
            for &t in seq {
                h = fnv1a(h, &t.to_le_bytes());
            }
            h = fnv1a(h, b";");
        }
        h
    }

    fn serialize_params(&self) -> String {
        match self.recipe {
            TaskRecipe::CombinationLock { vocab, code_len, seed } => {
                format!("vocab={vocab} len={code_len} n=1 seed={seed}")
            }
            TaskRecipe::MultipathTree { vocab, depth, n_accepting, seed } => {
                format!("vocab={vocab} len={depth} n={n_accepting} seed={seed}")
            }
            TaskRecipe::ModChain { vocab, n_ops, seed } => {
                format!("vocab={vocab} len={n_ops} n=1 seed={seed}")
            }
        }
    }

    /// One-line record: id, family, difficulty, seed-derived parameters and
    /// accepting-set digest; enough to reconstruct deterministically.
    pub fn to_line(&self) -> String {
        format!(
            "task id={} family={} difficulty={} {} digest={:016x}",
            self.prompt_id,
            self.recipe.family(),
            self.difficulty.as_str(),
            self.serialize_params(),
            self.digest()
        )
    }

    pub fn from_line(line: &str) -> Result<TaskInstance> {
        let mut fields = std::collections::BTreeMap::new();
        let mut parts = line.split_whitespace();
        if parts.next() != Some("task") {
            return Err(LabError::Parse(format!("not a task line: {line:?}")));
        }
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| LabError::Parse(format!("bad field {part:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| LabError::Parse(format!("missing field {k:?} in task line")))
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| LabError::Parse(format!("bad numeric field {k:?}")))
        };
        let vocab = num("vocab")? as usize;
        let len = num("len")? as usize;
        let n = num("n")? as usize;
        let seed = num("seed")?;
        let recipe = match get("family")?.as_str() {
            "lock" => TaskRecipe::CombinationLock { vocab, code_len: len, seed },
            "tree" => TaskRecipe::MultipathTree { vocab, depth: len, n_accepting: n, seed },
            "mod" => TaskRecipe::ModChain { vocab, n_ops: len, seed },
            other => return Err(LabError::Parse(format!("unknown family {other:?}"))),
        };
        let task = recipe.build()?;
        let digest = u64::from_str_radix(get("digest")?, 16)
            .map_err(|_| LabError::Parse("bad digest".into()))?;
        if task.digest() != digest {
            return Err(LabError::Parse(format!(
                "digest mismatch for task {}",
                task.prompt_id
            )));
        }
        if &task.prompt_id != get("id")? {
            return Err(LabError::Parse("prompt id mismatch on reload".into()));
        }
        Ok(task)
    }
}

/// Exact acceptance probability under the uniform policy, as a rational with
/// denominator `vocab^max_len`. Walks the full generation tree: a sequence
/// ends at the terminal token or at `max_len`, and each generated sequence of
/// length `L` has probability `vocab^-L`.
fn enumerate_acceptance(
    vocab: usize,
    max_len: usize,
    terminal: Option<u32>,
    accepting: &BTreeSet<Vec<u32>>,
) -> Result<(u64, u64)> {
    let states = (vocab as u64).checked_pow(max_len as u32).filter(|&s| s <= ENUMERATION_BUDGET);
    let den = states.ok_or_else(|| {
        LabError::invalid(format!(
            "vocab^max_len = {vocab}^{max_len} exceeds the enumeration budget"
        ))
    })?;

    fn walk(
        vocab: usize,
        max_len: usize,
        terminal: Option<u32>,
        accepting: &BTreeSet<Vec<u32>>,
        prefix: &mut Vec<u32>,
        weight: u64,
        verify: &dyn Fn(&BTreeSet<Vec<u32>>, Option<u32>, &[u32]) -> bool,
    ) -> u64 {
        let done = prefix.len() == max_len
            || (terminal.is_some() && prefix.last() == terminal.as_ref());
        if done {
            return if verify(accepting, terminal, prefix) { weight } else { 0 };
        }
        let child_weight = weight / vocab as u64;
        let mut acc = 0;
        for t in 0..vocab as u32 {
            prefix.push(t);
            acc += walk(vocab, max_len, terminal, accepting, prefix, child_weight, verify);
            prefix.pop();
        }
        acc
    }

    let verify = |accepting: &BTreeSet<Vec<u32>>, terminal: Option<u32>, output: &[u32]| {
        let mut end = output.len();
        if let Some(term) = terminal {
            while end > 0 && output[end - 1] == term {
                end -= 1;
            }
        }
        end > 0 && accepting.contains(&output[..end])
    };

    let mut prefix = Vec::with_capacity(max_len);
    let num = walk(vocab, max_len, terminal, accepting, &mut prefix, den, &verify);
    Ok((num, den))
}

fn finish_instance(
    prompt_id: String,
    vocab: usize,
    max_len: usize,
    terminal: Option<u32>,
    accepting: BTreeSet<Vec<u32>>,
    recipe: TaskRecipe,
) -> Result<TaskInstance> {
    if accepting.is_empty() {
        return Err(LabError::invalid("accepting set must be non-empty"));
    }
    if accepting.iter().any(|s| s.len() > max_len || s.is_empty()) {
        return Err(LabError::invalid("accepting sequences must have length in [1, max_len]"));
    }
    let (num, den) = enumerate_acceptance(vocab, max_len, terminal, &accepting)?;
    let p = num as f64 / den as f64;
    let difficulty = if p <= HARD_THRESHOLD {
        Difficulty::Hard
    } else {
        Difficulty::Easy
    };
    Ok(TaskInstance {
        prompt_id,
        difficulty,
        vocab_size: vocab,
        max_len,
        terminal,
        accepting,
        acceptance_num: num,
        acceptance_den: den,
        recipe,
    })
}

/// Hard-exploration proxy: exactly one accepting code of length `code_len`,
/// drawn uniformly by seed. Hard iff `vocab^code_len >= 1000`.
pub fn make_combination_lock(vocab: usize, code_len: usize, seed: u64) -> Result<TaskInstance> {
    if vocab < 2 {
        return Err(LabError::invalid("lock needs vocab >= 2"));
    }
    if code_len < 1 {
        return Err(LabError::invalid("lock needs code_len >= 1"));
    }
    let mut rng = rng_from(derive_seed(seed, &[b"lock"]));
    let code: Vec<u32> = (0..code_len).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let mut accepting = BTreeSet::new();
    accepting.insert(code);
    let prompt_id = format!("lock_{vocab}x{code_len}_{seed:08x}");
    finish_instance(
        prompt_id,
        vocab,
        code_len,
        None,
        accepting,
        TaskRecipe::CombinationLock { vocab, code_len, seed },
    )
}

/// Fixed-depth task with `n_accepting` distinct accepting leaves; supplies
/// prompts with several correct trajectories.
pub fn make_multipath_tree(
    vocab: usize,
    depth: usize,
    n_accepting: usize,
    seed: u64,
) -> Result<TaskInstance> {
    if vocab < 2 || depth < 1 {
        return Err(LabError::invalid("tree needs vocab >= 2 and depth >= 1"));
    }
    let total = (vocab as u64)
        .checked_pow(depth as u32)
        .filter(|&t| t <= ENUMERATION_BUDGET)
        .ok_or_else(|| LabError::invalid("tree exceeds the enumeration budget"))?;
    if n_accepting < 1 || n_accepting as u64 > total {
        return Err(LabError::invalid(format!(
            "n_accepting must be in [1, {total}], got {n_accepting}"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, &[b"tree"]));
    let mut chosen = BTreeSet::new();
    while chosen.len() < n_accepting {
        chosen.insert(rng.gen_range(0..total));
    }
    let accepting: BTreeSet<Vec<u32>> = chosen
        .into_iter()
        .map(|mut idx| {
            let mut seq = vec![0u32; depth];
            for slot in seq.iter_mut().rev() {
                *slot = (idx % vocab as u64) as u32;
                idx /= vocab as u64;
            }
            seq
        })
        .collect();
    let prompt_id = format!("tree_{vocab}x{depth}n{n_accepting}_{seed:08x}");
    finish_instance(
        prompt_id,
        vocab,
        depth,
        None,
        accepting,
        TaskRecipe::MultipathTree { vocab, depth, n_accepting, seed },
    )
}

/// Modular-arithmetic chain: the prompt encodes a start value and a list of
/// add/multiply operations mod `vocab - 1`; the answer is the single residue
/// token followed by the terminal token (the last vocabulary entry).
pub fn make_mod_chain(vocab: usize, n_ops: usize, seed: u64) -> Result<TaskInstance> {
    if vocab < 3 {
        return Err(LabError::invalid("mod chain needs vocab >= 3"));
    }
    if n_ops < 1 {
        return Err(LabError::invalid("mod chain needs n_ops >= 1"));
    }
    let modulus = (vocab - 1) as u64;
    let mut rng = rng_from(derive_seed(seed, &[b"mod"]));
    let start = rng.gen_range(0..modulus);
    let mut value = start;
    let mut ops = String::new();
    for _ in 0..n_ops {
        if rng.gen_bool(0.5) {
            let k = rng.gen_range(0..modulus);
            value = (value + k) % modulus;
            ops.push_str(&format!("a{k}"));
        } else {
            let k = rng.gen_range(1..modulus.max(2));
            value = (value * k) % modulus;
            ops.push_str(&format!("m{k}"));
        }
    }
    let mut accepting = BTreeSet::new();
    accepting.insert(vec![value as u32]);
    let prompt_id = format!("mod{modulus}_s{start}{ops}_{seed:08x}");
    finish_instance(
        prompt_id,
        vocab,
        2,
        Some((vocab - 1) as u32),
        accepting,
        TaskRecipe::ModChain { vocab, n_ops, seed },
    )
}

/// Curriculum construction parameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSpec {
    pub size: usize,
    pub hard_fraction: f64,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
}

fn default_vocab() -> usize {
    4
}

impl Default for CurriculumSpec {
    fn default() -> Self {
        Self {
            size: 30,
            hard_fraction: 0.3,
            vocab: 4,
        }
    }
}

/// An ordered, seed-deterministic collection of task instances.
#[derive(Clone, Debug)]
pub struct Curriculum {
    pub instances: Vec<TaskInstance>,
    pub hard_fraction: f64,
    pub seed: u64,
}

impl Curriculum {
    pub fn hard_count(&self) -> usize {
        self.instances
            .iter()
            .filter(|t| t.difficulty == Difficulty::Hard)
            .count()
    }

    pub fn by_difficulty(&self, difficulty: Difficulty) -> Vec<&TaskInstance> {
        self.instances
            .iter()
            .filter(|t| t.difficulty == difficulty)
            .collect()
    }

    /// Digest over the serialized instance lines.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf29ce484222325;
        for t in &self.instances {
            h = fnv1a(h, t.to_line().as_bytes());
        }
        h
    }

    pub fn to_lines(&self) -> String {
        let mut out = format!(
            "curriculum size={} hard_fraction={} seed={}\n",
            self.instances.len(),
            self.hard_fraction,
            self.seed
        );
        for t in &self.instances {
            out.push_str(&t.to_line());
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Curriculum> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| LabError::Parse("empty curriculum file".into()))?;
        let mut hard_fraction = 0.0;
        let mut seed = 0;
        for part in header.split_whitespace().skip(1) {
            match part.split_once('=') {
                Some(("hard_fraction", v)) => {
                    hard_fraction = v
                        .parse()
                        .map_err(|_| LabError::Parse("bad hard_fraction".into()))?
                }
                Some(("seed", v)) => {
                    seed = v.parse().map_err(|_| LabError::Parse("bad seed".into()))?
                }
                _ => {}
            }
        }
        let instances = lines
            .filter(|l| !l.trim().is_empty())
            .map(TaskInstance::from_line)
            .collect::<Result<Vec<_>>>()?;
        Ok(Curriculum {
            instances,
            hard_fraction,
            seed,
        })
    }
}

/// Deterministically build a shuffled curriculum with the requested hard
/// fraction. Hard instances are combination locks sized so the uniform-policy
/// acceptance probability is at most 1e-3; easy instances cycle through short
/// locks, multipath trees and modular chains with acceptance at least 0.05.
pub fn make_curriculum(spec: &CurriculumSpec, seed: u64) -> Result<Curriculum> {
    if spec.size == 0 {
        return Err(LabError::invalid("curriculum size must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.hard_fraction) {
        return Err(LabError::invalid("hard_fraction must be in [0, 1]"));
    }
    if spec.vocab < 3 {
        return Err(LabError::invalid("curriculum vocab must be >= 3"));
    }
    let v = spec.vocab;
    // Smallest code length with vocab^len >= 1000.
    let hard_len = {
        let mut len = 1;
        let mut pow = v as u64;
        while pow < 1000 {
            len += 1;
            pow = pow.saturating_mul(v as u64);
        }
        len
    };
    // Longest easy lock: vocab^len <= 20 keeps acceptance >= 0.05.
    let easy_lock_len = {
        let mut len = 1;
        while (v as u64).pow(len as u32 + 1) <= 20 {
            len += 1;
        }
        len
    };
    let n_hard = (spec.size as f64 * spec.hard_fraction).round() as usize;
    let n_hard = n_hard.min(spec.size);

    let mut instances = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let task_seed = derive_seed(seed, &[b"task", &(i as u64).to_le_bytes()]);
        let task = if i < n_hard {
            make_combination_lock(v, hard_len, task_seed)?
        } else {
            match i % 4 {
                0 => make_combination_lock(v, 1, task_seed)?,
                1 => make_combination_lock(v, easy_lock_len, task_seed)?,
                2 => {
                    // Enough accepting leaves to stay comfortably easy.
                    let n_acc = ((v * v) as f64 * 0.125).ceil() as usize;
                    make_multipath_tree(v, 2, n_acc.max(2), task_seed)?
                }
                _ => make_mod_chain(v, 2, task_seed)?,
            }
        };
        instances.push(task);
    }

    // Seeded shuffle so minibatches mix difficulties.
    let mut rng = rng_from(derive_seed(seed, &[b"shuffle"]));
    for i in (1..instances.len()).rev() {
        let j = rng.gen_range(0..=i);
        instances.swap(i, j);
    }
    Ok(Curriculum {
        instances,
        hard_fraction: spec.hard_fraction,
        seed,
    })
}
