//! Command-line entry points: train, eval, verify-theorems, sweep and
//! export-plots. Every command is a batch process driven by a TOML config
//! (plus `UECLAB_*` environment overrides) and a seed; identical inputs
//! produce byte-identical outputs.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use uec_lab::checkpoint::load_checkpoint;
use uec_lab::metrics::export_panels;
use uec_lab::theory::{run_finite_diff_suite, run_theorem1_suite, run_theorem2_suite};
use uec_lab::trainer::{curriculum_for, evaluate, run_sweep, train_with_sinks, RunSinks};
use uec_lab::{Algorithm, TrainConfig};

#[derive(Parser)]
#[command(name = "uec-lab", version, about = "Desk-scale policy-optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the algorithm (grpo | dapo | uec).
    #[arg(long)]
    algorithm: Option<String>,
    /// Override max training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(alg) = &self.algorithm {
            cfg.algorithm = Algorithm::parse(alg)?;
        }
        if let Some(steps) = self.steps {
            cfg.max_steps = steps;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a training job and write metrics, checkpoints and a manifest.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Output directory for metrics, checkpoints and the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume live parameters from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the config's curriculum.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Checkpoint file to score.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional directory for the eval report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerically verify the two entropy results and print a verdict table.
    VerifyTheorems {
        /// Master seed for the verification suites.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional directory for the line-delimited report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Grid of training runs over exploration temperature and buffer size.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated exploration temperatures.
        #[arg(long, default_value = "1.0,1.1,1.2", value_delimiter = ',')]
        t_prime: Vec<f64>,
        /// Comma-separated buffer capacities.
        #[arg(long, default_value = "128,256,512", value_delimiter = ',')]
        s_prime: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a metrics file into per-panel two-column series files.
    ExportPlots {
        /// Metrics file produced by `train`.
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory for the panel files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, out, resume } => cmd_train(common, out, resume),
        Command::Eval { common, checkpoint, out } => cmd_eval(common, checkpoint, out),
        Command::VerifyTheorems { seed, out, quiet } => cmd_verify(seed, out, quiet),
        Command::Sweep { common, t_prime, s_prime, out } => cmd_sweep(common, t_prime, s_prime, out),
        Command::ExportPlots { metrics, out } => cmd_export(metrics, out),
    }
}

fn cmd_train(
    common: ConfigArgs,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = common.load()?;
    let sinks = RunSinks {
        out_dir: out.clone(),
        resume_from: resume,
    };
    let result = train_with_sinks(&cfg, &sinks)?;
    if !common.quiet {
        if let Some(last) = result.metrics.last() {
            println!(
                "trained {} steps: reward_mean={:.4} token_entropy_mean={:.4} buffer={}",
                last.step, last.reward_mean, last.token_entropy_mean, last.buffer_size
            );
            if let Some(eval) = &last.eval {
                for r in eval {
                    println!(
                        "  pass@{}: all={:.4} easy={:.4} hard={:.4}",
                        r.k, r.all, r.easy, r.hard
                    );
                }
            }
        }
        if let Some(dir) = &out {
            println!("outputs in {}", dir.display());
        }
    }
    Ok(())
}

fn cmd_eval(common: ConfigArgs, checkpoint: PathBuf, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = common.load()?.resolved()?;
    let (params, step) = load_checkpoint(&checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let curriculum = curriculum_for(&cfg)?;
    let seed = uec_lab::seeding::derive_seed(cfg.seed, &[b"cli-eval", &step.to_le_bytes()]);
    let report = evaluate(
        &params,
        &curriculum.instances,
        &cfg.eval.k_values,
        cfg.eval.samples_per_task,
        cfg.eval.temperature,
        cfg.eval.top_p,
        seed,
    )?;
    let mut lines = String::new();
    lines.push_str(&format!("eval checkpoint_step={step}\n"));
    for (label, class) in [
        ("all", &report.all),
        ("easy", &report.easy),
        ("hard", &report.hard),
    ] {
        for (k, rate) in &class.pass_at {
            lines.push_str(&format!(
                "class={label} n_tasks={} pass@{k}={rate:.6}\n",
                class.n_tasks
            ));
        }
    }
    if !common.quiet {
        print!("{lines}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("eval_report.txt"), lines)?;
    }
    Ok(())
}

fn cmd_verify(seed: u64, out: Option<PathBuf>, quiet: bool) -> anyhow::Result<()> {
    let mut rows = run_theorem1_suite(100, seed)?;
    rows.extend(run_theorem2_suite(20, seed, 0.1, 1000)?);
    rows.extend(run_finite_diff_suite(100, seed)?);
    let mut body = String::new();
    for row in &rows {
        body.push_str(&row.to_line());
        body.push('\n');
    }
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("theorem_report.txt"), &body)?;
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if !quiet {
        let t1 = rows.iter().filter(|r| r.label == "theorem1").count();
        println!("{:<22} {:>8} {:>8}", "suite", "rows", "verdict");
        for label in ["theorem1", "theorem1-eta-scaling", "theorem1-sign", "theorem2", "finite-diff"] {
            let group: Vec<_> = rows.iter().filter(|r| r.label == label).collect();
            if group.is_empty() {
                continue;
            }
            let ok = group.iter().all(|r| r.pass);
            println!(
                "{:<22} {:>8} {:>8}",
                label,
                group.len(),
                if ok { "pass" } else { "FAIL" }
            );
        }
        println!("checked {t1} first-order instances, {failed} failing rows total");
    }
    if failed > 0 {
        bail!("{failed} verification rows failed");
    }
    Ok(())
}

fn cmd_sweep(
    common: ConfigArgs,
    t_prime: Vec<f64>,
    s_prime: Vec<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = common.load()?;
    let cells = run_sweep(&cfg, &t_prime, &s_prime)?;
    let mut body = String::new();
    for c in &cells {
        body.push_str(&c.to_line());
        body.push('\n');
    }
    if !common.quiet {
        // Accuracy (entropy) grid, buffer capacity by rows, temperature by
        // columns.
        print!("{:>10}", "s'\\t'");
        for t in &t_prime {
            print!(" {t:>16.2}");
        }
        println!();
        for &s in &s_prime {
            print!("{s:>10}");
            for &t in &t_prime {
                let cell = cells
                    .iter()
                    .find(|c| c.s_prime == s && c.t_prime == t)
                    .expect("cell");
                print!(" {:>8.2} ({:>5.2})", cell.accuracy * 100.0, cell.mean_entropy);
            }
            println!();
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("sweep_results.txt"), body)?;
    }
    Ok(())
}

fn cmd_export(metrics: PathBuf, out: PathBuf) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&metrics)
        .with_context(|| format!("reading metrics {}", metrics.display()))?;
    let names = export_panels(&text, &out)?;
    println!("wrote {} panels to {}", names.len(), out.display());
    Ok(())
}
