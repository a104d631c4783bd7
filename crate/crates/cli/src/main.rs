//! Command-line driver: dataset generation, training, evaluation, ablation
//! sweeps, the bisection sanity campaign and summary reporting, all driven
//! by a TOML experiment config with flag overrides.
//!
//! Exit codes: 0 success, 2 usage error, 3 validation/runtime failure with
//! a single-line `error: ...` message on stderr.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sysid_core::datagen::DataMode;
use sysid_core::env::EnvKind;
use sysid_core::harness::{
    ablation_sweep, evaluate_sim2sim, Method, NoiseKind, SweepAxis,
};
use sysid_core::io::checkpoint::read_checkpoint;
use sysid_core::io::config::ExperimentConfig;
use sysid_core::io::csv::{read_metrics, summarize, write_summary};
use sysid_core::model::HeadMode;
use sysid_core::pipeline::{ensure_checkpoint, ensure_dataset};

#[derive(Parser)]
#[command(name = "sysid", version, about = "In-context system identification on toy physics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the environment (scoop | scoop-dist | hockey).
    #[arg(long)]
    env: Option<EnvKind>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the run directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        if let Some(env) = self.env {
            cfg.env = env;
        }
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(dir) = &self.run_dir {
            cfg.paths.run_dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate an adaptation-sequence or expert-pair dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// rbs | rbs-explore | linterp | bisect | expert
        #[arg(long, default_value = "rbs")]
        mode: DataMode,
        /// Override the sequence count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a prediction head on the configured dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// incontext | ed | tunenet
        #[arg(long, default_value = "incontext")]
        head: HeadMode,
        /// Override the optimizer step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate trained checkpoints in a sim-to-sim campaign.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated methods (incontext,ed,tunenet,dr,bisect).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// none | label | scale
        #[arg(long)]
        noise: Option<NoiseKind>,
    },
    /// Sweep the transition length L or the context window k.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// L (regenerates datasets) or k (retrains on a fixed dataset).
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. 5,7,9,11,13
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Reuse/overwrite an existing sweep directory.
        #[arg(long)]
        force: bool,
    },
    /// Bisection-oracle sanity campaign on the scooping task.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        pairs: u32,
        #[arg(long, default_value_t = 15)]
        iters: u32,
    },
    /// Join metrics CSVs into a single summary.
    Report {
        /// Metrics CSV files to aggregate.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn head_for(method: Method) -> Option<HeadMode> {
    match method {
        Method::InContext => Some(HeadMode::InContext),
        Method::Ed => Some(HeadMode::Ed),
        Method::TuneNet => Some(HeadMode::TuneNet),
        Method::Dr | Method::BisectOracle => None,
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenData { cfg, mode, n } => {
            let mut cfg = cfg.load()?;
            if let Some(n) = n {
                cfg.gen.count = n;
                cfg.gen.expert_count = n;
            }
            let (path, manifest) = ensure_dataset(&cfg, mode).map_err(|e| e.to_string())?;
            println!(
                "dataset {} mode={} count={} sha256={}",
                path.display(),
                manifest.mode.name(),
                manifest.count,
                manifest.sha256
            );
            Ok(())
        }
        Command::Train { cfg, head, steps } => {
            let mut cfg = cfg.load()?;
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            let path = ensure_checkpoint(&cfg, head).map_err(|e| e.to_string())?;
            let ckpt = read_checkpoint(&path).map_err(|e| e.to_string())?;
            println!(
                "checkpoint {} head={} steps={} final_loss={}",
                path.display(),
                head.name(),
                ckpt.meta.steps_done,
                ckpt.meta.loss_tail.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Eval { cfg, methods, noise } => {
            let mut cfg = cfg.load()?;
            if let Some(methods) = methods {
                cfg.eval.methods = methods;
            }
            if let Some(noise) = noise {
                cfg.eval.noise = noise;
            }
            // evaluation consumes checkpoints produced by `train`; it does
            // not train implicitly
            let env = cfg.build_env();
            let mut models = HashMap::new();
            for method in &cfg.eval.methods {
                if let Some(head) = head_for(*method) {
                    let path = cfg.checkpoint_path(head);
                    if !path.exists() {
                        return Err(format!(
                            "missing checkpoint {} for method '{}'; run `sysid train --head {}` first",
                            path.display(),
                            method.name(),
                            head.name()
                        ));
                    }
                    let ckpt = read_checkpoint(&path).map_err(|e| e.to_string())?;
                    models.insert(*method, ckpt.model);
                }
            }
            let eval_cfg = cfg.eval.eval_config(cfg.base_seed);
            let rows = evaluate_sim2sim(&env, &cfg.policy(), &eval_cfg, &models)?;
            let summary = summarize(&rows);
            sysid_core::pipeline::write_eval_outputs(&cfg, &rows, &summary)
                .map_err(|e| e.to_string())?;
            println!(
                "metrics {} rows={} summary {}",
                cfg.metrics_path().display(),
                rows.len(),
                cfg.summary_path().display()
            );
            Ok(())
        }
        Command::Ablate {
            cfg,
            axis,
            values,
            force,
        } => {
            let cfg = cfg.load()?;
            if values.is_empty() {
                return Err("no sweep values given".into());
            }
            let outcome = ablation_sweep(&cfg, axis, &values, force).map_err(|e| e.to_string())?;
            for member in &outcome.members {
                let last = member.summary.iter().filter(|r| r.method == "incontext").last();
                println!(
                    "sweep {}={} rows={} final_err={}",
                    axis.name(),
                    member.value,
                    member.summary.len(),
                    last.map(|r| r.param_err_mean.to_string()).unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::Oracle { cfg, pairs, iters } => {
            let mut cfg = cfg.load()?;
            if cfg.env != EnvKind::Scoop {
                return Err("the oracle campaign runs on the scoop environment".into());
            }
            cfg.eval.pairs = pairs;
            cfg.eval.max_iters = iters;
            cfg.eval.seeds = 1;
            cfg.eval.methods = vec![Method::BisectOracle, Method::Dr];
            let env = cfg.build_env();
            let eval_cfg = cfg.eval.eval_config(cfg.base_seed);
            let rows = evaluate_sim2sim(&env, &cfg.policy(), &eval_cfg, &HashMap::new())?;
            let summary = summarize(&rows);
            println!("iter bisect_success dr_success");
            for iter in 0..iters {
                let get = |m: &str| {
                    summary
                        .iter()
                        .find(|r| r.method == m && r.iter == iter)
                        .and_then(|r| r.success_rate)
                        .unwrap_or(f64::NAN)
                };
                println!("{iter} {} {}", get("bisect"), get("dr"));
            }
            Ok(())
        }
        Command::Report { inputs, out } => {
            let mut rows = Vec::new();
            for path in &inputs {
                rows.extend(read_metrics(path).map_err(|e| e.to_string())?);
            }
            let summary = summarize(&rows);
            write_summary(&summary, &out).map_err(|e| e.to_string())?;
            println!("summary {} groups={}", out.display(), summary.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
