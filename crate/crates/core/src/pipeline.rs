//! End-to-end experiment steps driven by one config: dataset generation,
//! training and evaluation, each reusing an existing on-disk artifact when
//! its manifest matches the requested settings exactly (same config + seed
//! produces bit-identical artifacts, so reuse is sound).

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use crate::datagen::{build_dataset, DataMode, GenConfig};
use crate::harness::{evaluate_sim2sim, Method};
use crate::io::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TrainMeta};
use crate::io::config::ExperimentConfig;
use crate::io::csv::{summarize, write_metrics, write_summary, MetricsRow, SummaryRow};
use crate::io::dataset::{read_dataset, DatasetManifest};
use crate::io::{IoError, IoResult};
use crate::model::{mix, train, HeadMode, Model, TrainConfig, TrainState};

/// Offset the generation seed per mode so datasets draw disjoint
/// source/target streams.
fn mode_seed(base: u64, mode: DataMode) -> u64 {
    let tag = match mode {
        DataMode::Rbs => 0,
        DataMode::RbsExplore => 1,
        DataMode::Linterp => 2,
        DataMode::Bisect => 3,
        DataMode::Expert => 4,
    };
    mix(base, 0xDA7A_0000 + tag)
}

fn head_for(method: Method) -> Option<HeadMode> {
    match method {
        Method::InContext => Some(HeadMode::InContext),
        Method::Ed => Some(HeadMode::Ed),
        Method::TuneNet => Some(HeadMode::TuneNet),
        Method::Dr | Method::BisectOracle => None,
    }
}

fn data_mode_for(head: HeadMode) -> DataMode {
    match head {
        HeadMode::InContext => DataMode::Rbs,
        HeadMode::Ed | HeadMode::TuneNet => DataMode::Expert,
    }
}

/// Generate (or reuse) the dataset for `mode`. Reuse requires the manifest
/// to match the requested generation settings and the data checksum to
/// verify.
pub fn ensure_dataset(
    cfg: &ExperimentConfig,
    mode: DataMode,
) -> IoResult<(PathBuf, DatasetManifest)> {
    let path = cfg.dataset_path(mode);
    let env = cfg.build_env();
    let gen = GenConfig {
        base_seed: mode_seed(cfg.base_seed, mode),
        ..cfg.gen.gen_config(0)
    };
    let count = if mode == DataMode::Expert {
        cfg.gen.expert_count
    } else {
        cfg.gen.count
    };
    if path.exists() {
        if let Ok((_, manifest)) = read_dataset(&path) {
            if manifest.env == env.kind.name()
                && manifest.mode == mode
                && manifest.count == count
                && manifest.gen == gen
            {
                return Ok((path, manifest));
            }
        }
    }
    let policy = cfg.policy();
    let manifest = build_dataset(&env, &policy, &gen, count, mode, &path)?;
    Ok((path, manifest))
}

/// Train (or reuse) the checkpoint for `head`. A checkpoint is reused only
/// if its recorded training settings, step count and dataset checksum match
/// the request.
pub fn ensure_checkpoint(cfg: &ExperimentConfig, head: HeadMode) -> IoResult<PathBuf> {
    let ckpt_path = cfg.checkpoint_path(head);
    let env = cfg.build_env();
    let (data_path, manifest) = ensure_dataset(cfg, data_mode_for(head))?;

    let train_cfg = TrainConfig {
        seed: mix(cfg.base_seed, 0x7EA1_0000 + head as u64),
        ..cfg.train.clone()
    };
    if ckpt_path.exists() {
        if let Ok(existing) = read_checkpoint(&ckpt_path) {
            if existing.meta.train == train_cfg
                && existing.meta.steps_done == train_cfg.steps as u64
                && existing.meta.dataset_sha256 == manifest.sha256
                && existing.model.cfg == cfg.model.bind(&env, head)
            {
                return Ok(ckpt_path);
            }
        }
    }

    let (data, _) = read_dataset(&data_path)?;
    let model_cfg = cfg.model.bind(&env, head);
    let mut model = Model::<f32>::init(model_cfg, mix(cfg.base_seed, 0x1217 + head as u64));
    let mut state = TrainState::fresh(&model, train_cfg.lr);

    let log_path = cfg.loss_log_path(head);
    if let Some(dir) = log_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| crate::io::io_err(dir, e))?;
    }
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| crate::io::io_err(&log_path, e))?;

    let mut losses = Vec::with_capacity(train_cfg.steps);
    train(&mut model, &env, &data, &train_cfg, &mut state, |step, loss| {
        losses.push(loss);
        if step % 50 == 0 || step + 1 == train_cfg.steps {
            let _ = writeln!(log, "{} {step} {loss}", head.name());
        }
    })
    .map_err(|e| IoError::Format {
        path: ckpt_path.display().to_string(),
        msg: e.to_string(),
    })?;

    let tail_start = losses.len().saturating_sub(50);
    let meta = TrainMeta {
        steps_done: train_cfg.steps as u64,
        train: train_cfg,
        dataset_sha256: manifest.sha256,
        loss_tail: losses[tail_start..].to_vec(),
    };
    write_checkpoint(
        &ckpt_path,
        &Checkpoint {
            model,
            opt: Some(state.opt),
            meta,
        },
    )?;
    Ok(ckpt_path)
}

/// Sidecar describing how an emitted metrics file was produced; campaigns
/// are regenerable from the embedded config alone.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct EvalManifest {
    pub config: ExperimentConfig,
    pub rows: usize,
    pub sha256: String,
}

fn eval_manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    let mut p = cfg.metrics_path().into_os_string();
    p.push(".manifest.json");
    p.into()
}

/// Write metrics + summary + the config-embedding manifest.
pub fn write_eval_outputs(
    cfg: &ExperimentConfig,
    rows: &[MetricsRow],
    summary: &[SummaryRow],
) -> IoResult<()> {
    write_metrics(rows, &cfg.metrics_path())?;
    write_summary(summary, &cfg.summary_path())?;
    let bytes = std::fs::read(cfg.metrics_path())
        .map_err(|e| crate::io::io_err(&cfg.metrics_path(), e))?;
    let manifest = EvalManifest {
        config: cfg.clone(),
        rows: rows.len(),
        sha256: crate::io::dataset::sha256_hex(&bytes),
    };
    let mpath = eval_manifest_path(cfg);
    std::fs::write(
        &mpath,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| crate::io::io_err(&mpath, e))
}

/// Reload a previous campaign if its manifest matches this exact config and
/// the metrics file's checksum verifies.
fn reuse_eval(cfg: &ExperimentConfig) -> Option<Vec<MetricsRow>> {
    let mpath = eval_manifest_path(cfg);
    let manifest: EvalManifest = serde_json::from_slice(&std::fs::read(mpath).ok()?).ok()?;
    if &manifest.config != cfg {
        return None;
    }
    let bytes = std::fs::read(cfg.metrics_path()).ok()?;
    if crate::io::dataset::sha256_hex(&bytes) != manifest.sha256 {
        return None;
    }
    crate::io::csv::read_metrics(&cfg.metrics_path()).ok()
}

/// Run the evaluation campaign from the config: ensures checkpoints for
/// every learned method, evaluates, and writes the metrics and summary
/// CSVs (with a config-embedding manifest). A campaign whose manifest
/// matches the config exactly is reloaded instead of recomputed.
pub fn run_eval(cfg: &ExperimentConfig) -> IoResult<(Vec<MetricsRow>, Vec<SummaryRow>)> {
    if let Some(rows) = reuse_eval(cfg) {
        let summary = summarize(&rows);
        return Ok((rows, summary));
    }
    let env = cfg.build_env();
    let policy = cfg.policy();
    let eval_cfg = cfg.eval.eval_config(cfg.base_seed);

    let mut models = HashMap::new();
    for method in &eval_cfg.methods {
        if let Some(head) = head_for(*method) {
            let path = ensure_checkpoint(cfg, head)?;
            let ckpt = read_checkpoint(&path)?;
            models.insert(*method, ckpt.model);
        }
    }

    let rows = evaluate_sim2sim(&env, &policy, &eval_cfg, &models).map_err(|msg| {
        IoError::Format {
            path: cfg.metrics_path().display().to_string(),
            msg,
        }
    })?;
    let summary = summarize(&rows);
    write_eval_outputs(cfg, &rows, &summary)?;
    Ok((rows, summary))
}
