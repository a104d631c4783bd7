use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DataMode, TransitionSequence};
use crate::env::Env;
use crate::num::{AdamState, NumError, Real, Tape};

use super::config::HeadMode;
use super::net::{Model, TokenizedWindow};
use super::window::{window_targets, HistoryWindow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Optimization settings. Training is deterministic given the seed: the
/// batch for global step s is drawn from a stream seeded by (seed, s), so
/// resuming from a checkpoint reproduces an uninterrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch: 64,
            lr: 3e-4,
            seed: 0,
        }
    }
}

/// Optimizer state carried across steps (and through checkpoints).
pub struct TrainState<T: Real> {
    pub opt: AdamState<T>,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(model: &Model<T>, lr: f64) -> Self {
        TrainState {
            opt: AdamState::new(&model.param_shapes(), lr),
        }
    }
}

/// Uniform sampler over (sequence, window start) pairs with valid targets.
pub struct BatchSampler {
    max_start: Vec<usize>,
}

impl BatchSampler {
    pub fn new(
        env: &Env,
        data: &[TransitionSequence],
        window: usize,
        head: HeadMode,
    ) -> Result<Self, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        let mut max_start = Vec::with_capacity(data.len());
        for (i, seq) in data.iter().enumerate() {
            let expert = seq.mode == DataMode::Expert;
            match head {
                HeadMode::InContext => {
                    if expert {
                        return Err(TrainError::Config(format!(
                            "sequence {i}: the history head needs search sequences, got expert pairs"
                        )));
                    }
                    // the final record has no successor; keep >= 1 live target
                    if seq.records.len() < window.max(2) {
                        return Err(TrainError::Config(format!(
                            "sequence {i}: {} records < window {window}",
                            seq.records.len()
                        )));
                    }
                    max_start.push((seq.records.len() - window).min(seq.records.len() - 2));
                }
                HeadMode::Ed | HeadMode::TuneNet => {
                    if !expert {
                        return Err(TrainError::Config(format!(
                            "sequence {i}: one-shot heads need expert pairs, got {}",
                            seq.mode.name()
                        )));
                    }
                    if seq.records.len() < window {
                        return Err(TrainError::Config(format!(
                            "sequence {i}: {} records < window {window}",
                            seq.records.len()
                        )));
                    }
                    max_start.push(seq.records.len() - window);
                }
            }
            if seq.env != env.kind.name() {
                return Err(TrainError::Config(format!(
                    "sequence {i} is from env '{}', expected '{}'",
                    seq.env,
                    env.kind.name()
                )));
            }
        }
        Ok(BatchSampler { max_start })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let si = rng.random_range(0..self.max_start.len());
        let start = rng.random_range(0..=self.max_start[si]);
        (si, start)
    }
}

/// Samples per forward tape; bounds peak activation memory while keeping
/// the matmuls batched.
const CHUNK: usize = 4;

/// One optimizer step on a batch of (sequence, start) windows. Returns the
/// mean squared error over all blocks with a defined target, across the
/// whole batch. The batch runs in fixed-size chunks, each on one tape with
/// the sample dimension folded into rows; chunk gradients are combined with
/// live-target weights so the update matches the batch-global mean exactly.
pub fn training_step<T: Real>(
    model: &mut Model<T>,
    env: &Env,
    data: &[TransitionSequence],
    batch: &[(usize, usize)],
    state: &mut TrainState<T>,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let cfg = model.cfg.clone();
    let d = cfg.eps_dim;

    struct ChunkPass<T: Real> {
        tape: Tape<T>,
        loss: crate::num::NodeId,
        live_elems: usize,
        loss_value: f64,
    }
    let mut passes: Vec<ChunkPass<T>> = Vec::with_capacity(batch.len().div_ceil(CHUNK));
    for chunk in batch.chunks(CHUNK) {
        let mut windows = Vec::with_capacity(chunk.len());
        let mut target_rows = Vec::with_capacity(chunk.len() * cfg.window * d);
        let mut row_mask = Vec::with_capacity(chunk.len() * cfg.window);
        for &(si, start) in chunk {
            let seq = &data[si];
            windows.push(HistoryWindow::from_sequence(env, seq, start, cfg.window));
            let (rows, mask) = window_targets(env, seq, start, cfg.window, cfg.head_mode);
            target_rows.extend(rows);
            row_mask.extend(mask);
        }
        let tokens = TokenizedWindow::build(&cfg, &windows);
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &tokens)?;
        let target = crate::num::Tensor::from_f64_slice(
            &[chunk.len() * cfg.window, d],
            &target_rows,
        )?;
        let live_elems = row_mask.iter().filter(|&&m| m).count() * d;
        let loss = tape.mse_mean(pred, target, std::sync::Arc::new(row_mask))?;
        let loss_value = tape.value(loss).item().to_f64();
        passes.push(ChunkPass {
            tape,
            loss,
            live_elems,
            loss_value,
        });
    }

    let total_live: usize = passes.iter().map(|p| p.live_elems).sum();
    let batch_loss: f64 = passes
        .iter()
        .map(|p| p.loss_value * p.live_elems as f64)
        .sum::<f64>()
        / total_live as f64;

    let single = passes.len() == 1;
    let mut grads: Vec<crate::num::Tensor<T>> = Vec::new();
    if single {
        let g = passes[0].tape.backward(passes[0].loss)?;
        for (pi, p) in model.params.iter().enumerate() {
            grads.push(g.get(crate::num::ParamId(pi), p.shape()));
        }
    } else {
        // weight each chunk's mean by its share of live targets
        let mut accum: Vec<Vec<f64>> = model
            .params
            .iter()
            .map(|p| vec![0.0; p.numel()])
            .collect();
        for pass in &passes {
            let w = pass.live_elems as f64 / total_live as f64;
            let g = pass.tape.backward_seeded(pass.loss, T::from_f64(w))?;
            for (pi, p) in model.params.iter().enumerate() {
                let gt = g.get(crate::num::ParamId(pi), p.shape());
                for (a, v) in accum[pi].iter_mut().zip(gt.data()) {
                    *a += v.to_f64();
                }
            }
        }
        for (a, p) in accum.iter().zip(&model.params) {
            grads.push(crate::num::Tensor::from_f64_slice(p.shape(), a)?);
        }
    }
    state.opt.step(&mut model.params, &grads)?;
    Ok(batch_loss)
}

/// Cosine learning-rate decay over the configured horizon, ending at 5%
/// of the base rate; a function of the global step only, so resumed runs
/// reproduce uninterrupted ones.
pub fn lr_at(tcfg: &TrainConfig, step: usize) -> f64 {
    let progress = step as f64 / tcfg.steps.max(1) as f64;
    let floor = 0.05;
    tcfg.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Run training from the optimizer's current step up to `tcfg.steps`,
/// reporting every step's loss through `on_step`. Deterministic given
/// (model init, data, seed).
pub fn train<T: Real>(
    model: &mut Model<T>,
    env: &Env,
    data: &[TransitionSequence],
    tcfg: &TrainConfig,
    state: &mut TrainState<T>,
    on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>, TrainError> {
    train_until(model, env, data, tcfg, state, tcfg.steps, on_step)
}

/// As [`train`] but stopping at `until` (a checkpoint boundary inside the
/// same schedule horizon).
pub fn train_until<T: Real>(
    model: &mut Model<T>,
    env: &Env,
    data: &[TransitionSequence],
    tcfg: &TrainConfig,
    state: &mut TrainState<T>,
    until: usize,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>, TrainError> {
    model
        .cfg
        .validate()
        .map_err(TrainError::Config)?;
    if model.cfg.eps_dim != env.space.dim() {
        return Err(TrainError::Config(format!(
            "model eps_dim {} != space dim {}",
            model.cfg.eps_dim,
            env.space.dim()
        )));
    }
    let sampler = BatchSampler::new(env, data, model.cfg.window, model.cfg.head_mode)?;
    let mut losses = Vec::new();
    let start_step = state.opt.step_count() as usize;
    for step in start_step..until.min(tcfg.steps) {
        state.opt.lr = lr_at(tcfg, step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(tcfg.seed, step as u64));
        let batch: Vec<(usize, usize)> =
            (0..tcfg.batch).map(|_| sampler.sample(&mut rng)).collect();
        let loss = training_step(model, env, data, &batch, state)?;
        on_step(step, loss);
        losses.push(loss);
    }
    Ok(losses)
}

/// SplitMix64-style mixer for deriving per-step seeds.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
