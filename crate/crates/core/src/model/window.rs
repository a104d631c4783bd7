use crate::datagen::{TransitionRecord, TransitionSequence};
use crate::env::Env;

use super::config::HeadMode;

/// One iteration record with every element mapped to [-1, 1] coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRecord {
    pub eps: Vec<f64>,
    pub act: Vec<f64>,
    pub sim: Vec<f64>,
    pub real: Vec<f64>,
}

impl NormRecord {
    pub fn from_record(env: &Env, rec: &TransitionRecord) -> Self {
        NormRecord {
            eps: env.space.normalize_unchecked(&rec.eps.values),
            act: env.action_space.normalize_unchecked(&rec.action.0),
            sim: env.normalize_state(&rec.tau_source.states),
            real: env.normalize_state(&rec.tau_target.states),
        }
    }
}

/// Up to `window` most recent iteration records, chronological. Live
/// records sit at the front; blocks past `records.len()` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub records: Vec<NormRecord>,
}

impl HistoryWindow {
    pub fn live_blocks(&self) -> usize {
        self.records.len()
    }

    /// A training window: `window` consecutive records starting at `start`.
    pub fn from_sequence(env: &Env, seq: &TransitionSequence, start: usize, window: usize) -> Self {
        let records = seq.records[start..start + window]
            .iter()
            .map(|r| NormRecord::from_record(env, r))
            .collect();
        HistoryWindow { records }
    }
}

/// Normalized training targets for the window starting at `start`: one row
/// per block plus a mask marking blocks with a defined target.
///
/// The history head predicts the next iteration's parameters (shifted
/// input); the one-shot heads predict the sequence target directly or as a
/// residual from the current point.
pub fn window_targets(
    env: &Env,
    seq: &TransitionSequence,
    start: usize,
    window: usize,
    head: HeadMode,
) -> (Vec<f64>, Vec<bool>) {
    let d = env.space.dim();
    let mut rows = vec![0.0; window * d];
    let mut mask = vec![false; window];
    for b in 0..window {
        let i = start + b;
        match head {
            HeadMode::InContext => {
                if i + 1 < seq.records.len() {
                    let next = env.space.normalize_unchecked(&seq.records[i + 1].eps.values);
                    rows[b * d..(b + 1) * d].copy_from_slice(&next);
                    mask[b] = true;
                }
            }
            HeadMode::Ed => {
                let t = env.space.normalize_unchecked(&seq.eps_target.values);
                rows[b * d..(b + 1) * d].copy_from_slice(&t);
                mask[b] = true;
            }
            HeadMode::TuneNet => {
                let t = env.space.normalize_unchecked(&seq.eps_target.values);
                let s = env.space.normalize_unchecked(&seq.records[i].eps.values);
                for j in 0..d {
                    rows[b * d + j] = t[j] - s[j];
                }
                mask[b] = true;
            }
        }
    }
    (rows, mask)
}
