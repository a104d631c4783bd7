use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::env::{Env, EnvParams};
use crate::num::{NodeId, NumResult, ParamId, Real, Tape, Tensor};

use super::config::{HeadMode, ModelConfig};
use super::window::HistoryWindow;

/// Named flat weights plus the architecture config. Parameter order is
/// fixed by construction and shared with checkpoints and optimizer state.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

/// Parameter manifest: (name, shape) in declaration order.
fn manifest(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut m = vec![
        ("tok.eps.w".into(), vec![cfg.eps_dim, d]),
        ("tok.eps.b".into(), vec![d]),
        ("tok.act.w".into(), vec![cfg.act_dim, d]),
        ("tok.act.b".into(), vec![d]),
        ("tok.state.w".into(), vec![cfg.state_dim, d]),
        ("tok.state.b".into(), vec![d]),
        ("emb.block".into(), vec![cfg.window, d]),
        ("emb.slot".into(), vec![cfg.block_tokens(), d]),
    ];
    for l in 0..cfg.layers {
        let ff = cfg.mlp_ratio * d;
        m.extend([
            (format!("layer{l}.ln1.g"), vec![d]),
            (format!("layer{l}.ln1.b"), vec![d]),
            (format!("layer{l}.attn.wq"), vec![d, d]),
            (format!("layer{l}.attn.bq"), vec![d]),
            (format!("layer{l}.attn.wk"), vec![d, d]),
            (format!("layer{l}.attn.bk"), vec![d]),
            (format!("layer{l}.attn.wv"), vec![d, d]),
            (format!("layer{l}.attn.bv"), vec![d]),
            (format!("layer{l}.attn.wo"), vec![d, d]),
            (format!("layer{l}.attn.bo"), vec![d]),
            (format!("layer{l}.ln2.g"), vec![d]),
            (format!("layer{l}.ln2.b"), vec![d]),
            (format!("layer{l}.mlp.w1"), vec![d, ff]),
            (format!("layer{l}.mlp.b1"), vec![ff]),
            (format!("layer{l}.mlp.w2"), vec![ff, d]),
            (format!("layer{l}.mlp.b2"), vec![d]),
        ]);
    }
    m.extend([
        ("final.ln.g".into(), vec![d]),
        ("final.ln.b".into(), vec![d]),
        ("head.w".into(), vec![d, cfg.eps_dim]),
        ("head.b".into(), vec![cfg.eps_dim]),
    ]);
    m
}

impl<T: Real> Model<T> {
    /// Random init: weights and embeddings N(0, 0.02), biases zero,
    /// layernorm gains one.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in manifest(&cfg) {
            let numel: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".b") && !name.contains("ln") && !name.contains("emb")
            {
                vec![T::ZERO; numel]
            } else if name.ends_with("ln.g") || name.ends_with("ln1.g") || name.ends_with("ln2.g") {
                vec![T::ONE; numel]
            } else if name.ends_with("ln.b") || name.ends_with("ln1.b") || name.ends_with("ln2.b") {
                vec![T::ZERO; numel]
            } else {
                (0..numel)
                    .map(|_| T::from_f64(normal.sample(&mut rng)))
                    .collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data).expect("manifest shapes are valid"));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Model {
            cfg,
            names,
            params,
            index,
        }
    }

    /// Rebuild from checkpointed tensors; shapes are audited against the
    /// manifest.
    pub fn from_parts(cfg: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self, String> {
        let expect = manifest(&cfg);
        if tensors.len() != expect.len() {
            return Err(format!(
                "expected {} tensors, got {}",
                expect.len(),
                tensors.len()
            ));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, shape), (got_name, tensor)) in expect.into_iter().zip(tensors) {
            if name != got_name {
                return Err(format!("expected tensor '{name}', got '{got_name}'"));
            }
            if tensor.shape() != shape.as_slice() {
                return Err(format!(
                    "tensor '{name}': expected shape {shape:?}, got {:?}",
                    tensor.shape()
                ));
            }
            names.push(name);
            params.push(tensor);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Model {
            cfg,
            names,
            params,
            index,
        })
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn param_shapes(&self) -> Vec<&[usize]> {
        self.params.iter().map(|p| p.shape()).collect()
    }

    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            let i = self.idx(name);
            for v in self.params[i].data_mut() {
                *v = T::ZERO;
            }
        }
    }

    /// Register every parameter on a tape, in order. Cheap: buffers are
    /// shared, not copied.
    fn register(&self, tape: &mut Tape<T>) -> Vec<NodeId> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect()
    }

    /// Forward pass over a batch of identically-shaped windows: returns the
    /// `[batch * window, eps_dim]` per-block predictions. Rows past a
    /// window's live blocks are meaningless and must be masked by the
    /// caller. The batch dimension is folded into rows everywhere except
    /// attention, which runs per sample so no information crosses windows.
    pub fn forward(&self, tape: &mut Tape<T>, tokens: &TokenizedWindow<T>) -> NumResult<NodeId> {
        let cfg = &self.cfg;
        let nodes = self.register(tape);
        let p = |name: &str| nodes[self.idx(name)];
        let n_tok = cfg.window_tokens();
        let batch = tokens.batch;

        // project each element type, then interleave rows into token order
        let eps_rows = tape.constant(tokens.eps_rows.clone());
        let act_rows = tape.constant(tokens.act_rows.clone());
        let state_rows = tape.constant(tokens.state_rows.clone());

        let eps_proj = tape.matmul(eps_rows, p("tok.eps.w"))?;
        let eps_proj = tape.add(eps_proj, p("tok.eps.b"))?;
        let act_proj = tape.matmul(act_rows, p("tok.act.w"))?;
        let act_proj = tape.add(act_proj, p("tok.act.b"))?;
        let state_proj = tape.matmul(state_rows, p("tok.state.w"))?;
        let state_proj = tape.add(state_proj, p("tok.state.b"))?;

        let stacked = tape.concat_rows(&[eps_proj, act_proj, state_proj])?;
        let mut x = tape.gather_rows(stacked, tokens.interleave.clone())?;

        // learned relative block-index and intra-block slot embeddings
        let block_emb = tape.gather_rows(p("emb.block"), tokens.block_idx.clone())?;
        let slot_emb = tape.gather_rows(p("emb.slot"), tokens.slot_idx.clone())?;
        x = tape.add(x, block_emb)?;
        x = tape.add(x, slot_emb)?;

        let _ = batch;
        for l in 0..cfg.layers {
            let n = |suffix: &str| format!("layer{l}.{suffix}");
            // attention with pre-layernorm
            let h = tape.layer_norm(x, p(&n("ln1.g")), p(&n("ln1.b")), cfg.layernorm_eps)?;
            let q = tape.matmul(h, p(&n("attn.wq")))?;
            let q = tape.add(q, p(&n("attn.bq")))?;
            let k = tape.matmul(h, p(&n("attn.wk")))?;
            let k = tape.add(k, p(&n("attn.bk")))?;
            let v = tape.matmul(h, p(&n("attn.wv")))?;
            let v = tape.add(v, p(&n("attn.bv")))?;

            let merged = tape.attention(q, k, v, cfg.heads, n_tok, tokens.attn_limits.clone())?;
            let proj = tape.matmul(merged, p(&n("attn.wo")))?;
            let proj = tape.add(proj, p(&n("attn.bo")))?;
            x = tape.add(x, proj)?;

            // mlp with pre-layernorm
            let h = tape.layer_norm(x, p(&n("ln2.g")), p(&n("ln2.b")), cfg.layernorm_eps)?;
            let h = tape.matmul(h, p(&n("mlp.w1")))?;
            let h = tape.add(h, p(&n("mlp.b1")))?;
            let h = tape.gelu(h)?;
            let h = tape.matmul(h, p(&n("mlp.w2")))?;
            let h = tape.add(h, p(&n("mlp.b2")))?;
            x = tape.add(x, h)?;
        }

        let x = tape.layer_norm(x, p("final.ln.g"), p("final.ln.b"), cfg.layernorm_eps)?;
        // read out at each block's final token: the earliest position that
        // has seen the whole block
        let block_ends = tape.gather_rows(x, tokens.block_ends.clone())?;
        let pred = tape.matmul(block_ends, p("head.w"))?;
        tape.add(pred, p("head.b"))
    }

    /// Predict the next parameters from a history window: forward, read the
    /// last live block, then map back to the raw box (clamped). The
    /// residual head adds its output to the current parameters in
    /// normalized coordinates.
    pub fn predict_next(&self, env: &Env, window: &HistoryWindow) -> EnvParams {
        let tokens = TokenizedWindow::build(&self.cfg, std::slice::from_ref(window));
        let mut tape = Tape::new();
        let pred = self.forward(&mut tape, &tokens).expect("forward succeeds");
        let v = tape.value(pred);
        let d = self.cfg.eps_dim;
        let row = window.live_blocks() - 1;
        let out: Vec<f64> = (row * d..(row + 1) * d)
            .map(|i| v.data()[i].to_f64())
            .collect();
        match self.cfg.head_mode {
            HeadMode::InContext | HeadMode::Ed => {
                env.space.clamp(&env.space.denormalize(&out).values)
            }
            HeadMode::TuneNet => {
                let current = &window.records[row].eps;
                let shifted: Vec<f64> = current
                    .iter()
                    .zip(&out)
                    .map(|(c, r)| (c + r).clamp(-1.0, 1.0))
                    .collect();
                env.space.clamp(&env.space.denormalize(&shifted).values)
            }
        }
    }
}

/// Numeric (pre-tape) token assembly for a batch of windows with identical
/// live-block counts: stacked raw element matrices, interleave/index
/// arrays, block-end read-out rows and the per-sample causal + live-token
/// attention mask (shared across the batch).
#[derive(Debug, Clone)]
pub struct TokenizedWindow<T: Real> {
    pub eps_rows: Tensor<T>,
    pub act_rows: Tensor<T>,
    pub state_rows: Tensor<T>,
    pub interleave: Arc<Vec<usize>>,
    pub block_idx: Arc<Vec<usize>>,
    pub slot_idx: Arc<Vec<usize>>,
    pub block_ends: Arc<Vec<usize>>,
    /// Per-row attention prefix: causal and restricted to live tokens.
    pub attn_limits: Arc<Vec<usize>>,
    pub batch: usize,
    pub live_blocks: usize,
}

impl<T: Real> TokenizedWindow<T> {
    /// Lay out each window's records into the `[k * (2 + 2T)]` token
    /// stream. Records sit left-aligned at blocks `0..live`; padded blocks
    /// are excluded from attention so early-inference windows look exactly
    /// like training prefixes under the causal mask.
    pub fn build(cfg: &ModelConfig, windows: &[HistoryWindow]) -> Self {
        let batch = windows.len();
        assert!(batch >= 1, "empty batch");
        let k = cfg.window;
        let t = cfg.traj_len;
        let live = windows[0].records.len();
        for w in windows {
            assert_eq!(
                w.records.len(),
                live,
                "batched windows must share a live-block count"
            );
            assert!(w.records.len() >= 1 && w.records.len() <= k);
            for rec in &w.records {
                assert_eq!(rec.eps.len(), cfg.eps_dim, "eps dim");
                assert_eq!(rec.act.len(), cfg.act_dim, "action dim");
                assert_eq!(rec.sim.len(), t * cfg.state_dim, "sim trajectory len");
                assert_eq!(rec.real.len(), t * cfg.state_dim, "real trajectory len");
            }
        }

        let mut eps_rows = vec![T::ZERO; batch * k * cfg.eps_dim];
        let mut act_rows = vec![T::ZERO; batch * k * cfg.act_dim];
        let mut state_rows = vec![T::ZERO; batch * 2 * k * t * cfg.state_dim];
        for (w, window) in windows.iter().enumerate() {
            for (b, rec) in window.records.iter().enumerate() {
                let row = w * k + b;
                for (j, &v) in rec.eps.iter().enumerate() {
                    eps_rows[row * cfg.eps_dim + j] = T::from_f64(v);
                }
                for (j, &v) in rec.act.iter().enumerate() {
                    act_rows[row * cfg.act_dim + j] = T::from_f64(v);
                }
                let base = (w * k + b) * 2 * t * cfg.state_dim;
                for (j, &v) in rec.sim.iter().enumerate() {
                    state_rows[base + j] = T::from_f64(v);
                }
                for (j, &v) in rec.real.iter().enumerate() {
                    state_rows[base + t * cfg.state_dim + j] = T::from_f64(v);
                }
            }
        }

        // token order per block: eps, action, T sim states, T real states;
        // row offsets index the stacked [eps; act; state] projection matrix
        let block_len = cfg.block_tokens();
        let n_tok = k * block_len;
        let eps_rows_total = batch * k;
        let act_offset = eps_rows_total;
        let state_offset = 2 * eps_rows_total;
        let mut interleave = Vec::with_capacity(batch * n_tok);
        let mut block_idx = Vec::with_capacity(batch * n_tok);
        let mut slot_idx = Vec::with_capacity(batch * n_tok);
        let mut block_ends = Vec::with_capacity(batch * k);
        for w in 0..batch {
            for b in 0..k {
                interleave.push(w * k + b);
                interleave.push(act_offset + w * k + b);
                for s in 0..2 * t {
                    interleave.push(state_offset + (w * k + b) * 2 * t + s);
                }
                for s in 0..block_len {
                    block_idx.push(b);
                    slot_idx.push(s);
                }
                block_ends.push(w * n_tok + (b + 1) * block_len - 1);
            }
        }

        let live_tokens = live * block_len;
        let attn_limits: Vec<usize> = (0..n_tok).map(|i| (i + 1).min(live_tokens)).collect();

        TokenizedWindow {
            eps_rows: Tensor::new(vec![batch * k, cfg.eps_dim], eps_rows).expect("eps rows"),
            act_rows: Tensor::new(vec![batch * k, cfg.act_dim], act_rows).expect("act rows"),
            state_rows: Tensor::new(vec![batch * 2 * k * t, cfg.state_dim], state_rows)
                .expect("state rows"),
            interleave: Arc::new(interleave),
            block_idx: Arc::new(block_idx),
            slot_idx: Arc::new(slot_idx),
            block_ends: Arc::new(block_ends),
            attn_limits: Arc::new(attn_limits),
            batch,
            live_blocks: live,
        }
    }
}
