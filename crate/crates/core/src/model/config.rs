use serde::{Deserialize, Serialize};

/// What the read-out head emits and which training data it expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    /// Next-iteration parameters from a multi-iteration history window
    /// (trained on search sequences).
    #[serde(rename = "incontext")]
    InContext,
    /// Target parameters directly from a single iteration (expert pairs,
    /// window size 1): the expert-distillation baseline.
    #[serde(rename = "ed")]
    Ed,
    /// Residual update added to the current parameters (expert pairs,
    /// window size 1): the TuneNet-style baseline.
    #[serde(rename = "tunenet")]
    TuneNet,
}

impl HeadMode {
    pub fn name(&self) -> &'static str {
        match self {
            HeadMode::InContext => "incontext",
            HeadMode::Ed => "ed",
            HeadMode::TuneNet => "tunenet",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incontext" => Ok(HeadMode::InContext),
            "ed" => Ok(HeadMode::Ed),
            "tunenet" => Ok(HeadMode::TuneNet),
            other => Err(format!("unknown head mode '{other}'")),
        }
    }
}

/// Architecture and token-layout settings. One iteration block holds
/// `2 + 2 * traj_len` tokens: parameter, action, the simulated states and
/// the target-environment states; a window holds `window` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    /// Context window in iterations (k).
    pub window: usize,
    /// States per trajectory (T), environment-dependent.
    pub traj_len: usize,
    pub eps_dim: usize,
    pub act_dim: usize,
    pub state_dim: usize,
    pub head_mode: HeadMode,
    pub layernorm_eps: f64,
}

impl ModelConfig {
    /// Desk-scale defaults; trajectory and dimension fields come from the
    /// environment.
    pub fn new(
        head_mode: HeadMode,
        window: usize,
        traj_len: usize,
        eps_dim: usize,
        act_dim: usize,
        state_dim: usize,
    ) -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            layers: 3,
            mlp_ratio: 4,
            window,
            traj_len,
            eps_dim,
            act_dim,
            state_dim,
            head_mode,
            layernorm_eps: 1e-5,
        }
    }

    pub fn block_tokens(&self) -> usize {
        2 + 2 * self.traj_len
    }

    pub fn window_tokens(&self) -> usize {
        self.window * self.block_tokens()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model % self.heads != 0 {
            return Err(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.window < 1 {
            return Err("window must be >= 1".into());
        }
        if matches!(self.head_mode, HeadMode::Ed | HeadMode::TuneNet) && self.window != 1 {
            return Err(format!(
                "head mode {} requires window = 1, got {}",
                self.head_mode.name(),
                self.window
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts_match_the_block_layout() {
        // scoop: T = 1, k = 4 -> 16 tokens
        let cfg = ModelConfig::new(HeadMode::InContext, 4, 1, 1, 1, 1);
        assert_eq!(cfg.window_tokens(), 16);
        // hockey: T = 32, k = 4 -> 264 tokens
        let cfg = ModelConfig::new(HeadMode::InContext, 4, 32, 5, 2, 2);
        assert_eq!(cfg.block_tokens(), 66);
        assert_eq!(cfg.window_tokens(), 264);
    }

    #[test]
    fn one_shot_heads_require_window_one() {
        let cfg = ModelConfig::new(HeadMode::Ed, 4, 1, 1, 1, 1);
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig::new(HeadMode::TuneNet, 1, 1, 1, 1, 1);
        assert!(cfg.validate().is_ok());
    }
}
