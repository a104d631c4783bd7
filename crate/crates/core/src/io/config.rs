//! The experiment config: one TOML file declares an experiment end to end
//! (environment, generation, model, training, evaluation, paths, seed), so
//! any published result is regenerable from config + seed alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DataMode, GenConfig};
use crate::env::{Env, EnvKind, ParamSpace};
use crate::harness::{EvalConfig, Method, NoiseKind, NoiseSpec};
use crate::model::{HeadMode, ModelConfig, TrainConfig};
use crate::policy::{PlannerConfig, TaskPolicy};

use super::{IoError, IoResult};

/// Architecture settings; the environment supplies the data dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    /// Context window (iterations) for the history head; the one-shot
    /// heads always run with window 1.
    pub window: usize,
    pub layernorm_eps: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            d_model: 64,
            heads: 4,
            layers: 3,
            mlp_ratio: 4,
            window: 4,
            layernorm_eps: 1e-5,
        }
    }
}

impl ModelSettings {
    /// Bind the architecture to an environment and head.
    pub fn bind(&self, env: &Env, head: HeadMode) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            mlp_ratio: self.mlp_ratio,
            window: match head {
                HeadMode::InContext => self.window,
                HeadMode::Ed | HeadMode::TuneNet => 1,
            },
            traj_len: env.traj_len(),
            eps_dim: env.space.dim(),
            act_dim: env.action_space.dim(),
            state_dim: env.state_dim(),
            head_mode: head,
            layernorm_eps: self.layernorm_eps,
        }
    }
}

/// Dataset generation settings: the search parameters plus size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSettings {
    pub transitions: usize,
    pub alpha: f64,
    pub explore: f64,
    pub count: usize,
    pub expert_count: usize,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            transitions: 7,
            alpha: 2.0,
            explore: 0.0,
            count: 10_000,
            expert_count: 10_000,
        }
    }
}

impl GenSettings {
    pub fn gen_config(&self, base_seed: u64) -> GenConfig {
        GenConfig {
            transitions: self.transitions,
            alpha: self.alpha,
            explore: self.explore,
            base_seed,
        }
    }
}

/// Evaluation settings in config form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub pairs: u32,
    pub seeds: u32,
    pub max_iters: u32,
    pub methods: Vec<Method>,
    pub noise: NoiseKind,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            pairs: 100,
            seeds: 3,
            max_iters: 30,
            methods: vec![Method::InContext, Method::Dr],
            noise: NoiseKind::None,
        }
    }
}

impl EvalSettings {
    pub fn eval_config(&self, base_seed: u64) -> EvalConfig {
        let noise = match self.noise {
            NoiseKind::None => NoiseSpec::default(),
            NoiseKind::Label => NoiseSpec::label(),
            NoiseKind::Scale => NoiseSpec::scale(),
        };
        EvalConfig {
            pairs: self.pairs,
            seeds: self.seeds,
            max_iters: self.max_iters,
            methods: self.methods.clone(),
            noise,
            base_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub run_dir: PathBuf,
    /// Dataset directory; defaults to `<run_dir>/data`. Sweeps over the
    /// context window point members at one shared dataset through this.
    pub data_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            run_dir: PathBuf::from("runs/default"),
            data_dir: None,
        }
    }
}

/// The full experiment declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvKind,
    /// Optional override of the tunable-parameter box.
    pub space: Option<ParamSpace>,
    pub base_seed: u64,
    pub gen: GenSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub planner: PlannerConfig,
    pub eval: EvalSettings,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            env: EnvKind::Scoop,
            space: None,
            base_seed: 0,
            gen: GenSettings::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            planner: PlannerConfig::default(),
            eval: EvalSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> IoResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_err(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| IoError::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|msg| IoError::Format {
            path: path.display().to_string(),
            msg,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.gen.gen_config(self.base_seed).validate()?;
        if self.gen.count < 1 {
            return Err("gen.count must be >= 1".into());
        }
        let env = self.build_env();
        self.model
            .bind(&env, crate::model::HeadMode::InContext)
            .validate()?;
        self.eval.eval_config(self.base_seed).validate()?;
        if self.train.steps < 1 || self.train.batch < 1 {
            return Err("train.steps and train.batch must be >= 1".into());
        }
        if self.paths.run_dir.as_os_str().is_empty() {
            return Err("paths.run_dir must be set".into());
        }
        Ok(())
    }

    pub fn build_env(&self) -> Env {
        let mut env = Env::new(self.env);
        if let Some(space) = &self.space {
            env.space = space.clone();
        }
        env
    }

    pub fn policy(&self) -> TaskPolicy {
        TaskPolicy {
            planner: self.planner.clone(),
        }
    }

    pub fn dataset_path(&self, mode: DataMode) -> PathBuf {
        let dir = self
            .paths
            .data_dir
            .clone()
            .unwrap_or_else(|| self.paths.run_dir.join("data"));
        dir.join(format!(
            "{}_{}_L{}_n{}_seed{}.jsonl",
            self.env.name(),
            mode.name(),
            self.gen.transitions,
            if mode == DataMode::Expert {
                self.gen.expert_count
            } else {
                self.gen.count
            },
            self.base_seed
        ))
    }

    pub fn checkpoint_path(&self, head: HeadMode) -> PathBuf {
        self.paths
            .run_dir
            .join(format!("ckpt/{}_{}.ckpt", self.env.name(), head.name()))
    }

    fn noise_tag(&self) -> &'static str {
        match self.eval.noise {
            NoiseKind::None => "",
            NoiseKind::Label => "_label-noise",
            NoiseKind::Scale => "_scale-noise",
        }
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.paths
            .run_dir
            .join(format!("out/metrics{}.csv", self.noise_tag()))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.paths
            .run_dir
            .join(format!("out/summary{}.csv", self.noise_tag()))
    }

    pub fn loss_log_path(&self, head: HeadMode) -> PathBuf {
        self.paths
            .run_dir
            .join(format!("ckpt/{}_{}_loss.log", self.env.name(), head.name()))
    }
}
