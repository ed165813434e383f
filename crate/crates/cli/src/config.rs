//! Run configuration: a TOML file with one section per module. Every flag
//! mirrors a key and wins over the file.

use std::path::{Path, PathBuf};

use fixsmith::corpus::{CorpusConfig, SeedConfig};
use fixsmith::decode::{DecodeMode, DecodePlan};
use fixsmith::lang::VocabConfig;
use fixsmith::net::ModelConfig;
use fixsmith::objective::{AdamConfig, DistanceMode, ObjectiveKind, SamplerConfig};
use fixsmith::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Held-out fold.
    pub fold: usize,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<PathBuf>,
    pub trace: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, fold: 0, out: PathBuf::from("out"), corpus: None, checkpoint: None, inputs: None, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub n_programs: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_lines: usize,
}

impl Default for SeedsSection {
    fn default() -> Self {
        let s = SeedConfig::default();
        SeedsSection { n_programs: 200, min_tokens: s.min_tokens, max_tokens: s.max_tokens, max_lines: s.max_lines }
    }
}

impl SeedsSection {
    pub fn seed_config(&self) -> SeedConfig {
        SeedConfig { min_tokens: self.min_tokens, max_tokens: self.max_tokens, max_lines: self.max_lines }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
    pub copy_attention: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        ModelSection {
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            n_layers: d.n_layers,
            latent_dim: d.latent_dim,
            dropout: d.dropout,
            max_decode_len: d.max_decode_len,
            copy_attention: d.copy_attention,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            latent_dim: self.latent_dim,
            dropout: self.dropout,
            max_decode_len: self.max_decode_len,
            copy_attention: self.copy_attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: ObjectiveKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_stride: usize,
    pub kl_warmup_steps: u64,
    pub resume: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            objective: t.objective,
            epochs: t.epochs,
            batch_size: t.batch_size,
            val_stride: t.val_stride,
            kl_warmup_steps: t.kl_warmup_steps,
            resume: false,
        }
    }
}

/// Training-time sampling; the inference sample count lives in `[decode]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub t_train: usize,
    pub lambda_div: f64,
    pub delta_clip: f64,
    pub distance: DistanceMode,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection { t_train: s.t_train, lambda_div: s.lambda_div, delta_clip: s.delta_clip, distance: s.distance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairSection {
    pub max_iter: usize,
}

impl Default for RepairSection {
    fn default() -> Self {
        RepairSection { max_iter: fixsmith::repair::DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Sample counts of the sampling sweep.
    pub sweep: Vec<usize>,
    /// Draw every sweep point separately instead of reusing prefixes of one draw.
    pub independent_draws: bool,
    /// Evaluate only the first `limit` programs of the fold; 0 = all.
    pub limit: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { sweep: vec![1, 10, 100], independent_draws: false, limit: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub vocab: VocabConfig,
    pub seeds: SeedsSection,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub adam: AdamConfig,
    pub decode: DecodePlan,
    pub repair: RepairSection,
    pub eval: EvalSection,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fold: Option<usize>,
    pub objective: Option<ObjectiveKind>,
    pub mode: Option<DecodeMode>,
    pub samples: Option<usize>,
    pub max_iter: Option<usize>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Option<PathBuf>,
    pub trace: bool,
    pub epochs: Option<usize>,
    pub resume: bool,
    pub independent_draws: bool,
    pub limit: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                RunConfig::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.fold {
            self.run.fold = v;
        }
        if let Some(v) = o.objective {
            self.train.objective = v;
        }
        if let Some(v) = o.mode {
            self.decode.mode = v;
        }
        if let Some(v) = o.samples {
            self.decode.t_infer = v;
        }
        if let Some(v) = o.max_iter {
            self.repair.max_iter = v;
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = &o.corpus {
            self.run.corpus = Some(v.clone());
        }
        if let Some(v) = &o.checkpoint {
            self.run.checkpoint = Some(v.clone());
        }
        if let Some(v) = &o.inputs {
            self.run.inputs = Some(v.clone());
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.limit {
            self.eval.limit = v;
        }
        self.run.trace |= o.trace;
        self.train.resume |= o.resume;
        self.eval.independent_draws |= o.independent_draws;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            objective: self.train.objective,
            sampler: self.sampler_config(),
            adam: self.adam,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            val_stride: self.train.val_stride,
            kl_warmup_steps: self.train.kl_warmup_steps,
            seed: self.run.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            t_train: self.sampler.t_train,
            t_infer: self.decode.t_infer,
            lambda_div: self.sampler.lambda_div,
            delta_clip: self.sampler.delta_clip,
            distance: self.sampler.distance,
        }
    }

    pub fn validate_fold(&self) -> Result<(), CliError> {
        if self.run.fold >= fixsmith::corpus::N_FOLDS {
            return Err(CliError::Config(format!("fold must be below {}, got {}", fixsmith::corpus::N_FOLDS, self.run.fold)));
        }
        Ok(())
    }

    pub fn validate_inference(&self) -> Result<(), CliError> {
        self.decode.validate().map_err(CliError::Config)?;
        if self.decode.t_infer == 0 {
            return Err(CliError::Config("samples (decode.t_infer) must be ≥ 1".into()));
        }
        if self.repair.max_iter == 0 {
            return Err(CliError::Config("max_iter must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::write(dir.join("config.toml"), self.to_toml()).map_err(CliError::io(dir))
    }
}
