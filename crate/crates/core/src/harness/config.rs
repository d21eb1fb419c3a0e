//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{DEFAULT_GUIDANCE, DEFAULT_SAMPLER_STEPS};
use crate::kosc::{TaskVariant, DEFAULT_N_SAMPLES};
use crate::nn::layers::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FFN-MSE")]
    FfnMse,
    #[serde(rename = "FFN-Sort")]
    FfnSort,
    #[serde(rename = "FFN-Chamfer")]
    FfnChamfer,
    #[serde(rename = "CNF-Equivariant")]
    CnfEquivariant,
    #[serde(rename = "CNF-Param2Tok")]
    CnfParam2Tok,
    #[serde(rename = "CNF-MLP")]
    CnfMlp,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::FfnMse,
        ModelKind::FfnSort,
        ModelKind::FfnChamfer,
        ModelKind::CnfEquivariant,
        ModelKind::CnfParam2Tok,
        ModelKind::CnfMlp,
        ModelKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FfnMse => "FFN-MSE",
            ModelKind::FfnSort => "FFN-Sort",
            ModelKind::FfnChamfer => "FFN-Chamfer",
            ModelKind::CnfEquivariant => "CNF-Equivariant",
            ModelKind::CnfParam2Tok => "CNF-Param2Tok",
            ModelKind::CnfMlp => "CNF-MLP",
            ModelKind::Random => "Random",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(
            self,
            ModelKind::CnfEquivariant | ModelKind::CnfParam2Tok | ModelKind::CnfMlp
        )
    }

    pub fn is_regression(self) -> bool {
        matches!(self, ModelKind::FfnMse | ModelKind::FfnSort | ModelKind::FfnChamfer)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown model `{s}`")))
    }
}

/// Network widths and depths. The default is the full-size roster; smaller
/// settings exist for tests and quick runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Samples per rendered signal, which fixes the encoder input width.
    pub n_samples: usize,
    pub encoder_channels: usize,
    pub encoder_blocks: usize,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
    pub embed_dim: usize,
    pub token_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub mlp_dim: usize,
    pub mlp_hidden: usize,
    pub mlp_blocks: usize,
    pub head_width: usize,
    pub head_blocks: usize,
    pub p2t_activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_samples: DEFAULT_N_SAMPLES,
            encoder_channels: 24,
            encoder_blocks: 4,
            encoder_kernel: 5,
            encoder_stride: 3,
            embed_dim: 128,
            token_dim: 128,
            layers: 5,
            heads: 4,
            ffn_hidden: 256,
            mlp_dim: 192,
            mlp_hidden: 384,
            mlp_blocks: 7,
            head_width: 384,
            head_blocks: 4,
            p2t_activation: Activation::Gelu,
        }
    }
}

impl ArchConfig {
    /// Small networks (width 8, two layers) on 64-sample signals.
    pub fn toy() -> Self {
        ArchConfig {
            n_samples: 64,
            encoder_channels: 2,
            encoder_blocks: 2,
            encoder_kernel: 5,
            encoder_stride: 3,
            embed_dim: 8,
            token_dim: 8,
            layers: 2,
            heads: 2,
            ffn_hidden: 16,
            mlp_dim: 8,
            mlp_hidden: 16,
            mlp_blocks: 2,
            head_width: 8,
            head_blocks: 2,
            p2t_activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_samples", self.n_samples),
            ("encoder_channels", self.encoder_channels),
            ("encoder_blocks", self.encoder_blocks),
            ("encoder_kernel", self.encoder_kernel),
            ("encoder_stride", self.encoder_stride),
            ("embed_dim", self.embed_dim),
            ("token_dim", self.token_dim),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("mlp_dim", self.mlp_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("head_width", self.head_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("arch.{name} must be positive")));
        }
        if !self.token_dim.is_multiple_of(self.heads) {
            return Err(invalid("arch.token_dim must be divisible by arch.heads"));
        }
        if self.encoder_kernel.is_multiple_of(2) {
            return Err(invalid("arch.encoder_kernel must be odd"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub k: usize,
    pub task: TaskVariant,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub sampler_steps: usize,
    pub guidance: f64,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Steps between training-loss log entries.
    pub log_every: u64,
    /// Steps between validation passes; 0 disables them.
    pub val_every: u64,
    /// Test items scored by each validation pass.
    pub val_items: usize,
    pub arch: ArchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::CnfEquivariant,
            k: 4,
            task: TaskVariant::Symmetric,
            steps: 20_000,
            batch_size: 128,
            lr: 1e-4,
            grad_clip: 1.0,
            seed: 0,
            sampler_steps: DEFAULT_SAMPLER_STEPS,
            guidance: DEFAULT_GUIDANCE,
            train_data: None,
            test_data: None,
            log_every: 100,
            val_every: 0,
            val_items: 64,
            arch: ArchConfig::default(),
        }
    }
}

/// Default dataset sizes for the standard training budget.
pub const DEFAULT_TRAIN_COUNT: usize = 100_000;
pub const DEFAULT_TEST_COUNT: usize = 5_000;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn param_dim(&self) -> usize {
        self.task.param_dim(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.model == ModelKind::FfnSort && self.task == TaskVariant::Asymmetric {
            return Err(invalid("FFN-Sort is not defined for the asymmetric task"));
        }
        if self.model != ModelKind::Random {
            if self.batch_size == 0 {
                return Err(invalid("batch_size must be at least 1"));
            }
            if !(self.lr.is_finite() && self.lr > 0.0) {
                return Err(invalid("lr must be positive"));
            }
            if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
                return Err(invalid("grad_clip must be positive"));
            }
        }
        if self.model.is_flow() {
            if self.sampler_steps == 0 {
                return Err(invalid("sampler_steps must be at least 1"));
            }
            if !self.guidance.is_finite() {
                return Err(invalid("guidance must be finite"));
            }
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be at least 1"));
        }
        self.arch.validate()
    }
}
