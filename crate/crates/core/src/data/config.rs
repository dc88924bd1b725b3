use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Weights of the five training objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub tau: f64,
    pub eikonal: f64,
    pub zero: f64,
    pub entropy: f64,
    pub free: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 1.0,
            eikonal: 0.1,
            zero: 0.01,
            entropy: 0.001,
            free: 0.01,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.tau, self.eikonal, self.zero, self.entropy, self.free]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// How per-bin weights are formed along a radial ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_t = T_t (1 - exp(-sigma_t dr))`.
    PerBin,
    /// Running sum of the per-bin weights from the first bin up to `t`.
    Cumulative,
}

/// Normalizer of the zero-distance loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLossNorm {
    /// Divide by `M * B * N_z`.
    AllEntries,
    /// Divide by the number of masked entries times `N_z`.
    MaskedEntries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub sdf_layers: usize,
    pub sdf_width: usize,
    pub reflectance_layers: usize,
    pub reflectance_width: usize,
    pub background_layers: usize,
    pub background_width: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    pub l_time: usize,
    /// Sharpness of the softplus hidden activations.
    pub softplus_beta: f64,
    /// Radius of the initial sphere, as a fraction of the scene half extent.
    pub init_radius: f64,
    pub alpha_init: f64,
    /// `alpha = exp(alpha_scale * a)` for the trainable scalar `a`.
    pub alpha_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            sdf_layers: 4,
            sdf_width: 64,
            reflectance_layers: 3,
            reflectance_width: 64,
            background_layers: 3,
            background_width: 32,
            l_pos: 6,
            l_dir: 4,
            l_time: 4,
            softplus_beta: 100.0,
            init_radius: 0.5,
            alpha_init: 0.5,
            alpha_scale: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub theta: usize,
    pub phi: usize,
    /// Randomly offset the angular grid each iteration.
    pub jitter: bool,
    pub n_z: usize,
    pub eikonal_points: usize,
    pub free_points: usize,
    pub fd_step: f64,
    /// Render only bins within this many bins of the measured support; `None`
    /// renders every bin.
    pub bin_margin: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            theta: 64,
            phi: 64,
            jitter: true,
            n_z: 16,
            eikonal_points: 4096,
            free_points: 4096,
            fd_step: 1e-3,
            bin_margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 10.0,
        }
    }
}

/// Training configuration. Serialized as TOML; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub precision: Precision,
    /// Mask threshold as a fraction of the global transient maximum.
    pub kappa: f64,
    pub background: bool,
    pub weight_mode: WeightMode,
    pub zero_loss_norm: ZeroLossNorm,
    pub loss: LossWeights,
    pub network: NetworkConfig,
    pub sampling: SamplingConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 20000,
            batch_size: 8,
            checkpoint_every: 1000,
            precision: Precision::F32,
            kappa: 0.05,
            background: true,
            weight_mode: WeightMode::PerBin,
            zero_loss_norm: ZeroLossNorm::AllEntries,
            loss: LossWeights::default(),
            network: NetworkConfig::default(),
            sampling: SamplingConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.loss.as_array().iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("loss weights must be finite and >= 0");
        }
        let s = &self.sampling;
        if s.theta == 0 || s.phi == 0 || s.n_z == 0 || s.eikonal_points == 0 || s.free_points == 0 {
            return bad("sample counts must be >= 1");
        }
        if !(s.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad("kappa must lie in (0, 1)");
        }
        let n = &self.network;
        if n.sdf_layers == 0 || n.reflectance_layers == 0 || n.background_layers == 0 {
            return bad("networks need at least one hidden layer");
        }
        if n.sdf_width == 0 || n.reflectance_width == 0 || n.background_width == 0 {
            return bad("layer widths must be >= 1");
        }
        if !(n.alpha_init > 0.0 && n.alpha_scale > 0.0 && n.softplus_beta > 0.0) {
            return bad("alpha_init, alpha_scale and softplus_beta must be positive");
        }
        if !(n.init_radius > 0.0 && n.init_radius < 1.0) {
            return bad("init_radius must lie in (0, 1)");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return bad("optimizer hyperparameters out of range");
        }
        if !(o.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}
