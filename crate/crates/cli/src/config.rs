//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/bs"
//!
//! [model]
//! T = 61
//! d_Z = 1
//! hidden = 32
//! flow_layers = 4
//! beta = 0.1
//! output = "exp"           # identity | exp (positive outputs for price data)
//!
//! [train]
//! lr = 0.003
//! epochs = 100
//! lr_final_frac = 0.05     # cosine decay to 5% of lr
//!
//! [data]
//! source = "bs"            # bs | heston | pdv4 | path to a CSV file
//! normalization = "divide_by_start"
//!
//! [eval]
//! metrics = ["swd", "mmd", "sigmmd", "saw"]
//! ```
//!
//! Every field has a default. `TCVAE_SEED` and `TCVAE_OUT_DIR` override the
//! file; command-line flags override both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcvae::flow::FlowConfig;
use tcvae::simulators::{BSParams, HestonParams, PDV4Params};
use tcvae::tcvae::{ModelConfig, OutputLink, TrainConfig, VolCondition};
use tcvae::NormScheme;

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;
pub const ENV_SEED: &str = "TCVAE_SEED";
pub const ENV_OUT_DIR: &str = "TCVAE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub simulate: SimulateSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            simulate: SimulateSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    #[serde(rename = "d_Z")]
    pub d_z: usize,
    pub hidden: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub beta: f64,
    /// 1 trains on the historical-volatility condition; 0 is unconditional.
    pub cond_dim: usize,
    pub cond_embed: usize,
    /// `identity` or `exp`; `exp` keeps generated prices positive.
    pub output: OutputLink,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d: m.d,
            t_len: m.t_len,
            d_z: m.d_z,
            hidden: m.hidden,
            flow_layers: m.flow.n_layers,
            flow_hidden: m.flow.hidden,
            beta: m.beta,
            cond_dim: 0,
            cond_embed: m.cond_embed,
            output: m.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Defaults to the top-level seed.
    pub seed: Option<u64>,
    pub beta_warmup: f64,
    pub grad_clip: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_final_frac: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            seed: None,
            beta_warmup: t.beta_warmup,
            grad_clip: t.grad_clip,
            lr_final_frac: t.lr_final_frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    DivideByStart,
    Ball,
}

impl From<Normalization> for NormScheme {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::None => NormScheme::None,
            Normalization::DivideByStart => NormScheme::DivideByStart,
            Normalization::Ball => NormScheme::AffineToBall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Wide layout, one path per row.
    #[default]
    Paths,
    /// One price column, cut into windows.
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Simulator name or CSV file.
    pub source: String,
    pub format: DataFormat,
    pub column: String,
    pub normalization: Normalization,
    /// Window length for series data; defaults to `model.T`.
    pub window: Option<usize>,
    pub stride: usize,
    /// Years per step of file data.
    pub dt: f64,
    pub n_paths: usize,
    pub condition: VolCondition,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "bs".into(),
            format: DataFormat::Paths,
            column: "close".into(),
            normalization: Normalization::DivideByStart,
            window: None,
            stride: 1,
            dt: 1.0 / 12.0,
            n_paths: 1000,
            condition: VolCondition::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub model: String,
    pub n_paths: usize,
    pub bs: BSParams,
    pub heston: HestonParams,
    pub pdv4: PDV4Params,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            model: "bs".into(),
            n_paths: 1000,
            bs: BSParams::default(),
            heston: HestonParams::default(),
            pdv4: PDV4Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<String>,
    pub sw_projections: usize,
    /// Gaussian kernel bandwidth; the pooled median distance when absent.
    pub mmd_bandwidth: Option<f64>,
    pub sig_level: usize,
    pub saw_len: usize,
    pub saw_slices: usize,
    pub saw_samples: usize,
    /// Clusters per time in the adapted empirical measure; `⌈√n⌉` when absent.
    pub saw_clusters: Option<usize>,
    pub max_lag: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: METRICS.iter().map(|s| s.to_string()).collect(),
            sw_projections: 100,
            mmd_bandwidth: None,
            sig_level: 4,
            saw_len: 5,
            saw_slices: 100,
            saw_samples: 500,
            saw_clusters: None,
            max_lag: 20,
        }
    }
}

pub const METRICS: [&str; 4] = ["swd", "mmd", "sigmmd", "saw"];
pub const SIMULATORS: [&str; 3] = ["bs", "heston", "pdv4"];

impl Config {
    /// Reads a config file, or the defaults when `path` is `None`, then applies
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Version(format!("config version {}, this build reads {CONFIG_VERSION}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> CliResult<()> {
        if let Some(s) = get(ENV_SEED) {
            self.seed = s.trim().parse().map_err(|_| CliError::Usage(format!("{ENV_SEED}=`{s}` is not an integer")))?;
        }
        if let Some(d) = get(ENV_OUT_DIR) {
            self.out_dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn train_seed(&self) -> u64 {
        self.train.seed.unwrap_or(self.seed)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d: m.d,
            t_len: m.t_len,
            d_z: m.d_z,
            hidden: m.hidden,
            flow: FlowConfig { n_layers: m.flow_layers, hidden: m.flow_hidden, ..FlowConfig::default() },
            beta: m.beta,
            cond_dim: m.cond_dim,
            cond_embed: m.cond_embed,
            output: m.output,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            seed: self.train_seed(),
            beta_warmup: t.beta_warmup,
            grad_clip: t.grad_clip,
            lr_final_frac: t.lr_final_frac,
        }
    }

    /// True when `data.source` names a simulator rather than a file.
    pub fn data_is_simulated(&self) -> bool {
        SIMULATORS.contains(&self.data.source.as_str())
    }

    /// Range checks plus existence of referenced files.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        let m = &self.model;
        if m.d == 0 || m.t_len == 0 || m.d_z == 0 || m.hidden == 0 {
            return bad("model.d, model.T, model.d_Z and model.hidden must be >= 1".into());
        }
        if !(m.beta >= 0.0) {
            return bad(format!("model.beta must be >= 0, got {}", m.beta));
        }
        if m.cond_dim > 1 {
            return bad("model.cond_dim must be 0 or 1".into());
        }
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch == 0 {
            return bad("train.lr must be > 0 and train.batch >= 1".into());
        }
        if !(0.0..=1.0).contains(&t.beta_warmup) || !(t.grad_clip >= 0.0) {
            return bad("train.beta_warmup must lie in [0, 1] and train.grad_clip >= 0".into());
        }
        if !(t.lr_final_frac > 0.0 && t.lr_final_frac <= 1.0) {
            return bad("train.lr_final_frac must lie in (0, 1]".into());
        }
        let d = &self.data;
        if !(d.dt > 0.0) || d.stride == 0 || d.window == Some(0) {
            return bad("data.dt must be > 0 and data.stride, data.window >= 1".into());
        }
        if !self.data_is_simulated() && !Path::new(&d.source).is_file() {
            return bad(format!("data file `{}` does not exist", d.source));
        }
        if !SIMULATORS.contains(&self.simulate.model.as_str()) {
            return bad(format!("unknown simulator `{}` (expected one of {})", self.simulate.model, SIMULATORS.join(", ")));
        }
        let e = &self.eval;
        if let Some(bad_m) = e.metrics.iter().find(|s| !METRICS.contains(&s.as_str())) {
            return bad(format!("unknown metric `{bad_m}` (expected a subset of {})", METRICS.join(",")));
        }
        if e.sw_projections == 0 || e.sig_level == 0 || e.saw_len == 0 || e.saw_slices == 0 || e.saw_samples == 0 {
            return bad("eval counts must be >= 1".into());
        }
        if e.mmd_bandwidth.is_some_and(|h| !(h > 0.0)) || e.saw_clusters == Some(0) {
            return bad("eval.mmd_bandwidth must be > 0 and eval.saw_clusters >= 1".into());
        }
        self.model_config().validate()?;
        Ok(())
    }
}
