//! Run configuration.
//!
//! Config files are flat TOML with dotted section keys, for example
//!
//! ```toml
//! schema_version = 1
//! run.mode = "item"
//! run.seed = 7
//! data.class_sizes = [400, 310, 240, 185, 143, 111, 86, 50]
//! noise.kind = "symmetric"
//! noise.ratio = 0.4
//! select.criterion = "gmm"
//! ```
//!
//! Every key has a default except `schema_version`; unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BlobSpec, NoiseKind, NoiseSpec};
use crate::nn::{Architecture, LrSchedule};
use crate::rng::{self, Stream};
use crate::sampling::GammaSource;
use crate::selection::SelectionConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Item,
    ItemSsl,
    BaselineCe,
    BaselineSingleHead,
    NoMixedSampling,
    NoMixup,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Item,
        Mode::ItemSsl,
        Mode::BaselineCe,
        Mode::BaselineSingleHead,
        Mode::NoMixedSampling,
        Mode::NoMixup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Item => "item",
            Mode::ItemSsl => "item_ssl",
            Mode::BaselineCe => "baseline_ce",
            Mode::BaselineSingleHead => "baseline_single_head",
            Mode::NoMixedSampling => "no_mixed_sampling",
            Mode::NoMixup => "no_mixup",
        }
    }

    /// Arms that train and select with head 0 only.
    pub fn single_head(self) -> bool {
        matches!(self, Mode::BaselineCe | Mode::BaselineSingleHead)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid("run.mode", format!("unknown mode `{s}`")))
    }
}

/// How often warmup redraws the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupDraw {
    /// One head per warmup epoch.
    Epoch,
    /// One head per mini-batch, as in the selection phase.
    Iteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub seed: u64,
    /// Total epochs `T`, warmup included.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_draw: WarmupDraw,
    pub batch_size: usize,
    pub beta: f64,
    pub alpha: f64,
    pub mixup_per_batch: bool,
    /// Replaces Beta draws with a constant mixup coefficient.
    pub fixed_gamma: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Item,
            seed: 0,
            epochs: 60,
            warmup_epochs: 10,
            warmup_draw: WarmupDraw::Epoch,
            batch_size: 64,
            beta: 3.0,
            alpha: 1.0,
            mixup_per_batch: false,
            fixed_gamma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub class_sizes: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub std_dev: f64,
    pub test_per_class: usize,
    /// Blob seed; defaults to `run.seed`.
    pub seed: Option<u64>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    /// Class count for CSV sources; inferred from labels when absent.
    pub class_count: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Blobs,
            class_sizes: vec![400, 310, 240, 185, 143, 111, 86, 50],
            dim: 16,
            separation: 3.0,
            std_dev: 1.0,
            test_per_class: 200,
            seed: None,
            train_csv: None,
            test_csv: None,
            class_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub ratio: f64,
    /// Noise seed; defaults to a draw from the `noise` stream of `run.seed`.
    pub seed: Option<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            ratio: 0.4,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub trunk: Vec<usize>,
    pub experts: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            trunk: vec![64, 32],
            experts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the rate is divided by `lr_factor`; defaults to
    /// half and three quarters of `run.epochs`.
    pub lr_milestones: Option<Vec<usize>>,
    pub lr_factor: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-3,
            lr_milestones: None,
            lr_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslSection {
    /// Minimum ensemble confidence for a pseudo-label; off when absent.
    pub confidence: Option<f64>,
    /// Standard deviation of Gaussian jitter on unlabeled training rows.
    pub jitter: f64,
}

impl Default for SslSection {
    fn default() -> Self {
        Self {
            confidence: None,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub select: SelectionConfig,
    #[serde(default)]
    pub ssl: SslSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run: RunSection::default(),
            data: DataSection::default(),
            noise: NoiseSection::default(),
            net: NetSection::default(),
            optim: OptimSection::default(),
            select: SelectionConfig::default(),
            ssl: SslSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative CSV paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.train_csv, &mut cfg.data.test_csv].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("{} (supported: {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let r = &self.run;
        if r.epochs == 0 {
            return Err(invalid("run.epochs", "must be >= 1"));
        }
        if r.warmup_epochs >= r.epochs {
            return Err(invalid(
                "run.warmup_epochs",
                format!("{} must be < run.epochs ({})", r.warmup_epochs, r.epochs),
            ));
        }
        if r.batch_size < 2 {
            return Err(invalid("run.batch_size", "must be >= 2"));
        }
        if !(r.beta >= 1.0 && r.beta.is_finite()) {
            return Err(invalid("run.beta", format!("{} must be >= 1", r.beta)));
        }
        if !(r.alpha > 0.0 && r.alpha.is_finite()) {
            return Err(invalid("run.alpha", format!("{} must be > 0", r.alpha)));
        }
        if let Some(g) = r.fixed_gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(invalid("run.fixed_gamma", format!("{g} not in [0, 1]")));
            }
        }
        if self.net.experts == 0 {
            return Err(invalid("net.experts", "must be >= 1"));
        }
        if self.net.trunk.iter().any(|&w| w == 0) {
            return Err(invalid("net.trunk", "zero-width layer"));
        }
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(invalid("optim.lr", format!("{}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(invalid("optim.momentum", format!("{} not in [0, 1)", o.momentum)));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(invalid("optim.weight_decay", format!("{}", o.weight_decay)));
        }
        if !(o.lr_factor > 0.0) {
            return Err(invalid("optim.lr_factor", format!("{}", o.lr_factor)));
        }
        let s = &self.select;
        if !(s.gmm_threshold > 0.0 && s.gmm_threshold < 1.0) {
            return Err(invalid("select.gmm_threshold", format!("{} not in (0, 1)", s.gmm_threshold)));
        }
        if !(s.gmm_sigma_floor > 0.0) {
            return Err(invalid("select.gmm_sigma_floor", "must be > 0"));
        }
        if !(0.0..1.0).contains(&s.assumed_noise_rate) {
            return Err(invalid("select.assumed_noise_rate", format!("{} not in [0, 1)", s.assumed_noise_rate)));
        }
        if s.window < 2 {
            return Err(invalid("select.window", "must be >= 2"));
        }
        if !(self.ssl.jitter >= 0.0) {
            return Err(invalid("ssl.jitter", "must be >= 0"));
        }
        match self.data.source {
            DataSource::Blobs => {
                self.blob_spec().validate().map_err(|e| invalid("data", e.to_string()))?;
                if self.data.test_per_class == 0 {
                    return Err(invalid("data.test_per_class", "must be >= 1"));
                }
            }
            DataSource::Csv => {
                if self.data.train_csv.is_none() {
                    return Err(invalid("data.train_csv", "required for csv source"));
                }
                if self.data.test_csv.is_none() {
                    return Err(invalid("data.test_csv", "required for csv source"));
                }
            }
        }
        self.noise_spec().validate().map_err(|e| invalid("noise", e.to_string()))?;
        Ok(())
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            class_sizes: self.data.class_sizes.clone(),
            dim: self.data.dim,
            separation: self.data.separation,
            std_dev: self.data.std_dev,
            seed: self.data.seed.unwrap_or(self.run.seed),
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        use rand::RngCore;
        NoiseSpec {
            kind: self.noise.kind,
            ratio: self.noise.ratio,
            seed: self
                .noise
                .seed
                .unwrap_or_else(|| rng::stream(self.run.seed, Stream::Noise).next_u64()),
        }
    }

    pub fn architecture(&self, input_dim: usize, class_count: usize) -> Architecture {
        Architecture {
            input_dim,
            trunk_widths: self.net.trunk.clone(),
            class_count,
            experts: self.net.experts,
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        let milestones = self.optim.lr_milestones.clone().unwrap_or_else(|| {
            let t = self.run.epochs;
            vec![t / 2, 3 * t / 4]
        });
        LrSchedule::step_decay(&milestones, self.optim.lr_factor)
    }

    pub fn gamma_source(&self) -> GammaSource {
        match self.run.fixed_gamma {
            Some(g) => GammaSource::Fixed(g),
            None => GammaSource::Beta {
                alpha: self.run.alpha,
                per_batch: self.run.mixup_per_batch,
            },
        }
    }

    /// Copy with a different mode.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut c = self.clone();
        c.run.mode = mode;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.run.seed = seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::CriterionKind;

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::from_toml_str(
            "schema_version = 1\nrun.mode = \"no_mixup\"\nrun.seed = 3\nselect.criterion = \"small_loss\"\nnet.trunk = [8]\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.run.mode, Mode::NoMixup);
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.select.criterion, CriterionKind::SmallLoss);
        assert_eq!(cfg.net.trunk, vec![8]);
        assert_eq!(cfg.run.beta, 3.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string(), "x").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_criterion_names_field() {
        let e = RunConfig::from_toml_str("schema_version = 1\nselect.criterion = \"median\"\n", "cfg.toml")
            .unwrap_err()
            .to_string();
        assert!(e.contains("criterion") && e.contains("median"), "{e}");
    }

    #[test]
    fn validation_errors() {
        let e = RunConfig::from_toml_str("schema_version = 2\n", "c").unwrap_err().to_string();
        assert!(e.contains("schema_version"));
        let e = RunConfig::from_toml_str("schema_version = 1\nrun.epochs = 5\nrun.warmup_epochs = 5\n", "c")
            .unwrap_err()
            .to_string();
        assert!(e.contains("warmup_epochs"));
        let e = RunConfig::from_toml_str("schema_version = 1\nrun.batch_size = 1\n", "c").unwrap_err().to_string();
        assert!(e.contains("batch_size"));
        let e = RunConfig::from_toml_str("schema_version = 1\nrun.bogus = 1\n", "c").unwrap_err().to_string();
        assert!(e.contains("bogus"));
        assert!(RunConfig::from_toml_str("run.seed = 1\n", "c").is_err());
    }

    #[test]
    fn default_schedule_scales_with_epochs() {
        let cfg = RunConfig::default();
        let s = cfg.lr_schedule();
        assert_eq!(s.steps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![30, 45]);
    }
}
