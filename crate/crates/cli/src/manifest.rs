//! Ablation manifests.
//!
//! ```toml
//! schema_version = 1
//! config = "fixture.toml"   # base run config, relative to this file
//! arms = ["item", "no_mixed_sampling", "baseline_single_head", "baseline_ce"]
//! seeds = [0, 1, 2, 3, 4]
//! jobs = 1
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use itemlab::config::{Mode, RunConfig, SCHEMA_VERSION};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    schema_version: u32,
    config: Option<PathBuf>,
    arms: Vec<Mode>,
    seeds: Vec<u64>,
    #[serde(default = "one")]
    jobs: usize,
}

fn one() -> usize {
    1
}

/// Arms crossed with seeds over one base config.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub base: RunConfig,
    pub arms: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl ExperimentManifest {
    pub fn new(base: RunConfig, arms: Vec<Mode>, seeds: Vec<u64>, jobs: usize) -> Result<Self, CliError> {
        let m = Self { base, arms, seeds, jobs };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let raw: RawManifest =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "{}: invalid schema_version: {} (supported: {SCHEMA_VERSION})",
                path.display(),
                raw.schema_version
            )));
        }
        let base = match raw.config {
            Some(p) => {
                let p = if p.is_relative() {
                    path.parent().unwrap_or(Path::new(".")).join(p)
                } else {
                    p
                };
                RunConfig::load(&p)?
            }
            None => RunConfig::default(),
        };
        Self::new(base, raw.arms, raw.seeds, raw.jobs)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.arms.is_empty() {
            return Err(CliError::config("invalid arms: empty"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("invalid seeds: empty"));
        }
        if self.arms.iter().collect::<HashSet<_>>().len() != self.arms.len() {
            return Err(CliError::config("invalid arms: duplicate arm"));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(CliError::config("invalid seeds: duplicate seed"));
        }
        if self.jobs == 0 {
            return Err(CliError::config("invalid jobs: must be >= 1"));
        }
        self.base.validate()?;
        Ok(())
    }

    /// One config per (arm, seed), arms outermost.
    pub fn expand(&self) -> Vec<RunConfig> {
        self.arms
            .iter()
            .flat_map(|&arm| self.seeds.iter().map(move |&s| self.base.with_mode(arm).with_seed(s)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_arms_by_seeds() {
        let m = ExperimentManifest::new(
            RunConfig::default(),
            vec![Mode::Item, Mode::BaselineCe, Mode::NoMixup, Mode::NoMixedSampling],
            vec![3, 4],
            1,
        )
        .unwrap();
        let runs = m.expand();
        assert_eq!(runs.len(), 8);
        assert_eq!(runs[1].run.mode, Mode::Item);
        assert_eq!(runs[1].run.seed, 4);
        assert_eq!(runs[2].run.mode, Mode::BaselineCe);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(ExperimentManifest::new(RunConfig::default(), vec![Mode::Item], vec![1, 1], 1).is_err());
        assert!(ExperimentManifest::new(RunConfig::default(), vec![Mode::Item, Mode::Item], vec![1], 1).is_err());
        assert!(ExperimentManifest::new(RunConfig::default(), vec![], vec![1], 1).is_err());
    }
}
