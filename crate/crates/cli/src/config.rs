use std::path::Path;

use modhealth_core::curves::SmoothingConfig;
use modhealth_core::features::FeatureConfig;
use modhealth_core::pipeline::RunConfig;
use modhealth_core::simulate::FleetConfig;
use modhealth_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub smoothing: SmoothingConfig,
    pub features: FeatureConfig,
}

/// Everything a stage may need; each section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Overrides every seed below when set.
    pub seed: Option<u64>,
    pub simulate: FleetConfig,
    pub extract: ExtractConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config: Config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Config::default(),
        };
        if let Some(s) = seed.or(config.seed) {
            config.seed = Some(s);
            config.simulate.seed = s;
            config.run.seed = s;
            config.run.selection.seed = s;
        }
        config.simulate.validate()?;
        config.run.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn nested_sections_parse() {
        let c: Config = toml::from_str(
            r#"
            [simulate]
            n_modules = 5
            c_rates = [0.5]
            [simulate.sampler]
            kind = "uniform"
            low = 0.8
            high = 0.95
            [run]
            task = "m_soh"
            kernel_widths = [1.0]
            [run.selection]
            threshold = 0.9
            "#,
        )
        .unwrap();
        assert_eq!(c.simulate.n_modules, 5);
        assert_eq!(c.run.task, modhealth_core::metrics::Task::MSoh);
        assert_eq!(c.run.selection.threshold, 0.9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
    }
}
