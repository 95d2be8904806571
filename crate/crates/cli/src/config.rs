use std::path::Path;

use oscphase::pipeline::ExperimentConfig;
use oscphase::{Error, Result};

/// Reads the TOML config (or defaults) and applies the seed override. Stage
/// seeds are always derived from the global seed.
pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            parse(&text).map_err(|m| Error::InvalidConfig(format!("{}: {m}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let seed = seed.unwrap_or(base.seed);
    let cfg = base.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn parse(text: &str) -> std::result::Result<ExperimentConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}
