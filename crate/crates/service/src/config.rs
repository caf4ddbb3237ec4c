//! Pipeline configuration files.
//!
//! A file ending in `.toml` is read as TOML, anything else as JSON. Keys
//! are the camelCase field names of [`PipelineConfig`]; missing keys keep
//! their defaults.

use std::path::{Path, PathBuf};

use maskforge::PipelineConfig;

use crate::error::{Result, ServiceError};

/// Environment variable naming a config file.
pub const CONFIG_ENV: &str = "MASKFORGE_CONFIG";

pub fn load_config_file(path: &Path) -> Result<PipelineConfig> {
    let fail = |reason: String| ServiceError::Config {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| fail(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?
    };
    cfg.validate().map_err(|e| fail(e.to_string()))?;
    Ok(cfg)
}

/// The first of: `explicit`, `$MASKFORGE_CONFIG`, the workspace's saved
/// `config.json`, the defaults.
pub fn resolve_config(explicit: Option<&Path>, workspace: Option<&Path>) -> Result<PipelineConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    if let Some(path) = explicit.map(Path::to_path_buf).or(env) {
        return load_config_file(&path);
    }
    if let Some(saved) = workspace.map(|w| w.join("config.json")).filter(|p| p.exists()) {
        return load_config_file(&saved);
    }
    Ok(PipelineConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "beta0 = 0.5\n[mergeWeights]\ncolor = 0.6\nsize = 0.2\nfill = 0.2\n")
            .unwrap();
        let cfg = load_config_file(&toml_path).unwrap();
        assert_eq!(cfg.beta0, 0.5);
        assert_eq!(cfg.merge_weights.color, 0.6);
        assert_eq!(cfg.q, 2.0);

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"maxProposals": 50}"#).unwrap();
        assert_eq!(load_config_file(&json_path).unwrap().max_proposals, 50);

        std::fs::write(&json_path, r#"{"beta1": 3.0}"#).unwrap();
        assert!(matches!(load_config_file(&json_path), Err(ServiceError::Config { .. })));
    }

    #[test]
    fn workspace_copy_is_used_when_nothing_else_is_given() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), r#"{"epsilon": 0.2}"#).unwrap();
        let explicit = dir.path().join("other.json");
        std::fs::write(&explicit, r#"{"epsilon": 0.3}"#).unwrap();
        if std::env::var_os(CONFIG_ENV).is_none() {
            assert_eq!(resolve_config(None, Some(dir.path())).unwrap().epsilon, 0.2);
        }
        assert_eq!(resolve_config(Some(&explicit), Some(dir.path())).unwrap().epsilon, 0.3);
    }
}
