use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Stage};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.toml";

/// Seed of one pipeline module: the first 8 bytes (little endian) of
/// `sha256("<seed>/<module>")`.
pub fn module_seed(seed: u64, module: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{module}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the full resolved configuration, output directory excluded.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let view = ExperimentConfig { out: None, ..config.clone() };
    sha256_hex(view.to_toml().as_bytes())
}

/// Hash of the configuration sections that determine a stage's artifacts.
pub fn stage_hash(config: &ExperimentConfig, stage: Stage) -> String {
    sha256_hex(config.stage_view(stage).to_toml().as_bytes())
}

/// Hash shared by runs whose results may be aggregated together.
pub fn comparison_hash(config: &ExperimentConfig) -> String {
    sha256_hex(config.comparison_view().to_toml().as_bytes())
}

/// Writes `manifest.toml` into `dir`. The creation time is the only line that differs
/// between reruns.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    stage: Stage,
    config: &ExperimentConfig,
    seeds: &[(&str, u64)],
) -> Result<(), CliError> {
    let mut table = toml::Table::new();
    table.insert("command".into(), command.into());
    table.insert("seed".into(), toml::Value::Integer(config.seed()? as i64));
    table.insert("config_hash".into(), config_hash(config).into());
    table.insert("stage_hash".into(), stage_hash(config, stage).into());
    table.insert("comparison_hash".into(), comparison_hash(config).into());
    let mut seed_table = toml::Table::new();
    for (name, s) in seeds {
        // Module seeds use the whole u64 range; stored as text to stay lossless.
        seed_table.insert((*name).into(), s.to_string().into());
    }
    table.insert("module_seeds".into(), seed_table.into());
    let view = ExperimentConfig { out: None, ..config.clone() };
    table.insert("config".into(), toml::Value::try_from(&view).map_err(|e| CliError::Runtime(e.to_string()))?);
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let text = format!("created_unix = {created}\n{}", toml::to_string(&table).map_err(|e| CliError::Runtime(e.to_string()))?);
    std::fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestInfo {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub stage_hash: String,
    pub comparison_hash: String,
}

pub fn read_manifest(dir: &Path) -> Result<ManifestInfo, CliError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Dependency(path));
    }
    let text = std::fs::read_to_string(&path)?;
    let table: toml::Table =
        text.parse().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let field = |k: &str| -> Result<String, CliError> {
        table
            .get(k)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| CliError::Runtime(format!("{}: missing '{k}'", path.display())))
    };
    let seed = table
        .get("seed")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| CliError::Runtime(format!("{}: missing 'seed'", path.display())))? as u64;
    Ok(ManifestInfo {
        command: field("command")?,
        seed,
        config_hash: field("config_hash")?,
        stage_hash: field("stage_hash")?,
        comparison_hash: field("comparison_hash")?,
    })
}
