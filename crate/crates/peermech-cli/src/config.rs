//! Key=value config files, option resolution, and run manifests.
//!
//! Configs are flat `key=value` lines; `#` starts a comment. Command-line
//! flags win over config values, which win over built-in defaults. The seed
//! additionally falls back to the `PEERMECH_SEED` environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::CliError;

/// Environment variable consulted when neither flag nor config set a seed.
pub const SEED_ENV: &str = "PEERMECH_SEED";

/// Parsed config file contents.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>, allowed_keys: &[&str]) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            if !allowed_keys.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "{}:{}: unknown config key `{key}`",
                    path.display(),
                    idx + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Typed lookup of one config value.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Config(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }

    pub fn get_string(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves the master seed: flag, then config, then environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: &ConfigFile) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    if let Some(seed) = config.get::<u64>("seed")? {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|e| CliError::Config(format!("{SEED_ENV}=`{raw}`: {e}"))),
        Err(_) => Ok(0),
    }
}

/// Comma-separated float list, e.g. `625,1111.11,2500,10000`.
pub fn parse_float_list(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|item| {
            item.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number `{item}` in list: {e}")))
        })
        .collect()
}

/// A reproducibility record written next to every command's outputs.
pub struct Manifest {
    command: String,
    master_seed: u64,
    config: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str, master_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            master_seed,
            config: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn config_echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.config {
            out.push_str(&format!("config.{key}={value}\n"));
        }
        out
    }

    pub fn render(&self) -> String {
        let echo = self.config_echo();
        let mut hasher = Sha256::new();
        hasher.update(echo.as_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let mut out = String::new();
        out.push_str("# peermech run manifest\n");
        out.push_str(&format!("command={}\n", self.command));
        out.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("master_seed={}\n", self.master_seed));
        out.push_str(&format!(
            "duration_ms={}\n",
            self.started.elapsed().as_millis()
        ));
        out.push_str(&format!("config_sha256={hex}\n"));
        out.push_str(&echo);
        for output in &self.outputs {
            out.push_str(&format!("output={}\n", output.display()));
        }
        out
    }

    /// Writes the manifest; every listed output must already exist.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        for output in &self.outputs {
            if !output.exists() {
                return Err(CliError::Runtime(format!(
                    "manifest lists missing output {}",
                    output.display()
                )));
            }
        }
        std::fs::write(path, self.render())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

/// Creates the output directory and writes one file into it.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
