use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))
}

pub fn read_toml_table(path: &Path) -> CliResult<toml::Table> {
    let text = read_text(path)?;
    text.parse::<toml::Table>().map_err(|source| CliError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

/// Deserializes a table that was already parsed from `path`.
pub fn from_table<T: DeserializeOwned>(table: toml::Table, path: &Path) -> CliResult<T> {
    T::deserialize(toml::Value::Table(table)).map_err(|source| CliError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|source| CliError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Core(e.into()))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

/// Writes every file in one pass after all of them have been rendered.
pub fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io_err(format!("writing {}", path.display())))?;
            Ok(path)
        })
        .collect()
}
