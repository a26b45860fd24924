use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde_json::Value;

/// Relative output paths are resolved against this directory when set.
pub const OUTPUT_DIR_ENV: &str = "IDALIGN_OUTPUT_DIR";

/// Invalid settings; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct ConfigFile(Option<Value>);

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self(None));
        };
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if !value.is_object() {
            return Err(usage("config file must hold a JSON object"));
        }
        Ok(Self(Some(value)))
    }

    /// Settings for one subcommand; an absent section yields all-default values.
    /// Keys are the subcommand's long flag names.
    pub fn section<T: DeserializeOwned + Default + clap::Args>(
        &self,
        name: &str,
    ) -> anyhow::Result<T> {
        let Some(v) = self.0.as_ref().and_then(|v| v.get(name)) else {
            return Ok(T::default());
        };
        let known: Vec<String> = T::augment_args(clap::Command::new("section"))
            .get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect();
        if let Some(obj) = v.as_object() {
            let unknown: Vec<&String> = obj.keys().filter(|k| !known.contains(k)).collect();
            if !unknown.is_empty() {
                return Err(usage(format!(
                    "config section {name:?}: unknown keys {unknown:?}"
                )));
            }
        }
        serde_json::from_value(v.clone())
            .map_err(|e| usage(format!("config section {name:?}: {e}")))
    }
}

/// Fills every `None` field of `$flags` from `$file`.
macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($field:ident),+ $(,)?) => {{
        let mut out = $flags;
        let file = $file;
        $( if out.$field.is_none() { out.$field = file.$field; } )+
        out
    }};
}
pub(crate) use merge_fields;

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Writes `contents` to `path` (creating parent directories) or to stdout when
/// `path` is `None` or `-`.
pub fn emit(path: Option<&Path>, contents: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            let p = resolve_output(p);
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
        }
        _ => {
            let mut out = io::stdout().lock();
            out.write_all(contents)?;
            out.flush()?;
            Ok(())
        }
    }
}

#[cfg(feature = "parallel")]
pub fn set_threads(threads: Option<usize>) -> anyhow::Result<()> {
    rope_idalign::configure_threads(threads.unwrap_or(0)).map_err(|e| anyhow::anyhow!(e))
}

#[cfg(not(feature = "parallel"))]
pub fn set_threads(_threads: Option<usize>) -> anyhow::Result<()> {
    Ok(())
}
