use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::exit::usage;

pub const TOOL: &str = "neft";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_DIR_ENV: &str = "NEFT_OUT_DIR";

/// Header carried by every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub run_config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, run_config: &RunConfig) -> Self {
        Provenance { tool: TOOL.into(), tool_version: TOOL_VERSION.into(), command: command.into(), run_config: run_config.clone() }
    }

    /// One-line form for CSV comment headers.
    pub fn comment(&self) -> Result<String> {
        Ok(format!("# {}", serde_json::to_string(self)?))
    }
}

/// `--out`, then the config, then `$NEFT_OUT_DIR/<command>`, then `neft-out/<command>`.
pub fn resolve_out(flag: Option<PathBuf>, cfg: &mut RunConfig, command: &str) -> PathBuf {
    let out = flag.or_else(|| cfg.paths.out.clone()).unwrap_or_else(|| {
        let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("neft-out"));
        base.join(command)
    });
    cfg.paths.out = Some(out.clone());
    out
}

/// Output directory that refuses to clobber earlier results.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    /// Fails before any work is done if `root` already holds files and
    /// `force` is not set.
    pub fn prepare(root: &Path, force: bool) -> Result<Self> {
        if root.is_file() {
            return Err(usage(format!("output {} is a file, expected a directory", root.display())));
        }
        if root.is_dir() && !force && fs::read_dir(root)?.next().is_some() {
            return Err(usage(format!("output directory {} is not empty; pass --force to overwrite", root.display())));
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// CSV with a leading `#` line holding the provenance JSON.
    pub fn write_csv(&self, name: &str, provenance: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        writeln!(file, "{}", provenance.comment()?)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// JSON lines, the first line being the provenance record.
    pub fn write_jsonl<S: Serialize>(&self, name: &str, provenance: &Provenance, records: &[S]) -> Result<PathBuf> {
        let mut text = serde_json::to_string(provenance)?;
        text.push('\n');
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.write_text(name, &text)
    }
}

/// Refuses to replace an existing single-file output without `force`.
pub fn check_file_target(path: &Path, force: bool) -> Result<()> {
    if path.is_dir() {
        return Err(usage(format!("output {} is a directory, expected a file path", path.display())));
    }
    if path.exists() && !force {
        return Err(usage(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}
