//! CSV tables with `#` manifest comments, plus a TOML run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::Context;

use crate::config::RunConfig;

/// One CSV cell.
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Bool(bool),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Twelve significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => num(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

/// A report table with summary comments.
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    notes: Vec<(String, String)>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    /// Adds a `# key = value` summary line.
    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, cfg: &RunConfig, revision: &str) -> String {
        let mut s = String::new();
        for (k, v) in manifest_lines(cfg, revision) {
            let _ = writeln!(s, "# {k} = {v}");
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

fn manifest_lines(cfg: &RunConfig, revision: &str) -> Vec<(&'static str, String)> {
    vec![
        ("command", cfg.command.clone()),
        ("seed", cfg.seed.to_string()),
        ("config_sha256", cfg.hash()),
        ("git_revision", revision.to_string()),
    ]
}

/// `git rev-parse HEAD` of the working directory, or `unknown`.
pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// `out` with `.suffix` appended to the file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    git_revision: String,
    config: &'a RunConfig,
}

/// Writes the table to `path` and the manifest to `<path>.manifest.toml`.
pub fn write(cfg: &RunConfig, path: &Path, table: &Table) -> anyhow::Result<()> {
    let revision = git_revision();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, table.render(cfg, &revision)).with_context(|| format!("writing {}", path.display()))?;
    let manifest = toml::to_string(&Manifest {
        command: &cfg.command,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        git_revision: revision,
        config: cfg,
    })?;
    let path = sibling(path, "manifest.toml");
    std::fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
