//! Plumbing shared by the commands: failures and exit codes, path checks,
//! config files, run records and table output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Name of the effective-configuration dump written next to outputs.
pub const RUN_RECORD_FILE: &str = "effective-config.json";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config values or missing inputs (exit 2).
    Config(String),
    /// Something went wrong while doing the work (exit 1).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<inkrestore::Error> for Failure {
    fn from(e: inkrestore::Error) -> Self {
        if e.is_configuration() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Resolves input paths: relative ones are taken from the data root when
/// one is set.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub root: Option<PathBuf>,
}

impl Inputs {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn file(&self, p: &Path, what: &str) -> CliResult<PathBuf> {
        let path = self.resolve(p);
        if !path.is_file() {
            return Err(Failure::Config(format!("{what} not found: {}", path.display())));
        }
        Ok(path)
    }

    pub fn dir(&self, p: &Path, what: &str) -> CliResult<PathBuf> {
        let path = self.resolve(p);
        if !path.is_dir() {
            return Err(Failure::Config(format!("{what} directory not found: {}", path.display())));
        }
        Ok(path)
    }

    /// A file or a directory.
    pub fn existing(&self, p: &Path, what: &str) -> CliResult<PathBuf> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Failure::Config(format!("{what} not found: {}", path.display())));
        }
        Ok(path)
    }
}

/// Reads a TOML (`.toml`) or JSON (anything else) config file, or returns
/// the defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunRecord<'a, T> {
    command: &'a str,
    config_hash: String,
    config: &'a T,
}

/// Hash of an effective configuration.
pub fn hash_of<T: Serialize>(config: &T) -> String {
    inkrestore::util::config_hash(config)
}

pub fn run_record_json<T: Serialize>(command: &str, config: &T) -> String {
    let record = RunRecord { command, config_hash: hash_of(config), config };
    serde_json::to_string_pretty(&record).expect("configs serialize")
}

/// Writes the effective configuration and its hash into `dir`.
pub fn write_run_record<T: Serialize>(dir: &Path, command: &str, config: &T) -> CliResult<String> {
    create_dir(dir)?;
    let path = dir.join(RUN_RECORD_FILE);
    fs::write(&path, run_record_json(command, config) + "\n").map_err(|e| io_failure(&path, e))?;
    Ok(hash_of(config))
}

pub fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Writes `value` as pretty JSON, wrapped with the config hash.
pub fn write_report<T: Serialize>(path: &Path, command: &str, config_hash: &str, report: &T) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let doc = serde_json::json!({ "command": command, "config_hash": config_hash, "report": report });
    let text = serde_json::to_string_pretty(&doc).expect("reports serialize");
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

/// PNG files of `dir` as `(stem, path)`, sorted by stem. A single file is
/// returned as is.
pub fn png_inputs(path: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.is_file() {
        return Ok(vec![(stem(path), path.to_path_buf())]);
    }
    let entries = fs::read_dir(path).map_err(|e| io_failure(path, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| io_failure(path, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push((stem(&p), p));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Failure::Config(format!("no PNG images in {}", path.display())));
    }
    Ok(out)
}

/// Fixed-width text table with numbers at two decimals.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, label: &str, values: &[f64]) {
        let mut r = vec![label.to_string()];
        r.extend(values.iter().map(|v| format!("{v:.2}")));
        self.rows.push(r);
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let width: Vec<usize> = (0..cols)
            .map(|c| {
                self.rows.iter().chain([&self.header]).map(|r| r.get(c).map_or(0, |s| s.chars().count())).max().unwrap_or(0)
            })
            .collect();
        let line = |r: &[String]| {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, s)| if i == 0 { format!("{s:<w$}", w = width[i]) } else { format!("{s:>w$}", w = width[i]) })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}
