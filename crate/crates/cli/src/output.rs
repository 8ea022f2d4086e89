use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use stereokin::config::ConfigFile;

use crate::CliError;

/// Numeric table with unit-suffixed headers.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table { headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.headers.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let records: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: serde_json::Map<String, serde_json::Value> =
                    self.headers.iter().cloned().zip(r.iter().map(|v| serde_json::json!(v))).collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(records)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?);
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// `<path>.<suffix>`, keeping the original file name intact.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub subcommand: &'a str,
    pub arguments: Vec<String>,
    pub config: Option<ConfigFile>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub tool: &'static str,
    pub version: &'static str,
    pub timestamp: String,
}

impl<'a> Manifest<'a> {
    pub fn new(subcommand: &'a str, seed: u64) -> Self {
        Manifest {
            subcommand,
            arguments: std::env::args().skip(1).collect(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Written next to the primary output as `<out>.manifest.json`.
    pub fn write(&self, primary: &Path) -> Result<PathBuf, CliError> {
        let path = sibling(primary, "manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn gnuplot_script(data: &Path, title: &str, x: (usize, &str), ys: &[(usize, &str)], logy: bool) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str(&format!("set title '{title}'\nset xlabel '{}'\n", x.1));
    if logy {
        s.push_str("set logscale y\n");
    }
    let plots: Vec<String> = ys
        .iter()
        .map(|(col, name)| format!("'{}' using {}:{} with linespoints title '{name}'", data.display(), x.0, col))
        .collect();
    s.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    s
}
