//! Deterministic result files: one CSV per table and a JSON manifest.
//!
//! Reruns with the same config and seed must reproduce every output byte
//! for byte, so floats are written with the shortest round-trip formatter,
//! rows keep construction order and the manifest carries no clock.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// A rectangular result table destined for `<name>.csv`.
pub struct Table {
    pub name: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &'static [&'static str]) -> Self {
        Self {
            name,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "ragged row in {}", self.name);
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut text = self.header.join(",");
        text.push('\n');
        for row in &self.rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        text
    }
}

/// Shortest exact decimal for a float; empty for a missing entry.
pub fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Tallies the boolean checks behind the `verdict` column.
#[derive(Default)]
pub struct Verdicts {
    pub checked: usize,
    pub failed: usize,
}

impl Verdicts {
    /// Records one check and returns the cell text for it.
    pub fn record(&mut self, ok: bool) -> String {
        self.checked += 1;
        if !ok {
            self.failed += 1;
        }
        (if ok { "pass" } else { "fail" }).to_string()
    }

    /// Cell text for a purely informational row.
    pub fn info() -> String {
        "info".to_string()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    master_seed: u64,
    threads: usize,
    versions: Versions<'a>,
    outputs: Vec<String>,
    checks: ChecksSummary,
}

#[derive(Serialize)]
struct Versions<'a> {
    #[serde(rename = "pinlab")]
    core: &'a str,
    #[serde(rename = "pinlab-cli")]
    cli: &'a str,
}

#[derive(Serialize)]
struct ChecksSummary {
    checked: usize,
    failed: usize,
}

/// Writes every table plus `manifest.json` into `dir`, returning the
/// number of failed checks.
pub fn write_all(
    dir: &Path,
    command: &str,
    config_sha256: &str,
    master_seed: u64,
    threads: usize,
    tables: &[Table],
    verdicts: &Verdicts,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let mut outputs = Vec::new();
    for table in tables {
        let file = format!("{}.csv", table.name);
        let path = dir.join(&file);
        fs::write(&path, table.render())
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
        outputs.push(file);
    }
    let manifest = Manifest {
        command,
        config_sha256,
        master_seed,
        threads,
        versions: Versions {
            core: pinlab::version(),
            cli: env!("CARGO_PKG_VERSION"),
        },
        outputs,
        checks: ChecksSummary {
            checked: verdicts.checked,
            failed: verdicts.failed,
        },
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("encoding manifest: {e}")))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}
