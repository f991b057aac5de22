//! Result emission: CSV and JSON-lines metric streams, the JSON run
//! manifest, and read-back of both stream formats.
//!
//! Writers append records in the order given (the runner already merged
//! them by seed position and stage) and never rewrite earlier lines.
//! Floats use Rust's shortest round-tripping representation, so a parsed
//! file reproduces the records exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use plastlab_core::metrics::{MetricsRecord, CSV_HEADER};

use crate::runner::{RunManifest, RunOutput};
use crate::{CliError, Result};

/// Output directory resolution: explicit flag beats the `PLASTLAB_OUT`
/// environment variable, which beats `./results`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var("PLASTLAB_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("results")
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| CliError::io(path, e);
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(w, "{}", r.to_csv_row()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| CliError::io(path, e))?,
        None => {
            return Err(CliError::Invalid(format!(
                "{}: empty file (expected a CSV header)",
                path.display()
            )))
        }
    };
    if header != CSV_HEADER {
        return Err(CliError::Invalid(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        records.push(MetricsRecord::from_csv_line(&line, i + 1)?);
    }
    Ok(records)
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| CliError::Invalid(format!("serializing record: {e}")))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Invalid(format!("serializing manifest: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Paths of the three files a run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub manifest: PathBuf,
}

/// Write `<run_id>.csv`, `<run_id>.jsonl`, and `<run_id>.manifest.json`
/// into `out_dir` (created if missing).
pub fn write_run(out_dir: &Path, output: &RunOutput) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let id = &output.manifest.run_id;
    let artifacts = RunArtifacts {
        csv: out_dir.join(format!("{id}.csv")),
        jsonl: out_dir.join(format!("{id}.jsonl")),
        manifest: out_dir.join(format!("{id}.manifest.json")),
    };
    write_csv(&artifacts.csv, &output.records)?;
    write_jsonl(&artifacts.jsonl, &output.records)?;
    write_manifest(&artifacts.manifest, &output.manifest)?;
    Ok(artifacts)
}
