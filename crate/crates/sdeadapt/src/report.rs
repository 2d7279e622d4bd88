//! Plain CSV tables and JSON mirrors for every driver output, each JSON file
//! carrying a manifest (seed, generator, revision, parameters) so a run can
//! be reproduced from the artifact alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::rng::GENERATOR_NAME;
use crate::stepping::Trajectory;
use crate::Result;

/// Reproducibility header attached to JSON outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    /// Driver or subcommand that produced the file.
    pub command: String,
    /// Base seed of the run.
    pub seed: u64,
    /// Random number pipeline identifier.
    pub generator: String,
    /// Source revision the binary was built from.
    pub revision: String,
    /// Flattened driver parameters.
    pub parameters: BTreeMap<String, String>,
    /// Wall-clock duration in seconds; ignored when comparing reruns.
    pub wall_seconds: f64,
    /// Files the run wrote.
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Manifest for `command` with the given seed; parameters start empty.
    pub fn new(command: &str, seed: u64, revision: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            generator: GENERATOR_NAME.to_string(),
            revision: revision.to_string(),
            parameters: BTreeMap::new(),
            wall_seconds: 0.0,
            outputs: Vec::new(),
        }
    }

    /// Records one parameter as a string.
    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    /// Records a written output file.
    pub fn output(&mut self, path: impl ToString) {
        self.outputs.push(path.to_string());
    }
}

/// A record that knows its CSV column names and field rendering.
pub trait CsvRecord {
    /// Column names, in order.
    fn header() -> &'static [&'static str];
    /// Field values, matching the header order.
    fn fields(&self) -> Vec<String>;
}

/// Renders a float with shortest round-trip precision.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Writes records as a CSV table with a header line.
pub fn write_csv<T: CsvRecord>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", T::header().join(","))?;
    for row in rows {
        writeln!(out, "{}", row.fields().join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a manifest on its own, for runs whose tables go to CSV.
pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Writes records as a JSON document with the manifest attached.
pub fn write_json<T: Serialize>(path: &Path, manifest: &RunManifest, rows: &[T]) -> Result<()> {
    let doc = serde_json::json!({
        "manifest": manifest,
        "rows": rows,
    });
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &doc)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// One mesh point of a recorded trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRow {
    /// Mesh index.
    pub n: usize,
    /// Mesh time.
    pub t: f64,
    /// Step that produced this state (0 for the initial row).
    pub h: f64,
    /// 1 when the tamed backstop update produced this state.
    pub backstopped: u8,
    /// State components.
    pub y: Vec<f64>,
}

/// Flattens a recorded trajectory into rows; requires recorded states.
pub fn trajectory_rows(trajectory: &Trajectory) -> Vec<TrajectoryRow> {
    assert!(
        !trajectory.times.is_empty(),
        "trajectory was simulated without state recording"
    );
    (0..trajectory.times.len())
        .map(|n| TrajectoryRow {
            n,
            t: trajectory.times[n],
            h: if n == 0 { 0.0 } else { trajectory.steps[n - 1] },
            backstopped: u8::from(n > 0 && trajectory.tamed[n - 1]),
            y: trajectory.state_at(n).to_vec(),
        })
        .collect()
}

/// Writes a recorded trajectory as CSV with one column per state component.
pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let rows = trajectory_rows(trajectory);
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["n".to_string(), "t".to_string(), "h".to_string(), "backstopped".to_string()];
    for i in 1..=trajectory.dim {
        header.push(format!("Y_{i}"));
    }
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut fields = vec![
            row.n.to_string(),
            fmt_f64(row.t),
            fmt_f64(row.h),
            row.backstopped.to_string(),
        ];
        fields.extend(row.y.iter().map(|v| fmt_f64(*v)));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
