//! CSV emission with `#` metadata lines, and JSON for fisher-info.

use std::io::{self, Write};

use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::experiments::{CellFailure, FisherReport, Report, Row};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn needs_quoting(s: &str) -> bool {
    s.contains([',', '"', '\n', '\r'])
}

fn field(s: &str) -> String {
    if needs_quoting(s) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

pub fn write_csv<R: Row, W: Write>(
    mut w: W,
    experiment: Experiment,
    cfg: &ExperimentConfig,
    report: &Report<R>,
) -> io::Result<()> {
    writeln!(w, "# simulate {VERSION}")?;
    writeln!(w, "# experiment: {experiment}")?;
    writeln!(w, "# config_hash: {}", cfg.hash())?;
    writeln!(w, "# master_seed: {}", cfg.seed)?;
    writeln!(w, "# columns: {}", R::COLUMNS.join(","))?;
    for note in &report.notes {
        writeln!(w, "# note: {}", one_line(note))?;
    }
    for f in &report.failures {
        writeln!(w, "# failed_cell: {}", describe_failure(f))?;
    }
    writeln!(w, "{}", R::COLUMNS.join(","))?;
    for row in &report.rows {
        let fields: Vec<String> = row.fields().iter().map(|s| field(s)).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()
}

pub fn describe_failure(f: &CellFailure) -> String {
    let seed = f.seed.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
    one_line(&format!("gamma0={} seed={} error={}", f.gamma0, seed, f.message))
}

#[derive(Serialize)]
struct FisherDocument<'a> {
    version: &'a str,
    experiment: &'a str,
    config_hash: String,
    channel: &'a spiked_core::ChannelSpec,
    results: &'a [FisherReport],
}

pub fn write_fisher_json<W: Write>(mut w: W, cfg: &ExperimentConfig, results: &[FisherReport]) -> io::Result<()> {
    let doc = FisherDocument {
        version: VERSION,
        experiment: Experiment::FisherInfo.name(),
        config_hash: cfg.hash(),
        channel: &cfg.channel,
        results,
    };
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()
}
