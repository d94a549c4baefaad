//! Reading cases and fleets, and small helpers shared by the writers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{anyhow, Context};
use feeder::config::{parse_pv_config, PvConfig};
use feeder::netmodel::{parse_case, parse_dump, RadialNetwork};

use crate::CliError;

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(CliError::input)
}

/// A Matpower case file, or the plain `network`/`bus`/`branch` dump format.
pub fn load_case(path: &Path) -> Result<RadialNetwork, CliError> {
    let text = read_text(path)?;
    let parsed = if text.contains("mpc.") { parse_case(&text) } else { parse_dump(&text) };
    parsed.map_err(|e| CliError::input(anyhow!("{}: {e}", path.display())))
}

pub fn load_pv(path: &Path, net: &RadialNetwork) -> Result<PvConfig, CliError> {
    let text = read_text(path)?;
    let cfg = parse_pv_config(&text, net.base_mva()).map_err(|e| CliError::input(anyhow!("{}: {e}", path.display())))?;
    for s in &cfg.specs {
        if !net.contains(s.node) {
            return Err(CliError::input(anyhow!("{}: bus {} is not in the case", path.display(), s.node)));
        }
    }
    Ok(cfg)
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(CliError::failed)
}

/// Buffered file for a CSV table; the caller wraps it in `feeder::csv_writer`.
pub fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::failed)
}

/// Writes a table through a closure that fills a CSV writer.
pub fn write_table<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut csv::Writer<BufWriter<File>>) -> Result<(), csv::Error>,
{
    let mut w = feeder::csv_writer(create_file(path)?);
    fill(&mut w).and_then(|_| w.flush().map_err(csv::Error::from)).map_err(|e| {
        CliError::failed(anyhow!("{}: {e}", path.display()))
    })
}

/// Shortest round-trip text of a float; used for every numeric CSV cell.
pub fn num(x: f64) -> String {
    x.to_string()
}
