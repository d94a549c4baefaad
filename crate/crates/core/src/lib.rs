//! Radial distribution feeder modelling: linearized branch flow, inverter
//! control policies, chance-constrained dispatch and distributed ADMM.

pub mod admm;
pub mod config;
pub mod distflow;
pub mod exec;
pub mod netmodel;
pub mod opf;
pub mod policies;
pub mod qpcore;
pub mod uncertainty;

/// CSV writer with `\n` record terminators, used for every table we emit.
pub fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}
