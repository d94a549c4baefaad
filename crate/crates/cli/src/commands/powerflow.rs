use feeder::distflow::{solve_lindistflow, total_losses, write_flow_csv, write_voltage_csv, InjectionSet};
use feeder::policies::reference_injections;

use crate::args::PowerflowArgs;
use crate::inputs::{create_dir, create_file, load_case, load_pv};
use crate::manifest::RunManifest;
use crate::CliError;

pub fn powerflow(a: &PowerflowArgs, manifest: &RunManifest) -> Result<(), CliError> {
    let net = load_case(&a.case)?;
    let inj = match &a.pv {
        Some(p) => reference_injections(&load_pv(p, &net)?.specs),
        None => InjectionSet::new(),
    };
    let state = solve_lindistflow(&net, &inj).map_err(CliError::input)?;
    create_dir(&a.out)?;
    manifest.write(&a.out)?;
    write_voltage_csv(create_file(&a.out.join("buses.csv"))?, &net, &state).map_err(CliError::failed)?;
    write_flow_csv(create_file(&a.out.join("flows.csv"))?, &net, &state).map_err(CliError::failed)?;
    let losses = total_losses(&net, &state);
    println!("buses: {}  losses: {} MW ({} p.u.)", net.n_buses(), losses * net.base_mva(), losses);
    Ok(())
}
