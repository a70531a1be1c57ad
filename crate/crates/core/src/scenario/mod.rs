//! Scenario files, the experiment catalog, batch runs and the
//! certificate-versus-simulation report.

mod catalog;
mod config;
mod output;
mod report;
mod run;

pub use catalog::{catalog, catalog_entry, DISTURBANCE_TIME};
pub use config::{emit_config, parse_config, Expectation, FleetConfig, OutputPaths, ScenarioConfig};
pub use output::{csv_header, to_csv, to_svg, write_csv, write_svg};
pub use report::{emit_report, ConsistencyReport, EXIT_CONSISTENCY, EXIT_OK};
pub use run::{
    certify, initial_state, run_scenario, CertificateSet, Certification, ConsistencyRow, Prediction, RowStatus,
    ScenarioRun, DWELL, ISS_THETA,
};

use rayon::prelude::*;

use crate::error::Result;

/// Run scenarios concurrently. Results come back sorted by id together with
/// the consistency report.
pub fn run_batch(configs: &[ScenarioConfig]) -> Result<(Vec<ScenarioRun>, ConsistencyReport)> {
    let mut runs: Vec<ScenarioRun> = configs.par_iter().map(run_scenario).collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.config.id.cmp(&b.config.id));
    let report = ConsistencyReport::new(runs.iter().map(|r| r.row.clone()).collect())?;
    Ok((runs, report))
}
