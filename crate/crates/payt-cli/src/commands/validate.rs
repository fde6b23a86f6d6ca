//! `payt validate`: load the panel, report invariant violations line by line.

use crate::config::RunConfig;
use crate::pipeline;
use crate::{input_err, CliResult};
use payt_core::panel::{self, DatasetError, LoadOptions};

pub fn run(cfg: &RunConfig) -> CliResult {
    let opts = LoadOptions { require_second_lags: cfg.require_second_lags };
    match panel::load_panel(&cfg.data, &cfg.schema, opts) {
        Ok(panel) => {
            let panel = pipeline::apply_neighbors(cfg, panel).map_err(input_err)?;
            println!(
                "ok: {} records, {} units, {} covariates",
                panel.records.len(),
                panel.n_units(),
                panel.n_covariates
            );
            Ok(())
        }
        Err(DatasetError::Validation(report)) => {
            print!("{report}");
            Err(input_err(anyhow::anyhow!("panel failed validation")))
        }
        Err(e) => {
            println!("{e}");
            Err(input_err(e))
        }
    }
}
