//! `payt dgp`: synthetic panel generation from a preset or a spec file.

use crate::config::RunConfig;
use crate::{input_err, run_err, CliResult};
use payt_core::dgp::{self, DgpSpec};
use payt_core::panel::{write_panel_csv, SchemaMap};
use std::path::PathBuf;

#[derive(clap::Args)]
pub struct DgpArgs {
    /// Named preset: staggered, heterogeneous, null, joint, elasticity,
    /// welfare, confounded-trends, parallel-trends.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// JSON generator spec (overrides --preset).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Units for preset generation.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for panel.csv, manifest.csv, and neighbors.csv.
    #[arg(long)]
    out: PathBuf,
    /// Also write a ready-to-run pipeline config pointing at the panel.
    #[arg(long)]
    emit_config: bool,
}

fn preset_spec(name: &str, n: usize, seed: u64) -> Result<DgpSpec, anyhow::Error> {
    Ok(match name {
        "staggered" => DgpSpec::staggered_default(n, seed),
        "heterogeneous" => DgpSpec::heterogeneous(n, 10, seed),
        "null" => DgpSpec::null_effect(n, 10, seed),
        "joint" => DgpSpec::joint_outcomes(n, seed),
        "elasticity" => DgpSpec::quartile_elasticity(n, seed),
        "welfare" => DgpSpec::welfare_year3(n, seed),
        "confounded-trends" => DgpSpec::confounded_trends(n, seed),
        "parallel-trends" => DgpSpec::parallel_trends(n, seed),
        other => anyhow::bail!(
            "unknown preset `{other}` (expected staggered, heterogeneous, null, joint, \
             elasticity, welfare, confounded-trends, parallel-trends)"
        ),
    })
}

pub fn run(args: &DgpArgs) -> CliResult {
    let spec: DgpSpec = match (&args.spec, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                input_err(anyhow::anyhow!("cannot read spec {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(input_err)?
        }
        (None, Some(name)) => preset_spec(name, args.n, args.seed).map_err(input_err)?,
        (None, None) => {
            return Err(input_err(anyhow::anyhow!("either --preset or --spec is required")))
        }
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| input_err(anyhow::anyhow!("cannot create {}: {e}", args.out.display())))?;
    let generated = dgp::generate(&spec).map_err(run_err)?;
    let schema = SchemaMap::synthetic(spec.d);
    let panel_path = args.out.join("panel.csv");
    write_panel_csv(&generated.panel, &schema, &panel_path).map_err(run_err)?;
    dgp::write_manifest_csv(&generated.manifest, &args.out.join("manifest.csv"))
        .map_err(run_err)?;
    if !generated.neighbor_edges.is_empty() {
        let mut w = csv::Writer::from_path(args.out.join("neighbors.csv")).map_err(run_err)?;
        w.write_record(["unit_a", "unit_b"]).map_err(run_err)?;
        for (a, b) in &generated.neighbor_edges {
            w.write_record([a, b]).map_err(run_err)?;
        }
        w.flush().map_err(run_err)?;
    }
    if args.emit_config {
        let cfg = RunConfig::for_synthetic(
            panel_path.clone(),
            args.out.clone(),
            spec.d,
            args.seed,
        );
        let text = serde_json::to_string_pretty(&cfg).map_err(run_err)?;
        std::fs::write(args.out.join("config.json"), text).map_err(|e| run_err(anyhow::anyhow!(e)))?;
    }
    eprintln!(
        "wrote {} records for {} units to {}",
        generated.panel.records.len(),
        generated.panel.n_units(),
        args.out.display()
    );
    Ok(())
}
