//! `payt theory`: comparative statics of the household model. With no
//! arguments, prints the three canonical curvature regimes with analytic
//! derivatives and the finite-difference oracle side by side.

use crate::{input_err, run_err, CliResult};
use payt_core::household::{
    classify_prediction, numeric_response, statics_signs, statics_values, HouseholdModel,
    QuadraticCost, Utility,
};
use std::path::Path;

fn canonical_models() -> Vec<(&'static str, HouseholdModel)> {
    let base = |price: f64, c_aa: f64, c_rr: f64, c_ar: f64, la: f64, lr: f64| HouseholdModel {
        income: 10.0,
        potential_waste: 4.0,
        price,
        utility: Utility::Log,
        cost: QuadraticCost { c_aa, c_rr, c_ar, linear_a: la, linear_r: lr },
        shifters: vec![],
    };
    // parameters chosen so each sign regime also admits an interior optimum:
    // the substitutes cases need an asymmetric linear cost so both margins
    // bind at positive quantities
    vec![
        ("complements", base(1.0, 2.0, 2.0, -1.0, 0.01, 0.01)),
        ("substitutes, avoidance costs steeper", base(2.0, 5.0, 1.0, 1.5, 0.01, 0.29)),
        ("substitutes, recycling costs steeper", base(2.0, 1.0, 5.0, 1.5, 0.29, 0.01)),
    ]
}

fn print_model(label: &str, model: &HouseholdModel) -> CliResult {
    let signs =
        statics_signs(model.cost.c_aa, model.cost.c_rr, model.cost.c_ar).map_err(run_err)?;
    let class = classify_prediction(signs, model.cost.c_aa, model.cost.c_rr, model.cost.c_ar);
    println!("{label}: C_AA={} C_RR={} C_AR={}", model.cost.c_aa, model.cost.c_rr, model.cost.c_ar);
    println!("  sign(dw_A/dt) = {:+}, sign(dw_R/dt) = {:+}, class = {class:?}", signs.0, signs.1);
    match model.solve_optimum() {
        Ok(w) => {
            let s = statics_values(model, w).map_err(run_err)?;
            let dt = 1e-6 * model.price.max(1.0);
            let (na, nr) = numeric_response(model, dt).map_err(run_err)?;
            println!(
                "  analytic dw_A/dt = {:+.6}, dw_R/dt = {:+.6} (optimum w_A={:.4}, w_R={:.4})",
                s.dwa_dt, s.dwr_dt, w.0, w.1
            );
            println!("  numeric  dw_A/dt = {na:+.6}, dw_R/dt = {nr:+.6} (dt = {dt:.1e})");
        }
        Err(e) => println!("  no interior optimum under the default shape: {e}"),
    }
    Ok(())
}

pub fn run(model_path: Option<&Path>) -> CliResult {
    match model_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| input_err(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
            let model: HouseholdModel = serde_json::from_str(&text).map_err(input_err)?;
            print_model("model", &model)
        }
        None => {
            for (label, model) in canonical_models() {
                print_model(label, &model)?;
            }
            Ok(())
        }
    }
}
