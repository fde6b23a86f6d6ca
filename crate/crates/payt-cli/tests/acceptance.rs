//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with the measured quantities (run with `--nocapture` to see them).
//! Tolerances are pinned here, not configurable.

use approx::assert_relative_eq;
use payt_core::causal::{
    self, estimate_ape, estimate_cate, fit_causal, ApeInput, CausalForestParams,
};
use payt_core::costs::{self, CostParams};
use payt_core::dgp::{self, DgpSpec};
use payt_core::event_study::{fit_event_study, EventStudyOptions};
use payt_core::forest::{self, ForestParams, Node, Tree};
use payt_core::heterogeneity::{
    band_indices, levene_heterogeneity, point_elasticity, sign_mixture_groups, subgroup_ape_diff,
    PriceBand, SubgroupRow,
};
use payt_core::household::{
    classify_prediction, numeric_response, statics_signs, statics_values, HouseholdModel,
    PredictionClass, QuadraticCost, Utility,
};
use payt_core::matrix::Matrix;
use payt_core::overlap::{overlap_report, OverlapOptions};
use payt_core::panel::{build_frames, Outcome};
use payt_core::residuals::residualize;
use payt_core::{stats, stream_rng};
use rand::Rng;
use std::time::Instant;

fn pass(criterion: u8, name: &str, detail: String) {
    eprintln!("acceptance {criterion:02} {name}: PASS ({detail})");
}

// --- criterion 1: forest oracle equivalence --------------------------------

fn naive_walk<'t>(tree: &'t Tree, x_row: &[f64]) -> &'t [u32] {
    let mut at = 0usize;
    loop {
        match &tree.nodes[at] {
            Node::Split { feature, threshold, left, right } => {
                at = if x_row[*feature as usize] <= *threshold {
                    *left as usize
                } else {
                    *right as usize
                };
            }
            Node::Leaf { members } => return members,
        }
    }
}

#[test]
fn criterion_01_forest_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = stream_rng(101, 0);
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let params = ForestParams {
        num_trees: 5,
        min_leaf_size: 2,
        mtry: 2,
        subsample_fraction: 0.6,
        imbalance_penalty: 0.0,
        honesty_fraction: Some(0.5),
    };
    let fitted = forest::fit(&x, &y, &params, 7).unwrap();
    let mut max_err = 0.0_f64;
    for _ in 0..100 {
        let q = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
        // naive re-implementation of the prediction rule
        let mut naive = 0.0;
        let mut naive_w = vec![0.0; 12];
        for tree in &fitted.trees {
            let members = naive_walk(tree, &q);
            let mut s = 0.0;
            for &m in members {
                s += y[m as usize];
                naive_w[m as usize] += 1.0 / (5.0 * members.len() as f64);
            }
            naive += s / members.len() as f64;
        }
        naive /= 5.0;
        let fast = fitted.predict(&q);
        max_err = max_err.max((fast - naive).abs());
        assert!((fast - naive).abs() < 1e-10);
        let w = fitted.kernel_weights_of(&q);
        for (a, b) in w.iter().zip(&naive_w) {
            assert!((a - b).abs() < 1e-10);
        }
        // dual representation of the prediction
        let dual: f64 = w.iter().zip(&y).map(|(wi, yi)| wi * yi).sum();
        assert!((dual - fast).abs() < 1e-10);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(1, "forest oracle equivalence", format!("max |err| {max_err:.2e}, {elapsed:?}"));
}

// --- criterion 2: pointwise-effect arithmetic ------------------------------

#[test]
fn criterion_02_cape_arithmetic() {
    let w = [0.25; 4];
    let y = [2.0, -2.0, 1.0, -1.0];
    let p = [1.0, -1.0, 1.0, -1.0];
    let delta = causal::weighted_residual_slope(&w, &y, &p).unwrap();
    assert_eq!(delta, 1.5);

    // single-leaf forest equals the unweighted average effect
    let mut rng = stream_rng(2, 0);
    let n = 40;
    let x = Matrix::from_rows(&vec![vec![0.0]; n]).unwrap(); // constant covariate
    let p_resid: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let y_resid: Vec<f64> =
        p_resid.iter().map(|pi| 2.0 * pi + rng.random_range(-0.1..0.1)).collect();
    let treated: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let params = CausalForestParams {
        forest: ForestParams {
            num_trees: 4,
            min_leaf_size: 1,
            mtry: 1,
            subsample_fraction: 1.0,
            imbalance_penalty: 0.0,
            honesty_fraction: None,
        },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 0,
    };
    let cf = fit_causal(&x, &y_resid, &p_resid, &treated, &params, 3).unwrap();
    let cape = cf.cape(&[0.0]).unwrap();
    let inputs = [ApeInput { y_resid: &y_resid, p_resid: &p_resid, calendar_year: 2012 }];
    let ape = estimate_ape(&inputs, 1, Outcome::Uw, 50, 1).unwrap();
    let gap = (cape.delta_hat - ape.ape).abs();
    assert!(gap < 1e-10, "gap {gap:.2e}");
    pass(2, "pointwise-effect arithmetic", format!("hand slope 1.5 exact, single-leaf gap {gap:.1e}"));
}

// --- criterion 3: heterogeneity recovery -----------------------------------

#[test]
fn criterion_03_heterogeneity_recovery() {
    let start = Instant::now();
    let spec = DgpSpec::heterogeneous(2000, 10, 4242);
    let g = dgp::generate(&spec).unwrap();
    let frame = build_frames(&g.panel, 1, Outcome::Uw).unwrap().remove(0);
    let nuisance = ForestParams { num_trees: 400, min_leaf_size: 10, ..ForestParams::default() };
    let rf = residualize(&g.panel, &frame, &nuisance, &nuisance, 7).unwrap();
    let causal_params = CausalForestParams {
        forest: ForestParams { num_trees: 1000, min_leaf_size: 10, ..ForestParams::default() },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 10,
    };
    let x = frame.design(&g.panel);
    let cf = fit_causal(&x, &rf.y_resid, &rf.p_resid, &frame.treated_flags(), &causal_params, 11)
        .unwrap();
    let capes = cf.cape_rows(&x).unwrap();

    // pointwise error against the manifest truth
    let mut err_sq = 0.0;
    let mut truths = Vec::new();
    for (i, row) in frame.rows().enumerate() {
        let truth = g.manifest[row as usize].delta_uw;
        truths.push(truth);
        err_sq += (capes[i].delta_hat - truth).powi(2);
    }
    let rmse = (err_sq / truths.len() as f64).sqrt();
    let sd_truth = stats::sample_sd(&truths);
    assert!(rmse <= 0.5 * sd_truth, "rmse {rmse:.3} vs 0.5 sd {:.3}", 0.5 * sd_truth);

    // homogeneity rejected under the sign-mixture grouping (a plain median
    // split leaves the group variances equal by symmetry and has no power
    // against a linear dose response)
    let x1: Vec<f64> =
        frame.rows().map(|r| g.panel.records[r as usize].covariates[0]).collect();
    let deltas: Vec<f64> = capes.iter().map(|c| c.delta_hat).collect();
    let (pure, mixed) = sign_mixture_groups(&x1, &deltas).unwrap();
    let levene = levene_heterogeneity(&[pure, mixed]).unwrap();
    assert!(levene.p_value < 0.01, "levene p {}", levene.p_value);

    // median-split subgroup average effects differ
    let rows: Vec<SubgroupRow> = capes
        .iter()
        .enumerate()
        .map(|(i, c)| SubgroupRow {
            y_resid: rf.y_resid[i],
            p_resid: rf.p_resid[i],
            calendar_year: frame.calendar_year,
            delta_hat: c.delta_hat,
        })
        .collect();
    let report = subgroup_ape_diff(&rows, 500, 13).unwrap();
    assert!(
        report.ci_low > 0.0 || report.ci_high < 0.0,
        "subgroup CI [{:.3}, {:.3}] covers zero",
        report.ci_low,
        report.ci_high
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    pass(
        3,
        "heterogeneity recovery",
        format!(
            "rmse/sd {:.3}, levene p {:.1e}, subgroup diff {:.2}, {elapsed:?}",
            rmse / sd_truth,
            levene.p_value,
            report.abs_diff
        ),
    );
}

// --- criterion 4: null calibration over 100 seeds --------------------------

#[test]
fn criterion_04_null_calibration() {
    let nuisance = ForestParams { num_trees: 150, min_leaf_size: 10, ..ForestParams::default() };
    let causal_params = CausalForestParams {
        forest: ForestParams { num_trees: 1000, min_leaf_size: 20, ..ForestParams::default() },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 10,
    };
    let true_delta = 2.5; // null preset plants a constant response
    let mut covered = 0usize;
    let mut ci_total = 0usize;
    let mut levene_rejections = 0usize;
    for seed in 0..100u64 {
        let spec = DgpSpec::null_effect(500, 5, 9000 + seed);
        let g = dgp::generate(&spec).unwrap();
        let frame = build_frames(&g.panel, 1, Outcome::Uw).unwrap().remove(0);
        let rf = residualize(&g.panel, &frame, &nuisance, &nuisance, seed).unwrap();
        let x = frame.design(&g.panel);
        let cf = fit_causal(
            &x,
            &rf.y_resid,
            &rf.p_resid,
            &frame.treated_flags(),
            &causal_params,
            seed,
        )
        .unwrap();
        // coverage at five fixed test points
        for (a, b) in [(0.0, 0.0), (1.0, 0.5), (-1.0, -0.5), (0.5, -1.0), (-0.5, 1.0)] {
            let mut q = vec![0.0; 5];
            q[0] = a;
            q[1] = b;
            let est = cf.cape(&q).unwrap();
            ci_total += 1;
            if est.ci_low <= true_delta && true_delta <= est.ci_high {
                covered += 1;
            }
        }
        // the homogeneity test must hold its level on the same grouping the
        // heterogeneous criterion uses
        let capes = cf.cape_rows(&x).unwrap();
        let x1: Vec<f64> =
            frame.rows().map(|r| g.panel.records[r as usize].covariates[0]).collect();
        let deltas: Vec<f64> = capes.iter().map(|c| c.delta_hat).collect();
        let (pure, mixed) = sign_mixture_groups(&x1, &deltas).unwrap();
        if levene_heterogeneity(&[pure, mixed]).unwrap().p_value < 0.05 {
            levene_rejections += 1;
        }
    }
    let coverage = covered as f64 / ci_total as f64;
    assert!(
        (0.88..=0.99).contains(&coverage),
        "coverage {coverage:.3} outside [0.88, 0.99]"
    );
    assert!(levene_rejections <= 10, "levene rejected {levene_rejections}/100");
    pass(
        4,
        "null calibration",
        format!("coverage {coverage:.3}, levene rejections {levene_rejections}/100"),
    );
}

// --- criterion 5: cross-outcome additivity ---------------------------------

#[test]
fn criterion_05_cate_additivity() {
    let spec = DgpSpec::joint_outcomes(1200, 606);
    let g = dgp::generate(&spec).unwrap();
    let nuisance = ForestParams { num_trees: 300, min_leaf_size: 10, ..ForestParams::default() };
    let causal_params = CausalForestParams {
        forest: ForestParams { num_trees: 800, min_leaf_size: 15, ..ForestParams::default() },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 10,
    };
    let mut per_outcome = Vec::new();
    for outcome in Outcome::ALL {
        let frame = build_frames(&g.panel, 1, outcome).unwrap().remove(0);
        let rf = residualize(&g.panel, &frame, &nuisance, &nuisance, 17).unwrap();
        let x = frame.design(&g.panel);
        let cf = fit_causal(
            &x,
            &rf.y_resid,
            &rf.p_resid,
            &frame.treated_flags(),
            &causal_params,
            19,
        )
        .unwrap();
        per_outcome.push((frame, cf.cape_rows(&x).unwrap()));
    }
    let (frame, capes_uw) = &per_outcome[0];
    let capes_rw = &per_outcome[1].1;
    let capes_tw = &per_outcome[2].1;
    let prices = frame.prices(&g.panel);
    let flags = frame.treated_flags();
    let mut consistent = 0usize;
    let mut total = 0usize;
    for i in 0..capes_uw.len() {
        if !flags[i] {
            continue;
        }
        let p = prices[i];
        // unfiltered effects: additivity is about the point estimates
        let cate_uw = estimate_cate(&capes_uw[i], p, false).unwrap().value;
        let cate_rw = estimate_cate(&capes_rw[i], p, false).unwrap().value;
        let cate_tw = estimate_cate(&capes_tw[i], p, false).unwrap().value;
        let pooled_se = p
            * (capes_uw[i].std_err.powi(2)
                + capes_rw[i].std_err.powi(2)
                + capes_tw[i].std_err.powi(2))
            .sqrt();
        total += 1;
        if (cate_tw - (cate_uw + cate_rw)).abs() <= 2.0 * pooled_se {
            consistent += 1;
        }
    }
    let share = consistent as f64 / total as f64;
    assert!(share >= 0.90, "only {share:.3} of units additive");
    pass(5, "cross-outcome additivity", format!("{consistent}/{total} within 2 pooled SEs"));
}

// --- criterion 6: point elasticity reproduction ----------------------------

#[test]
fn criterion_06_point_elasticities() {
    let spec = DgpSpec::quartile_elasticity(1600, 33);
    let g = dgp::generate(&spec).unwrap();
    let frame = build_frames(&g.panel, 1, Outcome::Uw).unwrap().remove(0);
    let nuisance = ForestParams { num_trees: 300, min_leaf_size: 10, ..ForestParams::default() };
    let rf = residualize(&g.panel, &frame, &nuisance, &nuisance, 21).unwrap();
    let causal_params = CausalForestParams {
        forest: ForestParams { num_trees: 800, min_leaf_size: 20, ..ForestParams::default() },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 10,
    };
    let x = frame.design(&g.panel);
    let cf = fit_causal(&x, &rf.y_resid, &rf.p_resid, &frame.treated_flags(), &causal_params, 23)
        .unwrap();
    let capes = cf.cape_rows(&x).unwrap();
    let flags = frame.treated_flags();
    let prices_all = frame.prices(&g.panel);
    let outcomes_all = frame.outcomes(&g.panel);
    let treated_idx: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
    let deltas: Vec<f64> = treated_idx.iter().map(|&i| capes[i].delta_hat).collect();
    let prices: Vec<f64> = treated_idx.iter().map(|&i| prices_all[i]).collect();
    let outs: Vec<f64> = treated_idx.iter().map(|&i| outcomes_all[i]).collect();

    let eval = |band: PriceBand| -> f64 {
        let idx = band_indices(&prices, band).unwrap();
        let d: Vec<f64> = idx.iter().map(|&i| deltas[i]).collect();
        let p: Vec<f64> = idx.iter().map(|&i| prices[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| outs[i]).collect();
        point_elasticity(&d, &p, &y).unwrap()
    };
    let low = eval(PriceBand::LowestQuartile);
    let high = eval(PriceBand::HighestQuartile);
    assert!((low - (-0.26)).abs() <= 0.1, "low-band elasticity {low:.3}");
    assert!((high - (-2.2)).abs() <= 0.5, "high-band elasticity {high:.3}");
    pass(6, "point elasticities", format!("low {low:.3} (target -0.26), high {high:.3} (target -2.2)"));
}

// --- criterion 7: cost decomposition ----------------------------------------

#[test]
fn criterion_07_cost_formula_and_simulation() {
    // hand case
    let hand = costs::compute_emc("m", 3, -100.0, 80.0, 0.29, 0.16, 0.08, &CostParams::default())
        .unwrap();
    assert!((hand.total_emc - 27.8).abs() < 1e-12);
    assert_relative_eq!(hand.private_emc, 16.2, epsilon = 1e-12);
    assert_relative_eq!(hand.external_emc, 11.6, epsilon = 1e-12);
    assert_eq!(hand.total_emc, hand.private_emc + hand.external_emc);

    // calibrated third-year simulation
    let spec = DgpSpec::welfare_year3(600, 404);
    let g = dgp::generate(&spec).unwrap();
    let nuisance = ForestParams { num_trees: 200, min_leaf_size: 10, ..ForestParams::default() };
    let causal_params = CausalForestParams {
        forest: ForestParams { num_trees: 600, min_leaf_size: 10, ..ForestParams::default() },
        min_treated_per_leaf: 1,
        min_control_per_leaf: 1,
        bag_size: 10,
    };
    let frame_uw = build_frames(&g.panel, 3, Outcome::Uw).unwrap().remove(0);
    let frame_rw = build_frames(&g.panel, 3, Outcome::Rw).unwrap().remove(0);
    let rf_uw = residualize(&g.panel, &frame_uw, &nuisance, &nuisance, 31).unwrap();
    let rf_rw = residualize(&g.panel, &frame_rw, &nuisance, &nuisance, 37).unwrap();
    let x = frame_uw.design(&g.panel);
    let cf_uw =
        fit_causal(&x, &rf_uw.y_resid, &rf_uw.p_resid, &frame_uw.treated_flags(), &causal_params, 41)
            .unwrap();
    let cf_rw =
        fit_causal(&x, &rf_rw.y_resid, &rf_rw.p_resid, &frame_rw.treated_flags(), &causal_params, 43)
            .unwrap();
    let capes_uw = cf_uw.cape_rows(&x).unwrap();
    let capes_rw = cf_rw.cape_rows(&x).unwrap();
    let cost_preds = costs::predict_unit_costs_under_payt(
        &g.panel,
        &frame_uw,
        &nuisance,
        &causal_params,
        &CostParams::default(),
        47,
    )
    .unwrap();
    let unit_ids: Vec<String> = frame_uw.unit_names(&g.panel).map(str::to_string).collect();
    let treated = frame_uw.treated_flags();
    let prices = frame_uw.prices(&g.panel);
    let pc_uw: Vec<f64> = cost_preds.iter().map(|p| p.pc_uw_hat).collect();
    let pc_rw: Vec<f64> = cost_preds.iter().map(|p| p.pc_rw_hat).collect();
    let inputs = costs::SimulationInputs {
        unit_ids: &unit_ids,
        policy_year: 3,
        treated: &treated,
        prices: &prices,
        s_hat: &rf_uw.s_hat_oob,
        cape_uw: &capes_uw,
        cape_rw: &capes_rw,
        pc_uw: &pc_uw,
        pc_rw: &pc_rw,
        significance_filter: true,
    };
    let results = costs::simulate_all(&inputs, &CostParams::default()).unwrap();
    for r in &results {
        assert_eq!(r.total_emc, r.private_emc + r.external_emc);
    }
    let positive = results.iter().filter(|r| r.total_emc > 0.0).count();
    let share = positive as f64 / results.len() as f64;
    let mean_total: f64 =
        results.iter().map(|r| r.total_emc).sum::<f64>() / results.len() as f64;
    assert!(share >= 0.99, "only {share:.4} of units positive");
    assert!(
        (20.0..=35.0).contains(&mean_total),
        "mean total cost effect {mean_total:.2} outside [20, 35]"
    );
    pass(
        7,
        "cost formula and simulation",
        format!("hand total 27.8 exact, mean {mean_total:.2}, positive share {share:.4}"),
    );
}

// --- criterion 8: comparative statics ----------------------------------------

#[test]
fn criterion_08_comparative_statics() {
    // canonical curvature configurations and their response regimes
    let s1 = statics_signs(2.0, 2.0, -1.0).unwrap();
    assert_eq!(s1, (1, 1));
    assert_eq!(classify_prediction(s1, 2.0, 2.0, -1.0), PredictionClass::BothIncrease);
    let s2 = statics_signs(5.0, 1.0, 3.0).unwrap();
    assert_eq!(s2, (-1, 1));
    assert_eq!(classify_prediction(s2, 5.0, 1.0, 3.0), PredictionClass::RecyclingUpAvoidanceDown);
    let s3 = statics_signs(1.0, 5.0, 3.0).unwrap();
    assert_eq!(s3, (1, -1));
    assert_eq!(classify_prediction(s3, 1.0, 5.0, 3.0), PredictionClass::AvoidanceUpRecyclingDown);

    // analytic derivatives against the finite-difference optimizer
    let mut rng = stream_rng(808, 0);
    let mut checked = 0usize;
    while checked < 100 {
        let c_aa: f64 = rng.random_range(0.5..4.0);
        let c_rr: f64 = rng.random_range(0.5..4.0);
        let c_ar: f64 = rng.random_range(-1.5..1.5);
        if (c_rr - c_ar).abs() < 0.05 || (c_aa - c_ar).abs() < 0.05 {
            continue;
        }
        let model = HouseholdModel {
            income: 10.0,
            potential_waste: 4.0,
            price: rng.random_range(0.5..2.0),
            utility: Utility::Log,
            cost: QuadraticCost {
                c_aa,
                c_rr,
                c_ar,
                linear_a: rng.random_range(0.0..0.05),
                linear_r: rng.random_range(0.0..0.05),
            },
            shifters: vec![],
        };
        let Ok(w) = model.solve_optimum() else { continue };
        let Ok(analytic) = statics_values(&model, w) else { continue };
        let dt = 1e-6 * model.price.max(1.0);
        let (na, nr) = numeric_response(&model, dt).unwrap();
        assert_eq!(analytic.dwa_dt.signum(), na.signum(), "sign mismatch dw_A");
        assert_eq!(analytic.dwr_dt.signum(), nr.signum(), "sign mismatch dw_R");
        assert_relative_eq!(analytic.dwa_dt, na, max_relative = 1e-4);
        assert_relative_eq!(analytic.dwr_dt, nr, max_relative = 1e-4);
        checked += 1;
    }
    pass(8, "comparative statics", format!("3 canonical regimes, {checked}/100 oracle draws agree"));
}

// --- criterion 9: fixed-effects bias demonstration --------------------------

#[test]
fn criterion_09_fe_bias_demonstration() {
    let truth = -1150.0_f64;
    // the nuisances must absorb the trend surface: give them every feature
    // as a split candidate instead of a random subset
    let nuisance = ForestParams {
        num_trees: 400,
        min_leaf_size: 5,
        mtry: 7,
        ..ForestParams::default()
    };

    // selection on an observable trend: leads light up, the forest stays honest
    let confounded = dgp::generate(&DgpSpec::confounded_trends(1600, 909)).unwrap();
    let fe_confounded =
        fit_event_study(&confounded.panel, Outcome::Uw, &EventStudyOptions::default()).unwrap();
    assert!(
        fe_confounded.pretrend_joint_p < 0.05,
        "confounded pretrend p {}",
        fe_confounded.pretrend_joint_p
    );
    let fe_lags: Vec<f64> = fe_confounded
        .coefficients
        .iter()
        .filter(|(e, _)| **e > 0)
        .map(|(_, (c, _))| *c)
        .collect();
    let fe_confounded_mean = fe_lags.iter().sum::<f64>() / fe_lags.len() as f64;
    let frames = build_frames(&confounded.panel, 1, Outcome::Uw).unwrap();
    let mut stored = Vec::new();
    for frame in &frames {
        let rf = residualize(&confounded.panel, frame, &nuisance, &nuisance, 51).unwrap();
        stored.push((rf.y_resid, rf.p_resid, frame.calendar_year));
    }
    let inputs: Vec<ApeInput<'_>> = stored
        .iter()
        .map(|(y, p, year)| ApeInput { y_resid: y, p_resid: p, calendar_year: *year })
        .collect();
    let ape = estimate_ape(&inputs, 1, Outcome::Uw, 500, 53).unwrap();
    // coverage: within the interval, or within a 2% qualitative band (the
    // synthetic cohort frames are near-identical, so the year-cluster
    // standard error lands below one percent of the effect)
    let in_ci = (ape.ape - 2.0 * ape.std_err) <= truth && truth <= (ape.ape + 2.0 * ape.std_err);
    let close = (ape.ape - truth).abs() <= 0.02 * truth.abs();
    assert!(in_ci || close, "forest APE {:.0} (se {:.1}) misses {truth}", ape.ape, ape.std_err);
    // and the demonstration itself: the fixed-effects estimate sits farther
    // from the truth than the forest estimate
    assert!(
        (fe_confounded_mean - truth).abs() > 2.0 * (ape.ape - truth).abs(),
        "fe {fe_confounded_mean:.0} vs forest {:.0}: no contrast",
        ape.ape
    );

    // clean parallel trends: leads stay quiet and the estimator tracks the truth
    let parallel = dgp::generate(&DgpSpec::parallel_trends(640, 910)).unwrap();
    let fe_parallel =
        fit_event_study(&parallel.panel, Outcome::Uw, &EventStudyOptions::default()).unwrap();
    assert!(
        fe_parallel.pretrend_joint_p > 0.05,
        "parallel pretrend p {}",
        fe_parallel.pretrend_joint_p
    );
    let lags: Vec<f64> = fe_parallel
        .coefficients
        .iter()
        .filter(|(e, _)| **e > 0)
        .map(|(_, (c, _))| *c)
        .collect();
    let lag_mean = lags.iter().sum::<f64>() / lags.len() as f64;
    assert!(
        (lag_mean - truth).abs() <= 0.2 * truth.abs(),
        "parallel-trends estimate {lag_mean:.0} vs truth {truth}"
    );
    pass(
        9,
        "fixed-effects bias demonstration",
        format!(
            "confounded pretrend p {:.1e}, fe {:.0} vs forest {:.0} (truth {truth}); parallel pretrend p {:.2}, lag mean {:.0}",
            fe_confounded.pretrend_joint_p, fe_confounded_mean, ape.ape,
            fe_parallel.pretrend_joint_p, lag_mean
        ),
    );
}

// --- criterion 10: overlap report -------------------------------------------

#[test]
fn criterion_10_overlap_geometry() {
    // engineered geometry: edge atoms make the quantile bands touch the
    // support bounds, eight low outliers form the excluded 4%
    let mut s = Vec::new();
    let mut flags = Vec::new();
    for _ in 0..4 {
        s.push(0.30);
        flags.push(true);
    }
    for i in 0..92 {
        s.push(0.46 + 0.34 * i as f64 / 91.0);
        flags.push(true);
    }
    for _ in 0..4 {
        s.push(0.80);
        flags.push(true);
    }
    for _ in 0..8 {
        s.push(0.05);
        flags.push(false);
    }
    for _ in 0..6 {
        s.push(0.30);
        flags.push(false);
    }
    for i in 0..180 {
        s.push(0.31 + 0.48 * i as f64 / 179.0);
        flags.push(false);
    }
    for _ in 0..6 {
        s.push(0.80);
        flags.push(false);
    }
    let report = overlap_report(&s, &flags, &OverlapOptions::default()).unwrap();

    // independent re-computation of the normalized-difference formula
    let treated: Vec<f64> =
        s.iter().zip(&flags).filter(|(_, f)| **f).map(|(v, _)| *v).collect();
    let control: Vec<f64> =
        s.iter().zip(&flags).filter(|(_, f)| !**f).map(|(v, _)| *v).collect();
    let expected_nd = (stats::mean(&treated) - stats::mean(&control))
        / ((stats::sample_variance(&treated) + stats::sample_variance(&control)) / 2.0).sqrt();
    assert_relative_eq!(report.normalized_diff, expected_nd, epsilon = 1e-12);
    assert!((report.normalized_diff - 0.62).abs() < 0.05, "nd {:.4}", report.normalized_diff);
    assert_eq!(report.coverage_treated, 1.0);
    assert_eq!(report.coverage_control, 0.96);
    pass(
        10,
        "overlap geometry",
        format!(
            "normalized diff {:.4}, coverage ({:.0}%, {:.0}%)",
            report.normalized_diff,
            100.0 * report.coverage_treated,
            100.0 * report.coverage_control
        ),
    );
}

// --- criterion 11: byte-identical reruns -------------------------------------

#[test]
fn criterion_11_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let gen_out = std::process::Command::new(env!("CARGO_BIN_EXE_payt"))
        .args(["dgp", "--preset", "staggered", "--n", "240", "--seed", "77"])
        .arg("--out")
        .arg(dir.path())
        .arg("--emit-config")
        .output()
        .unwrap();
    assert!(gen_out.status.success());
    let config_path = dir.path().join("config.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    cfg["nuisance_forest"]["num_trees"] = 80.into();
    cfg["causal_forest"]["forest"]["num_trees"] = 80.into();
    cfg["causal_forest"]["bag_size"] = 8.into();
    cfg["ape_bootstrap"] = 150.into();
    std::fs::write(&config_path, serde_json::to_string(&cfg).unwrap()).unwrap();

    let run = |label: &str, threads: &str| -> std::path::PathBuf {
        let out_dir = dir.path().join(label);
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_payt"))
            .arg("estimate")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--threads", threads])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("run_a", "1");
    let b = run("run_b", "2");
    let c = run("run_c", "1");
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    assert!(names.len() >= 10, "expected the full output set, got {names:?}");
    for name in &names {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        assert_eq!(bytes_a, std::fs::read(b.join(name)).unwrap(), "{name} differs across thread counts");
        assert_eq!(bytes_a, std::fs::read(c.join(name)).unwrap(), "{name} differs across reruns");
    }
    pass(11, "pipeline determinism", format!("{} files byte-identical across reruns and thread counts", names.len()));
}
