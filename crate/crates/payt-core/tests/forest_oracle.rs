//! Independent re-implementations checking the forest arithmetic: a naive
//! tree walker, an exhaustive split search, and the kernel duality.

use approx::assert_relative_eq;
use payt_core::forest::{self, ForestParams, Node, Tree};
use payt_core::matrix::Matrix;
use payt_core::stream_rng;
use rand::Rng;

/// Naive per-tree walker: follow splits by hand, average the leaf target
/// values, then average across trees. Shares nothing with Forest::predict
/// beyond the stored tree structure.
fn naive_predict(trees: &[Tree], target: &[f64], x_row: &[f64]) -> f64 {
    let mut total = 0.0;
    for tree in trees {
        let mut at = 0usize;
        let members = loop {
            match &tree.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x_row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { members } => break members,
            }
        };
        let mut sum = 0.0;
        for &m in members {
            sum += target[m as usize];
        }
        total += sum / members.len() as f64;
    }
    total / trees.len() as f64
}

fn naive_kernel_weights(trees: &[Tree], n: usize, x_row: &[f64]) -> Vec<f64> {
    let mut weights = vec![0.0; n];
    for tree in trees {
        let mut at = 0usize;
        let members = loop {
            match &tree.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x_row[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { members } => break members,
            }
        };
        for &m in members {
            weights[m as usize] += 1.0 / (trees.len() as f64 * members.len() as f64);
        }
    }
    weights
}

fn tiny_data(n: usize, d: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> =
        rows.iter().map(|r| 2.0 * r[0] + r.get(1).copied().unwrap_or(0.0)).collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn naive_walker_reproduces_predict_and_weights() {
    let (x, y) = tiny_data(12, 2, 3);
    let params = ForestParams {
        num_trees: 5,
        min_leaf_size: 2,
        mtry: 2,
        subsample_fraction: 0.6,
        imbalance_penalty: 0.0,
        honesty_fraction: Some(0.5),
    };
    let forest = forest::fit(&x, &y, &params, 17).unwrap();
    let mut rng = stream_rng(5, 1);
    for _ in 0..100 {
        let q = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
        let fast = forest.predict(&q);
        let naive = naive_predict(&forest.trees, &y, &q);
        assert_relative_eq!(fast, naive, epsilon = 1e-10);
        let w = forest.kernel_weights_of(&q);
        let w_naive = naive_kernel_weights(&forest.trees, x.nrows(), &q);
        for (a, b) in w.iter().zip(&w_naive) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
        // kernel duality: prediction equals the weighted target sum
        let dual: f64 = w.iter().zip(&y).map(|(wi, yi)| wi * yi).sum();
        assert_relative_eq!(dual, fast, epsilon = 1e-10);
    }
}

/// Exhaustive CART: at every node try all midpoints between consecutive
/// distinct values and take the largest squared-error reduction, ties to the
/// lowest threshold.
fn brute_force_cart(x: &[f64], y: &[f64], idx: &[usize], min_leaf: usize) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)));
    let n = order.len();
    let mean = |ids: &[usize]| ids.iter().map(|&i| y[i]).sum::<f64>() / ids.len() as f64;
    let sse = |ids: &[usize]| {
        let m = mean(ids);
        ids.iter().map(|&i| (y[i] - m) * (y[i] - m)).sum::<f64>()
    };
    let parent_sse = sse(&order);
    let mut best: Option<(f64, f64, usize)> = None; // gain, threshold, left size
    for m in min_leaf..=(n - min_leaf) {
        if m == 0 || m == n {
            continue;
        }
        let (lo, hi) = (x[order[m - 1]], x[order[m]]);
        if lo == hi {
            continue;
        }
        let thr = lo + (hi - lo) / 2.0;
        let gain = parent_sse - sse(&order[..m]) - sse(&order[m..]);
        if gain > 1e-10 * parent_sse && best.is_none_or(|(g, _, _)| gain > g) {
            best = Some((gain, thr, m));
        }
    }
    match best {
        None => vec![(f64::NAN, order)],
        Some((_, thr, m)) => {
            let mut out = Vec::new();
            out.push((thr, Vec::new())); // marker: split at thr
            out.extend(brute_force_cart(x, y, &order[..m], min_leaf));
            out.extend(brute_force_cart(x, y, &order[m..], min_leaf));
            out
        }
    }
}

#[test]
fn single_tree_matches_exhaustive_cart() {
    // n = 8, d = 1, one tree grown on the full sample without honesty
    let xs = vec![0.1, 0.2, 0.35, 0.4, 0.6, 0.7, 0.85, 0.9];
    let ys = vec![1.0, 1.2, 0.9, 1.1, 5.0, 5.2, 4.9, 5.1];
    let x = Matrix::from_rows(&xs.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap();
    let params = ForestParams {
        num_trees: 1,
        min_leaf_size: 2,
        mtry: 1,
        subsample_fraction: 1.0,
        imbalance_penalty: 0.0,
        honesty_fraction: None,
    };
    let forest = forest::fit(&x, &ys, &params, 5).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let oracle = brute_force_cart(&xs, &ys, &idx, 2);
    // collect split thresholds from both trees in depth-first order
    let oracle_thresholds: Vec<f64> =
        oracle.iter().filter(|(t, m)| m.is_empty() && t.is_finite()).map(|(t, _)| *t).collect();
    let mut fitted_thresholds = Vec::new();
    fn walk(tree: &Tree, at: usize, out: &mut Vec<f64>) {
        if let Node::Split { threshold, left, right, .. } = &tree.nodes[at] {
            out.push(*threshold);
            walk(tree, *left as usize, out);
            walk(tree, *right as usize, out);
        }
    }
    walk(&forest.trees[0], 0, &mut fitted_thresholds);
    assert_eq!(fitted_thresholds, oracle_thresholds);
    // and the fitted tree predicts the same leaf means on a dense grid
    for step in 0..50 {
        let q = [step as f64 / 50.0];
        let naive = naive_predict(&forest.trees, &ys, &q);
        assert_relative_eq!(forest.predict(&q), naive, epsilon = 1e-12);
    }
}

#[test]
fn oob_error_stays_close_to_in_sample_error() {
    // smooth 1-d signal: out-of-sample error within 2x of in-sample error
    let mut rng = stream_rng(11, 0);
    let n = 300;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] + 0.05 * rng.random_range(-1.0..1.0)).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let params = ForestParams { num_trees: 300, min_leaf_size: 5, ..ForestParams::default() };
    let forest = forest::fit(&x, &y, &params, 7).unwrap();
    let mut in_sse = 0.0;
    let mut oob_sse = 0.0;
    for (i, yi) in y.iter().enumerate() {
        in_sse += (forest.predict(x.row(i)) - yi).powi(2);
        oob_sse += (forest.predict_oob(i).unwrap() - yi).powi(2);
    }
    let in_rmse = (in_sse / n as f64).sqrt();
    let oob_rmse = (oob_sse / n as f64).sqrt();
    assert!(
        oob_rmse < 2.0 * in_rmse,
        "oob rmse {oob_rmse:.4} vs in-sample {in_rmse:.4}"
    );
}

#[test]
fn predictions_stabilize_with_forest_size() {
    let (x, y) = tiny_data(200, 3, 23);
    let sd_y = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (y.len() - 1) as f64).sqrt()
    };
    let small = forest::fit(
        &x,
        &y,
        &ForestParams { num_trees: 1000, min_leaf_size: 5, ..ForestParams::default() },
        3,
    )
    .unwrap();
    let large = forest::fit(
        &x,
        &y,
        &ForestParams { num_trees: 4000, min_leaf_size: 5, ..ForestParams::default() },
        3,
    )
    .unwrap();
    let mut max_diff = 0.0_f64;
    for i in 0..x.nrows() {
        max_diff = max_diff.max((small.predict(x.row(i)) - large.predict(x.row(i))).abs());
    }
    assert!(max_diff < 0.05 * sd_y, "max diff {max_diff:.4} vs sd {sd_y:.4}");
}
