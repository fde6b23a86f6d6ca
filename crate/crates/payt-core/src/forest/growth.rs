//! Recursive partitioning engine shared by the regression (variance-reduction)
//! and effect-heterogeneity forests.
//!
//! Trees are grown on a `split` index set and populated with a disjoint
//! `estimation` index set (honest splitting); with honesty disabled the two
//! sets coincide. Candidate thresholds are midpoints between consecutive
//! distinct sorted feature values, ties at a threshold go left, and the best
//! split is the first strict maximum scanning features in ascending order.

use crate::matrix::Matrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Ridge added to per-node effect denominators so tiny nodes cannot blow up.
pub(crate) const NODE_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { members: Vec<u32> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Training indices populating the leaf that contains `x_row`.
    pub fn leaf_members(&self, x_row: &[f64]) -> &[u32] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
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

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { members } => Some(members.as_slice()),
            Node::Split { .. } => None,
        })
    }
}

/// Split-scoring rule. `Variance` maximizes the squared-error reduction of the
/// target; `Effect` maximizes n_L * n_R * (delta_L - delta_R)^2 where delta is
/// the within-child residual-on-residual slope.
pub(crate) enum GrowCriterion<'a> {
    Variance {
        y: &'a [f64],
    },
    Effect {
        y_resid: &'a [f64],
        p_resid: &'a [f64],
        treated: &'a [bool],
        min_treated: usize,
        min_control: usize,
        /// nodes whose sum of squared price residuals falls below this are leaves
        denom_floor: f64,
    },
}

pub(crate) struct GrowSpec<'a> {
    pub x: &'a Matrix,
    pub criterion: GrowCriterion<'a>,
    pub min_leaf_size: usize,
    pub mtry: usize,
    pub imbalance_penalty: f64,
}

struct Workspace {
    nodes: Vec<Node>,
}

/// Grows one tree. `split_idx` chooses splits, `est_idx` populates leaves;
/// pass identical slices to disable honesty.
pub(crate) fn grow_tree(
    spec: &GrowSpec<'_>,
    split_idx: &[u32],
    est_idx: &[u32],
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut ws = Workspace { nodes: Vec::new() };
    let split = split_idx.to_vec();
    let est = est_idx.to_vec();
    grow_node(spec, split, est, &mut ws, rng);
    Tree { nodes: ws.nodes }
}

fn make_leaf(ws: &mut Workspace, mut est: Vec<u32>) -> u32 {
    est.sort_unstable();
    ws.nodes.push(Node::Leaf { members: est });
    (ws.nodes.len() - 1) as u32
}

fn grow_node(
    spec: &GrowSpec<'_>,
    split: Vec<u32>,
    est: Vec<u32>,
    ws: &mut Workspace,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let min_leaf = spec.min_leaf_size;
    if split.len() < 2 * min_leaf || est.len() < 2 * min_leaf || !node_splittable(spec, &split) {
        return make_leaf(ws, est);
    }
    let d = spec.x.ncols();
    let mtry = spec.mtry.clamp(1, d);
    let mut features = rand::seq::index::sample(rng, d, mtry).into_vec();
    features.sort_unstable();

    let mut best: Option<(f64, usize, f64)> = None; // score, feature, threshold
    for f in features {
        if let Some((threshold, score)) = best_split_on_feature(spec, f, &split, &est) {
            let better = match best {
                None => true,
                Some((s, _, _)) => score > s,
            };
            if better {
                best = Some((score, f, threshold));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return make_leaf(ws, est);
    };

    let (split_l, split_r): (Vec<u32>, Vec<u32>) =
        split.iter().partition(|&&r| spec.x.get(r as usize, feature) <= threshold);
    let (est_l, est_r): (Vec<u32>, Vec<u32>) =
        est.iter().partition(|&&r| spec.x.get(r as usize, feature) <= threshold);

    let at = ws.nodes.len();
    ws.nodes.push(Node::Leaf { members: Vec::new() }); // placeholder
    let left = grow_node(spec, split_l, est_l, ws, rng);
    let right = grow_node(spec, split_r, est_r, ws, rng);
    ws.nodes[at] = Node::Split { feature: feature as u32, threshold, left, right };
    at as u32
}

fn node_splittable(spec: &GrowSpec<'_>, split: &[u32]) -> bool {
    match &spec.criterion {
        GrowCriterion::Variance { .. } => true,
        GrowCriterion::Effect { p_resid, denom_floor, .. } => {
            let spp: f64 = split.iter().map(|&r| p_resid[r as usize].powi(2)).sum();
            spp >= *denom_floor
        }
    }
}

/// Sorted (value, row) pairs for one feature; row index breaks value ties so
/// the order is fully deterministic.
fn sorted_by_feature(x: &Matrix, f: usize, idx: &[u32]) -> Vec<(f64, u32)> {
    let mut v: Vec<(f64, u32)> = idx.iter().map(|&r| (x.get(r as usize, f), r)).collect();
    v.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    v
}

fn best_split_on_feature(
    spec: &GrowSpec<'_>,
    f: usize,
    split: &[u32],
    est: &[u32],
) -> Option<(f64, f64)> {
    let sorted = sorted_by_feature(spec.x, f, split);
    if sorted.first().map(|v| v.0) == sorted.last().map(|v| v.0) {
        return None; // constant feature in this node
    }
    let est_sorted = sorted_by_feature(spec.x, f, est);
    match &spec.criterion {
        GrowCriterion::Variance { y } => {
            scan_variance(&sorted, &est_sorted, y, spec.min_leaf_size, spec.imbalance_penalty)
        }
        GrowCriterion::Effect { y_resid, p_resid, treated, min_treated, min_control, .. } => {
            scan_effect(
                &sorted,
                &est_sorted,
                y_resid,
                p_resid,
                treated,
                spec.min_leaf_size,
                *min_treated,
                *min_control,
                spec.imbalance_penalty,
            )
        }
    }
}

/// Walks candidate boundaries of the split-half ordering, keeping an aligned
/// cursor into the estimation-half ordering.
fn scan_variance(
    sorted: &[(f64, u32)],
    est_sorted: &[(f64, u32)],
    y: &[f64],
    min_leaf: usize,
    penalty: f64,
) -> Option<(f64, f64)> {
    let n = sorted.len();
    let nf = n as f64;
    let total: f64 = sorted.iter().map(|(_, r)| y[*r as usize]).sum();
    let ybar = total / nf;
    // center the target within the node for numerical stability
    let sse_parent: f64 = sorted.iter().map(|(_, r)| (y[*r as usize] - ybar).powi(2)).sum();
    if sse_parent <= 0.0 {
        return None;
    }
    let mse_parent = sse_parent / nf;
    let gain_floor = 1e-10 * sse_parent;

    let mut best: Option<(f64, f64)> = None;
    let mut sum_l = 0.0;
    let mut est_cursor = 0usize;
    for m in 1..n {
        sum_l += y[sorted[m - 1].1 as usize] - ybar;
        let (v_prev, v_next) = (sorted[m - 1].0, sorted[m].0);
        if v_prev == v_next {
            continue;
        }
        let threshold = v_prev + (v_next - v_prev) / 2.0;
        let n_l = m;
        let n_r = n - m;
        if n_l < min_leaf || n_r < min_leaf {
            continue;
        }
        while est_cursor < est_sorted.len() && est_sorted[est_cursor].0 <= threshold {
            est_cursor += 1;
        }
        if est_cursor < min_leaf || est_sorted.len() - est_cursor < min_leaf {
            continue;
        }
        let sum_r = -sum_l; // centered totals cancel
        let gain = sum_l * sum_l / n_l as f64 + sum_r * sum_r / n_r as f64
            - penalty * (n_l as f64 - n_r as f64).abs() * mse_parent;
        if gain > gain_floor && best.is_none_or(|(_, s)| gain > s) {
            best = Some((threshold, gain));
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn scan_effect(
    sorted: &[(f64, u32)],
    est_sorted: &[(f64, u32)],
    y_resid: &[f64],
    p_resid: &[f64],
    treated: &[bool],
    min_leaf: usize,
    min_treated: usize,
    min_control: usize,
    penalty: f64,
) -> Option<(f64, f64)> {
    let n = sorted.len();
    let mut tot_yp = 0.0;
    let mut tot_pp = 0.0;
    let mut tot_t = 0usize;
    for (_, r) in sorted {
        let r = *r as usize;
        tot_yp += y_resid[r] * p_resid[r];
        tot_pp += p_resid[r] * p_resid[r];
        tot_t += usize::from(treated[r]);
    }
    let est_treated_total: usize =
        est_sorted.iter().map(|(_, r)| usize::from(treated[*r as usize])).sum();

    let mut best: Option<(f64, f64)> = None;
    let mut yp_l = 0.0;
    let mut pp_l = 0.0;
    let mut t_l = 0usize;
    let mut est_cursor = 0usize;
    let mut est_t_l = 0usize;
    for m in 1..n {
        let r = sorted[m - 1].1 as usize;
        yp_l += y_resid[r] * p_resid[r];
        pp_l += p_resid[r] * p_resid[r];
        t_l += usize::from(treated[r]);
        let (v_prev, v_next) = (sorted[m - 1].0, sorted[m].0);
        if v_prev == v_next {
            continue;
        }
        let threshold = v_prev + (v_next - v_prev) / 2.0;
        let n_l = m;
        let n_r = n - m;
        if n_l < min_leaf || n_r < min_leaf {
            continue;
        }
        let t_r = tot_t - t_l;
        let (c_l, c_r) = (n_l - t_l, n_r - t_r);
        if t_l < min_treated || t_r < min_treated || c_l < min_control || c_r < min_control {
            continue;
        }
        while est_cursor < est_sorted.len() && est_sorted[est_cursor].0 <= threshold {
            est_t_l += usize::from(treated[est_sorted[est_cursor].1 as usize]);
            est_cursor += 1;
        }
        let est_n_l = est_cursor;
        let est_n_r = est_sorted.len() - est_n_l;
        let est_t_r = est_treated_total - est_t_l;
        if est_n_l < min_leaf
            || est_n_r < min_leaf
            || est_t_l < min_treated
            || est_t_r < min_treated
            || est_n_l - est_t_l < min_control
            || est_n_r - est_t_r < min_control
        {
            continue;
        }
        let delta_l = yp_l / (pp_l + NODE_RIDGE);
        let delta_r = (tot_yp - yp_l) / ((tot_pp - pp_l) + NODE_RIDGE);
        let share_l = t_l as f64 / n_l as f64;
        let share_r = t_r as f64 / n_r as f64;
        let score = n_l as f64 * n_r as f64 * (delta_l - delta_r).powi(2)
            - penalty * (n_l as f64 - n_r as f64).abs() * (share_l - share_r).abs();
        if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((threshold, score));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn constant_target_yields_single_leaf() {
        let x = column(&[1.0, 2.0, 3.0, 4.0]);
        let y = vec![5.0; 4];
        let idx: Vec<u32> = (0..4).collect();
        let spec = GrowSpec {
            x: &x,
            criterion: GrowCriterion::Variance { y: &y },
            min_leaf_size: 1,
            mtry: 1,
            imbalance_penalty: 0.0,
        };
        let tree = grow_tree(&spec, &idx, &idx, &mut stream_rng(0, 0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.leaf_members(&[2.5]), &[0, 1, 2, 3]);
    }

    #[test]
    fn obvious_step_is_split_at_midpoint() {
        let x = column(&[0.0, 1.0, 10.0, 11.0]);
        let y = vec![0.0, 0.0, 8.0, 8.0];
        let idx: Vec<u32> = (0..4).collect();
        let spec = GrowSpec {
            x: &x,
            criterion: GrowCriterion::Variance { y: &y },
            min_leaf_size: 2,
            mtry: 1,
            imbalance_penalty: 0.0,
        };
        let tree = grow_tree(&spec, &idx, &idx, &mut stream_rng(0, 0));
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 5.5),
            Node::Leaf { .. } => panic!("expected a split"),
        }
        assert_eq!(tree.leaf_members(&[5.5]), &[0, 1]); // ties go left
        assert_eq!(tree.leaf_members(&[5.6]), &[2, 3]);
    }

    #[test]
    fn honest_leaves_hold_only_estimation_rows() {
        let x = column(&[0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0, 13.0]);
        let y = vec![0.0, 0.0, 0.0, 0.0, 4.0, 4.0, 4.0, 4.0];
        let split: Vec<u32> = vec![0, 1, 4, 5];
        let est: Vec<u32> = vec![2, 3, 6, 7];
        let spec = GrowSpec {
            x: &x,
            criterion: GrowCriterion::Variance { y: &y },
            min_leaf_size: 2,
            mtry: 1,
            imbalance_penalty: 0.0,
        };
        let tree = grow_tree(&spec, &split, &est, &mut stream_rng(0, 0));
        for leaf in tree.leaves() {
            assert!(leaf.iter().all(|r| est.contains(r)), "split rows leaked into a leaf");
            assert!(leaf.len() >= 2);
        }
    }

    #[test]
    fn effect_split_separates_opposite_slopes() {
        // rows 0..4 have slope +1, rows 4..8 slope -1, separated by x at 0.5
        let x = column(&[0.0, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 1.0]);
        let p = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let y: Vec<f64> = (0..8).map(|i| if i < 4 { p[i] } else { -p[i] }).collect();
        let treated = vec![true, false, true, false, true, false, true, false];
        let idx: Vec<u32> = (0..8).collect();
        let spec = GrowSpec {
            x: &x,
            criterion: GrowCriterion::Effect {
                y_resid: &y,
                p_resid: &p,
                treated: &treated,
                min_treated: 1,
                min_control: 1,
                denom_floor: 0.0,
            },
            min_leaf_size: 2,
            mtry: 1,
            imbalance_penalty: 0.0,
        };
        let tree = grow_tree(&spec, &idx, &idx, &mut stream_rng(0, 3));
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.5),
            Node::Leaf { .. } => panic!("expected a split"),
        }
    }

    #[test]
    fn effect_node_below_denominator_floor_stays_leaf() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let p = vec![0.0; 4];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let treated = vec![true, false, true, false];
        let idx: Vec<u32> = (0..4).collect();
        let spec = GrowSpec {
            x: &x,
            criterion: GrowCriterion::Effect {
                y_resid: &y,
                p_resid: &p,
                treated: &treated,
                min_treated: 1,
                min_control: 1,
                denom_floor: 1e-8,
            },
            min_leaf_size: 1,
            mtry: 1,
            imbalance_penalty: 0.0,
        };
        let tree = grow_tree(&spec, &idx, &idx, &mut stream_rng(0, 0));
        assert_eq!(tree.nodes.len(), 1);
    }
}
