//! CART-style decision tree and a bootstrap forest built on it.
//!
//! Splits are axis-aligned thresholds chosen by Gini reduction
//! (classification) or sum-of-squares reduction (regression). All
//! tie-breaking is fixed: features are scanned in ascending index order,
//! thresholds in ascending value order, and only a strictly better gain
//! displaces the incumbent, so fitting is deterministic for a given RNG
//! stream.

use crate::data::TaskKind;
use crate::rng::{rng_from_seed, sub_seed_indexed, DetRng};
use rand::Rng;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    /// How many features to consider per split; `None` means all.
    pub n_sub_features: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct DecisionTree {
    root: Node,
}

struct FitCtx<'a> {
    rows: &'a [Vec<f64>],
    target: &'a [f64],
    n_classes: usize,
    task: TaskKind,
    params: TreeParams,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p
        })
        .sum::<f64>()
}

fn sse(sum: f64, sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    sum_sq - sum * sum / n as f64
}

fn majority_label(counts: &[usize]) -> f64 {
    let mut best = 0usize;
    for (label, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = label;
        }
    }
    best as f64
}

fn leaf_value(ctx: &FitCtx, idx: &[usize]) -> f64 {
    match ctx.task {
        TaskKind::Classification => {
            let mut counts = vec![0usize; ctx.n_classes];
            for &i in idx {
                counts[ctx.target[i] as usize] += 1;
            }
            majority_label(&counts)
        }
        TaskKind::Regression => {
            idx.iter().map(|&i| ctx.target[i]).sum::<f64>() / idx.len() as f64
        }
    }
}

/// Candidate features for one split: either all of them or a sorted random
/// subset, so the scan order (and therefore tie-breaking) stays by index.
fn candidate_features(n_features: usize, params: &TreeParams, rng: &mut DetRng) -> Vec<usize> {
    match params.n_sub_features {
        None => (0..n_features).collect(),
        Some(k) if k >= n_features => (0..n_features).collect(),
        Some(k) => {
            let mut pool: Vec<usize> = (0..n_features).collect();
            for i in 0..k {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut subset = pool[..k].to_vec();
            subset.sort_unstable();
            subset
        }
    }
}

/// Best (gain, feature, threshold) over the candidate features, or `None`
/// when no threshold strictly improves the node impurity.
fn best_split(ctx: &FitCtx, idx: &[usize], features: &[usize]) -> Option<(f64, usize, f64)> {
    let n = idx.len();
    let mut best: Option<(f64, usize, f64)> = None;

    match ctx.task {
        TaskKind::Classification => {
            let mut parent_counts = vec![0usize; ctx.n_classes];
            for &i in idx {
                parent_counts[ctx.target[i] as usize] += 1;
            }
            let parent = gini(&parent_counts, n);
            for &j in features {
                let mut order: Vec<usize> = idx.to_vec();
                order.sort_by(|&a, &b| {
                    ctx.rows[a][j]
                        .partial_cmp(&ctx.rows[b][j])
                        .expect("finite features")
                });
                let mut left_counts = vec![0usize; ctx.n_classes];
                let mut right_counts = parent_counts.clone();
                for k in 0..n - 1 {
                    let label = ctx.target[order[k]] as usize;
                    left_counts[label] += 1;
                    right_counts[label] -= 1;
                    let v = ctx.rows[order[k]][j];
                    let v_next = ctx.rows[order[k + 1]][j];
                    if v == v_next {
                        continue;
                    }
                    let n_l = k + 1;
                    let n_r = n - n_l;
                    let weighted = (n_l as f64 * gini(&left_counts, n_l)
                        + n_r as f64 * gini(&right_counts, n_r))
                        / n as f64;
                    let gain = parent - weighted;
                    if gain > best.map_or(MIN_GAIN, |(g, _, _)| g) {
                        best = Some((gain, j, 0.5 * (v + v_next)));
                    }
                }
            }
        }
        TaskKind::Regression => {
            let total_sum: f64 = idx.iter().map(|&i| ctx.target[i]).sum();
            let total_sq: f64 = idx.iter().map(|&i| ctx.target[i] * ctx.target[i]).sum();
            let parent = sse(total_sum, total_sq, n);
            for &j in features {
                let mut order: Vec<usize> = idx.to_vec();
                order.sort_by(|&a, &b| {
                    ctx.rows[a][j]
                        .partial_cmp(&ctx.rows[b][j])
                        .expect("finite features")
                });
                let mut left_sum = 0.0;
                let mut left_sq = 0.0;
                for k in 0..n - 1 {
                    let y = ctx.target[order[k]];
                    left_sum += y;
                    left_sq += y * y;
                    let v = ctx.rows[order[k]][j];
                    let v_next = ctx.rows[order[k + 1]][j];
                    if v == v_next {
                        continue;
                    }
                    let n_l = k + 1;
                    let n_r = n - n_l;
                    let children = sse(left_sum, left_sq, n_l)
                        + sse(total_sum - left_sum, total_sq - left_sq, n_r);
                    let gain = parent - children;
                    if gain > best.map_or(MIN_GAIN, |(g, _, _)| g) {
                        best = Some((gain, j, 0.5 * (v + v_next)));
                    }
                }
            }
        }
    }
    best
}

fn grow(ctx: &FitCtx, idx: &[usize], depth: usize, rng: &mut DetRng) -> Node {
    if depth >= ctx.params.max_depth || idx.len() < 2 {
        return Node::Leaf {
            value: leaf_value(ctx, idx),
        };
    }
    let n_features = ctx.rows[0].len();
    let features = candidate_features(n_features, &ctx.params, rng);
    let Some((_, feature, threshold)) = best_split(ctx, idx, &features) else {
        return Node::Leaf {
            value: leaf_value(ctx, idx),
        };
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| ctx.rows[i][feature] <= threshold);
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(ctx, &left_idx, depth + 1, rng)),
        right: Box::new(grow(ctx, &right_idx, depth + 1, rng)),
    }
}

impl DecisionTree {
    pub(crate) fn fit(
        rows: &[Vec<f64>],
        target: &[f64],
        idx: &[usize],
        task: TaskKind,
        n_classes: usize,
        params: TreeParams,
        rng: &mut DetRng,
    ) -> DecisionTree {
        let ctx = FitCtx {
            rows,
            target,
            n_classes,
            task,
            params,
        };
        DecisionTree {
            root: grow(&ctx, idx, 0, rng),
        }
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub n_sub_features: Option<usize>,
}

#[derive(Debug)]
pub(crate) struct RandomForestModel {
    trees: Vec<DecisionTree>,
    task: TaskKind,
    n_classes: usize,
}

impl RandomForestModel {
    pub(crate) fn fit(
        rows: &[Vec<f64>],
        target: &[f64],
        task: TaskKind,
        n_classes: usize,
        params: ForestParams,
        seed: u64,
    ) -> RandomForestModel {
        let n = rows.len();
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            n_sub_features: params.n_sub_features,
        };
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = rng_from_seed(sub_seed_indexed(seed, "forest.tree", t as u64));
                let idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(rows, target, &idx, task, n_classes, tree_params, &mut rng)
            })
            .collect();
        RandomForestModel {
            trees,
            task,
            n_classes,
        }
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        match self.task {
            TaskKind::Classification => {
                let mut votes = vec![0usize; self.n_classes];
                for tree in &self.trees {
                    votes[tree.predict_row(row) as usize] += 1;
                }
                majority_label(&votes)
            }
            TaskKind::Regression => {
                self.trees
                    .iter()
                    .map(|t| t.predict_row(row))
                    .sum::<f64>()
                    / self.trees.len() as f64
            }
        }
    }
}
