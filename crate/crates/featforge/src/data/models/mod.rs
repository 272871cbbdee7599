//! Downstream model zoo and the evaluation entry point.
//!
//! Everything here is implemented in-crate: CART trees, a bootstrap forest,
//! ridge/logistic linear models, and brute-force kNN. Keeping the models
//! internal makes every fitted artifact a pure, seedable function of its
//! inputs, which the reproducibility tests lean on hard.

mod knn;
mod linear;
mod tree;

use super::{Dataset, TaskKind};
use crate::data::metrics::{f1_macro, one_minus_rae, MetricKind};
use crate::data::DataError;
use serde::{Deserialize, Serialize};
use tree::{ForestParams, RandomForestModel};

/// Which model the evaluation fits. Hyperparameters must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DownstreamModelKind {
    RandomForest { n_trees: usize, max_depth: usize },
    DecisionTree { max_depth: usize },
    /// Ridge for regression, one-vs-rest logistic for classification.
    Linear { l2_penalty: f64 },
    Knn { k: usize },
}

impl Default for DownstreamModelKind {
    fn default() -> Self {
        DownstreamModelKind::RandomForest {
            n_trees: 10,
            max_depth: 8,
        }
    }
}

impl std::fmt::Display for DownstreamModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DownstreamModelKind::RandomForest { n_trees, max_depth } => {
                write!(f, "random_forest(n_trees={n_trees}, max_depth={max_depth})")
            }
            DownstreamModelKind::DecisionTree { max_depth } => {
                write!(f, "decision_tree(max_depth={max_depth})")
            }
            DownstreamModelKind::Linear { l2_penalty } => {
                write!(f, "linear(l2_penalty={l2_penalty})")
            }
            DownstreamModelKind::Knn { k } => write!(f, "knn(k={k})"),
        }
    }
}

impl DownstreamModelKind {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::BadHyperparameter(msg.to_string()));
        match *self {
            DownstreamModelKind::RandomForest { n_trees, max_depth } => {
                if n_trees == 0 {
                    return bad("random_forest needs n_trees >= 1");
                }
                if max_depth == 0 {
                    return bad("random_forest needs max_depth >= 1");
                }
            }
            DownstreamModelKind::DecisionTree { max_depth } => {
                if max_depth == 0 {
                    return bad("decision_tree needs max_depth >= 1");
                }
            }
            DownstreamModelKind::Linear { l2_penalty } => {
                if l2_penalty <= 0.0 || !l2_penalty.is_finite() {
                    return bad("linear needs a positive finite l2_penalty");
                }
            }
            DownstreamModelKind::Knn { k } => {
                if k == 0 {
                    return bad("knn needs k >= 1");
                }
            }
        }
        Ok(())
    }
}

/// Score of one fitted model on one test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalResult {
    pub score: f64,
    pub metric: MetricKind,
    pub model: DownstreamModelKind,
    pub seed: u64,
}

enum Fitted {
    Forest(RandomForestModel),
    Ridge(linear::RidgeModel),
    Logistic(linear::LogisticModel),
    Knn(knn::KnnModel),
}

impl Fitted {
    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Fitted::Forest(m) => m.predict_row(row),
            Fitted::Ridge(m) => m.predict_row(row),
            Fitted::Logistic(m) => m.predict_row(row),
            Fitted::Knn(m) => m.predict_row(row),
        }
    }
}

fn to_rows(columns: &[Vec<f64>], n_rows: usize) -> Vec<Vec<f64>> {
    (0..n_rows)
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect()
}

/// The number of distinct features a forest considers per split: the usual
/// sqrt heuristic, at least 1.
fn sqrt_features(n_features: usize) -> usize {
    ((n_features as f64).sqrt().round() as usize).max(1)
}

fn fit(
    kind: DownstreamModelKind,
    rows: &[Vec<f64>],
    target: &[f64],
    task: TaskKind,
    n_classes: usize,
    seed: u64,
) -> Result<Fitted, DataError> {
    let n_features = rows[0].len();
    match kind {
        DownstreamModelKind::RandomForest { n_trees, max_depth } => {
            let params = ForestParams {
                n_trees,
                max_depth,
                bootstrap: true,
                n_sub_features: Some(sqrt_features(n_features)),
            };
            Ok(Fitted::Forest(RandomForestModel::fit(
                rows, target, task, n_classes, params, seed,
            )))
        }
        DownstreamModelKind::DecisionTree { max_depth } => {
            let params = ForestParams {
                n_trees: 1,
                max_depth,
                bootstrap: false,
                n_sub_features: None,
            };
            Ok(Fitted::Forest(RandomForestModel::fit(
                rows, target, task, n_classes, params, seed,
            )))
        }
        DownstreamModelKind::Linear { l2_penalty } => match task {
            TaskKind::Regression => Ok(Fitted::Ridge(linear::RidgeModel::fit(
                rows, target, l2_penalty,
            )?)),
            TaskKind::Classification => Ok(Fitted::Logistic(linear::LogisticModel::fit(
                rows, target, n_classes, l2_penalty,
            )?)),
        },
        DownstreamModelKind::Knn { k } => Ok(Fitted::Knn(knn::KnnModel::fit(
            rows, target, task, n_classes, k,
        ))),
    }
}

/// Fit `model_kind` on the training split and score it on the test split
/// with the task's metric. Pure in (train, test, model_kind, seed).
pub fn evaluate_downstream(
    train: &Dataset,
    test: &Dataset,
    model_kind: DownstreamModelKind,
    seed: u64,
) -> Result<EvalResult, DataError> {
    model_kind.validate()?;
    if train.n_features() != test.n_features() || train.task != test.task {
        return Err(DataError::ShapeMismatch(format!(
            "train has {} features ({:?}), test has {} ({:?})",
            train.n_features(),
            train.task,
            test.n_features(),
            test.task
        )));
    }
    if train.n_rows() == 0 || test.n_rows() == 0 {
        return Err(DataError::DegenerateTraining(
            "empty train or test split".into(),
        ));
    }
    let n_classes = match train.task {
        TaskKind::Classification => {
            let k = train.n_classes();
            if k < 2 {
                return Err(DataError::DegenerateTraining(
                    "training split has a single class".into(),
                ));
            }
            k.max(test.n_classes())
        }
        TaskKind::Regression => 0,
    };

    let train_rows = to_rows(&train.columns, train.n_rows());
    let test_rows = to_rows(&test.columns, test.n_rows());
    let model = fit(
        model_kind,
        &train_rows,
        &train.target,
        train.task,
        n_classes,
        seed,
    )?;
    let pred: Vec<f64> = test_rows.iter().map(|r| model.predict_row(r)).collect();

    let (score, metric) = match train.task {
        TaskKind::Classification => {
            let pred_labels: Vec<usize> = pred.iter().map(|&p| p as usize).collect();
            let true_labels: Vec<usize> = test.target.iter().map(|&t| t as usize).collect();
            (f1_macro(&pred_labels, &true_labels)?, MetricKind::F1Macro)
        }
        TaskKind::Regression => (one_minus_rae(&pred, &test.target)?, MetricKind::OneMinusRae),
    };
    Ok(EvalResult {
        score,
        metric,
        model: model_kind,
        seed,
    })
}
