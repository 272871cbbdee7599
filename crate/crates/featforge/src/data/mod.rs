//! Tabular data handling: ingestion with cleaning, train/test splitting,
//! downstream model evaluation, and synthetic fixtures.

mod metrics;
mod models;

pub use metrics::{f1_macro, one_minus_rae, MetricKind};
pub use models::{evaluate_downstream, DownstreamModelKind, EvalResult};

use crate::rng::{rng_from_seed, sub_seed, DetRng};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Target column picked by header name or 0-based position.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset has no data rows")]
    EmptyFile,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("target column {0} not found")]
    MissingTarget(String),
    #[error("target at row {row} is not a finite number")]
    NonNumericTarget { row: usize },
    #[error("target is constant; nothing to learn")]
    ConstantTarget,
    #[error("column lengths disagree")]
    RaggedColumns,
    #[error("non-finite value in column {column} row {row} after cleaning")]
    NonFinite { column: usize, row: usize },
    #[error("classification labels must be whole numbers >= 0")]
    BadLabels,
    #[error("test fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("class {label} has a single member; stratified split impossible")]
    ClassTooSmall { label: usize },
    #[error("stratified split requires a classification task")]
    StratifyRegression,
    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad hyperparameter: {0}")]
    BadHyperparameter(String),
    #[error("metric inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("relative absolute error undefined: truth values are all equal")]
    ZeroDenominator,
}

/// Column-major tabular dataset with a single target.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<Vec<f64>>,
    /// Regression values, or class labels stored as whole numbers 0..k-1.
    pub target: Vec<f64>,
    pub task: TaskKind,
    pub feature_names: Vec<String>,
    pub id: String,
}

impl Dataset {
    pub fn new(
        columns: Vec<Vec<f64>>,
        target: Vec<f64>,
        task: TaskKind,
        feature_names: Vec<String>,
        id: String,
    ) -> Result<Dataset, DataError> {
        if columns.is_empty() {
            return Err(DataError::NoFeatures);
        }
        if target.is_empty() {
            return Err(DataError::EmptyFile);
        }
        if feature_names.len() != columns.len() {
            return Err(DataError::ShapeMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != target.len() {
                return Err(DataError::RaggedColumns);
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { column: j, row: i });
            }
        }
        match task {
            TaskKind::Classification => {
                if target.iter().any(|&t| t < 0.0 || t.fract() != 0.0) {
                    return Err(DataError::BadLabels);
                }
            }
            TaskKind::Regression => {
                if target.iter().any(|t| !t.is_finite()) {
                    return Err(DataError::NonNumericTarget { row: 0 });
                }
            }
        }
        Ok(Dataset {
            columns,
            target,
            task,
            feature_names,
            id,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// For classification: max label + 1 (labels are 0-based).
    pub fn n_classes(&self) -> usize {
        match self.task {
            TaskKind::Classification => self
                .target
                .iter()
                .map(|&t| t as usize)
                .max()
                .map_or(0, |m| m + 1),
            TaskKind::Regression => 0,
        }
    }

    /// Same rows and target, different feature matrix (e.g. after applying
    /// a transformation sequence).
    pub fn with_columns(
        &self,
        columns: Vec<Vec<f64>>,
        feature_names: Vec<String>,
    ) -> Result<Dataset, DataError> {
        Dataset::new(
            columns,
            self.target.clone(),
            self.task,
            feature_names,
            self.id.clone(),
        )
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|col| idx.iter().map(|&i| col[i]).collect())
                .collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            task: self.task,
            feature_names: self.feature_names.clone(),
            id: self.id.clone(),
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Load a CSV with a header row. Feature cells that fail to parse as finite
/// numbers are imputed with their column's median (of the cells that did
/// parse; 0 if none did). Classification targets are factorized to 0..k-1 in
/// order of first appearance; regression targets must parse finite.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &ColumnSelector,
    task: TaskKind,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let target_idx = match target {
        ColumnSelector::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingTarget(format!("`{name}`")))?,
        ColumnSelector::Index(i) => {
            if *i >= headers.len() {
                return Err(DataError::MissingTarget(format!("index {i}")));
            }
            *i
        }
    };

    let mut raw_features: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len() - 1];
    let mut raw_target: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut feat = 0;
        for (col, cell) in record.iter().enumerate() {
            if col == target_idx {
                raw_target.push(cell.to_string());
            } else {
                let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
                raw_features[feat].push(parsed);
                feat += 1;
            }
        }
    }
    if raw_target.is_empty() {
        return Err(DataError::EmptyFile);
    }
    if raw_features.is_empty() {
        return Err(DataError::NoFeatures);
    }

    let columns: Vec<Vec<f64>> = raw_features
        .iter()
        .map(|col| {
            let mut present: Vec<f64> = col.iter().flatten().copied().collect();
            let fill = median(&mut present);
            col.iter().map(|v| v.unwrap_or(fill)).collect()
        })
        .collect();

    let target_values: Vec<f64> = match task {
        TaskKind::Classification => {
            let mut seen: Vec<&str> = Vec::new();
            raw_target
                .iter()
                .map(|cell| {
                    let label = match seen.iter().position(|s| s == cell) {
                        Some(p) => p,
                        None => {
                            seen.push(cell);
                            seen.len() - 1
                        }
                    };
                    label as f64
                })
                .collect()
        }
        TaskKind::Regression => raw_target
            .iter()
            .enumerate()
            .map(|(row, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(DataError::NonNumericTarget { row })
            })
            .collect::<Result<_, _>>()?,
    };
    if target_values.windows(2).all(|w| w[0] == w[1]) {
        return Err(DataError::ConstantTarget);
    }

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Dataset::new(columns, target_values, task, feature_names, id)
}

/// Deterministic train/test split. Membership is decided by a seeded
/// shuffle; both halves keep the original row order. Stratified splits
/// (classification only) sample within each class, keep at least one train
/// member per class, and guarantee a non-empty test set.
pub fn split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<(Dataset, Dataset), DataError> {
    if !test_fraction.is_finite() || test_fraction <= 0.0 || test_fraction >= 1.0 {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n = dataset.n_rows();
    if n < 2 {
        return Err(DataError::DegenerateTraining(
            "need at least two rows to split".into(),
        ));
    }
    let mut rng = rng_from_seed(sub_seed(seed, "data.split"));
    let mut test_mask = vec![false; n];

    if stratify {
        if dataset.task != TaskKind::Classification {
            return Err(DataError::StratifyRegression);
        }
        let n_classes = dataset.n_classes();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &t) in dataset.target.iter().enumerate() {
            groups[t as usize].push(i);
        }
        let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        for group in &groups {
            if group.len() < 2 {
                return Err(DataError::ClassTooSmall {
                    label: dataset.target[group[0]] as usize,
                });
            }
        }
        let mut shuffled: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.shuffle(&mut rng);
                g
            })
            .collect();
        let mut takes: Vec<usize> = shuffled
            .iter()
            .map(|g| {
                let want = (g.len() as f64 * test_fraction).round() as usize;
                want.min(g.len() - 1)
            })
            .collect();
        if takes.iter().sum::<usize>() == 0 {
            let largest = (0..shuffled.len())
                .max_by_key(|&i| shuffled[i].len())
                .expect("at least one class");
            takes[largest] = 1;
        }
        for (group, take) in shuffled.iter_mut().zip(takes) {
            for &i in group.iter().take(take) {
                test_mask[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        for &i in &idx[..n_test] {
            test_mask[i] = true;
        }
    }

    let train_idx: Vec<usize> = (0..n).filter(|&i| !test_mask[i]).collect();
    let test_idx: Vec<usize> = (0..n).filter(|&i| test_mask[i]).collect();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

fn gauss(rng: &mut DetRng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Regression fixture: five uniform features on (-2, 2); the target is
/// f0*f1 + ln(f2 + 3) plus mild Gaussian noise, so a planted segment like
/// `f0 f1 multiply` carries real signal.
pub fn synthetic_regression(n_rows: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(sub_seed(seed, "synthetic.regression"));
    let columns: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..n_rows).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let target: Vec<f64> = (0..n_rows)
        .map(|i| {
            columns[0][i] * columns[1][i] + (columns[2][i] + 3.0).ln() + 0.1 * gauss(&mut rng)
        })
        .collect();
    let names = (0..5).map(|j| format!("x{j}")).collect();
    Dataset::new(columns, target, TaskKind::Regression, names, "synthetic_regression".into())
        .expect("generator output is well formed")
}

/// Classification fixture: five uniform features, label 1 when
/// f0*f1 + 0.5*f2 is positive.
pub fn synthetic_classification(n_rows: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(sub_seed(seed, "synthetic.classification"));
    let columns: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..n_rows).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let target: Vec<f64> = (0..n_rows)
        .map(|i| f64::from(columns[0][i] * columns[1][i] + 0.5 * columns[2][i] > 0.0))
        .collect();
    let names = (0..5).map(|j| format!("x{j}")).collect();
    Dataset::new(
        columns,
        target,
        TaskKind::Classification,
        names,
        "synthetic_classification".into(),
    )
    .expect("generator output is well formed")
}
