//! Brute-force k-nearest-neighbors over standardized features.

use super::linear::Standardizer;
use crate::data::TaskKind;

#[derive(Debug)]
pub(crate) struct KnnModel {
    std: Standardizer,
    train: Vec<Vec<f64>>,
    target: Vec<f64>,
    k: usize,
    task: TaskKind,
    n_classes: usize,
}

impl KnnModel {
    pub(crate) fn fit(
        rows: &[Vec<f64>],
        target: &[f64],
        task: TaskKind,
        n_classes: usize,
        k: usize,
    ) -> KnnModel {
        let std = Standardizer::fit(rows);
        let train = rows.iter().map(|r| std.apply(r)).collect();
        KnnModel {
            std,
            train,
            target: target.to_vec(),
            k: k.min(rows.len()),
            task,
            n_classes,
        }
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.std.apply(row);
        // Distance ties break by training row index so prediction order
        // never depends on float comparison quirks.
        let mut dists: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d2: f64 = t.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let neighbors = &dists[..self.k];
        match self.task {
            TaskKind::Classification => {
                let mut votes = vec![0usize; self.n_classes];
                for &(_, i) in neighbors {
                    votes[self.target[i] as usize] += 1;
                }
                let mut best = 0;
                for (label, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = label;
                    }
                }
                best as f64
            }
            TaskKind::Regression => {
                neighbors.iter().map(|&(_, i)| self.target[i]).sum::<f64>() / self.k as f64
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_nn_memorizes_training_points() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let target = vec![0.0, 1.0, 2.0];
        let model = KnnModel::fit(&rows, &target, TaskKind::Classification, 3, 1);
        for (row, want) in rows.iter().zip(&target) {
            assert_eq!(model.predict_row(row), *want);
        }
    }

    #[test]
    fn regression_averages_the_neighborhood() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let target = vec![0.0, 1.0, 2.0, 3.0];
        let model = KnnModel::fit(&rows, &target, TaskKind::Regression, 0, 2);
        // Nearest two to 0.6 (standardized order preserved) are rows 0 and 1.
        assert_eq!(model.predict_row(&[0.6]), 0.5);
    }

    #[test]
    fn k_larger_than_train_is_clamped() {
        let rows = vec![vec![0.0], vec![1.0]];
        let target = vec![0.0, 2.0];
        let model = KnnModel::fit(&rows, &target, TaskKind::Regression, 0, 10);
        assert_eq!(model.predict_row(&[0.5]), 1.0);
    }
}
