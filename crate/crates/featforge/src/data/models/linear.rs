//! Linear models: closed-form ridge regression and one-vs-rest logistic
//! classification fit by IRLS (Newton steps on the penalized log-likelihood).
//!
//! Features are standardized with training statistics before fitting, which
//! keeps the normal equations well conditioned when generated columns differ
//! by orders of magnitude. The l2 penalty applies to weights only, never the
//! intercept.

use crate::data::DataError;
use crate::linalg::sigmoid;

/// Column means and standard deviations from the training split; constant
/// columns standardize to zero via a unit divisor.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mut means = vec![0.0; d];
        for row in rows {
            for (m, &x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; d];
        for row in rows {
            for j in 0..d {
                let dx = row[j] - means[j];
                stds[j] += dx * dx;
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Standardizer { means, stds }
    }

    pub(crate) fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }
}

/// Gaussian elimination with partial pivoting; `None` on a singular system.
// Index loops throughout: elimination reads one row while updating another,
// which iterator adapters cannot express without split_at_mut noise.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

#[derive(Debug)]
pub(crate) struct RidgeModel {
    std: Standardizer,
    weights: Vec<f64>,
    intercept: f64,
}

impl RidgeModel {
    /// Closed form on standardized features and centered target:
    /// (Z'Z + lambda I) w = Z'(y - mean(y)).
    #[allow(clippy::needless_range_loop)] // mirroring the triangle in place
    pub(crate) fn fit(rows: &[Vec<f64>], target: &[f64], l2: f64) -> Result<RidgeModel, DataError> {
        let std = Standardizer::fit(rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| std.apply(r)).collect();
        let d = z[0].len();
        let y_mean = target.iter().sum::<f64>() / target.len() as f64;

        let mut gram = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (row, &y) in z.iter().zip(target) {
            let yc = y - y_mean;
            for j in 0..d {
                rhs[j] += row[j] * yc;
                for k in j..d {
                    gram[j][k] += row[j] * row[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                gram[j][k] = gram[k][j];
            }
            gram[j][j] += l2;
        }
        let weights = solve(gram, rhs)
            .ok_or_else(|| DataError::DegenerateTraining("singular ridge system".into()))?;
        Ok(RidgeModel {
            std,
            weights,
            intercept: y_mean,
        })
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.std.apply(row);
        self.intercept + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug)]
pub(crate) struct LogisticModel {
    std: Standardizer,
    /// One weight vector (last entry = intercept) per class, one-vs-rest.
    class_weights: Vec<Vec<f64>>,
}

const IRLS_MAX_ITERS: usize = 50;
const IRLS_TOL: f64 = 1e-9;

#[allow(clippy::needless_range_loop)] // mirroring the Hessian triangle in place
fn fit_binary(z: &[Vec<f64>], is_class: &[bool], l2: f64) -> Result<Vec<f64>, DataError> {
    let d = z[0].len();
    let dim = d + 1;
    let mut w = vec![0.0; dim];
    for _ in 0..IRLS_MAX_ITERS {
        // Newton step: (X'WX + lambda I) delta = X'(y - p) - lambda w,
        // with the intercept unpenalized.
        let mut h = vec![vec![0.0; dim]; dim];
        let mut g = vec![0.0; dim];
        for (row, &truth) in z.iter().zip(is_class) {
            let mut margin = w[d];
            for j in 0..d {
                margin += w[j] * row[j];
            }
            let p = sigmoid(margin);
            let weight = (p * (1.0 - p)).max(1e-10);
            let resid = f64::from(truth) - p;
            for j in 0..dim {
                let xj = if j < d { row[j] } else { 1.0 };
                g[j] += xj * resid;
                for k in j..dim {
                    let xk = if k < d { row[k] } else { 1.0 };
                    h[j][k] += weight * xj * xk;
                }
            }
        }
        for j in 0..d {
            g[j] -= l2 * w[j];
            h[j][j] += l2;
        }
        // A tiny ridge on the intercept keeps the Hessian invertible on
        // perfectly separable data without materially biasing the fit.
        h[dim - 1][dim - 1] += 1e-10;
        for j in 0..dim {
            for k in 0..j {
                h[j][k] = h[k][j];
            }
        }
        let delta = solve(h, g)
            .ok_or_else(|| DataError::DegenerateTraining("singular logistic system".into()))?;
        let step: f64 = delta.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (wj, dj) in w.iter_mut().zip(&delta) {
            *wj += dj;
        }
        if step < IRLS_TOL {
            break;
        }
    }
    Ok(w)
}

impl LogisticModel {
    pub(crate) fn fit(
        rows: &[Vec<f64>],
        target: &[f64],
        n_classes: usize,
        l2: f64,
    ) -> Result<LogisticModel, DataError> {
        let std = Standardizer::fit(rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| std.apply(r)).collect();
        let mut class_weights = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let is_class: Vec<bool> = target.iter().map(|&t| t as usize == c).collect();
            class_weights.push(fit_binary(&z, &is_class, l2)?);
        }
        Ok(LogisticModel { std, class_weights })
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let z = self.std.apply(row);
        let d = z.len();
        let mut best = 0usize;
        let mut best_margin = f64::NEG_INFINITY;
        for (c, w) in self.class_weights.iter().enumerate() {
            let mut margin = w[d];
            for j in 0..d {
                margin += w[j] * z[j];
            }
            if margin > best_margin {
                best_margin = margin;
                best = c;
            }
        }
        best as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_a_known_system() {
        // 2x + y = 5, x + 3y = 10 -> x = 1, y = 3.
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(a, vec![5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_reports_singularity() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(a, vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn ridge_recovers_an_exact_linear_target() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![i as f64 * 0.1, (i as f64 * 0.37).sin()])
            .collect();
        let target: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 1.5 * r[1] + 0.7).collect();
        let model = RidgeModel::fit(&rows, &target, 1e-6).unwrap();
        for (row, want) in rows.iter().zip(&target) {
            assert!((model.predict_row(row) - want).abs() < 1e-4);
        }
    }

    #[test]
    fn ridge_handles_constant_columns() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 5.0]).collect();
        let target: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let model = RidgeModel::fit(&rows, &target, 1e-6).unwrap();
        assert!((model.predict_row(&[4.0, 5.0]) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_separates_linearly_separable_classes() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let x = (i as f64 - 19.5) * 0.25;
                vec![x, 0.3 * x + if i % 2 == 0 { 0.05 } else { -0.05 }]
            })
            .collect();
        let target: Vec<f64> = rows.iter().map(|r| f64::from(r[0] > 0.0)).collect();
        let model = LogisticModel::fit(&rows, &target, 2, 1e-3).unwrap();
        for (row, want) in rows.iter().zip(&target) {
            assert_eq!(model.predict_row(row), *want);
        }
    }

    #[test]
    fn logistic_handles_three_classes() {
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            let center = c as f64 * 4.0;
            rows.push(vec![center + 0.2 * ((i / 3) as f64 - 4.5) * 0.2]);
            target.push(c as f64);
        }
        let model = LogisticModel::fit(&rows, &target, 3, 1e-3).unwrap();
        assert_eq!(model.predict_row(&[0.0]), 0.0);
        assert_eq!(model.predict_row(&[4.0]), 1.0);
        assert_eq!(model.predict_row(&[8.0]), 2.0);
    }
}
