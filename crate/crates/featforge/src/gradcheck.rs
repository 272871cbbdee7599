//! Finite-difference verification for hand-written backpropagation.
//!
//! Central differences on a random coordinate subset of every tensor,
//! compared against the analytic gradient the caller supplies. The relative
//! error uses max(|analytic|, |numeric|, 1e-8) in the denominator so
//! near-zero gradients do not blow the ratio up.

use crate::nn::Tensors;
use crate::rng::{rng_from_seed, sub_seed};
use rand::Rng;

/// Default number of coordinates probed per tensor.
pub const COORDS_PER_TENSOR: usize = 50;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error across all tensors.
    pub max_rel_error: f64,
    /// (tensor name, worst relative error within it).
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Probe `coords` random coordinates of every tensor in `params`; for each,
/// compare `analytic`'s entry against a central difference of `loss`.
/// `loss` must be a pure function of the parameters.
pub fn check_gradients<P: Tensors>(
    params: &mut P,
    analytic: &P,
    epsilon: f64,
    coords: usize,
    seed: u64,
    mut loss: impl FnMut(&P) -> f64,
) -> GradCheckReport {
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside sensible finite-difference range"
    );
    let mut rng = rng_from_seed(sub_seed(seed, "gradcheck"));
    let layout: Vec<(String, usize)> = analytic
        .tensors()
        .iter()
        .map(|(name, t)| (name.clone(), t.len()))
        .collect();

    let mut per_tensor = Vec::with_capacity(layout.len());
    let mut max_rel_error: f64 = 0.0;
    for (ti, (name, len)) in layout.iter().enumerate() {
        let picks: Vec<usize> = if *len <= coords {
            (0..*len).collect()
        } else {
            // Distinct coordinates via partial shuffle.
            let mut pool: Vec<usize> = (0..*len).collect();
            for i in 0..coords {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(coords);
            pool
        };
        let mut worst: f64 = 0.0;
        for k in picks {
            let orig = params.tensors_mut()[ti].1[k];
            params.tensors_mut()[ti].1[k] = orig + epsilon;
            let lp = loss(params);
            params.tensors_mut()[ti].1[k] = orig - epsilon;
            let lm = loss(params);
            params.tensors_mut()[ti].1[k] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let ana = analytic.tensors()[ti].1[k];
            let rel = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        max_rel_error = max_rel_error.max(worst);
        per_tensor.push((name.clone(), worst));
    }
    GradCheckReport {
        max_rel_error,
        per_tensor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::Linear;
    use crate::rng::rng_from_seed;

    fn quadratic_loss(p: &Linear) -> f64 {
        // loss = 0.5 * sum(w^2) + sum(b); gradient is (w, ones).
        let w: f64 = p.w.as_slice().iter().map(|v| 0.5 * v * v).sum();
        let b: f64 = p.b.iter().sum();
        w + b
    }

    #[test]
    fn correct_gradient_passes() {
        let mut rng = rng_from_seed(3);
        let mut params = Linear::uniform(4, 5, 1.0, &mut rng);
        let analytic = Linear {
            w: params.w.clone(),
            b: vec![1.0; 4],
        };
        let report = check_gradients(&mut params, &analytic, 1e-5, 50, 0, quadratic_loss);
        assert!(report.passes(1e-6), "worst {}", report.max_rel_error);
        assert_eq!(report.per_tensor.len(), 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut rng = rng_from_seed(4);
        let mut params = Linear::uniform(4, 5, 1.0, &mut rng);
        let mut bad = Matrix::zeros(4, 5);
        bad.fill(10.0);
        let analytic = Linear {
            w: bad,
            b: vec![1.0; 4],
        };
        let report = check_gradients(&mut params, &analytic, 1e-5, 50, 0, quadratic_loss);
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn zero_gradient_region_passes_trivially() {
        let mut params = Linear::zeros(3, 3);
        let analytic = Linear::zeros(3, 3);
        // Constant loss: all derivatives are 0 on both sides.
        let report = check_gradients(&mut params, &analytic, 1e-5, 50, 0, |_| 42.0);
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    #[should_panic(expected = "outside sensible")]
    fn epsilon_bounds_are_enforced() {
        let mut params = Linear::zeros(2, 2);
        let analytic = Linear::zeros(2, 2);
        check_gradients(&mut params, &analytic, 1e-2, 10, 0, |_| 0.0);
    }
}
