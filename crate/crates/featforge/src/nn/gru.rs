//! Gated recurrent cell.
//!
//! Update rule (candidate gated by the reset of the previous state):
//!   r = sigmoid(Wr x + Ur h + br)
//!   u = sigmoid(Wu x + Uu h + bu)
//!   c = tanh(Wc x + Uc (r*h) + bc)
//!   h' = (1-u)*h + u*c
//! All gate derivatives are recovered from the cached activations, so the
//! step cache stores no pre-activation values.

use super::Tensors;
use crate::linalg::{sigmoid, Matrix};
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_r: Matrix,
    pub w_u: Matrix,
    pub w_c: Matrix,
    pub u_r: Matrix,
    pub u_u: Matrix,
    pub u_c: Matrix,
    pub b_r: Vec<f64>,
    pub b_u: Vec<f64>,
    pub b_c: Vec<f64>,
}

/// Per-step forward cache; everything backward needs.
#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
    c: Vec<f64>,
}

impl GruParams {
    pub fn zeros(d_h: usize, d_x: usize) -> GruParams {
        GruParams {
            w_r: Matrix::zeros(d_h, d_x),
            w_u: Matrix::zeros(d_h, d_x),
            w_c: Matrix::zeros(d_h, d_x),
            u_r: Matrix::zeros(d_h, d_h),
            u_u: Matrix::zeros(d_h, d_h),
            u_c: Matrix::zeros(d_h, d_h),
            b_r: vec![0.0; d_h],
            b_u: vec![0.0; d_h],
            b_c: vec![0.0; d_h],
        }
    }

    pub fn uniform(d_h: usize, d_x: usize, scale: f64, rng: &mut DetRng) -> GruParams {
        GruParams {
            w_r: Matrix::uniform(d_h, d_x, scale, rng),
            w_u: Matrix::uniform(d_h, d_x, scale, rng),
            w_c: Matrix::uniform(d_h, d_x, scale, rng),
            u_r: Matrix::uniform(d_h, d_h, scale, rng),
            u_u: Matrix::uniform(d_h, d_h, scale, rng),
            u_c: Matrix::uniform(d_h, d_h, scale, rng),
            b_r: vec![0.0; d_h],
            b_u: vec![0.0; d_h],
            b_c: vec![0.0; d_h],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_r.len()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStep) {
        let d_h = self.hidden_dim();
        let mut r = self.w_r.matvec(x);
        let mut u = self.w_u.matvec(x);
        let rh_r = self.u_r.matvec(h_prev);
        let rh_u = self.u_u.matvec(h_prev);
        for i in 0..d_h {
            r[i] = sigmoid(r[i] + rh_r[i] + self.b_r[i]);
            u[i] = sigmoid(u[i] + rh_u[i] + self.b_u[i]);
        }
        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(&ri, &hi)| ri * hi).collect();
        let mut c = self.w_c.matvec(x);
        let rh_c = self.u_c.matvec(&gated);
        for i in 0..d_h {
            c[i] = (c[i] + rh_c[i] + self.b_c[i]).tanh();
        }
        let h: Vec<f64> = (0..d_h)
            .map(|i| (1.0 - u[i]) * h_prev[i] + u[i] * c[i])
            .collect();
        let step = GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            u,
            c,
        };
        (h, step)
    }

    /// Backprop one step. Accumulates parameter gradients into `grad` and
    /// returns (dx, dh_prev).
    pub fn backward(
        &self,
        step: &GruStep,
        dh: &[f64],
        grad: &mut GruParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let d_h = self.hidden_dim();
        let GruStep { x, h_prev, r, u, c } = step;

        let mut dh_prev: Vec<f64> = (0..d_h).map(|i| dh[i] * (1.0 - u[i])).collect();
        let du_pre: Vec<f64> = (0..d_h)
            .map(|i| dh[i] * (c[i] - h_prev[i]) * u[i] * (1.0 - u[i]))
            .collect();
        let dc_pre: Vec<f64> = (0..d_h)
            .map(|i| dh[i] * u[i] * (1.0 - c[i] * c[i]))
            .collect();

        // Candidate path: c = tanh(Wc x + Uc (r*h_prev) + bc).
        grad.w_c.add_outer(&dc_pre, x);
        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(&ri, &hi)| ri * hi).collect();
        grad.u_c.add_outer(&dc_pre, &gated);
        for (b, d) in grad.b_c.iter_mut().zip(&dc_pre) {
            *b += d;
        }
        let dgated = self.u_c.matvec_t(&dc_pre);
        let dr_pre: Vec<f64> = (0..d_h)
            .map(|i| dgated[i] * h_prev[i] * r[i] * (1.0 - r[i]))
            .collect();
        for i in 0..d_h {
            dh_prev[i] += dgated[i] * r[i];
        }

        // Gate paths.
        grad.w_u.add_outer(&du_pre, x);
        grad.u_u.add_outer(&du_pre, h_prev);
        grad.w_r.add_outer(&dr_pre, x);
        grad.u_r.add_outer(&dr_pre, h_prev);
        for i in 0..d_h {
            grad.b_u[i] += du_pre[i];
            grad.b_r[i] += dr_pre[i];
        }

        let mut dx = self.w_c.matvec_t(&dc_pre);
        let dx_u = self.w_u.matvec_t(&du_pre);
        let dx_r = self.w_r.matvec_t(&dr_pre);
        for i in 0..dx.len() {
            dx[i] += dx_u[i] + dx_r[i];
        }
        let dh_u = self.u_u.matvec_t(&du_pre);
        let dh_r = self.u_r.matvec_t(&dr_pre);
        for i in 0..d_h {
            dh_prev[i] += dh_u[i] + dh_r[i];
        }
        (dx, dh_prev)
    }
}

impl Tensors for GruParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_r".to_string(), self.w_r.as_slice()),
            ("w_u".to_string(), self.w_u.as_slice()),
            ("w_c".to_string(), self.w_c.as_slice()),
            ("u_r".to_string(), self.u_r.as_slice()),
            ("u_u".to_string(), self.u_u.as_slice()),
            ("u_c".to_string(), self.u_c.as_slice()),
            ("b_r".to_string(), self.b_r.as_slice()),
            ("b_u".to_string(), self.b_u.as_slice()),
            ("b_c".to_string(), self.b_c.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_r".to_string(), self.w_r.as_mut_slice()),
            ("w_u".to_string(), self.w_u.as_mut_slice()),
            ("w_c".to_string(), self.w_c.as_mut_slice()),
            ("u_r".to_string(), self.u_r.as_mut_slice()),
            ("u_u".to_string(), self.u_u.as_mut_slice()),
            ("u_c".to_string(), self.u_c.as_mut_slice()),
            ("b_r".to_string(), self.b_r.as_mut_slice()),
            ("b_u".to_string(), self.b_u.as_mut_slice()),
            ("b_c".to_string(), self.b_c.as_mut_slice()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn run_gru(params: &GruParams, inputs: &[Vec<f64>]) -> (Vec<f64>, Vec<GruStep>) {
        let mut h = vec![0.0; params.hidden_dim()];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h_next, step) = params.forward(x, &h);
            h = h_next;
            steps.push(step);
        }
        (h, steps)
    }

    #[test]
    fn forward_matches_a_scalar_hand_computation() {
        // d_h = d_x = 1 with all weights 0.5, biases 0, x = 1, h = 0:
        // r = u = sigmoid(0.5), c = tanh(0.5), h' = u * c.
        let mut p = GruParams::zeros(1, 1);
        for (_, t) in p.tensors_mut() {
            t.fill(0.5);
        }
        p.b_r[0] = 0.0;
        p.b_u[0] = 0.0;
        p.b_c[0] = 0.0;
        let (h, _) = p.forward(&[1.0], &[0.0]);
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let want = s * 0.5f64.tanh();
        assert!((h[0] - want).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d_h = 3;
        let d_x = 2;
        let mut rng = rng_from_seed(17);
        let params = GruParams::uniform(d_h, d_x, 0.4, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..d_x).map(|j| ((t * d_x + j) as f64 * 0.7).sin()).collect())
            .collect();

        // Loss = sum of the final hidden state over the 4-step run.
        let loss = |p: &GruParams| -> f64 {
            let (h, _) = run_gru(p, &inputs);
            h.iter().sum()
        };

        let (_, steps) = run_gru(&params, &inputs);
        let mut grad = GruParams::zeros(d_h, d_x);
        let mut dh = vec![1.0; d_h];
        for step in steps.iter().rev() {
            let (_, dh_prev) = params.backward(step, &dh, &mut grad);
            dh = dh_prev;
        }

        let eps = 1e-6;
        let mut p = params.clone();
        let analytic = grad.tensors();
        for ti in 0..analytic.len() {
            let n = analytic[ti].1.len();
            for k in 0..n {
                let orig = p.tensors_mut()[ti].1[k];
                p.tensors_mut()[ti].1[k] = orig + eps;
                let lp = loss(&p);
                p.tensors_mut()[ti].1[k] = orig - eps;
                let lm = loss(&p);
                p.tensors_mut()[ti].1[k] = orig;
                let num = (lp - lm) / (2.0 * eps);
                let ana = analytic[ti].1[k];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
                assert!(
                    rel < 1e-5,
                    "tensor {} coord {k}: analytic {ana} vs numeric {num}",
                    analytic[ti].0
                );
            }
        }
    }

    #[test]
    fn zero_input_keeps_zero_state_stationary() {
        let mut rng = rng_from_seed(2);
        let mut p = GruParams::uniform(4, 3, 0.5, &mut rng);
        // With zero biases and zero x/h, the candidate is tanh(0) = 0 and
        // the state stays exactly zero.
        p.b_r.fill(0.0);
        p.b_u.fill(0.0);
        p.b_c.fill(0.0);
        let (h, _) = p.forward(&[0.0, 0.0, 0.0], &[0.0; 4]);
        assert!(h.iter().all(|&v| v == 0.0));
    }
}
