//! LSTM cell with the four standard gates:
//!   i = sigmoid(Wi x + Ui h + bi)    input gate
//!   f = sigmoid(Wf x + Uf h + bf)    forget gate
//!   g = tanh(Wg x + Ug h + bg)       candidate
//!   o = sigmoid(Wo x + Uo h + bo)    output gate
//!   c' = f*c + i*g
//!   h' = o*tanh(c')
//! Forget bias initializes to 1 so early training does not wash out state.

use super::Tensors;
use crate::linalg::{sigmoid, Matrix};
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_g: Matrix,
    pub w_o: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_g: Matrix,
    pub u_o: Matrix,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_g: Vec<f64>,
    pub b_o: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_tanh: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(d_h: usize, d_x: usize) -> LstmParams {
        LstmParams {
            w_i: Matrix::zeros(d_h, d_x),
            w_f: Matrix::zeros(d_h, d_x),
            w_g: Matrix::zeros(d_h, d_x),
            w_o: Matrix::zeros(d_h, d_x),
            u_i: Matrix::zeros(d_h, d_h),
            u_f: Matrix::zeros(d_h, d_h),
            u_g: Matrix::zeros(d_h, d_h),
            u_o: Matrix::zeros(d_h, d_h),
            b_i: vec![0.0; d_h],
            b_f: vec![0.0; d_h],
            b_g: vec![0.0; d_h],
            b_o: vec![0.0; d_h],
        }
    }

    pub fn uniform(d_h: usize, d_x: usize, scale: f64, rng: &mut DetRng) -> LstmParams {
        LstmParams {
            w_i: Matrix::uniform(d_h, d_x, scale, rng),
            w_f: Matrix::uniform(d_h, d_x, scale, rng),
            w_g: Matrix::uniform(d_h, d_x, scale, rng),
            w_o: Matrix::uniform(d_h, d_x, scale, rng),
            u_i: Matrix::uniform(d_h, d_h, scale, rng),
            u_f: Matrix::uniform(d_h, d_h, scale, rng),
            u_g: Matrix::uniform(d_h, d_h, scale, rng),
            u_o: Matrix::uniform(d_h, d_h, scale, rng),
            b_i: vec![0.0; d_h],
            b_f: vec![1.0; d_h],
            b_g: vec![0.0; d_h],
            b_o: vec![0.0; d_h],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_i.len()
    }

    pub fn forward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, LstmStep) {
        let d_h = self.hidden_dim();
        let mut i = self.w_i.matvec(x);
        let mut f = self.w_f.matvec(x);
        let mut g = self.w_g.matvec(x);
        let mut o = self.w_o.matvec(x);
        let hi = self.u_i.matvec(h_prev);
        let hf = self.u_f.matvec(h_prev);
        let hg = self.u_g.matvec(h_prev);
        let ho = self.u_o.matvec(h_prev);
        for k in 0..d_h {
            i[k] = sigmoid(i[k] + hi[k] + self.b_i[k]);
            f[k] = sigmoid(f[k] + hf[k] + self.b_f[k]);
            g[k] = (g[k] + hg[k] + self.b_g[k]).tanh();
            o[k] = sigmoid(o[k] + ho[k] + self.b_o[k]);
        }
        let c: Vec<f64> = (0..d_h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let c_tanh: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..d_h).map(|k| o[k] * c_tanh[k]).collect();
        let step = LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c_tanh,
        };
        (h, c, step)
    }

    /// Backprop one step given gradients w.r.t. the emitted h and the cell
    /// state flowing back from the next step. Returns (dx, dh_prev, dc_prev).
    pub fn backward(
        &self,
        step: &LstmStep,
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d_h = self.hidden_dim();
        let LstmStep {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            c_tanh,
        } = step;

        let mut dc = vec![0.0; d_h];
        let mut do_pre = vec![0.0; d_h];
        for k in 0..d_h {
            do_pre[k] = dh[k] * c_tanh[k] * o[k] * (1.0 - o[k]);
            dc[k] = dc_next[k] + dh[k] * o[k] * (1.0 - c_tanh[k] * c_tanh[k]);
        }
        let mut di_pre = vec![0.0; d_h];
        let mut df_pre = vec![0.0; d_h];
        let mut dg_pre = vec![0.0; d_h];
        let mut dc_prev = vec![0.0; d_h];
        for k in 0..d_h {
            di_pre[k] = dc[k] * g[k] * i[k] * (1.0 - i[k]);
            df_pre[k] = dc[k] * c_prev[k] * f[k] * (1.0 - f[k]);
            dg_pre[k] = dc[k] * i[k] * (1.0 - g[k] * g[k]);
            dc_prev[k] = dc[k] * f[k];
        }

        grad.w_i.add_outer(&di_pre, x);
        grad.w_f.add_outer(&df_pre, x);
        grad.w_g.add_outer(&dg_pre, x);
        grad.w_o.add_outer(&do_pre, x);
        grad.u_i.add_outer(&di_pre, h_prev);
        grad.u_f.add_outer(&df_pre, h_prev);
        grad.u_g.add_outer(&dg_pre, h_prev);
        grad.u_o.add_outer(&do_pre, h_prev);
        for k in 0..d_h {
            grad.b_i[k] += di_pre[k];
            grad.b_f[k] += df_pre[k];
            grad.b_g[k] += dg_pre[k];
            grad.b_o[k] += do_pre[k];
        }

        let mut dx = self.w_i.matvec_t(&di_pre);
        for (dst, src) in [
            (&self.w_f, &df_pre),
            (&self.w_g, &dg_pre),
            (&self.w_o, &do_pre),
        ] {
            let add = dst.matvec_t(src);
            for (a, b) in dx.iter_mut().zip(add) {
                *a += b;
            }
        }
        let mut dh_prev = self.u_i.matvec_t(&di_pre);
        for (dst, src) in [
            (&self.u_f, &df_pre),
            (&self.u_g, &dg_pre),
            (&self.u_o, &do_pre),
        ] {
            let add = dst.matvec_t(src);
            for (a, b) in dh_prev.iter_mut().zip(add) {
                *a += b;
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Tensors for LstmParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_i".to_string(), self.w_i.as_slice()),
            ("w_f".to_string(), self.w_f.as_slice()),
            ("w_g".to_string(), self.w_g.as_slice()),
            ("w_o".to_string(), self.w_o.as_slice()),
            ("u_i".to_string(), self.u_i.as_slice()),
            ("u_f".to_string(), self.u_f.as_slice()),
            ("u_g".to_string(), self.u_g.as_slice()),
            ("u_o".to_string(), self.u_o.as_slice()),
            ("b_i".to_string(), self.b_i.as_slice()),
            ("b_f".to_string(), self.b_f.as_slice()),
            ("b_g".to_string(), self.b_g.as_slice()),
            ("b_o".to_string(), self.b_o.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_i".to_string(), self.w_i.as_mut_slice()),
            ("w_f".to_string(), self.w_f.as_mut_slice()),
            ("w_g".to_string(), self.w_g.as_mut_slice()),
            ("w_o".to_string(), self.w_o.as_mut_slice()),
            ("u_i".to_string(), self.u_i.as_mut_slice()),
            ("u_f".to_string(), self.u_f.as_mut_slice()),
            ("u_g".to_string(), self.u_g.as_mut_slice()),
            ("u_o".to_string(), self.u_o.as_mut_slice()),
            ("b_i".to_string(), self.b_i.as_mut_slice()),
            ("b_f".to_string(), self.b_f.as_mut_slice()),
            ("b_g".to_string(), self.b_g.as_mut_slice()),
            ("b_o".to_string(), self.b_o.as_mut_slice()),
        ]
    }
}
