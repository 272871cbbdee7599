//! Minimal neural-network building blocks with hand-written backprop.
//!
//! Everything operates on f64 slices, single example at a time; batching is
//! just gradient accumulation in a mirror parameter struct. The `Tensors`
//! trait exposes each parameter struct as a flat list of named slices so the
//! optimizer, checkpointing, and the finite-difference checker can treat all
//! models uniformly.

mod gru;
mod lstm;

pub use gru::{GruParams, GruStep};
pub use lstm::{LstmParams, LstmStep};

use crate::linalg::Matrix;
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

/// Flat named views over a parameter struct. `tensors` and `tensors_mut`
/// must list the same tensors in the same order; gradient mirrors rely on
/// positional pairing.
pub trait Tensors {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn zero_all(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Scale all gradients in place so their joint L2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(tensors: &mut [(String, &mut [f64])], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, t) in tensors.iter() {
        for v in t.iter() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in tensors.iter_mut() {
            for v in t.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Adam with bias correction; moment buffers are sized lazily from the
/// first step so one optimizer can serve any parameter struct.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut impl Tensors, grads: &impl Tensors) {
        let mut p = params.tensors_mut();
        let g = grads.tensors();
        assert_eq!(p.len(), g.len(), "param/grad tensor lists must align");
        if self.m.is_empty() {
            self.m = g.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, ((_, pt), (_, gt))) in p.iter_mut().zip(&g).enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for k in 0..gt.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gt[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gt[k] * gt[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                pt[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Dense layer y = Wx + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Linear {
        Linear {
            w: Matrix::zeros(out, inp),
            b: vec![0.0; out],
        }
    }

    pub fn uniform(out: usize, inp: usize, scale: f64, rng: &mut DetRng) -> Linear {
        Linear {
            w: Matrix::uniform(out, inp, scale, rng),
            b: vec![0.0; out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        for (yi, bi) in y.iter_mut().zip(&self.b) {
            *yi += bi;
        }
        y
    }

    /// Accumulate dW, db into `grad` and return dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        grad.w.add_outer(dy, x);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        self.w.matvec_t(dy)
    }
}

impl Tensors for Linear {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w".to_string(), self.w.as_slice()),
            ("b".to_string(), self.b.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w".to_string(), self.w.as_mut_slice()),
            ("b".to_string(), self.b.as_mut_slice()),
        ]
    }
}

/// Two-layer perceptron with tanh hidden activation and scalar output.
/// The output is deliberately unsquashed: regression-style targets can be
/// negative or exceed 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    x: Vec<f64>,
    h: Vec<f64>,
}

impl Mlp2 {
    pub fn zeros(inp: usize, hidden: usize) -> Mlp2 {
        Mlp2 {
            l1: Linear::zeros(hidden, inp),
            l2: Linear::zeros(1, hidden),
        }
    }

    pub fn uniform(inp: usize, hidden: usize, scale: f64, rng: &mut DetRng) -> Mlp2 {
        Mlp2 {
            l1: Linear::uniform(hidden, inp, scale, rng),
            l2: Linear::uniform(1, hidden, scale, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (f64, Mlp2Cache) {
        let mut h = self.l1.forward(x);
        for v in &mut h {
            *v = v.tanh();
        }
        let out = self.l2.forward(&h)[0];
        (
            out,
            Mlp2Cache {
                x: x.to_vec(),
                h,
            },
        )
    }

    /// Accumulate gradients for scalar upstream `dout`; returns dx.
    pub fn backward(&self, cache: &Mlp2Cache, dout: f64, grad: &mut Mlp2) -> Vec<f64> {
        let dh = self.l2.backward(&cache.h, &[dout], &mut grad.l2);
        let dh_pre: Vec<f64> = dh
            .iter()
            .zip(&cache.h)
            .map(|(&d, &h)| d * (1.0 - h * h))
            .collect();
        self.l1.backward(&cache.x, &dh_pre, &mut grad.l1)
    }
}

impl Tensors for Mlp2 {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        prefixed(&self.l1, "l1").into_iter().chain(prefixed(&self.l2, "l2")).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut(&mut self.l1, "l1");
        out.extend(prefixed_mut(&mut self.l2, "l2"));
        out
    }
}

/// Token embedding table, one row per vocabulary id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: Matrix,
}

impl Embedding {
    pub fn zeros(vocab: usize, dim: usize) -> Embedding {
        Embedding {
            table: Matrix::zeros(vocab, dim),
        }
    }

    pub fn uniform(vocab: usize, dim: usize, scale: f64, rng: &mut DetRng) -> Embedding {
        Embedding {
            table: Matrix::uniform(vocab, dim, scale, rng),
        }
    }

    pub fn forward(&self, id: usize) -> &[f64] {
        self.table.row(id)
    }

    pub fn backward(&self, id: usize, d: &[f64], grad: &mut Embedding) {
        let row = grad.table.row_mut(id);
        for (g, v) in row.iter_mut().zip(d) {
            *g += v;
        }
    }
}

impl Tensors for Embedding {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![("table".to_string(), self.table.as_slice())]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("table".to_string(), self.table.as_mut_slice())]
    }
}

/// Re-list a child's tensors under `<prefix>.<name>`.
pub fn prefixed<'a>(child: &'a impl Tensors, prefix: &str) -> Vec<(String, &'a [f64])> {
    child
        .tensors()
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

pub fn prefixed_mut<'a>(
    child: &'a mut impl Tensors,
    prefix: &str,
) -> Vec<(String, &'a mut [f64])> {
    child
        .tensors_mut()
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}
