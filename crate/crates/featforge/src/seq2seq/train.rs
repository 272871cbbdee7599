//! Joint training: teacher-forced reconstruction cross-entropy plus squared
//! error of the score estimate, weighted by alpha, minimized with Adam.
//! Every backward pass here is hand-written; `gradient_check` keeps it
//! honest against central finite differences.

use super::{softmax, ModelError, Seq2SeqParams};
use crate::expr::Vocabulary;
use crate::golden::{GoldenCorpus, GoldenExample};
use crate::gradcheck::{check_gradients, GradCheckReport, COORDS_PER_TENSOR};
use crate::nn::{clip_global_norm, Adam, GruStep, LstmStep, Mlp2Cache, Tensors};
use crate::rng::{rng_from_seed, sub_seed};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the reconstruction loss; the score loss gets `1 - alpha`.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Global-norm clip applied to each batch gradient.
    pub gradient_clip: f64,
    pub d_e: usize,
    pub d_h: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.8,
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 16,
            rng_seed: 0,
            gradient_clip: 5.0,
            d_e: 32,
            d_h: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".to_string());
        }
        if !(self.gradient_clip.is_finite() && self.gradient_clip > 0.0) {
            return bad(format!("gradient_clip {} must be positive", self.gradient_clip));
        }
        if self.d_e == 0 || self.d_h == 0 {
            return bad("model dims must be at least 1".to_string());
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_est: f64,
    pub loss_joint: f64,
}

/// Wire ids plus target score for each corpus example.
fn training_pairs(
    examples: &[GoldenExample],
    vocab: &Vocabulary,
) -> Result<Vec<(Vec<usize>, f64)>, ModelError> {
    examples
        .iter()
        .map(|e| {
            e.sequence
                .wire_ids(vocab)
                .ok_or(ModelError::OutOfVocabulary)
                .map(|ids| (ids, e.score))
        })
        .collect()
}

/// Activations cached by one teacher-forced forward pass.
struct SeqForward {
    fwd_steps: Vec<GruStep>,
    bwd_steps: Vec<GruStep>,
    z: Vec<f64>,
    eval_cache: Mlp2Cache,
    s_hat: f64,
    dec_steps: Vec<LstmStep>,
    dec_hs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    /// Mean per-token cross-entropy of this sequence.
    ce: f64,
}

fn seq_forward(params: &Seq2SeqParams, ids: &[usize]) -> SeqForward {
    let n = ids.len();
    debug_assert!(n >= 2, "wire form always has at least SOS and EOS");
    let d_h = params.dims.d_h;

    let mut h = vec![0.0; d_h];
    let mut fwd_steps = Vec::with_capacity(n);
    for &id in ids {
        let (next, step) = params.enc_fwd.forward(params.embedding.forward(id), &h);
        fwd_steps.push(step);
        h = next;
    }
    let h_fwd = h;

    let mut h = vec![0.0; d_h];
    let mut bwd_steps = Vec::with_capacity(n);
    for &id in ids.iter().rev() {
        let (next, step) = params.enc_bwd.forward(params.embedding.forward(id), &h);
        bwd_steps.push(step);
        h = next;
    }

    let mut z = h_fwd;
    z.extend_from_slice(&h);
    let (s_hat, eval_cache) = params.evaluator.forward(&z);

    let mut hh = params.dec_init_h.forward(&z);
    let mut cc = params.dec_init_c.forward(&z);
    let steps = n - 1;
    let mut dec_steps = Vec::with_capacity(steps);
    let mut dec_hs = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);
    let mut ce = 0.0;
    for t in 0..steps {
        let x = params.embedding.forward(ids[t]);
        let (h2, c2, step) = params.decoder.forward(x, &hh, &cc);
        let logits = params.output.forward(&h2);
        let p = softmax(&logits);
        ce -= p[ids[t + 1]].max(1e-300).ln();
        dec_steps.push(step);
        probs.push(p);
        hh = h2.clone();
        dec_hs.push(h2);
        cc = c2;
    }
    ce /= steps as f64;

    SeqForward {
        fwd_steps,
        bwd_steps,
        z,
        eval_cache,
        s_hat,
        dec_steps,
        dec_hs,
        probs,
        ce,
    }
}

/// Accumulate gradients for one sequence. `w_rec` multiplies the whole
/// reconstruction term (alpha over batch size); `d_s_hat` is the incoming
/// gradient on the score estimate.
fn seq_backward(
    params: &Seq2SeqParams,
    fwd: &SeqForward,
    ids: &[usize],
    w_rec: f64,
    d_s_hat: f64,
    grads: &mut Seq2SeqParams,
) {
    let n = ids.len();
    let steps = n - 1;
    let d_h = params.dims.d_h;
    let per_token = w_rec / steps as f64;

    let mut dh = vec![0.0; d_h];
    let mut dc = vec![0.0; d_h];
    for t in (0..steps).rev() {
        let mut dlogits = fwd.probs[t].clone();
        dlogits[ids[t + 1]] -= 1.0;
        for v in &mut dlogits {
            *v *= per_token;
        }
        let dh_out = params
            .output
            .backward(&fwd.dec_hs[t], &dlogits, &mut grads.output);
        for (a, b) in dh.iter_mut().zip(&dh_out) {
            *a += b;
        }
        let (dx, dh_prev, dc_prev) =
            params
                .decoder
                .backward(&fwd.dec_steps[t], &dh, &dc, &mut grads.decoder);
        params.embedding.backward(ids[t], &dx, &mut grads.embedding);
        dh = dh_prev;
        dc = dc_prev;
    }

    let dz_h = params.dec_init_h.backward(&fwd.z, &dh, &mut grads.dec_init_h);
    let dz_c = params.dec_init_c.backward(&fwd.z, &dc, &mut grads.dec_init_c);
    let dz_e = params
        .evaluator
        .backward(&fwd.eval_cache, d_s_hat, &mut grads.evaluator);
    let dz: Vec<f64> = (0..2 * d_h).map(|i| dz_h[i] + dz_c[i] + dz_e[i]).collect();

    let mut dhf = dz[..d_h].to_vec();
    for t in (0..n).rev() {
        let (dx, dh_prev) = params
            .enc_fwd
            .backward(&fwd.fwd_steps[t], &dhf, &mut grads.enc_fwd);
        params.embedding.backward(ids[t], &dx, &mut grads.embedding);
        dhf = dh_prev;
    }
    let mut dhb = dz[d_h..].to_vec();
    for j in (0..n).rev() {
        let (dx, dh_prev) = params
            .enc_bwd
            .backward(&fwd.bwd_steps[j], &dhb, &mut grads.enc_bwd);
        params
            .embedding
            .backward(ids[n - 1 - j], &dx, &mut grads.embedding);
        dhb = dh_prev;
    }
}

/// Batch losses (means over `idx`) with gradients accumulated into `grads`.
fn batch_forward_backward(
    params: &Seq2SeqParams,
    pairs: &[(Vec<usize>, f64)],
    idx: &[usize],
    alpha: f64,
    grads: &mut Seq2SeqParams,
) -> (f64, f64) {
    let b = idx.len() as f64;
    let mut rec = 0.0;
    let mut est = 0.0;
    for &i in idx {
        let (ids, s) = &pairs[i];
        let fwd = seq_forward(params, ids);
        let err = fwd.s_hat - s;
        rec += fwd.ce;
        est += err * err;
        seq_backward(
            params,
            &fwd,
            ids,
            alpha / b,
            (1.0 - alpha) * 2.0 * err / b,
            grads,
        );
    }
    (rec / b, est / b)
}

fn batch_loss(params: &Seq2SeqParams, pairs: &[(Vec<usize>, f64)], alpha: f64) -> f64 {
    let b = pairs.len() as f64;
    let mut rec = 0.0;
    let mut est = 0.0;
    for (ids, s) in pairs {
        let fwd = seq_forward(params, ids);
        let err = fwd.s_hat - s;
        rec += fwd.ce;
        est += err * err;
    }
    alpha * rec / b + (1.0 - alpha) * est / b
}

/// Train a fresh model on the corpus. Deterministic for a fixed config:
/// the parameter init, the shuffles, and the arithmetic all derive from
/// `rng_seed`. Returns the trained params and the per-epoch loss log.
pub fn train_joint(
    corpus: &GoldenCorpus,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<(Seq2SeqParams, Vec<EpochLoss>), ModelError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if corpus.fingerprint() != vocab.fingerprint() {
        return Err(ModelError::FingerprintMismatch {
            expected: vocab.fingerprint(),
            found: corpus.fingerprint().to_string(),
        });
    }
    let pairs = training_pairs(corpus.examples(), vocab)?;
    let mut params = Seq2SeqParams::init(vocab, config.d_e, config.d_h, config.rng_seed);
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = rng_from_seed(sub_seed(config.rng_seed, "seq2seq.train"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut rec_sum = 0.0;
        let mut est_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grads.zero_all();
            let (rec, est) =
                batch_forward_backward(&params, &pairs, chunk, config.alpha, &mut grads);
            rec_sum += rec * chunk.len() as f64;
            est_sum += est * chunk.len() as f64;
            clip_global_norm(&mut grads.tensors_mut(), config.gradient_clip);
            adam.step(&mut params, &grads);
        }
        let n = pairs.len() as f64;
        let loss_rec = rec_sum / n;
        let loss_est = est_sum / n;
        let loss_joint = config.alpha * loss_rec + (1.0 - config.alpha) * loss_est;
        if !loss_joint.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        log.push(EpochLoss {
            epoch,
            loss_rec,
            loss_est,
            loss_joint,
        });
    }
    Ok((params, log))
}

/// Compare the analytic joint-loss gradients on `sample` against central
/// finite differences over a random coordinate subset of every tensor.
pub fn gradient_check(
    params: &Seq2SeqParams,
    vocab: &Vocabulary,
    sample: &[GoldenExample],
    alpha: f64,
    epsilon: f64,
) -> Result<GradCheckReport, ModelError> {
    if sample.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    params.check_vocab(vocab)?;
    let pairs = training_pairs(sample, vocab)?;
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let mut grads = params.zeros_like();
    batch_forward_backward(params, &pairs, &idx, alpha, &mut grads);
    let mut probe = params.clone();
    let report = check_gradients(
        &mut probe,
        &grads,
        epsilon,
        COORDS_PER_TENSOR,
        params.dims.d_h as u64,
        |p| batch_loss(p, &pairs, alpha),
    );
    Ok(report)
}
