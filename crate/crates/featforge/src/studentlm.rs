//! Compact autoregressive language model over the transformation
//! vocabulary: an embedding into a two-layer gated recurrent stack with a
//! softmax head for next-token prediction and a small perceptron head that
//! predicts downstream performance from the final hidden state.
//!
//! Trained on the golden corpus with two objectives at once: sequence
//! generation (cross-entropy) and performance prediction (squared error),
//! mixed by `perf_loss_weight`.

use crate::checkpoint::{self, CheckpointError};
use crate::expr::{parse_token_stream, StreamParse, TransformationSequence, Vocabulary};
use crate::golden::{GoldenCorpus, GoldenExample};
use crate::gradcheck::{check_gradients, GradCheckReport, COORDS_PER_TENSOR};
use crate::nn::{clip_global_norm, prefixed, prefixed_mut, Adam, Embedding, Linear, Tensors};
use crate::nn::{GruParams, GruStep, Mlp2, Mlp2Cache};
use crate::rng::{rng_from_seed, sub_seed};
use crate::seq2seq::{softmax, ModelDims, ModelError, TokenDistribution};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FFSLM";

const INIT_SCALE: f64 = 0.08;
/// Global-norm clip applied to each batch gradient, as in the sequence
/// model's training loop.
const GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub dims: ModelDims,
    pub fingerprint: String,
    pub embedding: Embedding,
    pub layer1: GruParams,
    pub layer2: GruParams,
    pub output: Linear,
    pub perf_head: Mlp2,
}

impl StudentParams {
    pub fn init(vocab: &Vocabulary, d_e: usize, d_h: usize, seed: u64) -> StudentParams {
        assert!(d_e >= 1 && d_h >= 1, "degenerate model dims");
        let dims = ModelDims {
            vocab: vocab.size(),
            d_e,
            d_h,
        };
        let mut rng = rng_from_seed(sub_seed(seed, "studentlm.init"));
        let r = &mut rng;
        StudentParams {
            dims,
            fingerprint: vocab.fingerprint(),
            embedding: Embedding::uniform(dims.vocab, d_e, INIT_SCALE, r),
            layer1: GruParams::uniform(d_h, d_e, INIT_SCALE, r),
            layer2: GruParams::uniform(d_h, d_h, INIT_SCALE, r),
            output: Linear::uniform(dims.vocab, d_h, INIT_SCALE, r),
            perf_head: Mlp2::uniform(d_h, d_h, INIT_SCALE, r),
        }
    }

    pub fn zeros_like(&self) -> StudentParams {
        Self::zeros(self.dims, self.fingerprint.clone())
    }

    fn zeros(dims: ModelDims, fingerprint: String) -> StudentParams {
        let ModelDims { vocab, d_e, d_h } = dims;
        StudentParams {
            dims,
            fingerprint,
            embedding: Embedding::zeros(vocab, d_e),
            layer1: GruParams::zeros(d_h, d_e),
            layer2: GruParams::zeros(d_h, d_h),
            output: Linear::zeros(vocab, d_h),
            perf_head: Mlp2::zeros(d_h, d_h),
        }
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), ModelError> {
        if self.fingerprint != vocab.fingerprint() {
            return Err(ModelError::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: vocab.fingerprint(),
            });
        }
        Ok(())
    }
}

impl Tensors for StudentParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = prefixed(&self.embedding, "embedding");
        out.extend(prefixed(&self.layer1, "layer1"));
        out.extend(prefixed(&self.layer2, "layer2"));
        out.extend(prefixed(&self.output, "output"));
        out.extend(prefixed(&self.perf_head, "perf_head"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut(&mut self.embedding, "embedding");
        out.extend(prefixed_mut(&mut self.layer1, "layer1"));
        out.extend(prefixed_mut(&mut self.layer2, "layer2"));
        out.extend(prefixed_mut(&mut self.output, "output"));
        out.extend(prefixed_mut(&mut self.perf_head, "perf_head"));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Weight of the performance-prediction loss; sequence generation gets
    /// `1 - perf_loss_weight`.
    pub perf_loss_weight: f64,
    pub d_e: usize,
    pub d_h: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 16,
            rng_seed: 0,
            perf_loss_weight: 0.3,
            d_e: 32,
            d_h: 64,
        }
    }
}

impl LmTrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if !(self.perf_loss_weight.is_finite() && (0.0..=1.0).contains(&self.perf_loss_weight)) {
            return bad(format!(
                "perf_loss_weight {} outside [0, 1]",
                self.perf_loss_weight
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".to_string());
        }
        if self.d_e == 0 || self.d_h == 0 {
            return bad("model dims must be at least 1".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LmEpochLoss {
    pub epoch: usize,
    pub loss_seq: f64,
    pub loss_perf: f64,
    pub loss_joint: f64,
}

/// Recurrent stack state threaded through incremental generation.
#[derive(Debug, Clone)]
pub struct StudentState {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

pub fn student_start(params: &StudentParams) -> StudentState {
    StudentState {
        h1: vec![0.0; params.dims.d_h],
        h2: vec![0.0; params.dims.d_h],
    }
}

/// Feed one token, get the distribution over the next.
pub fn student_advance(
    params: &StudentParams,
    state: &mut StudentState,
    token_id: usize,
) -> Result<TokenDistribution, ModelError> {
    if token_id >= params.dims.vocab {
        return Err(ModelError::OutOfVocabulary);
    }
    let x = params.embedding.forward(token_id);
    let (h1, _) = params.layer1.forward(x, &state.h1);
    let (h2, _) = params.layer2.forward(&h1, &state.h2);
    state.h1 = h1;
    state.h2 = h2;
    let logits = params.output.forward(&state.h2);
    Ok(TokenDistribution {
        probs: softmax(&logits),
    })
}

/// Distribution over the token following `prefix` (which must start with
/// the start-of-sequence id).
pub fn next_token_distribution(
    params: &StudentParams,
    prefix: &[usize],
) -> Result<TokenDistribution, ModelError> {
    if prefix.first() != Some(&params.dims.sos_id()) {
        return Err(ModelError::MissingSos);
    }
    let mut state = student_start(params);
    let mut dist = None;
    for &id in prefix {
        dist = Some(student_advance(params, &mut state, id)?);
    }
    Ok(dist.expect("prefix is non-empty"))
}

/// Scalar score prediction from the final hidden state after the full
/// wire-form pass.
pub fn predict_performance(
    params: &StudentParams,
    sequence: &TransformationSequence,
    vocab: &Vocabulary,
) -> Result<f64, ModelError> {
    params.check_vocab(vocab)?;
    let ids = sequence
        .wire_ids(vocab)
        .ok_or(ModelError::OutOfVocabulary)?;
    let mut state = student_start(params);
    for &id in &ids {
        student_advance(params, &mut state, id)?;
    }
    let (v_hat, _) = params.perf_head.forward(&state.h2);
    Ok(v_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sampling {
    Greedy,
    /// Sample among the k most likely tokens, renormalized.
    TopK(usize),
    /// Softmax sampling with logit temperature; 0 is defined as greedy.
    Temperature(f64),
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub raw_ids: Vec<usize>,
    pub parse: StreamParse,
}

/// Autoregressive sampling from the start token until the end token or
/// `max_len` emitted tokens.
pub fn generate(
    params: &StudentParams,
    vocab: &Vocabulary,
    sampling: Sampling,
    max_len: usize,
    rng_seed: u64,
) -> Result<GenerateOutcome, ModelError> {
    complete(
        params,
        vocab,
        &[params.dims.sos_id()],
        sampling,
        max_len,
        rng_seed,
    )
}

/// Sample a continuation of `prompt_ids` (which must start with the
/// start-of-sequence id); `max_len` bounds the emitted tokens, not the
/// prompt. The outcome carries prompt plus continuation.
pub fn complete(
    params: &StudentParams,
    vocab: &Vocabulary,
    prompt_ids: &[usize],
    sampling: Sampling,
    max_len: usize,
    rng_seed: u64,
) -> Result<GenerateOutcome, ModelError> {
    assert!(max_len >= 3, "max_len {max_len} cannot fit a segment");
    params.check_vocab(vocab)?;
    if prompt_ids.first() != Some(&params.dims.sos_id()) {
        return Err(ModelError::MissingSos);
    }
    if let Sampling::TopK(k) = sampling {
        if k == 0 {
            return Err(ModelError::BadConfig("top_k needs k >= 1".to_string()));
        }
    }
    if let Sampling::Temperature(t) = sampling {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ModelError::BadConfig(format!(
                "temperature {t} must be finite and non-negative"
            )));
        }
    }
    let mut rng = rng_from_seed(sub_seed(rng_seed, "studentlm.sample"));
    let mut state = student_start(params);
    let mut raw_ids = prompt_ids.to_vec();
    let mut dist = None;
    for &id in prompt_ids {
        dist = Some(student_advance(params, &mut state, id)?);
    }
    let mut dist = dist.expect("prompt is non-empty");
    for _ in 0..max_len {
        if *raw_ids.last().expect("starts with SOS") == params.dims.eos_id() {
            break;
        }
        let id = pick(&dist, sampling, &mut rng);
        raw_ids.push(id);
        if id == params.dims.eos_id() {
            break;
        }
        dist = student_advance(params, &mut state, id)?;
    }
    let tokens: Vec<_> = raw_ids
        .iter()
        .map(|&id| vocab.token_of(id).expect("ids come from the softmax"))
        .collect();
    Ok(GenerateOutcome {
        raw_ids,
        parse: parse_token_stream(&tokens),
    })
}

fn pick(dist: &TokenDistribution, sampling: Sampling, rng: &mut crate::rng::DetRng) -> usize {
    match sampling {
        Sampling::Greedy => dist.argmax(),
        Sampling::Temperature(t) => {
            if t == 0.0 {
                return dist.argmax();
            }
            let logits: Vec<f64> = dist.probs.iter().map(|p| p.max(1e-300).ln() / t).collect();
            sample_index(&softmax(&logits), rng)
        }
        Sampling::TopK(k) => {
            let mut order: Vec<usize> = (0..dist.probs.len()).collect();
            order.sort_by(|&a, &b| {
                dist.probs[b]
                    .partial_cmp(&dist.probs[a])
                    .expect("probs are finite")
                    .then(a.cmp(&b))
            });
            order.truncate(k.min(dist.probs.len()));
            let total: f64 = order.iter().map(|&i| dist.probs[i]).sum();
            let weights: Vec<f64> = order.iter().map(|&i| dist.probs[i] / total).collect();
            order[sample_index(&weights, rng)]
        }
    }
}

fn sample_index(weights: &[f64], rng: &mut crate::rng::DetRng) -> usize {
    let roll: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if roll < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Fraction of corpus sequences reproduced exactly by greedy completion.
///
/// A single argmax cannot take both sides of a branch, so an unconditional
/// model can greedily regenerate at most one of two sequences that diverge
/// somewhere after the start token. Recall is therefore probed per example
/// from the shortest prefix that distinguishes it within the corpus; below
/// that point the corpus determines the continuation uniquely and a model
/// that has memorized it completes every token by argmax.
pub fn regeneration_rate(
    params: &StudentParams,
    corpus: &GoldenCorpus,
    vocab: &Vocabulary,
) -> Result<f64, ModelError> {
    params.check_vocab(vocab)?;
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let all = training_pairs(corpus.examples(), vocab)?;
    let mut hits = 0usize;
    for (i, (ids, _)) in all.iter().enumerate() {
        let mut k = 2.min(ids.len());
        let shared = |k: usize| {
            all.iter()
                .enumerate()
                .any(|(j, (other, _))| j != i && other.len() >= k && other[..k] == ids[..k])
        };
        while k < ids.len() && shared(k) {
            k += 1;
        }
        let out = complete(params, vocab, &ids[..k], Sampling::Greedy, ids.len() + 8, 0)?;
        if out.raw_ids == *ids {
            hits += 1;
        }
    }
    Ok(hits as f64 / all.len() as f64)
}

struct LmForward {
    steps1: Vec<GruStep>,
    steps2: Vec<GruStep>,
    h2s: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    perf_cache: Mlp2Cache,
    v_hat: f64,
    ce: f64,
}

fn lm_forward(params: &StudentParams, ids: &[usize]) -> LmForward {
    let n = ids.len();
    let d_h = params.dims.d_h;
    let mut h1 = vec![0.0; d_h];
    let mut h2 = vec![0.0; d_h];
    let mut steps1 = Vec::with_capacity(n);
    let mut steps2 = Vec::with_capacity(n);
    let mut h2s = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n - 1);
    let mut ce = 0.0;
    for t in 0..n {
        let x = params.embedding.forward(ids[t]);
        let (next1, step1) = params.layer1.forward(x, &h1);
        let (next2, step2) = params.layer2.forward(&next1, &h2);
        h1 = next1;
        h2 = next2;
        steps1.push(step1);
        steps2.push(step2);
        h2s.push(h2.clone());
        if t + 1 < n {
            let p = softmax(&params.output.forward(&h2));
            ce -= p[ids[t + 1]].max(1e-300).ln();
            probs.push(p);
        }
    }
    ce /= (n - 1) as f64;
    let (v_hat, perf_cache) = params.perf_head.forward(&h2);
    LmForward {
        steps1,
        steps2,
        h2s,
        probs,
        perf_cache,
        v_hat,
        ce,
    }
}

/// Accumulate gradients for one sequence; `w_seq` scales the whole
/// cross-entropy term, `d_v_hat` is the incoming gradient on the
/// performance prediction.
fn lm_backward(
    params: &StudentParams,
    fwd: &LmForward,
    ids: &[usize],
    w_seq: f64,
    d_v_hat: f64,
    grads: &mut StudentParams,
) {
    let n = ids.len();
    let d_h = params.dims.d_h;
    let per_token = w_seq / (n - 1) as f64;

    let mut dh2 = params
        .perf_head
        .backward(&fwd.perf_cache, d_v_hat, &mut grads.perf_head);
    let mut dh1 = vec![0.0; d_h];
    for t in (0..n).rev() {
        if t + 1 < n {
            let mut dlogits = fwd.probs[t].clone();
            dlogits[ids[t + 1]] -= 1.0;
            for v in &mut dlogits {
                *v *= per_token;
            }
            let dh_out = params
                .output
                .backward(&fwd.h2s[t], &dlogits, &mut grads.output);
            for (a, b) in dh2.iter_mut().zip(&dh_out) {
                *a += b;
            }
        }
        let (dh1_from2, dh2_prev) = params
            .layer2
            .backward(&fwd.steps2[t], &dh2, &mut grads.layer2);
        for (a, b) in dh1.iter_mut().zip(&dh1_from2) {
            *a += b;
        }
        let (dx, dh1_prev) = params
            .layer1
            .backward(&fwd.steps1[t], &dh1, &mut grads.layer1);
        params.embedding.backward(ids[t], &dx, &mut grads.embedding);
        dh2 = dh2_prev;
        dh1 = dh1_prev;
    }
}

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

fn batch_forward_backward(
    params: &StudentParams,
    pairs: &[(Vec<usize>, f64)],
    idx: &[usize],
    w: f64,
    grads: &mut StudentParams,
) -> (f64, f64) {
    let b = idx.len() as f64;
    let mut seq = 0.0;
    let mut perf = 0.0;
    for &i in idx {
        let (ids, v) = &pairs[i];
        let fwd = lm_forward(params, ids);
        let err = fwd.v_hat - v;
        seq += fwd.ce;
        perf += err * err;
        lm_backward(params, &fwd, ids, (1.0 - w) / b, w * 2.0 * err / b, grads);
    }
    (seq / b, perf / b)
}

fn batch_loss(params: &StudentParams, pairs: &[(Vec<usize>, f64)], w: f64) -> f64 {
    let b = pairs.len() as f64;
    let mut seq = 0.0;
    let mut perf = 0.0;
    for (ids, v) in pairs {
        let fwd = lm_forward(params, ids);
        let err = fwd.v_hat - v;
        seq += fwd.ce;
        perf += err * err;
    }
    (1.0 - w) * seq / b + w * perf / b
}

/// Distill the corpus into a fresh student: next-token prediction plus
/// score regression, mixed by `perf_loss_weight`, minimized with Adam.
pub fn train_student(
    corpus: &GoldenCorpus,
    vocab: &Vocabulary,
    config: &LmTrainConfig,
) -> Result<(StudentParams, Vec<LmEpochLoss>), ModelError> {
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
    let mut params = StudentParams::init(vocab, config.d_e, config.d_h, config.rng_seed);
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = rng_from_seed(sub_seed(config.rng_seed, "studentlm.train"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let w = config.perf_loss_weight;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut seq_sum = 0.0;
        let mut perf_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grads.zero_all();
            let (seq, perf) = batch_forward_backward(&params, &pairs, chunk, w, &mut grads);
            seq_sum += seq * chunk.len() as f64;
            perf_sum += perf * chunk.len() as f64;
            clip_global_norm(&mut grads.tensors_mut(), GRAD_CLIP);
            adam.step(&mut params, &grads);
        }
        let n = pairs.len() as f64;
        let loss_seq = seq_sum / n;
        let loss_perf = perf_sum / n;
        let loss_joint = (1.0 - w) * loss_seq + w * loss_perf;
        if !loss_joint.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        log.push(LmEpochLoss {
            epoch,
            loss_seq,
            loss_perf,
            loss_joint,
        });
    }
    Ok((params, log))
}

/// Finite-difference check of the combined distillation loss, same harness
/// and tolerances as the sequence model's.
pub fn gradient_check_student(
    params: &StudentParams,
    vocab: &Vocabulary,
    sample: &[GoldenExample],
    perf_loss_weight: f64,
    epsilon: f64,
) -> Result<GradCheckReport, ModelError> {
    if sample.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    params.check_vocab(vocab)?;
    let pairs = training_pairs(sample, vocab)?;
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let mut grads = params.zeros_like();
    batch_forward_backward(params, &pairs, &idx, perf_loss_weight, &mut grads);
    let mut probe = params.clone();
    let report = check_gradients(
        &mut probe,
        &grads,
        epsilon,
        COORDS_PER_TENSOR,
        params.dims.d_h as u64,
        |p| batch_loss(p, &pairs, perf_loss_weight),
    );
    Ok(report)
}

pub fn checkpoint_save(params: &StudentParams, path: &Path) -> Result<(), ModelError> {
    let dims = [
        params.dims.vocab as u32,
        params.dims.d_e as u32,
        params.dims.d_h as u32,
    ];
    checkpoint::save(
        path,
        CHECKPOINT_MAGIC,
        &params.fingerprint,
        &dims,
        &params.tensors(),
    )?;
    Ok(())
}

pub fn checkpoint_load(path: &Path, vocab: &Vocabulary) -> Result<StudentParams, ModelError> {
    let file = checkpoint::load(path, CHECKPOINT_MAGIC)?;
    if file.fingerprint != vocab.fingerprint() {
        return Err(ModelError::FingerprintMismatch {
            expected: vocab.fingerprint(),
            found: file.fingerprint,
        });
    }
    if file.dims.len() != 3 {
        return Err(ModelError::Checkpoint(CheckpointError::TensorMismatch(
            format!("expected 3 dims, found {}", file.dims.len()),
        )));
    }
    let dims = ModelDims {
        vocab: file.dims[0] as usize,
        d_e: file.dims[1] as usize,
        d_h: file.dims[2] as usize,
    };
    if dims.vocab != vocab.size() {
        return Err(ModelError::FingerprintMismatch {
            expected: vocab.fingerprint(),
            found: format!("vocab of size {}", dims.vocab),
        });
    }
    let mut params = StudentParams::zeros(dims, file.fingerprint.clone());
    checkpoint::restore_into(&file, params.tensors_mut())?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DownstreamModelKind;
    use crate::expr::{random_valid_segment_seeded, Operator, Segment, Token};
    use crate::golden::Source;

    fn toy_corpus(vocab: &Vocabulary, n: usize) -> GoldenCorpus {
        let mut corpus = GoldenCorpus::new(vocab);
        let mut seed = 100u64;
        while corpus.len() < n {
            let segment = random_valid_segment_seeded(vocab, 7, seed);
            seed += 1;
            let sequence = TransformationSequence::new(vec![segment]);
            if corpus.contains_text(&sequence.canonical_text()) {
                continue;
            }
            let score = 0.1 + 0.8 * (corpus.len() as f64 / n.max(2) as f64);
            corpus
                .push_checked(GoldenExample {
                    sequence,
                    score,
                    dataset_id: "toy".into(),
                    source: Source::Scripted,
                    model: DownstreamModelKind::default(),
                    seed: 0,
                })
                .unwrap();
        }
        corpus
    }

    fn quick_config(epochs: usize) -> LmTrainConfig {
        LmTrainConfig {
            learning_rate: 5e-3,
            epochs,
            batch_size: 16,
            rng_seed: 9,
            perf_loss_weight: 0.3,
            d_e: 16,
            d_h: 32,
        }
    }

    #[test]
    fn distributions_are_valid_and_deterministic() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let params = StudentParams::init(&vocab, 8, 8, 1);
        let prefix = [vocab.sos_id(), 0, 1];
        let a = next_token_distribution(&params, &prefix).unwrap();
        let b = next_token_distribution(&params, &prefix).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.probs.len(), vocab.size());
        assert!(a.probs.iter().all(|p| *p >= 0.0));
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(matches!(
            next_token_distribution(&params, &[0, 1]),
            Err(ModelError::MissingSos)
        ));
    }

    #[test]
    fn prediction_is_finite_and_deterministic_for_random_params() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let params = StudentParams::init(&vocab, 8, 8, 2);
        let sq = TransformationSequence::new(vec![Segment::new(vec![
            Token::Feature(0),
            Token::Feature(1),
            Token::Op(Operator::Add),
        ])
        .unwrap()]);
        let a = predict_performance(&params, &sq, &vocab).unwrap();
        let b = predict_performance(&params, &sq, &vocab).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let corpus = toy_corpus(&vocab, 5);
        let config = quick_config(3);
        let (a, log_a) = train_student(&corpus, &vocab, &config).unwrap();
        let (b, log_b) = train_student(&corpus, &vocab, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn zero_perf_weight_leaves_the_head_untouched() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let corpus = toy_corpus(&vocab, 4);
        let pairs = training_pairs(corpus.examples(), &vocab).unwrap();
        let params = StudentParams::init(&vocab, 8, 8, 3);
        let mut grads = params.zeros_like();
        let idx: Vec<usize> = (0..pairs.len()).collect();
        batch_forward_backward(&params, &pairs, &idx, 0.0, &mut grads);
        for (name, values) in grads.perf_head.tensors() {
            assert!(
                values.iter().all(|v| *v == 0.0),
                "perf head tensor {name} got gradient at weight 0"
            );
        }
        assert!(grads.output.tensors()[0].1.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn perf_weight_changes_the_trained_params() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let corpus = toy_corpus(&vocab, 5);
        let mut config = quick_config(5);
        config.perf_loss_weight = 0.0;
        let (without, _) = train_student(&corpus, &vocab, &config).unwrap();
        config.perf_loss_weight = 0.3;
        let (with, _) = train_student(&corpus, &vocab, &config).unwrap();
        assert_ne!(without, with);
    }

    #[test]
    fn sequence_loss_is_non_increasing_early_on() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let corpus = toy_corpus(&vocab, 12);
        let (_, log) = train_student(&corpus, &vocab, &quick_config(10)).unwrap();
        let upticks = log
            .windows(2)
            .filter(|w| w[1].loss_seq > w[0].loss_seq + 1e-12)
            .count();
        assert!(upticks <= 1, "{upticks} upticks in {log:?}");
    }

    #[test]
    fn memorizes_twenty_sequences() {
        let vocab = Vocabulary::canonical(5).unwrap();
        let corpus = toy_corpus(&vocab, 20);
        let config = LmTrainConfig {
            learning_rate: 5e-3,
            epochs: 300,
            batch_size: 16,
            rng_seed: 4,
            perf_loss_weight: 0.3,
            d_e: 32,
            d_h: 64,
        };
        let (params, _) = train_student(&corpus, &vocab, &config).unwrap();
        let rate = regeneration_rate(&params, &corpus, &vocab).unwrap();
        assert!(rate >= 0.9, "regeneration rate {rate} below 0.9");
    }

    #[test]
    fn learns_a_forced_conditional() {
        let vocab = Vocabulary::canonical(3).unwrap();
        // Every sequence starts (f0, f1, add), so that conditional is the
        // one thing the model must get right.
        let mut corpus = GoldenCorpus::new(&vocab);
        let heads = [Operator::Log, Operator::Sqrt, Operator::Sin, Operator::Cos];
        for (i, head) in heads.iter().enumerate() {
            let sequence = TransformationSequence::new(vec![
                Segment::new(vec![
                    Token::Feature(0),
                    Token::Feature(1),
                    Token::Op(Operator::Add),
                ])
                .unwrap(),
                Segment::new(vec![Token::Feature(2), Token::Op(*head)]).unwrap(),
            ]);
            corpus
                .push_checked(GoldenExample {
                    sequence,
                    score: 0.5,
                    dataset_id: "cond".into(),
                    source: Source::Scripted,
                    model: DownstreamModelKind::default(),
                    seed: i as u64,
                })
                .unwrap();
        }
        let (params, _) = train_student(&corpus, &vocab, &quick_config(150)).unwrap();
        let prefix = [vocab.sos_id(), 0, 1];
        let dist = next_token_distribution(&params, &prefix).unwrap();
        let add_id = vocab.id_of(Token::Op(Operator::Add)).unwrap();
        assert_eq!(dist.argmax(), add_id);
    }

    #[test]
    fn overfit_performance_predictions_hit_their_targets() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let mut corpus = GoldenCorpus::new(&vocab);
        for (seed, score) in [(0u64, 0.2), (1, 0.8)] {
            corpus
                .push_checked(GoldenExample {
                    sequence: TransformationSequence::new(vec![random_valid_segment_seeded(
                        &vocab, 5, seed,
                    )]),
                    score,
                    dataset_id: "pair".into(),
                    source: Source::Scripted,
                    model: DownstreamModelKind::default(),
                    seed,
                })
                .unwrap();
        }
        let config = LmTrainConfig {
            perf_loss_weight: 0.5,
            epochs: 300,
            ..quick_config(0)
        };
        let (params, _) = train_student(&corpus, &vocab, &config).unwrap();
        for example in corpus.examples() {
            let v_hat = predict_performance(&params, &example.sequence, &vocab).unwrap();
            assert!(
                (v_hat - example.score).abs() < 0.15,
                "predicted {v_hat} for target {}",
                example.score
            );
        }
    }

    #[test]
    fn greedy_generation_reproduces_a_single_memorized_sequence() {
        let vocab = Vocabulary::canonical(3).unwrap();
        let corpus = toy_corpus(&vocab, 1);
        let config = LmTrainConfig {
            epochs: 300,
            batch_size: 1,
            ..quick_config(0)
        };
        let (params, _) = train_student(&corpus, &vocab, &config).unwrap();
        let want = corpus.examples()[0].sequence.wire_ids(&vocab).unwrap();
        let out = generate(&params, &vocab, Sampling::Greedy, want.len() + 8, 0).unwrap();
        assert_eq!(out.raw_ids, want);
        let zero_temp = generate(&params, &vocab, Sampling::Temperature(0.0), want.len() + 8, 5)
            .unwrap();
        assert_eq!(zero_temp.raw_ids, want);
    }

    #[test]
    fn sampling_is_reproducible_and_in_vocabulary() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let params = StudentParams::init(&vocab, 8, 8, 6);
        for sampling in [
            Sampling::Greedy,
            Sampling::TopK(5),
            Sampling::Temperature(1.3),
        ] {
            let a = generate(&params, &vocab, sampling, 25, 11).unwrap();
            let b = generate(&params, &vocab, sampling, 25, 11).unwrap();
            assert_eq!(a.raw_ids, b.raw_ids);
            assert!(a.raw_ids.iter().all(|&id| id < vocab.size()));
        }
        let x = generate(&params, &vocab, Sampling::Temperature(1.3), 25, 1).unwrap();
        let y = generate(&params, &vocab, Sampling::Temperature(1.3), 25, 2).unwrap();
        // Different seeds are allowed to agree, but for an untrained model
        // over 25 near-uniform steps that would be astronomically unlucky.
        assert_ne!(x.raw_ids, y.raw_ids);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let vocab = Vocabulary::canonical(3).unwrap();
        let corpus = toy_corpus(&vocab, 3);
        let mut params = StudentParams::init(&vocab, 6, 8, 7);
        let mut rng = rng_from_seed(sub_seed(7, "gradcheck.fixture"));
        for (_, tensor) in params.tensors_mut() {
            for v in tensor {
                *v = rng.random_range(-0.6..0.6);
            }
        }
        let report =
            gradient_check_student(&params, &vocab, corpus.examples(), 0.3, 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max relative error {} in {:?}",
            report.max_rel_error,
            report.per_tensor
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let params = StudentParams::init(&vocab, 8, 8, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.ffslm");
        checkpoint_save(&params, &path).unwrap();
        let loaded = checkpoint_load(&path, &vocab).unwrap();
        assert_eq!(params, loaded);

        // A sequence-model checkpoint must be refused by its magic.
        let other = Vocabulary::canonical(4).unwrap();
        let sq_params = crate::seq2seq::Seq2SeqParams::init(&other, 4, 4, 1);
        let sq_path = dir.path().join("model.ffsq2");
        crate::seq2seq::checkpoint_save(&sq_params, &sq_path).unwrap();
        assert!(matches!(
            checkpoint_load(&sq_path, &vocab),
            Err(ModelError::Checkpoint(CheckpointError::BadMagic { .. }))
        ));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let corpus = GoldenCorpus::new(&vocab);
        assert!(matches!(
            train_student(&corpus, &vocab, &quick_config(1)),
            Err(ModelError::EmptyCorpus)
        ));
    }
}
