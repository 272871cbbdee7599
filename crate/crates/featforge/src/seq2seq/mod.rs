//! Sequence model over transformation sequences: a bidirectional GRU
//! encoder producing a fixed-size latent vector, a two-layer perceptron
//! scoring that latent, and an LSTM decoder that maps a latent back to a
//! token sequence one distribution at a time.
//!
//! The latent is the concatenation of the two final encoder states, so its
//! dimension is always twice the hidden size. The decoder starts from the
//! latent through two learned projections (initial hidden and cell state)
//! and is otherwise a plain autoregressive LSTM with a softmax head.

mod train;

pub use train::{gradient_check, train_joint, EpochLoss, TrainConfig};

use crate::checkpoint::{self, CheckpointError};
use crate::expr::{parse_token_stream, StreamParse, TransformationSequence, Vocabulary};
use crate::nn::{prefixed, prefixed_mut, Embedding, Linear, Mlp2, Tensors};
use crate::nn::{GruParams, LstmParams};
use crate::rng::{rng_from_seed, sub_seed};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FFSQ2";

/// Uniform init range for every weight matrix; biases start at zero (the
/// LSTM forget gate starts at one, set by its own constructor).
const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("corpus has no examples to train on")]
    EmptyCorpus,
    #[error("sequence contains a token outside the model vocabulary")]
    OutOfVocabulary,
    #[error("expected vector of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("decoder prefix must start with the start-of-sequence token")]
    MissingSos,
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("vocabulary fingerprint mismatch: found `{found}`, expected `{expected}`")]
    FingerprintMismatch { expected: String, found: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Sizes that define a model; serialized into every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_e: usize,
    pub d_h: usize,
}

impl ModelDims {
    pub fn d_z(&self) -> usize {
        2 * self.d_h
    }

    /// Special token ids, fixed by the vocabulary layout: the last three
    /// ids are always start, separator, end.
    pub fn sos_id(&self) -> usize {
        self.vocab - 3
    }

    pub fn sep_id(&self) -> usize {
        self.vocab - 2
    }

    pub fn eos_id(&self) -> usize {
        self.vocab - 1
    }
}

/// Encoder output: one fixed-size vector per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub values: Vec<f64>,
}

impl Latent {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Softmax output over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    /// Highest-probability token id; ties break toward the lowest id so
    /// greedy decoding is deterministic.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    pub dims: ModelDims,
    pub fingerprint: String,
    pub embedding: Embedding,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub evaluator: Mlp2,
    pub dec_init_h: Linear,
    pub dec_init_c: Linear,
    pub decoder: LstmParams,
    pub output: Linear,
}

impl Seq2SeqParams {
    pub fn init(vocab: &Vocabulary, d_e: usize, d_h: usize, seed: u64) -> Seq2SeqParams {
        assert!(d_e >= 1 && d_h >= 1, "degenerate model dims");
        let dims = ModelDims {
            vocab: vocab.size(),
            d_e,
            d_h,
        };
        let mut rng = rng_from_seed(sub_seed(seed, "seq2seq.init"));
        let r = &mut rng;
        Seq2SeqParams {
            dims,
            fingerprint: vocab.fingerprint(),
            embedding: Embedding::uniform(dims.vocab, d_e, INIT_SCALE, r),
            enc_fwd: GruParams::uniform(d_h, d_e, INIT_SCALE, r),
            enc_bwd: GruParams::uniform(d_h, d_e, INIT_SCALE, r),
            evaluator: Mlp2::uniform(2 * d_h, d_h, INIT_SCALE, r),
            dec_init_h: Linear::uniform(d_h, 2 * d_h, INIT_SCALE, r),
            dec_init_c: Linear::uniform(d_h, 2 * d_h, INIT_SCALE, r),
            decoder: LstmParams::uniform(d_h, d_e, INIT_SCALE, r),
            output: Linear::uniform(dims.vocab, d_h, INIT_SCALE, r),
        }
    }

    /// Same shapes, all zeros: the gradient mirror for training.
    pub fn zeros_like(&self) -> Seq2SeqParams {
        Self::zeros(self.dims, self.fingerprint.clone())
    }

    fn zeros(dims: ModelDims, fingerprint: String) -> Seq2SeqParams {
        let ModelDims { vocab, d_e, d_h } = dims;
        Seq2SeqParams {
            dims,
            fingerprint,
            embedding: Embedding::zeros(vocab, d_e),
            enc_fwd: GruParams::zeros(d_h, d_e),
            enc_bwd: GruParams::zeros(d_h, d_e),
            evaluator: Mlp2::zeros(2 * d_h, d_h),
            dec_init_h: Linear::zeros(d_h, 2 * d_h),
            dec_init_c: Linear::zeros(d_h, 2 * d_h),
            decoder: LstmParams::zeros(d_h, d_e),
            output: Linear::zeros(vocab, d_h),
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

    fn check_latent(&self, z: &Latent) -> Result<(), ModelError> {
        if z.dim() != self.dims.d_z() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dims.d_z(),
                got: z.dim(),
            });
        }
        Ok(())
    }
}

impl Tensors for Seq2SeqParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = prefixed(&self.embedding, "embedding");
        out.extend(prefixed(&self.enc_fwd, "enc_fwd"));
        out.extend(prefixed(&self.enc_bwd, "enc_bwd"));
        out.extend(prefixed(&self.evaluator, "evaluator"));
        out.extend(prefixed(&self.dec_init_h, "dec_init_h"));
        out.extend(prefixed(&self.dec_init_c, "dec_init_c"));
        out.extend(prefixed(&self.decoder, "decoder"));
        out.extend(prefixed(&self.output, "output"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = prefixed_mut(&mut self.embedding, "embedding");
        out.extend(prefixed_mut(&mut self.enc_fwd, "enc_fwd"));
        out.extend(prefixed_mut(&mut self.enc_bwd, "enc_bwd"));
        out.extend(prefixed_mut(&mut self.evaluator, "evaluator"));
        out.extend(prefixed_mut(&mut self.dec_init_h, "dec_init_h"));
        out.extend(prefixed_mut(&mut self.dec_init_c, "dec_init_c"));
        out.extend(prefixed_mut(&mut self.decoder, "decoder"));
        out.extend(prefixed_mut(&mut self.output, "output"));
        out
    }
}

fn check_ids(params: &Seq2SeqParams, ids: &[usize]) -> Result<(), ModelError> {
    if ids.iter().any(|&id| id >= params.dims.vocab) {
        Err(ModelError::OutOfVocabulary)
    } else {
        Ok(())
    }
}

/// Run the bidirectional encoder over raw wire-form ids.
pub fn encode_ids(params: &Seq2SeqParams, ids: &[usize]) -> Result<Latent, ModelError> {
    check_ids(params, ids)?;
    if ids.is_empty() {
        return Err(ModelError::OutOfVocabulary);
    }
    let d_h = params.dims.d_h;
    let mut h_fwd = vec![0.0; d_h];
    for &id in ids {
        let (h, _) = params.enc_fwd.forward(params.embedding.forward(id), &h_fwd);
        h_fwd = h;
    }
    let mut h_bwd = vec![0.0; d_h];
    for &id in ids.iter().rev() {
        let (h, _) = params.enc_bwd.forward(params.embedding.forward(id), &h_bwd);
        h_bwd = h;
    }
    h_fwd.extend_from_slice(&h_bwd);
    Ok(Latent { values: h_fwd })
}

/// Encode a sequence to its latent vector: `<SOS> tokens <EOS>` through the
/// bidirectional encoder, final states concatenated.
pub fn encode(
    params: &Seq2SeqParams,
    sequence: &TransformationSequence,
    vocab: &Vocabulary,
) -> Result<Latent, ModelError> {
    params.check_vocab(vocab)?;
    let ids = sequence
        .wire_ids(vocab)
        .ok_or(ModelError::OutOfVocabulary)?;
    encode_ids(params, &ids)
}

/// Predicted downstream score for a latent. Deliberately unsquashed: real
/// regression targets can be negative.
pub fn estimate(params: &Seq2SeqParams, z: &Latent) -> Result<f64, ModelError> {
    params.check_latent(z)?;
    let (s_hat, _) = params.evaluator.forward(&z.values);
    Ok(s_hat)
}

/// Gradient of the estimated score with respect to the latent itself, for
/// gradient-steered search. Only the evaluator participates.
pub fn estimate_grad_z(params: &Seq2SeqParams, z: &Latent) -> Result<Vec<f64>, ModelError> {
    params.check_latent(z)?;
    let (_, cache) = params.evaluator.forward(&z.values);
    let mut scratch = Mlp2::zeros(params.dims.d_z(), params.dims.d_h);
    Ok(params.evaluator.backward(&cache, 1.0, &mut scratch))
}

/// Decoder state threaded through incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    h: Vec<f64>,
    c: Vec<f64>,
}

/// Fresh decoder state for a latent; nothing consumed yet.
pub fn decoder_start(params: &Seq2SeqParams, z: &Latent) -> Result<DecoderState, ModelError> {
    params.check_latent(z)?;
    Ok(DecoderState {
        h: params.dec_init_h.forward(&z.values),
        c: params.dec_init_c.forward(&z.values),
    })
}

/// Feed one token into the decoder and return the distribution over the
/// next token.
pub fn decoder_advance(
    params: &Seq2SeqParams,
    state: &mut DecoderState,
    token_id: usize,
) -> Result<TokenDistribution, ModelError> {
    check_ids(params, &[token_id])?;
    let x = params.embedding.forward(token_id);
    let (h, c, _) = params.decoder.forward(x, &state.h, &state.c);
    state.h = h;
    state.c = c;
    let logits = params.output.forward(&state.h);
    Ok(TokenDistribution {
        probs: softmax(&logits),
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Distribution over the token following `prefix`, which must start with
/// the start-of-sequence id.
pub fn decode_step(
    params: &Seq2SeqParams,
    z: &Latent,
    prefix: &[usize],
) -> Result<TokenDistribution, ModelError> {
    if prefix.first() != Some(&params.dims.sos_id()) {
        return Err(ModelError::MissingSos);
    }
    check_ids(params, prefix)?;
    let mut state = decoder_start(params, z)?;
    let mut dist = None;
    for &id in prefix {
        dist = Some(decoder_advance(params, &mut state, id)?);
    }
    Ok(dist.expect("prefix is non-empty"))
}

/// Everything a greedy decode produces: the raw emitted stream (leading
/// start token included, so invalid segments stay countable), the per-step
/// distributions, and the parsed sequence with only the valid segments.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub raw_ids: Vec<usize>,
    pub distributions: Vec<TokenDistribution>,
    pub parse: StreamParse,
}

/// Repeated argmax decoding until the end token or `max_len` emitted
/// tokens, whichever comes first.
pub fn decode_greedy(
    params: &Seq2SeqParams,
    vocab: &Vocabulary,
    z: &Latent,
    max_len: usize,
) -> Result<DecodeOutcome, ModelError> {
    assert!(max_len >= 3, "max_len {max_len} cannot fit a segment");
    params.check_vocab(vocab)?;
    let mut state = decoder_start(params, z)?;
    let mut raw_ids = vec![params.dims.sos_id()];
    let mut distributions = Vec::new();
    let mut last = params.dims.sos_id();
    for _ in 0..max_len {
        let dist = decoder_advance(params, &mut state, last)?;
        let id = dist.argmax();
        distributions.push(dist);
        raw_ids.push(id);
        last = id;
        if id == params.dims.eos_id() {
            break;
        }
    }
    let tokens: Vec<_> = raw_ids
        .iter()
        .map(|&id| vocab.token_of(id).expect("ids come from the softmax"))
        .collect();
    let parse = parse_token_stream(&tokens);
    Ok(DecodeOutcome {
        raw_ids,
        distributions,
        parse,
    })
}

pub fn checkpoint_save(params: &Seq2SeqParams, path: &Path) -> Result<(), ModelError> {
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

pub fn checkpoint_load(path: &Path, vocab: &Vocabulary) -> Result<Seq2SeqParams, ModelError> {
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
    let (v, d_e, d_h) = (
        file.dims[0] as usize,
        file.dims[1] as usize,
        file.dims[2] as usize,
    );
    if v != vocab.size() {
        return Err(ModelError::FingerprintMismatch {
            expected: vocab.fingerprint(),
            found: format!("vocab of size {v}"),
        });
    }
    let dims = ModelDims { vocab: v, d_e, d_h };
    let mut params = Seq2SeqParams::zeros(dims, file.fingerprint.clone());
    checkpoint::restore_into(&file, params.tensors_mut())?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Operator, Segment, Token};

    fn vocab() -> Vocabulary {
        Vocabulary::canonical(3).unwrap()
    }

    fn sample_sequence() -> TransformationSequence {
        TransformationSequence::new(vec![
            Segment::new(vec![
                Token::Feature(0),
                Token::Feature(1),
                Token::Op(Operator::Add),
            ])
            .unwrap(),
            Segment::new(vec![Token::Feature(2), Token::Op(Operator::Log)]).unwrap(),
        ])
    }

    fn small_params(seed: u64) -> Seq2SeqParams {
        Seq2SeqParams::init(&vocab(), 6, 5, seed)
    }

    #[test]
    fn encode_is_deterministic_with_fixed_dimension() {
        let params = small_params(1);
        let v = vocab();
        let sq = sample_sequence();
        let a = encode(&params, &sq, &v).unwrap();
        let b = encode(&params, &sq, &v).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 10);
        assert!(a.all_finite());
    }

    #[test]
    fn encode_is_order_sensitive() {
        let params = small_params(1);
        let v = vocab();
        let sq = sample_sequence();
        let swapped = TransformationSequence::new(vec![
            sq.segments()[1].clone(),
            sq.segments()[0].clone(),
        ]);
        let a = encode(&params, &sq, &v).unwrap();
        let b = encode(&params, &swapped, &v).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encode_refuses_foreign_vocabulary() {
        let params = small_params(1);
        let other = Vocabulary::canonical(4).unwrap();
        let err = encode(&params, &sample_sequence(), &other).unwrap_err();
        assert!(matches!(err, ModelError::FingerprintMismatch { .. }));
    }

    #[test]
    fn estimate_matches_hand_rolled_forward() {
        let params = small_params(2);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();

        let l1 = &params.evaluator.l1;
        let h: Vec<f64> = (0..l1.b.len())
            .map(|i| {
                let mut acc = l1.b[i];
                for (j, zj) in z.values.iter().enumerate() {
                    acc += l1.w.get(i, j) * zj;
                }
                acc.tanh()
            })
            .collect();
        let l2 = &params.evaluator.l2;
        let mut expected = l2.b[0];
        for (j, hj) in h.iter().enumerate() {
            expected += l2.w.get(0, j) * hj;
        }

        let got = estimate(&params, &z).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn estimate_is_continuous_in_z() {
        let params = small_params(3);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();
        let base = estimate(&params, &z).unwrap();
        let mut nudged = z.clone();
        for val in &mut nudged.values {
            *val += 1e-7;
        }
        let moved = estimate(&params, &nudged).unwrap();
        assert!((moved - base).abs() < 1e-4);
    }

    #[test]
    fn estimate_checks_latent_dimension() {
        let params = small_params(1);
        let bad = Latent {
            values: vec![0.0; 3],
        };
        assert!(matches!(
            estimate(&params, &bad),
            Err(ModelError::DimensionMismatch {
                expected: 10,
                got: 3
            })
        ));
    }

    #[test]
    fn estimate_grad_z_matches_finite_differences() {
        let params = small_params(4);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();
        let grad = estimate_grad_z(&params, &z).unwrap();
        let eps = 1e-6;
        for i in 0..z.dim() {
            let mut plus = z.clone();
            plus.values[i] += eps;
            let mut minus = z.clone();
            minus.values[i] -= eps;
            let numeric = (estimate(&params, &plus).unwrap()
                - estimate(&params, &minus).unwrap())
                / (2.0 * eps);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((grad[i] - numeric) / denom).abs() < 1e-4,
                "coord {i}: analytic {} numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn decode_step_is_a_probability_distribution() {
        let params = small_params(5);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();
        let dist = decode_step(&params, &z, &[v.sos_id(), 0, 1]).unwrap();
        assert_eq!(dist.probs.len(), v.size());
        assert!(dist.probs.iter().all(|p| *p >= 0.0));
        let sum: f64 = dist.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let again = decode_step(&params, &z, &[v.sos_id(), 0, 1]).unwrap();
        assert_eq!(dist, again);
    }

    #[test]
    fn decode_step_requires_sos() {
        let params = small_params(5);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();
        assert!(matches!(
            decode_step(&params, &z, &[0, 1]),
            Err(ModelError::MissingSos)
        ));
        assert!(matches!(
            decode_step(&params, &z, &[]),
            Err(ModelError::MissingSos)
        ));
    }

    #[test]
    fn fresh_params_decode_near_uniform() {
        let v = Vocabulary::canonical(5).unwrap();
        let params = Seq2SeqParams::init(&v, 32, 64, 7);
        let sq = TransformationSequence::new(vec![Segment::new(vec![
            Token::Feature(0),
            Token::Op(Operator::Sqrt),
        ])
        .unwrap()]);
        let z = encode(&params, &sq, &v).unwrap();
        let dist = decode_step(&params, &z, &[v.sos_id()]).unwrap();
        let max = dist.probs.iter().cloned().fold(f64::MIN, f64::max);
        let min = dist.probs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max / min < 10.0,
            "init distribution is too peaked: {max} / {min}"
        );
    }

    #[test]
    fn greedy_decode_stops_at_eos_and_stays_in_vocab() {
        let params = small_params(6);
        let v = vocab();
        let z = encode(&params, &sample_sequence(), &v).unwrap();
        let out = decode_greedy(&params, &v, &z, 40).unwrap();
        assert_eq!(out.raw_ids[0], v.sos_id());
        assert!(out.raw_ids.len() <= 41);
        assert!(out.raw_ids.iter().all(|&id| id < v.size()));
        let eos_count = out.raw_ids.iter().filter(|&&id| id == v.eos_id()).count();
        assert!(eos_count <= 1);
        if eos_count == 1 {
            assert_eq!(*out.raw_ids.last().unwrap(), v.eos_id());
        }
        assert_eq!(out.distributions.len(), out.raw_ids.len() - 1);
    }

    #[test]
    fn model_is_safe_to_share_across_threads() {
        let params = small_params(8);
        let v = vocab();
        let sq = sample_sequence();
        let z = encode(&params, &sq, &v).unwrap();
        let here = (estimate(&params, &z).unwrap(), decode_step(&params, &z, &[v.sos_id()]).unwrap());
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..4)
                .map(|_| {
                    scope.spawn(|| {
                        let z = encode(&params, &sq, &v).unwrap();
                        (
                            estimate(&params, &z).unwrap(),
                            decode_step(&params, &z, &[v.sos_id()]).unwrap(),
                        )
                    })
                })
                .collect();
            for handle in handles {
                assert_eq!(handle.join().unwrap(), here);
            }
        });
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let params = small_params(9);
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ffsq2");
        checkpoint_save(&params, &path).unwrap();
        let loaded = checkpoint_load(&path, &v).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_wrong_magic_and_vocab() {
        let params = small_params(9);
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        crate::checkpoint::save(
            &path,
            b"FFTST",
            &params.fingerprint,
            &[1],
            &params.tensors(),
        )
        .unwrap();
        assert!(matches!(
            checkpoint_load(&path, &v),
            Err(ModelError::Checkpoint(CheckpointError::BadMagic { .. }))
        ));

        checkpoint_save(&params, &path).unwrap();
        let other = Vocabulary::canonical(7).unwrap();
        assert!(matches!(
            checkpoint_load(&path, &other),
            Err(ModelError::FingerprintMismatch { .. })
        ));
    }
}
