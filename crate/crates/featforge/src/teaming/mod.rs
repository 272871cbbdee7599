//! Product-of-experts fusion of the two decoders, teamed decoding, and the
//! four-policy pipeline runner behind the ablation comparison.
//!
//! The fusion rule weighs the sequence model's decoder against the student
//! language model geometrically: q(w) is proportional to
//! max(p_ml, floor)^lambda * max(p_llm, floor)^(1 - lambda). The floor
//! keeps the product defined when one expert assigns an exact zero.

use crate::data::{Dataset, DownstreamModelKind};
use crate::expr::{parse_text, parse_token_stream, Arity, Complexity, StreamParse, Token};
use crate::expr::Vocabulary;
use crate::golden::GoldenCorpus;
use crate::search::{
    epochs_to_converge, search_with_decoder, SearchConfig, SearchError, SearchOutcome,
    CONVERGENCE_TOLERANCE,
};
use crate::seq2seq::{
    decoder_advance, decoder_start, Latent, ModelError, Seq2SeqParams, TokenDistribution,
};
use crate::studentlm::{student_advance, student_start, StudentParams};
use crate::rng::{rng_from_seed, sub_seed, DetRng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TeamingError {
    #[error("policy {policy} needs a trained {artifact} model")]
    MissingArtifact {
        policy: PolicyKind,
        artifact: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    TopK { k: usize, rng_seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamingConfig {
    /// Weight of the ML decoder; the student gets 1 - lambda.
    pub lambda: f64,
    pub prob_floor: f64,
    pub strategy: DecodeStrategy,
    /// Restrict fused distributions to tokens that keep the stream
    /// syntactically completable. Off by default: validity is supposed to
    /// come from the student side, the hard mask is a labeled extension.
    pub syntactic_mask: bool,
    pub max_len: usize,
}

impl Default for TeamingConfig {
    fn default() -> Self {
        TeamingConfig {
            lambda: 0.5,
            prob_floor: 1e-12,
            strategy: DecodeStrategy::Greedy,
            syntactic_mask: false,
            max_len: 64,
        }
    }
}

impl TeamingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_mix(self.lambda, self.prob_floor)?;
        if self.max_len < 3 {
            return Err(ModelError::BadConfig(format!(
                "max_len {} cannot fit a segment",
                self.max_len
            )));
        }
        if let DecodeStrategy::TopK { k, .. } = self.strategy {
            if k == 0 {
                return Err(ModelError::BadConfig("top_k needs k >= 1".into()));
            }
        }
        Ok(())
    }
}

fn check_mix(lambda: f64, prob_floor: f64) -> Result<(), ModelError> {
    if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
        return Err(ModelError::BadConfig(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    if !(prob_floor.is_finite() && prob_floor > 0.0) {
        return Err(ModelError::BadConfig(format!(
            "prob_floor {prob_floor} must be positive"
        )));
    }
    Ok(())
}

/// Geometric fusion of two distributions over the same vocabulary.
pub fn combine(
    p_ml: &TokenDistribution,
    p_llm: &TokenDistribution,
    lambda: f64,
    prob_floor: f64,
) -> Result<TokenDistribution, ModelError> {
    check_mix(lambda, prob_floor)?;
    if p_ml.probs.len() != p_llm.probs.len() {
        return Err(ModelError::DimensionMismatch {
            expected: p_ml.probs.len(),
            got: p_llm.probs.len(),
        });
    }
    let mut probs: Vec<f64> = p_ml
        .probs
        .iter()
        .zip(&p_llm.probs)
        .map(|(a, b)| a.max(prob_floor).powf(lambda) * b.max(prob_floor).powf(1.0 - lambda))
        .collect();
    let sum: f64 = probs.iter().sum();
    for q in &mut probs {
        *q /= sum;
    }
    Ok(TokenDistribution { probs })
}

/// Legal next tokens for a wire prefix, as a bitmap indexed by token id.
///
/// An operator needs enough operands on the segment's stack; a separator
/// or end token needs the current segment reduced to one value that went
/// through at least one operator (a bare feature copy is syntactically
/// fine but useless, so the mask refuses to close on it).
pub fn syntactic_mask(prefix: &[usize], vocab: &Vocabulary) -> Result<Vec<bool>, ModelError> {
    if prefix.first() != Some(&vocab.sos_id()) {
        return Err(ModelError::MissingSos);
    }
    let (depth, has_op) = segment_state(&prefix[1..], vocab)?;
    let mut allowed = vec![false; vocab.size()];
    for (id, slot) in allowed.iter_mut().enumerate() {
        let token = vocab.token_of(id).expect("id < vocab.size()");
        *slot = match token {
            Token::Feature(_) => true,
            Token::Op(op) => match op.arity() {
                Arity::Unary => depth >= 1,
                Arity::Binary => depth >= 2,
            },
            Token::Sep | Token::Eos => depth == 1 && has_op,
            Token::Sos => false,
        };
    }
    Ok(allowed)
}

/// Stack depth and operator usage of the segment currently being built.
fn segment_state(body: &[usize], vocab: &Vocabulary) -> Result<(usize, bool), ModelError> {
    let mut depth = 0usize;
    let mut has_op = false;
    for &id in body {
        let token = vocab.token_of(id).ok_or(ModelError::OutOfVocabulary)?;
        match token {
            Token::Feature(_) => depth += 1,
            Token::Op(op) => {
                has_op = true;
                if op.arity() == Arity::Binary {
                    depth = depth.saturating_sub(1);
                }
            }
            Token::Sep => {
                depth = 0;
                has_op = false;
            }
            Token::Sos | Token::Eos => {}
        }
    }
    Ok((depth, has_op))
}

/// Cheapest number of further tokens (end token included) that closes the
/// stream from this segment state; None when the vocabulary cannot close
/// it at all.
fn min_close_cost(depth: usize, has_op: bool, vocab: &Vocabulary) -> Option<usize> {
    if depth >= 2 {
        // depth - 1 binary reductions, then the end token.
        return vocab.has_binary().then_some(depth);
    }
    if depth == 1 {
        if has_op {
            return Some(1);
        }
        if vocab.has_unary() {
            return Some(2);
        }
        return vocab.has_binary().then_some(3); // feature, binary, end
    }
    // Empty segment: one feature, then close it.
    min_close_cost(1, false, vocab).map(|c| c + 1)
}

#[derive(Debug, Clone)]
pub struct TeamDecodeOutcome {
    pub raw_ids: Vec<usize>,
    /// Fused distribution each emitted token was drawn from.
    pub fused: Vec<TokenDistribution>,
    pub parse: StreamParse,
}

/// Decode one latent point with both experts consulted at every step.
///
/// With the mask on, the fused distribution is additionally restricted to
/// tokens whose segment state still closes within the length budget, which
/// makes every masked decode parse with zero invalid segments.
pub fn team_decode(
    ml: &Seq2SeqParams,
    student: &StudentParams,
    vocab: &Vocabulary,
    z: &Latent,
    config: &TeamingConfig,
) -> Result<TeamDecodeOutcome, ModelError> {
    config.validate()?;
    for fingerprint in [&ml.fingerprint, &student.fingerprint] {
        if *fingerprint != vocab.fingerprint() {
            return Err(ModelError::FingerprintMismatch {
                expected: vocab.fingerprint(),
                found: fingerprint.clone(),
            });
        }
    }
    if config.syntactic_mask {
        let opening = min_close_cost(0, false, vocab).ok_or_else(|| {
            ModelError::BadConfig("vocabulary has no way to close a segment".into())
        })?;
        if config.max_len < opening {
            return Err(ModelError::BadConfig(format!(
                "max_len {} cannot fit a maskable stream (needs {opening})",
                config.max_len
            )));
        }
    }
    let mut rng = match config.strategy {
        DecodeStrategy::Greedy => None,
        DecodeStrategy::TopK { rng_seed, .. } => {
            Some(rng_from_seed(sub_seed(rng_seed, "teaming.decode")))
        }
    };

    let sos = vocab.sos_id();
    let eos = vocab.eos_id();
    let mut state_ml = decoder_start(ml, z)?;
    let mut state_lm = student_start(student);
    let mut raw_ids = vec![sos];
    let mut fused = Vec::new();
    let mut last = sos;
    for emitted in 0..config.max_len {
        let p_ml = decoder_advance(ml, &mut state_ml, last)?;
        let p_llm = student_advance(student, &mut state_lm, last)?;
        let mut q = combine(&p_ml, &p_llm, config.lambda, config.prob_floor)?;
        if config.syntactic_mask {
            let legal = syntactic_mask(&raw_ids, vocab)?;
            let (depth, has_op) = segment_state(&raw_ids[1..], vocab)?;
            // Tokens we may still emit after the one chosen now.
            let remaining = config.max_len - emitted - 1;
            let mut sum = 0.0;
            for (id, prob) in q.probs.iter_mut().enumerate() {
                let feasible = legal[id]
                    && fits_budget(vocab.token_of(id).unwrap(), depth, has_op, remaining, vocab);
                if !feasible {
                    *prob = 0.0;
                }
                sum += *prob;
            }
            debug_assert!(sum > 0.0, "mask stranded the decode");
            for prob in &mut q.probs {
                *prob /= sum;
            }
        }
        let id = match (config.strategy, rng.as_mut()) {
            (DecodeStrategy::Greedy, _) => q.argmax(),
            (DecodeStrategy::TopK { k, .. }, Some(rng)) => top_k_pick(&q, k, rng),
            (DecodeStrategy::TopK { .. }, None) => unreachable!("rng built above"),
        };
        raw_ids.push(id);
        fused.push(q);
        last = id;
        if id == eos {
            break;
        }
    }
    let tokens: Vec<_> = raw_ids
        .iter()
        .map(|&id| vocab.token_of(id).expect("ids come from the softmax"))
        .collect();
    Ok(TeamDecodeOutcome {
        raw_ids,
        fused,
        parse: parse_token_stream(&tokens),
    })
}

/// Budget feasibility of emitting `token` now: the state it leads to must
/// still close within `remaining` further tokens.
fn fits_budget(
    token: Token,
    depth: usize,
    has_op: bool,
    remaining: usize,
    vocab: &Vocabulary,
) -> bool {
    let after = match token {
        Token::Feature(_) => Some((depth + 1, has_op)),
        Token::Op(op) => match op.arity() {
            Arity::Unary => Some((depth, true)),
            Arity::Binary => Some((depth - 1, true)),
        },
        Token::Sep => Some((0, false)),
        Token::Eos => None,
        Token::Sos => unreachable!("mask never allows SOS"),
    };
    match after {
        None => true,
        Some((d, op)) => min_close_cost(d, op, vocab).is_some_and(|c| c <= remaining),
    }
}

fn top_k_pick(dist: &TokenDistribution, k: usize, rng: &mut DetRng) -> usize {
    let mut order: Vec<usize> = (0..dist.probs.len()).collect();
    order.sort_by(|&a, &b| {
        dist.probs[b]
            .partial_cmp(&dist.probs[a])
            .expect("probs are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k.min(dist.probs.len()));
    let total: f64 = order.iter().map(|&i| dist.probs[i]).sum();
    let roll: f64 = rng.random_range(0.0..1.0) * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += dist.probs[i];
        if roll < acc {
            return i;
        }
    }
    *order.last().expect("k >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TraditionalMl,
    TeamingWoSearch,
    WoDecoderTeaming,
    Teaming,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::TraditionalMl,
        PolicyKind::TeamingWoSearch,
        PolicyKind::WoDecoderTeaming,
        PolicyKind::Teaming,
    ];

    fn needs_student(self) -> bool {
        matches!(self, PolicyKind::TeamingWoSearch | PolicyKind::Teaming)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PolicyKind::TraditionalMl => "traditional_ml",
            PolicyKind::TeamingWoSearch => "teaming_wo_search",
            PolicyKind::WoDecoderTeaming => "wo_decoder_teaming",
            PolicyKind::Teaming => "teaming",
        };
        f.write_str(name)
    }
}

/// Everything a policy run needs besides the data: the trained models.
#[derive(Debug, Clone, Copy)]
pub struct PolicyArtifacts<'a> {
    pub seq2seq: &'a Seq2SeqParams,
    pub student: Option<&'a StudentParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub search: SearchConfig,
    pub teaming: TeamingConfig,
    pub model_kind: DownstreamModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    /// Search steps executed across all seeds (the seed decode itself is
    /// step 0 and not counted).
    pub epochs: usize,
    /// First step at which the run's final best score had already been
    /// reached, None when nothing scored.
    pub epochs_to_converge: Option<usize>,
    /// Wall-clock cost, excluded from serialized reports so two runs of the
    /// same configuration produce identical bytes.
    #[serde(skip_serializing)]
    pub seconds_per_epoch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub policy: PolicyKind,
    /// Canonical text of the best valid candidate, if any.
    pub best_sequence: Option<String>,
    pub score: Option<f64>,
    /// Candidate sequences containing at least one invalid segment, over
    /// all candidates materialized during the run.
    pub error_rate: f64,
    /// Finer-grained companion: invalid segments over all segments.
    pub segment_error_rate: f64,
    /// Fraction of operator occurrences in valid candidates drawn from the
    /// simple arithmetic bucket.
    pub operator_ratio: f64,
    /// Occurrence count per feature index across valid candidates.
    pub feature_usage: Vec<usize>,
    pub timing: Timing,
    pub config: PolicyConfig,
}

impl RunReport {
    /// One table row in the ablation format: performance with the error
    /// rate in parentheses.
    pub fn markdown_row(&self) -> String {
        let cell = match self.score {
            Some(score) => format!("{score:.4} ({:.4})", self.error_rate),
            None => format!("- ({:.4})", self.error_rate),
        };
        format!("| {} | {} |", self.policy, cell)
    }
}

/// Run one ablation arm end to end on a dataset and corpus.
pub fn run_policy(
    dataset: &Dataset,
    vocab: &Vocabulary,
    corpus: &GoldenCorpus,
    artifacts: PolicyArtifacts<'_>,
    policy: PolicyKind,
    config: &PolicyConfig,
) -> Result<RunReport, TeamingError> {
    config.teaming.validate()?;
    let ml = artifacts.seq2seq;
    let student = if policy.needs_student() {
        Some(artifacts.student.ok_or(TeamingError::MissingArtifact {
            policy,
            artifact: "student",
        })?)
    } else {
        None
    };

    let mut search_config = config.search;
    if policy == PolicyKind::TeamingWoSearch {
        search_config.steps_per_seed = 0;
    }

    let started = Instant::now();
    let outcome: SearchOutcome = match policy {
        // Both ML-only arms decode greedily with the sequence model alone;
        // they differ upstream (how the corpus was produced), which is
        // fixed by the time this function runs.
        PolicyKind::TraditionalMl | PolicyKind::WoDecoderTeaming => crate::search::search(
            ml,
            vocab,
            corpus,
            dataset,
            config.model_kind,
            &search_config,
        )?,
        PolicyKind::TeamingWoSearch | PolicyKind::Teaming => {
            let student = student.expect("checked above");
            let mut teaming = config.teaming;
            teaming.max_len = teaming.max_len.min(search_config.max_decode_len);
            search_with_decoder(
                ml,
                vocab,
                corpus,
                dataset,
                config.model_kind,
                &search_config,
                |z| Ok(team_decode(ml, student, vocab, z, &teaming)?.parse),
            )?
        }
    };
    let elapsed = started.elapsed().as_secs_f64();

    let epochs = outcome.trace.iter().map(|r| r.step).max().unwrap_or(0);
    let (simple, complex, feature_usage) = usage_stats(&outcome, vocab);
    let best = outcome.best();
    Ok(RunReport {
        policy,
        best_sequence: best.map(|c| c.decoded.canonical_text()),
        score: best.and_then(|c| c.actual),
        error_rate: outcome.error_rate(),
        segment_error_rate: outcome.segment_error_rate(),
        operator_ratio: if simple + complex == 0 {
            0.0
        } else {
            simple as f64 / (simple + complex) as f64
        },
        feature_usage,
        timing: Timing {
            epochs,
            epochs_to_converge: epochs_to_converge(&outcome.trace, CONVERGENCE_TOLERANCE),
            seconds_per_epoch: elapsed / epochs.max(1) as f64,
        },
        config: *config,
    })
}

/// Operator buckets and feature usage across the valid candidates of a
/// finished run.
fn usage_stats(outcome: &SearchOutcome, vocab: &Vocabulary) -> (usize, usize, Vec<usize>) {
    let mut simple = 0;
    let mut complex = 0;
    let mut feature_usage = vec![0usize; vocab.n_features()];
    for row in outcome.trace.iter().filter(|r| r.valid) {
        let parsed = parse_text(&row.canonical_text, vocab);
        for segment in parsed.sequence.segments() {
            for token in segment.tokens() {
                match token {
                    Token::Op(op) => match op.complexity() {
                        Complexity::Simple => simple += 1,
                        Complexity::Complex => complex += 1,
                    },
                    Token::Feature(i) => feature_usage[*i] += 1,
                    _ => {}
                }
            }
        }
    }
    (simple, complex, feature_usage)
}
