//! Golden-example corpus: prompt construction for the teacher model, an
//! offline scripted stand-in, scoring of candidate sequences on real data,
//! persistence, and usage statistics.
//!
//! Nothing from a teacher response is trusted: text flows through parsing,
//! postfix validation, and a real downstream evaluation before a sequence
//! earns a corpus slot.

mod client;
mod store;

pub use client::{parse_response, request_teacher, TeacherClient, TeacherConfig, TeacherError};
pub use store::{corpus_load, corpus_save};

use crate::data::{
    evaluate_downstream, split, DataError, Dataset, DownstreamModelKind, TaskKind,
};
use crate::expr::{
    apply_sequence, random_valid_segment, to_text, ApplyError, Complexity, EvalPolicy, Segment,
    SegmentStatus, Token, TransformationSequence, Vocabulary,
};
use crate::rng::{rng_from_seed, sub_seed, sub_seed_indexed};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("prompt spec does not match vocabulary: {0}")]
    PromptMismatch(String),
    #[error("sequence already in corpus: {0}")]
    Duplicate(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sequence has no segments")]
    EmptySequence,
    #[error("example dataset `{got}` does not match corpus dataset `{want}`")]
    DatasetMismatch { got: String, want: String },
    #[error("vocabulary fingerprint mismatch: found `{found}`, expected `{expected}`")]
    FingerprintMismatch { expected: String, found: String },
    #[error("corpus line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Where a golden example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    TeacherApi,
    Scripted,
    Search,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Source::TeacherApi => "teacher_api",
            Source::Scripted => "scripted",
            Source::Search => "search",
        };
        f.write_str(s)
    }
}

/// One scored transformation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenExample {
    pub sequence: TransformationSequence,
    pub score: f64,
    pub dataset_id: String,
    pub source: Source,
    pub model: DownstreamModelKind,
    pub seed: u64,
}

/// Scored examples for one dataset under one vocabulary. Deduplicated by
/// canonical text; the fingerprint pins the vocabulary the token ids refer
/// to, so corpora and checkpoints cannot be mixed across vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCorpus {
    fingerprint: String,
    dataset_id: Option<String>,
    examples: Vec<GoldenExample>,
}

impl GoldenCorpus {
    pub fn new(vocab: &Vocabulary) -> GoldenCorpus {
        GoldenCorpus {
            fingerprint: vocab.fingerprint(),
            dataset_id: None,
            examples: Vec::new(),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dataset_id(&self) -> Option<&str> {
        self.dataset_id.as_deref()
    }

    pub fn examples(&self) -> &[GoldenExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.examples
            .iter()
            .any(|e| e.sequence.canonical_text() == text)
    }

    /// Best score currently in the corpus.
    pub fn best_score(&self) -> Option<f64> {
        self.examples
            .iter()
            .map(|e| e.score)
            .max_by(|a, b| a.partial_cmp(b).expect("scores are finite"))
    }

    pub(crate) fn push_checked(&mut self, example: GoldenExample) -> Result<(), GoldenError> {
        let text = example.sequence.canonical_text();
        if self.contains_text(&text) {
            return Err(GoldenError::Duplicate(text));
        }
        match &self.dataset_id {
            None => self.dataset_id = Some(example.dataset_id.clone()),
            Some(id) if *id != example.dataset_id => {
                return Err(GoldenError::DatasetMismatch {
                    got: example.dataset_id.clone(),
                    want: id.clone(),
                });
            }
            Some(_) => {}
        }
        self.examples.push(example);
        Ok(())
    }
}

/// Prompt content; the token lists must mirror the vocabulary exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_description: String,
    pub feature_tokens: Vec<String>,
    pub unary_tokens: Vec<String>,
    pub binary_tokens: Vec<String>,
    pub force_rules: Vec<String>,
    pub few_shot_example: String,
}

impl PromptSpec {
    /// Standard spec for a dataset/vocabulary pair.
    pub fn standard(dataset: &Dataset, vocab: &Vocabulary) -> PromptSpec {
        let feature_tokens: Vec<String> =
            (0..vocab.n_features()).map(|i| format!("f{i}")).collect();
        let unary_tokens: Vec<String> = vocab
            .operators()
            .iter()
            .filter(|op| matches!(op.arity(), crate::expr::Arity::Unary))
            .map(|op| op.name().to_string())
            .collect();
        let binary_tokens: Vec<String> = vocab
            .operators()
            .iter()
            .filter(|op| matches!(op.arity(), crate::expr::Arity::Binary))
            .map(|op| op.name().to_string())
            .collect();
        let task = match dataset.task {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        };
        let task_description = format!(
            "You are a feature engineering expert. The dataset '{}' has {} rows, \
             {} numeric features (referred to by tokens), and a {} target. \
             Combine the feature tokens with the operator tokens below to build \
             new features that improve a downstream model.",
            dataset.id,
            dataset.n_rows(),
            dataset.n_features(),
            task
        );
        let force_rules = vec![
            "Generate multiple feature combinations, fewer than 50 in total.".to_string(),
            "Separate consecutive combinations with the literal word 'token_sep'.".to_string(),
            "Each combination must use at least one feature token and at least one operator token."
                .to_string(),
            "A binary operator consumes exactly two operands; a unary operator consumes exactly one."
                .to_string(),
            "Write each combination in postfix notation: operands first, then their operator."
                .to_string(),
            "Respond with the feature combinations only, no explanations.".to_string(),
        ];
        let few_shot_example = default_few_shot(vocab);
        PromptSpec {
            task_description,
            feature_tokens,
            unary_tokens,
            binary_tokens,
            force_rules,
            few_shot_example,
        }
    }
}

fn default_few_shot(vocab: &Vocabulary) -> String {
    let f = vocab.n_features();
    let unary = vocab
        .operators()
        .iter()
        .find(|op| matches!(op.arity(), crate::expr::Arity::Unary));
    let binary = vocab
        .operators()
        .iter()
        .find(|op| matches!(op.arity(), crate::expr::Arity::Binary));
    let mut parts = Vec::new();
    if let Some(b) = binary {
        parts.push(format!("f0 f{} {}", 1.min(f - 1), b.name()));
    }
    if let Some(u) = unary {
        parts.push(format!("f{} {}", 2.min(f - 1), u.name()));
    }
    parts.join(" token_sep ")
}

/// Render the five prompt sections in their fixed order. Fails if the
/// spec's token lists disagree with the vocabulary.
pub fn build_prompt(
    dataset: &Dataset,
    vocab: &Vocabulary,
    spec: &PromptSpec,
) -> Result<String, GoldenError> {
    let expect_features: Vec<String> =
        (0..vocab.n_features()).map(|i| format!("f{i}")).collect();
    if spec.feature_tokens != expect_features {
        return Err(GoldenError::PromptMismatch(format!(
            "feature tokens {:?} != vocabulary features {:?}",
            spec.feature_tokens, expect_features
        )));
    }
    let mut expect_unary = Vec::new();
    let mut expect_binary = Vec::new();
    for op in vocab.operators() {
        match op.arity() {
            crate::expr::Arity::Unary => expect_unary.push(op.name().to_string()),
            crate::expr::Arity::Binary => expect_binary.push(op.name().to_string()),
        }
    }
    if spec.unary_tokens != expect_unary || spec.binary_tokens != expect_binary {
        return Err(GoldenError::PromptMismatch(
            "operator token lists do not match the vocabulary".to_string(),
        ));
    }
    if dataset.n_features() != vocab.n_features() {
        return Err(GoldenError::PromptMismatch(format!(
            "dataset has {} features, vocabulary {}",
            dataset.n_features(),
            vocab.n_features()
        )));
    }

    let mut out = String::new();
    out.push_str("## Task Description\n");
    out.push_str(&spec.task_description);
    out.push_str("\n\n## Feature Description\n");
    out.push_str(&format!(
        "Available feature tokens: {}\n",
        spec.feature_tokens.join(", ")
    ));
    out.push_str("\n## Operator Description\n");
    out.push_str(&format!(
        "Unary operator tokens (one operand): {}\n",
        if spec.unary_tokens.is_empty() {
            "(none)".to_string()
        } else {
            spec.unary_tokens.join(", ")
        }
    ));
    out.push_str(&format!(
        "Binary operator tokens (two operands): {}\n",
        if spec.binary_tokens.is_empty() {
            "(none)".to_string()
        } else {
            spec.binary_tokens.join(", ")
        }
    ));
    out.push_str("\n## Force Prompt\n");
    for rule in &spec.force_rules {
        out.push_str(&format!("- {rule}\n"));
    }
    out.push_str("\n## Few-shot Prompt\n");
    out.push_str(&format!(
        "Example response:\n{}\n",
        spec.few_shot_example
    ));
    Ok(out)
}

const SCRIPTED_MAX_SEG_LEN: usize = 7;

/// Offline teacher substitute: deterministic random valid sequences.
/// `bias` segments, when given, are planted at the front of roughly half
/// the sequences so tests can hide a known-good formula in the corpus.
pub fn scripted_teacher(
    dataset: &Dataset,
    vocab: &Vocabulary,
    n_sequences: usize,
    segments_per_sequence: usize,
    rng_seed: u64,
    bias: Option<&[Segment]>,
) -> Vec<TransformationSequence> {
    assert!(n_sequences >= 1 && segments_per_sequence >= 1);
    let base = sub_seed(rng_seed, &format!("scripted_teacher:{}", dataset.id));
    (0..n_sequences)
        .map(|i| {
            let mut rng = rng_from_seed(sub_seed_indexed(base, "sequence", i as u64));
            let mut segments: Vec<Segment> = Vec::new();
            if let Some(planted) = bias {
                if rng.random_bool(0.5) {
                    segments.extend(planted.iter().cloned());
                }
            }
            let n_random = rng.random_range(1..=segments_per_sequence);
            for _ in 0..n_random {
                segments.push(random_valid_segment(vocab, SCRIPTED_MAX_SEG_LEN, &mut rng));
            }
            TransformationSequence::new(segments)
        })
        .collect()
}

/// How candidate sequences get scored: which downstream model, and how the
/// data is split. The split is stratified automatically for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub model: DownstreamModelKind,
    pub test_fraction: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            model: DownstreamModelKind::default(),
            test_fraction: 0.2,
        }
    }
}

/// Apply a sequence to the dataset (augment mode), split, fit, score.
/// This is the single scoring path used everywhere: corpus building, search
/// candidate evaluation, and final reports.
pub fn score_sequence(
    dataset: &Dataset,
    sequence: &TransformationSequence,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<f64, GoldenError> {
    let outcome = apply_sequence(sequence, &dataset.columns, &EvalPolicy::default())?;
    if outcome.n_generated() == 0 {
        return Err(GoldenError::Apply(ApplyError::AllSegmentsFailed));
    }
    let mut names = dataset.feature_names.clone();
    for (segment, status) in sequence.segments().iter().zip(&outcome.statuses) {
        if matches!(status, SegmentStatus::Ok) {
            names.push(to_text(&TransformationSequence::new(vec![segment.clone()])));
        }
    }
    let augmented = dataset.with_columns(outcome.columns, names)?;
    let stratify = augmented.task == TaskKind::Classification;
    let (train, test) = split(&augmented, protocol.test_fraction, seed, stratify)?;
    let result = evaluate_downstream(&train, &test, protocol.model, seed)?;
    Ok(result.score)
}

/// Score of the untransformed dataset under the same protocol; the floor
/// any useful transformation has to beat.
pub fn baseline_score(
    dataset: &Dataset,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<f64, GoldenError> {
    let stratify = dataset.task == TaskKind::Classification;
    let (train, test) = split(dataset, protocol.test_fraction, seed, stratify)?;
    let result = evaluate_downstream(&train, &test, protocol.model, seed)?;
    Ok(result.score)
}

/// Score a sequence and insert it into the corpus. Rejects duplicates (by
/// canonical text) before spending any compute on evaluation.
pub fn score_and_add(
    corpus: &mut GoldenCorpus,
    sequence: &TransformationSequence,
    dataset: &Dataset,
    protocol: &EvalProtocol,
    seed: u64,
    source: Source,
) -> Result<GoldenExample, GoldenError> {
    if sequence.is_empty() {
        return Err(GoldenError::EmptySequence);
    }
    let text = sequence.canonical_text();
    if corpus.contains_text(&text) {
        return Err(GoldenError::Duplicate(text));
    }
    let score = score_sequence(dataset, sequence, protocol, seed)?;
    let example = GoldenExample {
        sequence: sequence.clone(),
        score,
        dataset_id: dataset.id.clone(),
        source,
        model: protocol.model,
        seed,
    };
    corpus.push_checked(example.clone())?;
    Ok(example)
}

/// Operator/feature usage and score summary over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_examples: usize,
    pub simple_ops: usize,
    pub complex_ops: usize,
    /// Occurrence count per feature index (length = max index used + 1).
    pub feature_usage: Vec<usize>,
    pub score_min: f64,
    pub score_mean: f64,
    pub score_max: f64,
}

impl CorpusStats {
    /// Fraction of operator occurrences in the simple arithmetic bucket.
    pub fn simple_ratio(&self) -> f64 {
        let total = self.simple_ops + self.complex_ops;
        if total == 0 {
            0.0
        } else {
            self.simple_ops as f64 / total as f64
        }
    }
}

pub fn corpus_stats(corpus: &GoldenCorpus) -> Result<CorpusStats, GoldenError> {
    if corpus.is_empty() {
        return Err(GoldenError::EmptyCorpus);
    }
    let mut simple_ops = 0usize;
    let mut complex_ops = 0usize;
    let mut feature_usage: Vec<usize> = Vec::new();
    let mut score_min = f64::INFINITY;
    let mut score_max = f64::NEG_INFINITY;
    let mut score_sum = 0.0;
    for example in corpus.examples() {
        score_min = score_min.min(example.score);
        score_max = score_max.max(example.score);
        score_sum += example.score;
        for segment in example.sequence.segments() {
            for token in segment.tokens() {
                match token {
                    Token::Op(op) => match op.complexity() {
                        Complexity::Simple => simple_ops += 1,
                        Complexity::Complex => complex_ops += 1,
                    },
                    Token::Feature(i) => {
                        if *i >= feature_usage.len() {
                            feature_usage.resize(i + 1, 0);
                        }
                        feature_usage[*i] += 1;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(CorpusStats {
        n_examples: corpus.len(),
        simple_ops,
        complex_ops,
        feature_usage,
        score_min,
        score_mean: score_sum / corpus.len() as f64,
        score_max,
    })
}
