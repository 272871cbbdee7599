//! Vectorized segment evaluation with strict domain checking.
//!
//! Every operator applies elementwise over whole columns. Domain violations
//! (divide by zero, log of a nonpositive value, ...) are checked against the
//! entire column: one bad row poisons the segment. That keeps generated
//! features free of NaN/inf without silently imputing values.

use super::{Arity, Operator, Segment, Token, TransformationSequence};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainErrorKind {
    DivisionByZero,
    LogNonpositive,
    SqrtNegative,
    /// Result was not finite (overflow or an undefined form).
    Overflow,
}

impl std::fmt::Display for DomainErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DomainErrorKind::DivisionByZero => "division_by_zero",
            DomainErrorKind::LogNonpositive => "log_nonpositive",
            DomainErrorKind::SqrtNegative => "sqrt_negative",
            DomainErrorKind::Overflow => "overflow",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("domain error ({kind}) evaluating segment {segment_index}")]
pub struct DomainError {
    pub kind: DomainErrorKind,
    /// Which segment of the sequence failed; 0 for a lone segment.
    pub segment_index: usize,
}

fn unary_column(op: Operator, a: &[f64]) -> Result<Vec<f64>, DomainErrorKind> {
    match op {
        Operator::Sqrt => {
            if a.iter().any(|&x| x < 0.0) {
                return Err(DomainErrorKind::SqrtNegative);
            }
        }
        Operator::Log => {
            if a.iter().any(|&x| x <= 0.0) {
                return Err(DomainErrorKind::LogNonpositive);
            }
        }
        Operator::Reciprocal if a.contains(&0.0) => {
            return Err(DomainErrorKind::DivisionByZero);
        }
        _ => {}
    }
    let out: Vec<f64> = match op {
        Operator::Square => a.iter().map(|&x| x * x).collect(),
        Operator::Sqrt => a.iter().map(|&x| x.sqrt()).collect(),
        Operator::Log => a.iter().map(|&x| x.ln()).collect(),
        Operator::Exp => a.iter().map(|&x| x.exp()).collect(),
        Operator::Sin => a.iter().map(|&x| x.sin()).collect(),
        Operator::Cos => a.iter().map(|&x| x.cos()).collect(),
        Operator::Tanh => a.iter().map(|&x| x.tanh()).collect(),
        Operator::Reciprocal => a.iter().map(|&x| 1.0 / x).collect(),
        _ => unreachable!("binary operator in unary path"),
    };
    if out.iter().any(|x| !x.is_finite()) {
        return Err(DomainErrorKind::Overflow);
    }
    Ok(out)
}

fn binary_column(op: Operator, a: &[f64], b: &[f64]) -> Result<Vec<f64>, DomainErrorKind> {
    if op == Operator::Divide && b.contains(&0.0) {
        return Err(DomainErrorKind::DivisionByZero);
    }
    let out: Vec<f64> = match op {
        Operator::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
        Operator::Subtract => a.iter().zip(b).map(|(&x, &y)| x - y).collect(),
        Operator::Multiply => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
        Operator::Divide => a.iter().zip(b).map(|(&x, &y)| x / y).collect(),
        _ => unreachable!("unary operator in binary path"),
    };
    if out.iter().any(|x| !x.is_finite()) {
        return Err(DomainErrorKind::Overflow);
    }
    Ok(out)
}

/// Evaluate one segment against the original feature columns, producing a
/// new column of the same length. Feature tokens index into `columns`.
pub fn evaluate_segment(segment: &Segment, columns: &[Vec<f64>]) -> Result<Vec<f64>, DomainError> {
    evaluate_indexed(segment, columns, 0)
}

fn evaluate_indexed(
    segment: &Segment,
    columns: &[Vec<f64>],
    segment_index: usize,
) -> Result<Vec<f64>, DomainError> {
    let fail = |kind| DomainError {
        kind,
        segment_index,
    };
    let mut stack: Vec<Vec<f64>> = Vec::new();
    for token in segment.tokens() {
        match token {
            Token::Feature(i) => stack.push(columns[*i].clone()),
            Token::Op(op) => match op.arity() {
                Arity::Unary => {
                    let a = stack.pop().expect("segment construction validates");
                    stack.push(unary_column(*op, &a).map_err(fail)?);
                }
                Arity::Binary => {
                    let b = stack.pop().expect("segment construction validates");
                    let a = stack.pop().expect("segment construction validates");
                    stack.push(binary_column(*op, &a, &b).map_err(fail)?);
                }
            },
            _ => unreachable!("validated segments contain no specials"),
        }
    }
    Ok(stack.pop().expect("segment construction validates"))
}

/// What to do with a column whose evaluation hit a domain error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NanPolicy {
    /// Drop the segment and record the failure.
    Error,
    /// Keep the segment, writing this finite value into every cell of any
    /// column that failed.
    ReplaceWith(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendMode {
    /// New columns are appended after the originals.
    AugmentOriginal,
    /// Output contains only the generated columns.
    ReplaceOriginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPolicy {
    pub nan_policy: NanPolicy,
    pub append_mode: AppendMode,
    /// Skip a segment whose canonical text duplicates an earlier one.
    pub dedup_segments: bool,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        EvalPolicy {
            nan_policy: NanPolicy::Error,
            append_mode: AppendMode::AugmentOriginal,
            dedup_segments: true,
        }
    }
}

/// Per-segment outcome of `apply_sequence`, index-aligned with the input.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentStatus {
    Ok,
    /// Skipped as a duplicate of an earlier segment.
    Duplicate,
    Failed(DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    /// Output feature matrix, column-major, per `append_mode`.
    pub columns: Vec<Vec<f64>>,
    pub statuses: Vec<SegmentStatus>,
}

impl ApplyOutcome {
    pub fn n_generated(&self) -> usize {
        self.statuses
            .iter()
            .filter(|s| matches!(s, SegmentStatus::Ok))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApplyError {
    #[error("transformation sequence is empty")]
    EmptySequence,
    #[error("every segment failed and replace mode left no columns")]
    AllSegmentsFailed,
    #[error("replacement value must be finite, got {0}")]
    NonFiniteReplacement(f64),
    #[error("segment {segment} references feature f{feature} but only {available} columns exist")]
    FeatureOutOfRange {
        segment: usize,
        feature: usize,
        available: usize,
    },
}

/// Apply every segment of a sequence to the original columns. Segments are
/// always evaluated against the originals, never against each other's
/// outputs, so their order only affects column order.
pub fn apply_sequence(
    sequence: &TransformationSequence,
    columns: &[Vec<f64>],
    policy: &EvalPolicy,
) -> Result<ApplyOutcome, ApplyError> {
    if sequence.is_empty() {
        return Err(ApplyError::EmptySequence);
    }
    if let NanPolicy::ReplaceWith(v) = policy.nan_policy {
        if !v.is_finite() {
            return Err(ApplyError::NonFiniteReplacement(v));
        }
    }
    let n_rows = columns.first().map_or(0, |c| c.len());
    for (i, seg) in sequence.segments().iter().enumerate() {
        let max = seg.max_feature_index();
        if max >= columns.len() {
            return Err(ApplyError::FeatureOutOfRange {
                segment: i,
                feature: max,
                available: columns.len(),
            });
        }
    }

    let mut seen: Vec<String> = Vec::new();
    let mut generated: Vec<Vec<f64>> = Vec::new();
    let mut statuses: Vec<SegmentStatus> = Vec::new();
    for (i, seg) in sequence.segments().iter().enumerate() {
        if policy.dedup_segments {
            let text = super::text::segment_text(seg);
            if seen.contains(&text) {
                statuses.push(SegmentStatus::Duplicate);
                continue;
            }
            seen.push(text);
        }
        match evaluate_indexed(seg, columns, i) {
            Ok(col) => {
                generated.push(col);
                statuses.push(SegmentStatus::Ok);
            }
            Err(err) => match policy.nan_policy {
                NanPolicy::Error => statuses.push(SegmentStatus::Failed(err)),
                NanPolicy::ReplaceWith(v) => {
                    generated.push(vec![v; n_rows]);
                    statuses.push(SegmentStatus::Ok);
                }
            },
        }
    }

    let columns_out = match policy.append_mode {
        AppendMode::AugmentOriginal => {
            let mut out = columns.to_vec();
            out.extend(generated);
            out
        }
        AppendMode::ReplaceOriginal => {
            if generated.is_empty() {
                return Err(ApplyError::AllSegmentsFailed);
            }
            generated
        }
    };
    Ok(ApplyOutcome {
        columns: columns_out,
        statuses,
    })
}
