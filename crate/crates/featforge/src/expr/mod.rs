//! The transformation-sequence algebra: tokens, vocabulary, postfix
//! validation, safe evaluation over tabular data, and text round-tripping.
//!
//! A *segment* is one postfix expression producing one new feature column.
//! A *transformation sequence* is an ordered list of segments; its wire form
//! is `<SOS> seg1 <SEP> seg2 ... <EOS>`, which is what the sequence models
//! consume and emit.

mod eval;
mod random;
mod text;

pub use eval::{
    apply_sequence, evaluate_segment, AppendMode, ApplyError, ApplyOutcome, DomainError,
    DomainErrorKind, EvalPolicy, NanPolicy, SegmentStatus,
};
pub use random::{random_valid_segment, random_valid_segment_seeded, random_valid_sequence};
pub use text::{
    parse_text, parse_text_capped, parse_token_stream, to_text, token_word, ParseDiagnostic,
    ParseIssue, ParseOutcome, StreamParse, DEFAULT_MAX_SEGMENTS, SEP_WORD,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Number of operands an operator consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Unary,
    Binary,
}

/// Operator bucket used by the usage statistics: the four arithmetic
/// operators count as simple, everything else as complex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Complexity {
    Simple,
    Complex,
}

/// The canonical operator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Square,
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Tanh,
    Reciprocal,
    Add,
    Subtract,
    Multiply,
    Divide,
}

impl Operator {
    /// Canonical ordering: the eight unary operators, then the four binary.
    pub const CANONICAL: [Operator; 12] = [
        Operator::Square,
        Operator::Sqrt,
        Operator::Log,
        Operator::Exp,
        Operator::Sin,
        Operator::Cos,
        Operator::Tanh,
        Operator::Reciprocal,
        Operator::Add,
        Operator::Subtract,
        Operator::Multiply,
        Operator::Divide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Square => "square",
            Operator::Sqrt => "sqrt",
            Operator::Log => "log",
            Operator::Exp => "exp",
            Operator::Sin => "sin",
            Operator::Cos => "cos",
            Operator::Tanh => "tanh",
            Operator::Reciprocal => "reciprocal",
            Operator::Add => "add",
            Operator::Subtract => "subtract",
            Operator::Multiply => "multiply",
            Operator::Divide => "divide",
        }
    }

    pub fn from_name(name: &str) -> Option<Operator> {
        Operator::CANONICAL.iter().copied().find(|op| op.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            Operator::Add | Operator::Subtract | Operator::Multiply | Operator::Divide => {
                Arity::Binary
            }
            _ => Arity::Unary,
        }
    }

    pub fn complexity(self) -> Complexity {
        match self {
            Operator::Add | Operator::Subtract | Operator::Multiply | Operator::Divide => {
                Complexity::Simple
            }
            _ => Complexity::Complex,
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One symbol of the discrete alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    /// 0-based reference to an original feature column.
    Feature(usize),
    Op(Operator),
    Sos,
    Sep,
    Eos,
}

impl Token {
    pub fn is_special(self) -> bool {
        matches!(self, Token::Sos | Token::Sep | Token::Eos)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary needs at least one feature")]
    ZeroFeatures,
    #[error("vocabulary needs at least one operator")]
    EmptyOperators,
    #[error("duplicate operator `{0}`")]
    DuplicateOperator(&'static str),
}

/// The discrete alphabet with a contiguous id bijection: feature tokens
/// ascending, then operators in the order given, then SOS, SEP, EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    n_features: usize,
    operators: Vec<Operator>,
}

impl Vocabulary {
    pub fn new(n_features: usize, operators: Vec<Operator>) -> Result<Self, VocabError> {
        if n_features == 0 {
            return Err(VocabError::ZeroFeatures);
        }
        if operators.is_empty() {
            return Err(VocabError::EmptyOperators);
        }
        for (i, op) in operators.iter().enumerate() {
            if operators[..i].contains(op) {
                return Err(VocabError::DuplicateOperator(op.name()));
            }
        }
        Ok(Vocabulary {
            n_features,
            operators,
        })
    }

    pub fn canonical(n_features: usize) -> Result<Self, VocabError> {
        Vocabulary::new(n_features, Operator::CANONICAL.to_vec())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }

    /// Total token count: features + operators + the three specials.
    pub fn size(&self) -> usize {
        self.n_features + self.operators.len() + 3
    }

    pub fn sos_id(&self) -> usize {
        self.n_features + self.operators.len()
    }

    pub fn sep_id(&self) -> usize {
        self.sos_id() + 1
    }

    pub fn eos_id(&self) -> usize {
        self.sos_id() + 2
    }

    pub fn id_of(&self, token: Token) -> Option<usize> {
        match token {
            Token::Feature(i) if i < self.n_features => Some(i),
            Token::Feature(_) => None,
            Token::Op(op) => self
                .operators
                .iter()
                .position(|o| *o == op)
                .map(|p| self.n_features + p),
            Token::Sos => Some(self.sos_id()),
            Token::Sep => Some(self.sep_id()),
            Token::Eos => Some(self.eos_id()),
        }
    }

    pub fn token_of(&self, id: usize) -> Option<Token> {
        if id < self.n_features {
            Some(Token::Feature(id))
        } else if id < self.n_features + self.operators.len() {
            Some(Token::Op(self.operators[id - self.n_features]))
        } else if id == self.sos_id() {
            Some(Token::Sos)
        } else if id == self.sep_id() {
            Some(Token::Sep)
        } else if id == self.eos_id() {
            Some(Token::Eos)
        } else {
            None
        }
    }

    pub fn has_unary(&self) -> bool {
        self.operators.iter().any(|op| op.arity() == Arity::Unary)
    }

    pub fn has_binary(&self) -> bool {
        self.operators.iter().any(|op| op.arity() == Arity::Binary)
    }

    /// Identity string persisted in corpora and checkpoints; artifacts built
    /// against different vocabularies refuse to interoperate.
    pub fn fingerprint(&self) -> String {
        let ops: Vec<&str> = self.operators.iter().map(|op| op.name()).collect();
        format!("v1:nf={};ops={}", self.n_features, ops.join(","))
    }
}

/// Why a token list fails postfix validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidKind {
    /// An operator found fewer operands on the stack than its arity.
    Underflow,
    /// The scan ended with more than one value on the stack.
    LeftoverOperands,
    NoOperator,
    NoFeature,
    Empty,
    /// SOS/SEP/EOS may not appear inside a segment.
    SpecialToken,
}

impl fmt::Display for InvalidKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InvalidKind::Underflow => "underflow",
            InvalidKind::LeftoverOperands => "leftover_operands",
            InvalidKind::NoOperator => "no_operator",
            InvalidKind::NoFeature => "no_feature",
            InvalidKind::Empty => "empty",
            InvalidKind::SpecialToken => "special_token",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid segment: {kind} at position {position}")]
pub struct ValidationError {
    pub kind: InvalidKind,
    /// Index of the first violating token; for end-of-scan violations
    /// (leftovers, missing feature/operator) this is the token count.
    pub position: usize,
}

/// Left-to-right postfix stack check. A feature pushes one value, a unary
/// operator pops one and pushes one, a binary pops two and pushes one; the
/// scan must never underflow and must end with exactly one value. A valid
/// segment also needs at least one feature and at least one operator.
pub fn validate_segment(tokens: &[Token]) -> Result<(), ValidationError> {
    if tokens.is_empty() {
        return Err(ValidationError {
            kind: InvalidKind::Empty,
            position: 0,
        });
    }
    let mut depth: usize = 0;
    let mut saw_feature = false;
    let mut saw_op = false;
    for (pos, token) in tokens.iter().enumerate() {
        match token {
            Token::Feature(_) => {
                depth += 1;
                saw_feature = true;
            }
            Token::Op(op) => {
                let need = match op.arity() {
                    Arity::Unary => 1,
                    Arity::Binary => 2,
                };
                if depth < need {
                    return Err(ValidationError {
                        kind: InvalidKind::Underflow,
                        position: pos,
                    });
                }
                depth = depth - need + 1;
                saw_op = true;
            }
            Token::Sos | Token::Sep | Token::Eos => {
                return Err(ValidationError {
                    kind: InvalidKind::SpecialToken,
                    position: pos,
                });
            }
        }
    }
    if !saw_op {
        return Err(ValidationError {
            kind: InvalidKind::NoOperator,
            position: tokens.len(),
        });
    }
    if !saw_feature {
        return Err(ValidationError {
            kind: InvalidKind::NoFeature,
            position: tokens.len(),
        });
    }
    if depth != 1 {
        return Err(ValidationError {
            kind: InvalidKind::LeftoverOperands,
            position: tokens.len(),
        });
    }
    Ok(())
}

/// One postfix expression. Constructing a `Segment` proves it validates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segment {
    tokens: Vec<Token>,
}

impl Segment {
    pub fn new(tokens: Vec<Token>) -> Result<Self, ValidationError> {
        validate_segment(&tokens)?;
        Ok(Segment { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Largest feature index referenced, for column-count checks.
    pub fn max_feature_index(&self) -> usize {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Feature(i) => Some(*i),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// An ordered list of segments, each producing one new feature column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TransformationSequence {
    segments: Vec<Segment>,
}

impl TransformationSequence {
    pub fn new(segments: Vec<Segment>) -> Self {
        TransformationSequence { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn push(&mut self, segment: Segment) {
        self.segments.push(segment);
    }

    pub fn canonical_text(&self) -> String {
        to_text(self)
    }

    /// Wire-form token ids: `<SOS> seg1 <SEP> seg2 ... <EOS>`.
    pub fn wire_ids(&self, vocab: &Vocabulary) -> Option<Vec<usize>> {
        let mut ids = vec![vocab.sos_id()];
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                ids.push(vocab.sep_id());
            }
            for token in seg.tokens() {
                ids.push(vocab.id_of(*token)?);
            }
        }
        ids.push(vocab.eos_id());
        Some(ids)
    }
}

/// Fully parenthesized infix rendering: binary as `(a op b)`, unary as `op(a)`.
pub fn to_infix(segment: &Segment) -> Result<String, ValidationError> {
    validate_segment(segment.tokens())?;
    let mut stack: Vec<String> = Vec::new();
    for token in segment.tokens() {
        match token {
            Token::Feature(i) => stack.push(format!("f{i}")),
            Token::Op(op) => match op.arity() {
                Arity::Unary => {
                    let a = stack.pop().expect("validated");
                    stack.push(format!("{}({})", op.name(), a));
                }
                Arity::Binary => {
                    let b = stack.pop().expect("validated");
                    let a = stack.pop().expect("validated");
                    stack.push(format!("({} {} {})", a, op.name(), b));
                }
            },
            _ => unreachable!("validated segments contain no specials"),
        }
    }
    Ok(stack.pop().expect("validated"))
}

/// Stack bookkeeping for one in-progress segment, shared by the random
/// generator and the syntactic decode mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentState {
    pub depth: usize,
    pub has_op: bool,
    pub has_feature: bool,
}

impl SegmentState {
    pub fn fresh() -> Self {
        SegmentState {
            depth: 0,
            has_op: false,
            has_feature: false,
        }
    }

    /// Advance by one non-special token; `None` if the token is illegal here.
    pub fn advance(self, token: Token) -> Option<Self> {
        match token {
            Token::Feature(_) => Some(SegmentState {
                depth: self.depth + 1,
                has_op: self.has_op,
                has_feature: true,
            }),
            Token::Op(op) => {
                let need = match op.arity() {
                    Arity::Unary => 1,
                    Arity::Binary => 2,
                };
                if self.depth < need {
                    return None;
                }
                Some(SegmentState {
                    depth: self.depth - need + 1,
                    has_op: true,
                    has_feature: self.has_feature,
                })
            }
            _ => None,
        }
    }

    /// A complete segment has exactly one value on the stack and used at
    /// least one operator (which implies at least one feature).
    pub fn is_complete(self) -> bool {
        self.depth == 1 && self.has_op && self.has_feature
    }

    /// Fewest further tokens needed to complete this segment, or `None` if
    /// the vocabulary cannot complete it (e.g. depth >= 2 with no binary
    /// operator available).
    pub fn min_tokens_to_complete(self, vocab: &Vocabulary) -> Option<usize> {
        if self.depth >= 2 {
            // Only binary operators reduce depth; they also satisfy has_op.
            return vocab.has_binary().then_some(self.depth - 1);
        }
        if self.depth == 1 {
            if self.has_op {
                return Some(0);
            }
            if vocab.has_unary() {
                return Some(1);
            }
            return vocab.has_binary().then_some(2);
        }
        // Empty segment: cheapest completions are `f unary` or `f f binary`.
        if vocab.has_unary() {
            Some(2)
        } else {
            vocab.has_binary().then_some(3)
        }
    }
}
