//! Canonical text form and parsing.
//!
//! Canonical text is space-separated token words with segments joined by a
//! literal `token_sep` word: `"f0 f1 add token_sep f2 log"`. Features render
//! as `f<i>` (0-based), operators by name. This is also the exact format the
//! teacher model is asked to reply in, so the parser is deliberately
//! forgiving: it salvages the valid segments and reports the rest.

use super::{validate_segment, Segment, Token, TransformationSequence, ValidationError, Vocabulary};

/// Separator word between segments in canonical text.
pub const SEP_WORD: &str = "token_sep";

/// Cap on segments kept per sequence when parsing free-form text.
pub const DEFAULT_MAX_SEGMENTS: usize = 50;

/// Word form of a token. Specials render as bracketed words; they never
/// appear in canonical text but do show up in decode traces.
pub fn token_word(token: Token) -> String {
    match token {
        Token::Feature(i) => format!("f{i}"),
        Token::Op(op) => op.name().to_string(),
        Token::Sos => "<sos>".to_string(),
        Token::Sep => "<sep>".to_string(),
        Token::Eos => "<eos>".to_string(),
    }
}

pub(crate) fn segment_text(segment: &Segment) -> String {
    segment
        .tokens()
        .iter()
        .map(|t| token_word(*t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical text of a sequence. Inverse of `parse_text` on clean input.
pub fn to_text(sequence: &TransformationSequence) -> String {
    sequence
        .segments()
        .iter()
        .map(segment_text)
        .collect::<Vec<_>>()
        .join(&format!(" {SEP_WORD} "))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseIssue {
    /// A word that is not `f<i>` (with i in range), an operator name, or the
    /// separator. Carries the offending word.
    UnknownWord(String),
    Invalid(ValidationError),
    /// Segment beyond the `max_segments` cap, dropped.
    OverLimit,
}

/// One skipped segment, by its index in the raw segmentation of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseDiagnostic {
    pub segment_index: usize,
    pub issue: ParseIssue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub sequence: TransformationSequence,
    pub diagnostics: Vec<ParseDiagnostic>,
}

impl ParseOutcome {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

fn parse_word(word: &str, vocab: &Vocabulary) -> Option<Token> {
    if let Some(rest) = word.strip_prefix('f') {
        // Reject "f01"-style words so every feature has one spelling.
        if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
            if rest.len() > 1 && rest.starts_with('0') {
                return None;
            }
            let i: usize = rest.parse().ok()?;
            return (i < vocab.n_features()).then_some(Token::Feature(i));
        }
    }
    vocab
        .operators()
        .iter()
        .copied()
        .find(|op| op.name() == word)
        .map(Token::Op)
}

/// Parse free-form text into the valid segments it contains. Never fails:
/// unparseable or invalid segments are skipped and reported, and an input
/// with nothing salvageable yields an empty sequence. Whitespace runs are
/// collapsed; words are case-sensitive.
pub fn parse_text(input: &str, vocab: &Vocabulary) -> ParseOutcome {
    parse_text_capped(input, vocab, DEFAULT_MAX_SEGMENTS)
}

pub fn parse_text_capped(input: &str, vocab: &Vocabulary, max_segments: usize) -> ParseOutcome {
    let mut raw_segments: Vec<Vec<&str>> = vec![Vec::new()];
    for word in input.split_whitespace() {
        if word == SEP_WORD {
            raw_segments.push(Vec::new());
        } else {
            raw_segments.last_mut().expect("never empty").push(word);
        }
    }
    // A fully blank input is an empty sequence, not one empty segment.
    if raw_segments.len() == 1 && raw_segments[0].is_empty() {
        raw_segments.clear();
    }

    let mut sequence = TransformationSequence::default();
    let mut diagnostics = Vec::new();
    for (index, words) in raw_segments.iter().enumerate() {
        if sequence.len() == max_segments {
            diagnostics.push(ParseDiagnostic {
                segment_index: index,
                issue: ParseIssue::OverLimit,
            });
            continue;
        }
        let mut tokens = Vec::with_capacity(words.len());
        let mut unknown = None;
        for word in words {
            match parse_word(word, vocab) {
                Some(token) => tokens.push(token),
                None => {
                    unknown = Some((*word).to_string());
                    break;
                }
            }
        }
        if let Some(word) = unknown {
            diagnostics.push(ParseDiagnostic {
                segment_index: index,
                issue: ParseIssue::UnknownWord(word),
            });
            continue;
        }
        match Segment::new(tokens) {
            Ok(segment) => sequence.push(segment),
            Err(err) => diagnostics.push(ParseDiagnostic {
                segment_index: index,
                issue: ParseIssue::Invalid(err),
            }),
        }
    }
    ParseOutcome {
        sequence,
        diagnostics,
    }
}

/// A decoded wire stream split into segments and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParse {
    pub sequence: TransformationSequence,
    /// Segments the stream attempted, valid or not.
    pub total_segments: usize,
    pub invalid_segments: usize,
}

impl StreamParse {
    pub fn is_fully_valid(&self) -> bool {
        self.invalid_segments == 0
    }
}

/// Split a raw decoded token stream on separators and validate each piece.
/// Accepts the full wire form `<SOS> ... <EOS>`; a leading SOS is dropped,
/// the stream is cut at the first EOS, and a missing EOS (decode hit its
/// length budget) just means the trailing partial segment gets validated
/// as-is. Any other special token inside a segment invalidates it.
pub fn parse_token_stream(stream: &[Token]) -> StreamParse {
    let body = match stream.first() {
        Some(Token::Sos) => &stream[1..],
        _ => stream,
    };
    let body = match body.iter().position(|t| *t == Token::Eos) {
        Some(end) => &body[..end],
        None => body,
    };

    let mut pieces: Vec<Vec<Token>> = vec![Vec::new()];
    for token in body {
        if *token == Token::Sep {
            pieces.push(Vec::new());
        } else {
            pieces.last_mut().expect("never empty").push(*token);
        }
    }
    if pieces.len() == 1 && pieces[0].is_empty() {
        pieces.clear();
    }

    let total_segments = pieces.len();
    let mut sequence = TransformationSequence::default();
    let mut invalid_segments = 0;
    for tokens in pieces {
        match validate_segment(&tokens) {
            Ok(()) => sequence.push(Segment::new(tokens).expect("just validated")),
            Err(_) => invalid_segments += 1,
        }
    }
    StreamParse {
        sequence,
        total_segments,
        invalid_segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{InvalidKind, Operator};

    fn f(i: usize) -> Token {
        Token::Feature(i)
    }

    fn op(o: Operator) -> Token {
        Token::Op(o)
    }

    fn vocab() -> Vocabulary {
        Vocabulary::canonical(5).unwrap()
    }

    #[test]
    fn renders_the_documented_form() {
        let sq = TransformationSequence::new(vec![
            Segment::new(vec![f(0), f(1), op(Operator::Add)]).unwrap(),
            Segment::new(vec![f(2), op(Operator::Log)]).unwrap(),
        ]);
        assert_eq!(to_text(&sq), "f0 f1 add token_sep f2 log");
    }

    #[test]
    fn parse_inverts_render() {
        let text = "f0 f1 add token_sep f2 log";
        let out = parse_text(text, &vocab());
        assert!(out.is_clean());
        assert_eq!(to_text(&out.sequence), text);
    }

    #[test]
    fn whitespace_runs_collapse() {
        let out = parse_text("  f0   f1\tadd \n token_sep  f2 log ", &vocab());
        assert!(out.is_clean());
        assert_eq!(to_text(&out.sequence), "f0 f1 add token_sep f2 log");
    }

    #[test]
    fn unknown_words_skip_only_their_segment() {
        let out = parse_text("f0 banana add token_sep f2 log", &vocab());
        assert_eq!(to_text(&out.sequence), "f2 log");
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].segment_index, 0);
        assert_eq!(
            out.diagnostics[0].issue,
            ParseIssue::UnknownWord("banana".to_string())
        );
    }

    #[test]
    fn out_of_range_feature_word_is_unknown() {
        let out = parse_text("f9 log", &vocab());
        assert!(out.sequence.is_empty());
        assert_eq!(
            out.diagnostics[0].issue,
            ParseIssue::UnknownWord("f9".to_string())
        );
    }

    #[test]
    fn invalid_postfix_is_reported_with_kind() {
        let out = parse_text("f0 f1", &vocab());
        assert!(out.sequence.is_empty());
        match &out.diagnostics[0].issue {
            ParseIssue::Invalid(err) => assert_eq!(err.kind, InvalidKind::NoOperator),
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn nothing_salvageable_yields_empty_sequence() {
        let out = parse_text("hello world", &vocab());
        assert!(out.sequence.is_empty());
        assert!(!out.is_clean());
        let out = parse_text("", &vocab());
        assert!(out.sequence.is_empty());
        assert!(out.is_clean());
    }

    #[test]
    fn segment_cap_drops_the_tail() {
        let text = vec!["f0 log"; 4].join(" token_sep ");
        let out = parse_text_capped(&text, &vocab(), 2);
        assert_eq!(out.sequence.len(), 2);
        assert_eq!(out.diagnostics.len(), 2);
        assert!(matches!(out.diagnostics[0].issue, ParseIssue::OverLimit));
    }

    #[test]
    fn padded_feature_words_are_rejected() {
        let out = parse_text("f01 log", &vocab());
        assert_eq!(
            out.diagnostics[0].issue,
            ParseIssue::UnknownWord("f01".to_string())
        );
    }

    #[test]
    fn stream_parse_handles_wire_form() {
        let stream = vec![
            Token::Sos,
            f(0),
            f(1),
            op(Operator::Add),
            Token::Sep,
            f(2),
            op(Operator::Log),
            Token::Eos,
        ];
        let out = parse_token_stream(&stream);
        assert_eq!(out.total_segments, 2);
        assert_eq!(out.invalid_segments, 0);
        assert_eq!(to_text(&out.sequence), "f0 f1 add token_sep f2 log");
    }

    #[test]
    fn stream_parse_counts_invalid_pieces() {
        // Second piece underflows, third is fine.
        let stream = vec![
            Token::Sos,
            f(0),
            op(Operator::Log),
            Token::Sep,
            op(Operator::Add),
            Token::Sep,
            f(1),
            op(Operator::Square),
            Token::Eos,
        ];
        let out = parse_token_stream(&stream);
        assert_eq!(out.total_segments, 3);
        assert_eq!(out.invalid_segments, 1);
        assert_eq!(out.sequence.len(), 2);
    }

    #[test]
    fn stream_without_eos_validates_the_partial_tail() {
        let stream = vec![Token::Sos, f(0), f(1)];
        let out = parse_token_stream(&stream);
        assert_eq!(out.total_segments, 1);
        assert_eq!(out.invalid_segments, 1);
        assert!(out.sequence.is_empty());
    }

    #[test]
    fn empty_wire_stream_is_an_empty_sequence() {
        let out = parse_token_stream(&[Token::Sos, Token::Eos]);
        assert_eq!(out.total_segments, 0);
        assert_eq!(out.invalid_segments, 0);
    }

    #[test]
    fn wire_ids_round_trip_through_the_vocabulary() {
        let v = vocab();
        let sq = TransformationSequence::new(vec![
            Segment::new(vec![f(0), f(1), op(Operator::Add)]).unwrap(),
            Segment::new(vec![f(2), op(Operator::Log)]).unwrap(),
        ]);
        let ids = sq.wire_ids(&v).unwrap();
        assert_eq!(*ids.first().unwrap(), v.sos_id());
        assert_eq!(*ids.last().unwrap(), v.eos_id());
        let tokens: Vec<Token> = ids.iter().map(|&id| v.token_of(id).unwrap()).collect();
        let parsed = parse_token_stream(&tokens);
        assert_eq!(parsed.sequence, sq);
    }
}
