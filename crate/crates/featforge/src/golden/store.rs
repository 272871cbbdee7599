//! Corpus persistence: one JSON object per line. Line 1 is a header pinning
//! the vocabulary fingerprint (and dataset id, once known); every following
//! line is one example with its canonical token text. A zero-byte file reads
//! back as an empty corpus.

use super::{GoldenCorpus, GoldenError, GoldenExample, Source};
use crate::data::DownstreamModelKind;
use crate::expr::{parse_text, ParseIssue, Vocabulary};
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    vocab_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset_id: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ExampleLine {
    tokens: String,
    score: f64,
    dataset_id: String,
    source: Source,
    model: DownstreamModelKind,
    seed: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> GoldenError {
    GoldenError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn corpus_save(corpus: &GoldenCorpus, path: &Path) -> Result<(), GoldenError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = HeaderLine {
        vocab_fingerprint: corpus.fingerprint().to_string(),
        dataset_id: corpus.dataset_id().map(str::to_string),
    };
    let mut write_line = |line: String| -> Result<(), GoldenError> {
        w.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for example in corpus.examples() {
        let line = ExampleLine {
            tokens: example.sequence.canonical_text(),
            score: example.score,
            dataset_id: example.dataset_id.clone(),
            source: example.source,
            model: example.model,
            seed: example.seed,
        };
        write_line(serde_json::to_string(&line).expect("example serializes"))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Load a corpus saved by [`corpus_save`], checking every line. The given
/// vocabulary must match the fingerprint in the header; token text is
/// re-parsed and re-validated, so a hand-edited file cannot smuggle in an
/// invalid sequence.
pub fn corpus_load(path: &Path, vocab: &Vocabulary) -> Result<GoldenCorpus, GoldenError> {
    let content = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut corpus = GoldenCorpus::new(vocab);
    if content.trim().is_empty() {
        return Ok(corpus);
    }
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            let header: HeaderLine =
                serde_json::from_str(line).map_err(|e| GoldenError::MalformedLine {
                    line: 1,
                    reason: format!("expected header with vocab_fingerprint: {e}"),
                })?;
            if header.vocab_fingerprint != vocab.fingerprint() {
                return Err(GoldenError::FingerprintMismatch {
                    expected: vocab.fingerprint(),
                    found: header.vocab_fingerprint,
                });
            }
            continue;
        }
        let parsed: ExampleLine =
            serde_json::from_str(line).map_err(|e| GoldenError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        let outcome = parse_text(&parsed.tokens, vocab);
        if let Some(diag) = outcome.diagnostics.first() {
            let reason = match &diag.issue {
                ParseIssue::UnknownWord(w) => format!("unknown token word `{w}`"),
                ParseIssue::Invalid(e) => format!("invalid segment: {e}"),
                ParseIssue::OverLimit => "too many segments".to_string(),
            };
            return Err(GoldenError::MalformedLine {
                line: line_no,
                reason,
            });
        }
        if outcome.sequence.is_empty() {
            return Err(GoldenError::MalformedLine {
                line: line_no,
                reason: "tokens field holds no segments".to_string(),
            });
        }
        if !parsed.score.is_finite() || parsed.score > 1.0 {
            return Err(GoldenError::MalformedLine {
                line: line_no,
                reason: format!("score {} is not a valid metric value", parsed.score),
            });
        }
        corpus
            .push_checked(GoldenExample {
                sequence: outcome.sequence,
                score: parsed.score,
                dataset_id: parsed.dataset_id,
                source: parsed.source,
                model: parsed.model,
                seed: parsed.seed,
            })
            .map_err(|e| GoldenError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
    }
    Ok(corpus)
}
