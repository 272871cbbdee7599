//! Random generation of valid segments, used for search seeding and for
//! fuzzing the validators.
//!
//! Generation works top-down on expression trees with an exact token budget,
//! so every draw is valid by construction and the length distribution is
//! controlled instead of emerging from rejection sampling.

use super::{Arity, Operator, Segment, Token, TransformationSequence, Vocabulary};
use crate::rng::{rng_from_seed, DetRng};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Postfix token counts a tree can hit: any n >= 2 when a unary operator
/// exists, otherwise only odd n >= 3 (each binary node adds two tokens).
fn reachable(n: usize, has_unary: bool) -> bool {
    if has_unary {
        n >= 1
    } else {
        n % 2 == 1
    }
}

fn unary_ops(vocab: &Vocabulary) -> Vec<Operator> {
    vocab
        .operators()
        .iter()
        .copied()
        .filter(|op| op.arity() == Arity::Unary)
        .collect()
}

fn binary_ops(vocab: &Vocabulary) -> Vec<Operator> {
    vocab
        .operators()
        .iter()
        .copied()
        .filter(|op| op.arity() == Arity::Binary)
        .collect()
}

fn gen_expr(
    budget: usize,
    out: &mut Vec<Token>,
    unaries: &[Operator],
    binaries: &[Operator],
    n_features: usize,
    rng: &mut DetRng,
) {
    debug_assert!(reachable(budget, !unaries.is_empty()));
    if budget == 1 {
        out.push(Token::Feature(rng.random_range(0..n_features)));
        return;
    }
    let has_unary = !unaries.is_empty();
    let can_unary = has_unary && reachable(budget - 1, has_unary);
    let can_binary = !binaries.is_empty() && budget >= 3;
    let use_binary = if can_unary && can_binary {
        rng.random_bool(0.5)
    } else {
        can_binary
    };
    if use_binary {
        // Split budget - 1 tokens between the two children.
        let splits: Vec<usize> = (1..budget - 1)
            .filter(|&left| reachable(left, has_unary) && reachable(budget - 1 - left, has_unary))
            .collect();
        let left = *splits.choose(rng).expect("budget >= 3 always splits");
        gen_expr(left, out, unaries, binaries, n_features, rng);
        gen_expr(budget - 1 - left, out, unaries, binaries, n_features, rng);
        out.push(Token::Op(*binaries.choose(rng).expect("checked")));
    } else {
        gen_expr(budget - 1, out, unaries, binaries, n_features, rng);
        out.push(Token::Op(*unaries.choose(rng).expect("checked")));
    }
}

/// Draw a valid segment of 2..=max_len tokens, length chosen uniformly over
/// the lengths this vocabulary can realize.
///
/// Panics if no valid segment fits in `max_len` (a vocabulary with only
/// binary operators needs at least 3 tokens).
pub fn random_valid_segment(vocab: &Vocabulary, max_len: usize, rng: &mut DetRng) -> Segment {
    assert!(max_len >= 2, "max_len must be at least 2");
    let unaries = unary_ops(vocab);
    let binaries = binary_ops(vocab);
    let lengths: Vec<usize> = (2..=max_len)
        .filter(|&n| {
            if unaries.is_empty() {
                n % 2 == 1
            } else {
                true
            }
        })
        .collect();
    let budget = *lengths
        .choose(rng)
        .expect("no valid segment fits in max_len with this operator set");
    let mut tokens = Vec::with_capacity(budget);
    gen_expr(
        budget,
        &mut tokens,
        &unaries,
        &binaries,
        vocab.n_features(),
        rng,
    );
    Segment::new(tokens).expect("construction is valid by design")
}

/// Seeded convenience wrapper around `random_valid_segment`.
pub fn random_valid_segment_seeded(vocab: &Vocabulary, max_len: usize, seed: u64) -> Segment {
    random_valid_segment(vocab, max_len, &mut rng_from_seed(seed))
}

/// Draw a sequence of 1..=max_segments independent random segments.
pub fn random_valid_sequence(
    vocab: &Vocabulary,
    max_segments: usize,
    max_seg_len: usize,
    rng: &mut DetRng,
) -> TransformationSequence {
    assert!(max_segments >= 1);
    let n = rng.random_range(1..=max_segments);
    let segments = (0..n)
        .map(|_| random_valid_segment(vocab, max_seg_len, rng))
        .collect();
    TransformationSequence::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::validate_segment;
    use crate::rng::rng_from_seed;

    #[test]
    fn every_draw_validates() {
        let vocab = Vocabulary::canonical(5).unwrap();
        let mut rng = rng_from_seed(7);
        for _ in 0..500 {
            let seg = random_valid_segment(&vocab, 9, &mut rng);
            assert!(validate_segment(seg.tokens()).is_ok());
            assert!(seg.len() >= 2 && seg.len() <= 9);
        }
    }

    #[test]
    fn binary_only_vocabulary_draws_odd_lengths() {
        let vocab = Vocabulary::new(3, vec![Operator::Add, Operator::Multiply]).unwrap();
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let seg = random_valid_segment(&vocab, 8, &mut rng);
            assert!(validate_segment(seg.tokens()).is_ok());
            assert_eq!(seg.len() % 2, 1);
        }
    }

    #[test]
    fn unary_only_vocabulary_works() {
        let vocab = Vocabulary::new(2, vec![Operator::Log, Operator::Exp]).unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let seg = random_valid_segment(&vocab, 5, &mut rng);
            assert!(validate_segment(seg.tokens()).is_ok());
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let a = random_valid_segment_seeded(&vocab, 7, 99);
        let b = random_valid_segment_seeded(&vocab, 7, 99);
        assert_eq!(a, b);
        let c = random_valid_segment_seeded(&vocab, 7, 100);
        // Different seeds are allowed to collide but should not in practice
        // for this pair; treat a collision as a regression in seed mixing.
        assert_ne!(a, c);
    }

    #[test]
    fn sequences_respect_the_segment_cap() {
        let vocab = Vocabulary::canonical(4).unwrap();
        let mut rng = rng_from_seed(21);
        for _ in 0..50 {
            let sq = random_valid_sequence(&vocab, 6, 7, &mut rng);
            assert!(!sq.is_empty() && sq.len() <= 6);
        }
    }
}
