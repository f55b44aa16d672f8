use serde::{Deserialize, Serialize};

use super::{Stopwords, Vocab};

/// Training target for one answer token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum GoldLabel {
    /// Copy the context token at this position.
    ContextPosition(usize),
    /// Generate this global-vocabulary entry.
    VocabIndex(usize),
    /// Excluded from the loss.
    Ignored,
}

/// Longest answer n-gram found contiguously in the context, as
/// `(answer_start, context_start, length)`. Earliest answer start wins among
/// equal lengths, then earliest context position.
pub fn largest_ngram_match(context: &[String], answer: &[String]) -> Option<(usize, usize, usize)> {
    for n in (1..=answer.len().min(context.len())).rev() {
        for a in 0..=answer.len() - n {
            let gram = &answer[a..a + n];
            if let Some(c) = context.windows(n).position(|w| w == gram) {
                return Some((a, c, n));
            }
        }
    }
    None
}

/// Per-token labels for `answer` against `context`.
///
/// The largest n-gram match is labelled with consecutive context positions.
/// Remaining stopwords prefer the vocabulary and fall back to the context;
/// remaining content words prefer their first context occurrence and fall
/// back to the vocabulary. Anything found in neither is ignored. The answer
/// is truncated to `max_answer_len` first.
pub fn build_gold_labels(
    context: &[String],
    answer: &[String],
    vocab: &Vocab,
    stopwords: &Stopwords,
    max_answer_len: usize,
) -> Vec<GoldLabel> {
    let answer = &answer[..answer.len().min(max_answer_len)];
    let mut labels: Vec<Option<GoldLabel>> = vec![None; answer.len()];
    if let Some((a, c, n)) = largest_ngram_match(context, answer) {
        for k in 0..n {
            labels[a + k] = Some(GoldLabel::ContextPosition(c + k));
        }
    }
    let first_in_context = |w: &String| context.iter().position(|t| t == w).map(GoldLabel::ContextPosition);
    let in_vocab = |w: &String| vocab.contains(w).then(|| GoldLabel::VocabIndex(vocab.id_or_unk(w)));
    answer
        .iter()
        .zip(labels)
        .map(|(w, l)| {
            l.or_else(|| {
                if stopwords.contains(w) {
                    in_vocab(w).or_else(|| first_in_context(w))
                } else {
                    first_in_context(w).or_else(|| in_vocab(w))
                }
            })
            .unwrap_or(GoldLabel::Ignored)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn vocab(words: &str) -> Vocab {
        Vocab::from_ordered(toks(words)).unwrap()
    }

    #[test]
    fn contiguous_match_gets_consecutive_positions() {
        let l = build_gold_labels(&toks("the cat sat"), &toks("cat sat"), &vocab("x"), &Stopwords::default(), 8);
        assert_eq!(l, [GoldLabel::ContextPosition(1), GoldLabel::ContextPosition(2)]);
    }

    #[test]
    fn missing_word_is_ignored() {
        let l = build_gold_labels(&toks("a b"), &toks("zzz"), &vocab("x"), &Stopwords::default(), 8);
        assert_eq!(l, [GoldLabel::Ignored]);
    }

    #[test]
    fn stopword_goes_to_vocab() {
        let v = vocab("the john");
        let l = build_gold_labels(&toks("john ran"), &toks("the john"), &v, &Stopwords::default(), 8);
        assert_eq!(l, [GoldLabel::VocabIndex(v.id("the").unwrap()), GoldLabel::ContextPosition(0)]);
    }

    #[test]
    fn content_word_falls_back_to_vocab() {
        let v = vocab("violin");
        let l = build_gold_labels(&toks("she played"), &toks("violin"), &v, &Stopwords::default(), 8);
        assert_eq!(l, [GoldLabel::VocabIndex(3)]);
    }

    #[test]
    fn earliest_of_equal_matches_and_first_occurrence() {
        let ctx = toks("x a b y a b c");
        assert_eq!(largest_ngram_match(&ctx, &toks("a b")), Some((0, 1, 2)));
        let l = build_gold_labels(&ctx, &toks("c q a"), &vocab("q"), &Stopwords::empty(), 8);
        // "c" is the earliest longest (unigram) match; "a" takes its first occurrence
        assert_eq!(
            l,
            [GoldLabel::ContextPosition(6), GoldLabel::VocabIndex(3), GoldLabel::ContextPosition(1)]
        );
    }

    #[test]
    fn truncates_to_max_answer_len() {
        let l = build_gold_labels(&toks("a b c d"), &toks("a b c d"), &vocab("x"), &Stopwords::empty(), 2);
        assert_eq!(l, [GoldLabel::ContextPosition(0), GoldLabel::ContextPosition(1)]);
    }

    #[test]
    fn serde_shape() {
        let json = serde_json::to_string(&GoldLabel::ContextPosition(4)).unwrap();
        assert_eq!(json, r#"{"kind":"context_position","index":4}"#);
        assert_eq!(serde_json::to_string(&GoldLabel::Ignored).unwrap(), r#"{"kind":"ignored"}"#);
    }

    /// Exhaustive oracle for the longest common contiguous run.
    fn brute_longest(ctx: &[String], ans: &[String]) -> usize {
        let mut best = 0;
        for i in 0..ans.len() {
            for j in 0..ctx.len() {
                let mut k = 0;
                while i + k < ans.len() && j + k < ctx.len() && ans[i + k] == ctx[j + k] {
                    k += 1;
                }
                best = best.max(k);
            }
        }
        best
    }

    proptest! {
        #[test]
        fn labels_point_at_equal_tokens(
            ctx in prop::collection::vec(0u8..6, 1..20),
            ans in prop::collection::vec(0u8..8, 0..10),
            max_len in 1usize..12,
        ) {
            let ctx: Vec<String> = ctx.iter().map(|w| format!("w{w}")).collect();
            let ans: Vec<String> = ans.iter().map(|w| format!("w{w}")).collect();
            let v = vocab("w6 w0");
            let labels = build_gold_labels(&ctx, &ans, &v, &Stopwords::empty(), max_len);
            prop_assert_eq!(labels.len(), ans.len().min(max_len));
            for (l, w) in labels.iter().zip(&ans) {
                match *l {
                    GoldLabel::ContextPosition(p) => prop_assert_eq!(&ctx[p], w),
                    GoldLabel::VocabIndex(i) => prop_assert_eq!(v.token(i).unwrap(), w.as_str()),
                    GoldLabel::Ignored => prop_assert!(!ctx.contains(w) && !v.contains(w)),
                }
            }
            let trunc = &ans[..ans.len().min(max_len)];
            let found = largest_ngram_match(&ctx, trunc).map_or(0, |m| m.2);
            prop_assert_eq!(found, brute_longest(&ctx, trunc));
        }
    }
}
