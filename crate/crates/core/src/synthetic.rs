//! Seeded toy corpora for micro-experiments.
//!
//! Every generator emits a train split and a dev split holding the same
//! questions under `dev-` prefixed ids, so a model can be scored on exactly
//! what it was trained on while the dev pass still goes through
//! question-cued retrieval.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, QaExample, Split, Story, MAX_QUESTION_LEN};

/// Length of copy/generate stories; fits in one chunk of size 64.
pub const STORY_LEN: usize = 60;

const FILLER: [&str; 32] = [
    "river", "stone", "window", "garden", "letter", "morning", "horse", "market", "candle", "bridge", "forest", "kettle",
    "ribbon", "harbor", "lantern", "meadow", "pocket", "saddle", "tower", "valley", "wagon", "anchor", "barrel", "cellar",
    "ember", "fountain", "glove", "hollow", "island", "jacket", "ladder", "mirror",
];

const NAMES: [&str; 24] = [
    "alder", "brisk", "cobalt", "dune", "ermine", "fable", "gantry", "heron", "indigo", "jasper", "kestrel", "lumen",
    "marrow", "nimbus", "onyx", "pewter", "quill", "russet", "sable", "thistle", "umber", "vellum", "willow", "zephyr",
];

/// Question/answer patterns for the generate task. Answer words never occur
/// in any story.
pub const GENERATE_PATTERNS: [(&str, &str); 4] = [
    ("what colour is the sky", "blue"),
    ("what do cows drink", "fresh milk"),
    ("how many legs has a spider", "eight"),
    ("who wrote the old song", "the miller"),
];

const COPY_QUESTION: &str = "what is the secret";

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string()).collect()
}

fn with_dev(stories: Vec<Story>, train: Vec<QaExample>) -> Dataset {
    let dev: Vec<QaExample> = train
        .iter()
        .map(|e| QaExample {
            example_id: format!("dev-{}", e.example_id),
            split: Split::Dev,
            ..e.clone()
        })
        .collect();
    let examples = train.into_iter().chain(dev).collect();
    Dataset::new(stories, examples, MAX_QUESTION_LEN).expect("generated corpus is well formed")
}

fn copy_items(rng: &mut ChaCha8Rng, count: usize, prefix: &str) -> (Vec<Story>, Vec<QaExample>) {
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let mut stories = Vec::new();
    let mut examples = Vec::new();
    for i in 0..count {
        let answer = vec![names[2 * i].to_string(), names[2 * i + 1].to_string()];
        let mut planted = toks("the secret is");
        planted.extend(answer.iter().cloned());
        let mut tokens = filler(rng, STORY_LEN - planted.len());
        let at = rng.gen_range(0..=tokens.len());
        tokens.splice(at..at, planted);
        let story_id = format!("{prefix}copy-s{i}");
        stories.push(Story {
            story_id: story_id.clone(),
            tokens,
        });
        examples.push(QaExample {
            example_id: format!("{prefix}copy-{i}"),
            story_id,
            question_tokens: toks(COPY_QUESTION),
            answers: [answer.clone(), answer],
            split: Split::Train,
        });
    }
    (stories, examples)
}

fn generate_items(rng: &mut ChaCha8Rng, count: usize, prefix: &str) -> (Vec<Story>, Vec<QaExample>) {
    let mut stories = Vec::new();
    let mut examples = Vec::new();
    for i in 0..count {
        let (question, answer) = GENERATE_PATTERNS[i % GENERATE_PATTERNS.len()];
        let story_id = format!("{prefix}gen-s{i}");
        stories.push(Story {
            story_id: story_id.clone(),
            tokens: filler(rng, STORY_LEN),
        });
        examples.push(QaExample {
            example_id: format!("{prefix}gen-{i}"),
            story_id,
            question_tokens: toks(question),
            answers: [toks(answer), toks(answer)],
            split: Split::Train,
        });
    }
    (stories, examples)
}

/// Eight questions whose two-word answers sit verbatim after
/// "the secret is" somewhere in a 60-token story.
pub fn copy_corpus(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (stories, examples) = copy_items(&mut rng, 8, "");
    with_dev(stories, examples)
}

/// Eight questions drawn from [`GENERATE_PATTERNS`]; no answer word ever
/// appears in a story.
pub fn generate_corpus(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (stories, examples) = generate_items(&mut rng, 8, "");
    with_dev(stories, examples)
}

/// Union of the copy and generate tasks; generate examples carry `gen-` in
/// their ids.
pub fn mixed_corpus(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut stories, mut examples) = copy_items(&mut rng, 8, "");
    let (s, e) = generate_items(&mut rng, 8, "");
    stories.extend(s);
    examples.extend(e);
    with_dev(stories, examples)
}

pub fn is_generate_example(example_id: &str) -> bool {
    example_id.contains("gen-")
}

/// Needle stories: `chunks` filler chunks of `chunk_size` tokens. One chunk
/// carries the answer phrase; another carries the question's wording but not
/// the answer.
#[derive(Clone, Debug)]
pub struct NeedleCorpus {
    pub dataset: Dataset,
    pub chunk_size: usize,
    /// `(example_id, needle chunk, decoy chunk)`.
    pub plants: Vec<(String, usize, usize)>,
}

pub fn needle_corpus(seed: u64, stories: usize, chunks: usize, chunk_size: usize) -> NeedleCorpus {
    assert!(chunks >= 2 && chunk_size >= 12, "needle corpus needs two chunks of at least 12 tokens");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_stories = Vec::new();
    let mut examples = Vec::new();
    let mut plants = Vec::new();
    for i in 0..stories {
        let (a, b) = (NAMES[i % NAMES.len()], NAMES[(i * 7 + 3) % NAMES.len()]);
        let needle_phrase = toks(&format!("buried beneath the {a} {b} lighthouse"));
        let decoy_phrase = toks("where was the treasure hidden asked the captain");
        let needle = rng.gen_range(0..chunks);
        let decoy = (needle + 1 + rng.gen_range(0..chunks - 1)) % chunks;
        let mut tokens = Vec::with_capacity(chunks * chunk_size);
        for c in 0..chunks {
            let mut chunk = filler(&mut rng, chunk_size);
            let plant = if c == needle {
                Some(&needle_phrase)
            } else if c == decoy {
                Some(&decoy_phrase)
            } else {
                None
            };
            if let Some(p) = plant {
                let at = rng.gen_range(0..=chunk_size - p.len());
                chunk.splice(at..at + p.len(), p.iter().cloned());
            }
            tokens.extend(chunk);
        }
        let story_id = format!("needle-s{i}");
        let example_id = format!("needle-{i}");
        out_stories.push(Story {
            story_id: story_id.clone(),
            tokens,
        });
        examples.push(QaExample {
            example_id: example_id.clone(),
            story_id,
            question_tokens: toks("where was the treasure hidden"),
            answers: [toks(&format!("beneath the {a} {b} lighthouse")), toks(&format!("the {a} {b} lighthouse"))],
            split: Split::Train,
        });
        plants.push((example_id, needle, decoy));
    }
    NeedleCorpus {
        dataset: Dataset::new(out_stories, examples, MAX_QUESTION_LEN).expect("generated corpus is well formed"),
        chunk_size,
        plants,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_answers_are_in_context() {
        let d = copy_corpus(3);
        assert_eq!(d.split(Split::Train).count(), 8);
        assert_eq!(d.split(Split::Dev).count(), 8);
        for ex in d.split(Split::Train) {
            let story = &d.story(&ex.story_id).unwrap().tokens;
            assert_eq!(story.len(), STORY_LEN);
            assert!(story.windows(2).any(|w| w == ex.answers[0].as_slice()));
        }
    }

    #[test]
    fn generate_answers_never_in_context() {
        let d = generate_corpus(3);
        for ex in &d.examples {
            let story = &d.story(&ex.story_id).unwrap().tokens;
            for a in ex.answers.iter().flatten() {
                assert!(!story.contains(a), "{a} leaked into {}", ex.story_id);
            }
        }
    }

    #[test]
    fn mixed_tags_generate_examples() {
        let d = mixed_corpus(1);
        let gen = d.split(Split::Train).filter(|e| is_generate_example(&e.example_id)).count();
        assert_eq!(gen, 8);
        assert_eq!(d.split(Split::Train).count(), 16);
    }

    #[test]
    fn needle_planted_where_recorded() {
        let n = needle_corpus(5, 20, 8, 50);
        for (id, needle, decoy) in &n.plants {
            assert_ne!(needle, decoy);
            let ex = n.dataset.example(id).unwrap();
            let story = &n.dataset.story(&ex.story_id).unwrap().tokens;
            let chunk = &story[needle * 50..(needle + 1) * 50];
            assert!(chunk.windows(4).any(|w| w == &ex.answers[1][..]));
        }
        assert_eq!(copy_corpus(9), copy_corpus(9));
    }
}
