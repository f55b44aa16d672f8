//! Two-level curriculum over answerability (easy/hard cue) and
//! understandability (chunk size).
//!
//! Within a chunk size, each dev-score failure moves a fresh `ceil(delta * N)`
//! slice of examples from answer-cued (easy) to question-cued (hard)
//! windows. Once the swap budget is spent the scheduler draws a new chunk size
//! and starts again from its easy set.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, QaExample, Stopwords};
use crate::retrieval::{query_for, ContextWindow, Cue, RetrievalConfig, RetrievalError, StoryIndex};

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("chunk size list is empty")]
    NoChunkSizes,
    #[error("duplicate chunk size {0}")]
    DuplicateChunkSize(usize),
    #[error("dev score must be finite, got {0}")]
    NonFiniteScore(f64),
    #[error("no set pair for chunk size {0}")]
    MissingSetPair(usize),
    #[error("example `{0}` has no window in the active set pair")]
    MissingWindow(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Easy (answer-cued) and hard (question-cued) windows for one chunk size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetPair {
    pub chunk_size: usize,
    pub easy: BTreeMap<String, ContextWindow>,
    pub hard: BTreeMap<String, ContextWindow>,
}

/// Builds one [`SetPair`] per chunk size over `examples`.
pub fn build_sets<'a>(
    dataset: &Dataset,
    examples: impl IntoIterator<Item = &'a QaExample> + Clone,
    retrieval: &RetrievalConfig,
    chunk_sizes: &[usize],
    stopwords: &Stopwords,
) -> Result<Vec<SetPair>, CurriculumError> {
    let mut out = Vec::with_capacity(chunk_sizes.len());
    for &k in chunk_sizes {
        let mut cache: HashMap<&str, StoryIndex> = HashMap::new();
        let mut easy = BTreeMap::new();
        let mut hard = BTreeMap::new();
        for ex in examples.clone() {
            let story = dataset
                .story(&ex.story_id)
                .expect("dataset guarantees referential integrity");
            if !cache.contains_key(ex.story_id.as_str()) {
                cache.insert(ex.story_id.as_str(), StoryIndex::build(story, k, stopwords)?);
            }
            let idx = &cache[ex.story_id.as_str()];
            easy.insert(
                ex.example_id.clone(),
                idx.window(&ex.example_id, &query_for(ex, Cue::Answer), retrieval)?,
            );
            hard.insert(
                ex.example_id.clone(),
                idx.window(&ex.example_id, &query_for(ex, Cue::Question), retrieval)?,
            );
        }
        out.push(SetPair {
            chunk_size: k,
            easy,
            hard,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Answerability swaps, then chunk-size advancement.
    Full,
    /// Answerability swaps within the first chunk size only.
    NoUnderstandability,
    /// Chunk-size advancement on every failure, always easy windows.
    NoAnswerability,
    EasyOnly,
    HardOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkOrder {
    /// Uniform draws without replacement.
    Random,
    /// Sizes are used in the listed order.
    Fixed,
}

/// When a failure may still swap within the current chunk size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapBudget {
    /// `swap_count < ceil(1/delta)`: exactly `1/delta` swaps empty the easy set.
    Exhaustive,
    /// `swap_count <= 1/delta`, one extra swap event.
    Inclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Improved,
    Swapped,
    Advanced,
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub chunk_sizes: Vec<usize>,
    pub delta: f64,
    pub seed: u64,
    pub mode: CurriculumMode,
    pub order: ChunkOrder,
    pub budget: SwapBudget,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            chunk_sizes: vec![50, 100, 200, 500],
            delta: 0.05,
            seed: 0,
            mode: CurriculumMode::Full,
            order: ChunkOrder::Random,
            budget: SwapBudget::Exhaustive,
        }
    }
}

/// `ceil(x)` that ignores representation noise such as `1/0.05 = 20.000000000000004`.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Serializable scheduler position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub config: CurriculumConfig,
    pub remaining_chunk_sizes: Vec<usize>,
    pub active_k: usize,
    pub swap_count: usize,
    pub swapped_ids: BTreeSet<String>,
    pub best_dev: f64,
    /// Sorted universe of training example ids.
    pub example_ids: Vec<String>,
    rng_word_pos: u128,
}

impl CurriculumState {
    /// Draws the first chunk size and starts from its easy set.
    pub fn init(config: CurriculumConfig, example_ids: impl IntoIterator<Item = String>) -> Result<Self, CurriculumError> {
        if !(config.delta > 0.0 && config.delta <= 1.0) {
            return Err(CurriculumError::Delta(config.delta));
        }
        if config.chunk_sizes.is_empty() {
            return Err(CurriculumError::NoChunkSizes);
        }
        let mut seen = BTreeSet::new();
        for &k in &config.chunk_sizes {
            if !seen.insert(k) {
                return Err(CurriculumError::DuplicateChunkSize(k));
            }
        }
        let mut ids: Vec<String> = example_ids.into_iter().collect();
        ids.sort();
        ids.dedup();
        let mut state = CurriculumState {
            remaining_chunk_sizes: config.chunk_sizes.clone(),
            active_k: 0,
            swap_count: 0,
            swapped_ids: BTreeSet::new(),
            best_dev: 0.0,
            example_ids: ids,
            rng_word_pos: 0,
            config,
        };
        let mut rng = state.rng();
        state.active_k = state.draw_chunk_size(&mut rng);
        if state.config.mode == CurriculumMode::NoUnderstandability {
            state.remaining_chunk_sizes.clear();
        }
        if state.config.mode == CurriculumMode::HardOnly {
            state.swapped_ids = state.example_ids.iter().cloned().collect();
        }
        state.save_rng(&rng);
        Ok(state)
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    fn save_rng(&mut self, rng: &ChaCha8Rng) {
        self.rng_word_pos = rng.get_word_pos();
    }

    fn draw_chunk_size(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let i = match self.config.order {
            ChunkOrder::Random => rng.gen_range(0..self.remaining_chunk_sizes.len()),
            ChunkOrder::Fixed => 0,
        };
        self.remaining_chunk_sizes.remove(i)
    }

    /// Maximum number of swap events within one chunk size, `ceil(1/delta)`.
    pub fn swap_capacity(&self) -> usize {
        ceil_tolerant(1.0 / self.config.delta)
    }

    /// Examples moved per swap, `ceil(delta * N)`.
    pub fn swap_quantum(&self) -> usize {
        ceil_tolerant(self.config.delta * self.example_ids.len() as f64)
    }

    fn may_swap(&self) -> bool {
        let within_budget = match self.config.budget {
            SwapBudget::Exhaustive => self.swap_count < self.swap_capacity(),
            SwapBudget::Inclusive => (self.swap_count as f64) <= 1.0 / self.config.delta + 1e-9,
        };
        let easy_left = self.swapped_ids.len() < self.example_ids.len();
        within_budget && (easy_left || self.config.budget == SwapBudget::Inclusive)
    }

    /// Feeds one dev score into the scheduler.
    pub fn on_epoch_end(&mut self, dev_score: f64) -> Result<Action, CurriculumError> {
        if !dev_score.is_finite() {
            return Err(CurriculumError::NonFiniteScore(dev_score));
        }
        if dev_score > self.best_dev {
            self.best_dev = dev_score;
            return Ok(Action::Improved);
        }
        let mut rng = self.rng();
        let action = match self.config.mode {
            CurriculumMode::EasyOnly | CurriculumMode::HardOnly => Action::Exhausted,
            CurriculumMode::NoAnswerability => self.advance(&mut rng),
            CurriculumMode::Full | CurriculumMode::NoUnderstandability => {
                if self.may_swap() {
                    self.swap(&mut rng);
                    Action::Swapped
                } else {
                    self.advance(&mut rng)
                }
            }
        };
        self.save_rng(&rng);
        Ok(action)
    }

    fn swap(&mut self, rng: &mut ChaCha8Rng) {
        let easy: Vec<&String> = self.example_ids.iter().filter(|id| !self.swapped_ids.contains(*id)).collect();
        let take = self.swap_quantum().min(easy.len());
        let picked: Vec<String> = sample(rng, easy.len(), take).into_iter().map(|i| easy[i].clone()).collect();
        self.swapped_ids.extend(picked);
        self.swap_count += 1;
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) -> Action {
        if self.remaining_chunk_sizes.is_empty() {
            return Action::Exhausted;
        }
        self.active_k = self.draw_chunk_size(rng);
        self.swap_count = 0;
        self.swapped_ids.clear();
        Action::Advanced
    }

    pub fn is_hard(&self, example_id: &str) -> bool {
        self.swapped_ids.contains(example_id)
    }

    /// Fraction of the training set currently on hard windows.
    pub fn hard_fraction(&self) -> f64 {
        if self.example_ids.is_empty() {
            return 0.0;
        }
        self.swapped_ids.len() as f64 / self.example_ids.len() as f64
    }

    /// Example id to window for the active chunk size.
    pub fn current_training_set<'a>(
        &self,
        set_pairs: &'a [SetPair],
    ) -> Result<BTreeMap<String, &'a ContextWindow>, CurriculumError> {
        let pair = set_pairs
            .iter()
            .find(|p| p.chunk_size == self.active_k)
            .ok_or(CurriculumError::MissingSetPair(self.active_k))?;
        self.example_ids
            .iter()
            .map(|id| {
                let side = if self.is_hard(id) { &pair.hard } else { &pair.easy };
                side.get(id)
                    .map(|w| (id.clone(), w))
                    .ok_or_else(|| CurriculumError::MissingWindow(id.clone()))
            })
            .collect()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.example_ids
            .iter()
            .map(|id| ManifestEntry {
                example_id: id.clone(),
                set: if self.is_hard(id) { Cue::Question } else { Cue::Answer },
                chunk_size: self.active_k,
            })
            .collect()
    }
}

/// Audit line: which window an example trains on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub example_id: String,
    /// `answer` = easy set, `question` = hard set.
    pub set: Cue,
    pub chunk_size: usize,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::{Split, Story};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("e{i:03}")).collect()
    }

    fn cfg(sizes: &[usize], delta: f64, seed: u64) -> CurriculumConfig {
        CurriculumConfig {
            chunk_sizes: sizes.to_vec(),
            delta,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_size_init() {
        let s = CurriculumState::init(cfg(&[50], 0.05, 9), ids(3)).unwrap();
        assert_eq!(s.active_k, 50);
        assert!(s.remaining_chunk_sizes.is_empty());
        assert_eq!(s.swap_count, 0);
        assert!(s.swapped_ids.is_empty());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = CurriculumState::init(cfg(&[50, 100, 200, 500], 0.05, 42), ids(4)).unwrap();
        let b = CurriculumState::init(cfg(&[50, 100, 200, 500], 0.05, 42), ids(4)).unwrap();
        assert_eq!(a.active_k, b.active_k);
        assert!(!a.remaining_chunk_sizes.contains(&a.active_k));
        assert_eq!(a.remaining_chunk_sizes.len(), 3);
    }

    #[test]
    fn capacity_for_five_percent() {
        let s = CurriculumState::init(cfg(&[50], 0.05, 0), ids(40)).unwrap();
        assert_eq!(s.swap_capacity(), 20);
        assert_eq!(s.swap_quantum(), 2);
    }

    #[test]
    fn invalid_configs() {
        assert_eq!(
            CurriculumState::init(cfg(&[50], 0.0, 0), ids(1)).unwrap_err(),
            CurriculumError::Delta(0.0)
        );
        assert!(CurriculumState::init(cfg(&[], 0.1, 0), ids(1)).is_err());
        assert!(CurriculumState::init(cfg(&[50, 50], 0.1, 0), ids(1)).is_err());
        let mut s = CurriculumState::init(cfg(&[50], 0.1, 0), ids(1)).unwrap();
        assert!(s.on_epoch_end(f64::NAN).is_err());
    }

    #[test]
    fn one_failure_swaps_two_of_forty() {
        let mut s = CurriculumState::init(cfg(&[50, 100], 0.05, 1), ids(40)).unwrap();
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Swapped);
        assert_eq!(s.swapped_ids.len(), 2);
    }

    #[test]
    fn twenty_failures_make_everything_hard_then_advance() {
        let mut s = CurriculumState::init(cfg(&[50, 100], 0.05, 1), ids(40)).unwrap();
        let first = s.active_k;
        for _ in 0..20 {
            assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Swapped);
        }
        assert_eq!(s.hard_fraction(), 1.0);
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Advanced);
        assert_ne!(s.active_k, first);
        assert!(s.swapped_ids.is_empty());
        for _ in 0..20 {
            s.on_epoch_end(0.0).unwrap();
        }
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Exhausted);
        assert_eq!(s.hard_fraction(), 1.0);
    }

    #[test]
    fn inclusive_budget_allows_one_extra_swap_event() {
        let mut c = cfg(&[50, 100], 0.05, 1);
        c.budget = SwapBudget::Inclusive;
        let mut s = CurriculumState::init(c, ids(40)).unwrap();
        for _ in 0..21 {
            assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Swapped);
        }
        assert_eq!(s.swap_count, 21);
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Advanced);
    }

    #[test]
    fn improvement_resets_nothing_and_updates_best() {
        let mut s = CurriculumState::init(cfg(&[50], 0.5, 1), ids(4)).unwrap();
        assert_eq!(s.on_epoch_end(0.3).unwrap(), Action::Improved);
        assert_eq!(s.best_dev, 0.3);
        assert_eq!(s.on_epoch_end(0.3).unwrap(), Action::Swapped);
        assert_eq!(s.on_epoch_end(0.4).unwrap(), Action::Improved);
        assert_eq!(s.swapped_ids.len(), 2);
    }

    #[test]
    fn ablation_modes() {
        let mut c = cfg(&[50, 100], 0.5, 3);
        c.mode = CurriculumMode::NoAnswerability;
        let mut s = CurriculumState::init(c.clone(), ids(4)).unwrap();
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Advanced);
        assert!(s.swapped_ids.is_empty());
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Exhausted);

        c.mode = CurriculumMode::NoUnderstandability;
        let mut s = CurriculumState::init(c.clone(), ids(4)).unwrap();
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Swapped);
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Swapped);
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Exhausted);

        c.mode = CurriculumMode::HardOnly;
        let s = CurriculumState::init(c.clone(), ids(4)).unwrap();
        assert_eq!(s.hard_fraction(), 1.0);

        c.mode = CurriculumMode::EasyOnly;
        let mut s = CurriculumState::init(c, ids(4)).unwrap();
        assert_eq!(s.on_epoch_end(0.0).unwrap(), Action::Exhausted);
        assert_eq!(s.hard_fraction(), 0.0);
    }

    #[test]
    fn fixed_order_follows_list() {
        let mut c = cfg(&[500, 50, 100], 1.0, 3);
        c.order = ChunkOrder::Fixed;
        let mut s = CurriculumState::init(c, ids(2)).unwrap();
        let mut seen = vec![s.active_k];
        loop {
            match s.on_epoch_end(0.0).unwrap() {
                Action::Advanced => seen.push(s.active_k),
                Action::Exhausted => break,
                _ => {}
            }
        }
        assert_eq!(seen, [500, 50, 100]);
    }

    fn window(id: &str, tag: &str, k: usize) -> ContextWindow {
        ContextWindow {
            example_id: id.into(),
            chunk_size: k,
            tokens: vec![tag.into()],
            provenance: vec![],
        }
    }

    fn pair(k: usize, ids: &[String]) -> SetPair {
        SetPair {
            chunk_size: k,
            easy: ids.iter().map(|i| (i.clone(), window(i, "easy", k))).collect(),
            hard: ids.iter().map(|i| (i.clone(), window(i, "hard", k))).collect(),
        }
    }

    #[test]
    fn training_set_selection() {
        let all = ids(2);
        let pairs = [pair(50, &all)];
        let mut s = CurriculumState::init(cfg(&[50], 0.5, 0), all.clone()).unwrap();
        let set = s.current_training_set(&pairs).unwrap();
        assert!(set.values().all(|w| w.tokens[0] == "easy"));

        s.swapped_ids.insert(all[0].clone());
        let set = s.current_training_set(&pairs).unwrap();
        assert_eq!(set[&all[0]].tokens[0], "hard");
        assert_eq!(set[&all[1]].tokens[0], "easy");

        s.swapped_ids.extend(all.clone());
        let set = s.current_training_set(&pairs).unwrap();
        assert!(set.values().all(|w| w.tokens[0] == "hard"));
        assert!(s.current_training_set(&[pair(100, &all)]).is_err());
        assert_eq!(s.manifest()[0].set, Cue::Question);
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let mut a = CurriculumState::init(cfg(&[50, 100, 200], 0.25, 5), ids(10)).unwrap();
        a.on_epoch_end(0.0).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let mut b: CurriculumState = serde_json::from_str(&json).unwrap();
        assert_eq!(a, b);
        for _ in 0..12 {
            assert_eq!(a.on_epoch_end(0.0).unwrap(), b.on_epoch_end(0.0).unwrap());
            assert_eq!(a, b);
        }
    }

    fn mini_dataset() -> Dataset {
        let story = |id: &str, text: &str| Story {
            story_id: id.into(),
            tokens: crate::corpus::tokenize(text),
        };
        let words: String = (0..120).map(|i| format!("w{i} ")).collect();
        let ex = |id: &str, q: &str, a: &str| QaExample {
            example_id: id.into(),
            story_id: "s".into(),
            question_tokens: crate::corpus::tokenize(q),
            answers: [crate::corpus::tokenize(a), crate::corpus::tokenize(a)],
            split: Split::Train,
        };
        Dataset::new(
            vec![story("s", &words)],
            vec![ex("a", "w3 w4", "w90"), ex("b", "w100", "w7")],
            30,
        )
        .unwrap()
    }

    #[test]
    fn build_sets_cardinality() {
        let d = mini_dataset();
        let r = RetrievalConfig {
            max_context: 50,
            top_k: 100,
        };
        let pairs = build_sets(&d, d.examples.iter(), &r, &[50, 100], &Stopwords::default()).unwrap();
        assert_eq!(pairs.len(), 2);
        for p in &pairs {
            assert_eq!(p.easy.len(), 2);
            assert_eq!(p.hard.len(), 2);
            assert!(p.easy.values().chain(p.hard.values()).all(|w| w.chunk_size == p.chunk_size));
        }
        let single = build_sets(&d, d.examples.iter(), &r, &[50], &Stopwords::default()).unwrap();
        assert_eq!(single.len(), 1);
        // answer-cued window for "a" holds w90, question-cued holds w3
        let p = &single[0];
        assert!(p.easy["a"].tokens.contains(&"w90".to_string()));
        assert!(p.hard["a"].tokens.contains(&"w3".to_string()));
        assert!(!p.hard["a"].tokens.contains(&"w90".to_string()));
    }

    proptest! {
        #[test]
        fn trajectory_invariants(
            seed in 0u64..500,
            n in 1usize..60,
            delta in prop::sample::select(vec![0.05, 0.1, 0.2, 0.25, 0.5, 1.0]),
            scores in prop::collection::vec(0.0f64..1.0, 1..120),
        ) {
            let sizes = [50, 100, 200, 500];
            let run = || {
                let mut s = CurriculumState::init(cfg(&sizes, delta, seed), ids(n)).unwrap();
                let mut trace = vec![(s.active_k, s.swapped_ids.clone())];
                let mut used = vec![s.active_k];
                for &sc in &scores {
                    let before = s.clone();
                    let act = s.on_epoch_end(sc).unwrap();
                    assert!(s.swap_count <= s.swap_capacity());
                    assert!(!s.remaining_chunk_sizes.contains(&s.active_k));
                    match act {
                        Action::Advanced => {
                            assert!(s.swapped_ids.is_empty());
                            assert!(!before.may_swap());
                            assert!(!used.contains(&s.active_k));
                            used.push(s.active_k);
                        }
                        Action::Swapped => {
                            assert!(before.swapped_ids.is_subset(&s.swapped_ids));
                            assert_eq!(
                                s.swapped_ids.len(),
                                (s.swap_count * s.swap_quantum()).min(n)
                            );
                        }
                        _ => assert_eq!(before.swapped_ids, s.swapped_ids),
                    }
                    trace.push((s.active_k, s.swapped_ids.clone()));
                }
                trace
            };
            prop_assert_eq!(run(), run());
        }
    }
}
