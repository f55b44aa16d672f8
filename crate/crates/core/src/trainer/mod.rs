//! Teacher-forced training with Adadelta under the curriculum scheduler.

mod adadelta;
mod config;
mod eval;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Graph};
use crate::corpus::{build_vocab, CorpusError, Dataset, QaExample, Split, Stopwords, Vocab};
use crate::curriculum::{build_sets, Action, CurriculumError, CurriculumState, SetPair};
use crate::encoder::EmbeddingFileError;
use crate::metrics::{MetricError, MetricReport};
use crate::model::{Model, ModelError};
use crate::retrieval::RetrievalError;

pub use adadelta::{Adadelta, OptimizerError, EPSILON, RHO};
pub use config::{Ablation, DevMetric, TrainConfig};
pub use eval::{
    evaluate, exact_match, question_windows, reference_map, Evaluation, InferenceInput, Prediction, Question,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("embeddings: {0}")]
    Embeddings(#[from] EmbeddingFileError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite loss {value} at epoch {epoch} on example `{example_id}`")]
    NonFinite { epoch: usize, example_id: String, value: f64 },
}

impl TrainError {
    /// 2 for usage/config problems, 4 for numeric failures, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) => 2,
            TrainError::NonFinite { .. } | TrainError::Autograd(_) => 4,
            TrainError::Model(ModelError::Config(_)) => 2,
            _ => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            4 => "numeric",
            _ => "data",
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example objective: NLL plus the L2 term.
    pub loss: f64,
    pub dev: MetricReport,
    pub dev_score: f64,
    pub action: Action,
    /// Chunk size trained on this epoch.
    pub trained_chunk_size: usize,
    /// Chunk size after the curriculum acted.
    pub active_k: usize,
    pub swap_count: usize,
    pub hard_fraction: f64,
    pub examples: usize,
}

/// Generation vocabulary under the configured story threshold.
pub fn generation_vocab(dataset: &Dataset, config: &TrainConfig) -> Result<Vocab, CorpusError> {
    if !config.vocab_from_answers {
        return build_vocab(&dataset.stories, config.min_stories);
    }
    let mut docs: BTreeMap<&str, Vec<&String>> =
        dataset.stories.iter().map(|s| (s.story_id.as_str(), s.tokens.iter().collect())).collect();
    for ex in dataset.split(Split::Train) {
        if let Some(doc) = docs.get_mut(ex.story_id.as_str()) {
            doc.extend(ex.answers.iter().flatten());
        }
    }
    Vocab::from_documents(docs.into_values(), config.min_stories)
}

const TRAINER_STATE: &str = "trainer.json";
const OPTIMIZER_FILE: &str = "optimizer.bin";
const CURRICULUM_FILE: &str = "curriculum.json";
const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Serialize, Deserialize)]
struct TrainerState {
    epoch: usize,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adadelta,
    pub curriculum: CurriculumState,
    pub epoch: usize,
    dataset: Dataset,
    stopwords: Stopwords,
    set_pairs: Vec<SetPair>,
    train: HashMap<String, QaExample>,
    dev_questions: Vec<Question>,
    dev_windows: HashMap<usize, Vec<InferenceInput>>,
    references: HashMap<String, Vec<String>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: &Dataset, stopwords: Stopwords) -> Result<Self, TrainError> {
        config.validate()?;
        let train: HashMap<String, QaExample> =
            dataset.split(Split::Train).map(|e| (e.example_id.clone(), e.clone())).collect();
        if train.is_empty() {
            return Err(TrainError::Data("no training examples".into()));
        }
        let dev: Vec<&QaExample> = dataset.split(Split::Dev).collect();
        if dev.is_empty() {
            return Err(TrainError::Data("no dev examples".into()));
        }
        let input_vocab = dataset.input_vocab()?;
        let gen_vocab = generation_vocab(dataset, &config)?;
        let mut model = Model::new(config.model_config(), input_vocab, gen_vocab, config.seed)?;
        if let Some(path) = &config.embeddings {
            let file = File::open(path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
            let table = model.arch.embedding.clone();
            table.load_text_vectors(&mut model.store, &model.arch.input_vocab, BufReader::new(file))?;
        }
        let set_pairs = build_sets(
            dataset,
            dataset.split(Split::Train).collect::<Vec<_>>().into_iter(),
            &config.retrieval_config(),
            &config.chunk_sizes,
            &stopwords,
        )?;
        let curriculum = CurriculumState::init(config.curriculum_config(), train.keys().cloned())?;
        let optimizer = Adadelta::new(&model.store, config.learning_rate);
        Ok(Trainer {
            dev_questions: dev.iter().map(|e| Question::from(*e)).collect(),
            references: reference_map(dev.iter().copied()),
            config,
            model,
            optimizer,
            curriculum,
            epoch: 0,
            dataset: dataset.clone(),
            stopwords,
            set_pairs,
            train,
            dev_windows: HashMap::new(),
        })
    }

    /// Restores model, optimizer, curriculum and epoch from a checkpoint
    /// directory written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, dataset: &Dataset, stopwords: Stopwords, dir: &Path) -> Result<Self, TrainError> {
        let mut t = Trainer::new(config, dataset, stopwords)?;
        t.model = Model::load(dir)?;
        t.optimizer = Adadelta::load(
            BufReader::new(File::open(dir.join(OPTIMIZER_FILE))?),
            &t.model.store,
            t.config.learning_rate,
        )?;
        t.curriculum = serde_json::from_reader(BufReader::new(File::open(dir.join(CURRICULUM_FILE))?))?;
        let state: TrainerState = serde_json::from_reader(BufReader::new(File::open(dir.join(TRAINER_STATE))?))?;
        t.epoch = state.epoch;
        Ok(t)
    }

    pub fn set_pairs(&self) -> &[SetPair] {
        &self.set_pairs
    }

    pub fn references(&self) -> &HashMap<String, Vec<String>> {
        &self.references
    }

    /// One pass over the current curriculum training set in a seeded
    /// order. Returns the mean objective and the number of examples used.
    pub fn train_epoch(&mut self) -> Result<(f64, usize), TrainError> {
        let epoch = self.epoch + 1;
        let set = self.curriculum.current_training_set(&self.set_pairs)?;
        let mut order: Vec<(&String, &&crate::retrieval::ContextWindow)> = set.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add((epoch as u64).wrapping_mul(0x9e37_79b9)));
        order.shuffle(&mut rng);
        let prepared: Vec<_> = order
            .iter()
            .filter_map(|(id, window)| {
                let ex = &self.train[*id];
                self.model.arch.prepare(
                    id,
                    &window.tokens,
                    &ex.question_tokens,
                    &ex.answers,
                    &self.stopwords,
                    self.config.max_answer_len,
                )
            })
            .collect();
        self.model.store.zero_grads();
        let mut total = 0.0;
        let mut pending = 0;
        for ex in &prepared {
            let mut graph = Graph::new();
            let pass = self.model.arch.teacher_forced(&mut graph, &self.model.store, ex)?;
            let nll = graph.value(pass.loss).item();
            let value = nll + self.config.l2 * self.model.store.l2_norm_sq();
            if !value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    example_id: ex.example_id.clone(),
                    value,
                });
            }
            total += value;
            graph.backward(pass.loss)?;
            graph.accumulate_param_grads(&mut self.model.store);
            pending += 1;
            if pending == self.config.accumulate {
                self.apply_update(pending)?;
                pending = 0;
            }
        }
        if pending > 0 {
            self.apply_update(pending)?;
        }
        let n = prepared.len();
        Ok((if n == 0 { 0.0 } else { total / n as f64 }, n))
    }

    fn apply_update(&mut self, batch: usize) -> Result<(), TrainError> {
        let scale = 1.0 / batch as f64;
        let l2 = self.config.l2;
        for p in self.model.store.iter_mut().filter(|p| p.trainable) {
            let decay = if p.decay { 2.0 * l2 } else { 0.0 };
            let grad = p.grad.data_mut();
            for (g, &w) in grad.iter_mut().zip(p.value.data()) {
                *g = *g * scale + decay * w;
            }
        }
        self.optimizer.step(&mut self.model.store)?;
        self.model.store.zero_grads();
        Ok(())
    }

    /// Question-cued dev inputs at chunk size `k`.
    pub fn dev_inputs(&mut self, k: usize) -> Result<&[InferenceInput], TrainError> {
        if !self.dev_windows.contains_key(&k) {
            let w = question_windows(
                &self.dataset,
                &self.dev_questions,
                &self.config.retrieval_config(),
                k,
                &self.stopwords,
            )?;
            self.dev_windows.insert(k, w);
        }
        Ok(&self.dev_windows[&k])
    }

    /// Greedy decoding of the dev split at the active chunk size.
    pub fn evaluate_dev(&mut self) -> Result<Evaluation, TrainError> {
        let k = self.curriculum.active_k;
        self.dev_inputs(k)?;
        evaluate(&self.model, &self.dev_windows[&k], &self.references, self.config.max_answer_len)
    }

    fn score(&self, report: &MetricReport) -> f64 {
        match self.config.dev_metric {
            DevMetric::Bleu1 => report.bleu1,
            DevMetric::Bleu4 => report.bleu4,
            DevMetric::RougeL => report.rouge_l,
        }
    }

    /// Train, evaluate, and let the curriculum react.
    pub fn step(&mut self) -> Result<(EpochLog, Evaluation), TrainError> {
        let trained_chunk_size = self.curriculum.active_k;
        let (loss, examples) = self.train_epoch()?;
        self.epoch += 1;
        let eval = self.evaluate_dev()?;
        let dev_score = self.score(&eval.report);
        let action = self.curriculum.on_epoch_end(dev_score)?;
        let log = EpochLog {
            epoch: self.epoch,
            loss,
            dev: eval.report.clone(),
            dev_score,
            action,
            trained_chunk_size,
            active_k: self.curriculum.active_k,
            swap_count: self.curriculum.swap_count,
            hard_fraction: self.curriculum.hard_fraction(),
            examples,
        };
        Ok((log, eval))
    }

    /// Writes model, optimizer state, curriculum state and manifest.
    pub fn checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        self.model.save(dir)?;
        self.optimizer
            .save(BufWriter::new(File::create(dir.join(OPTIMIZER_FILE))?), &self.model.store)?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(CURRICULUM_FILE))?), &self.curriculum)?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST_FILE))?), &self.curriculum.manifest())?;
        serde_json::to_writer(File::create(dir.join(TRAINER_STATE))?, &TrainerState { epoch: self.epoch })?;
        Ok(())
    }

    pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
        out.join("checkpoints").join(format!("epoch-{epoch:04}"))
    }

    /// Runs the remaining configured epochs. With `out`, writes the config,
    /// an initial checkpoint, one checkpoint per epoch and the JSON-lines
    /// log.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<EpochLog>, TrainError> {
        let mut log_file = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(CONFIG_FILE), self.config.to_toml())?;
                if self.epoch == 0 {
                    self.checkpoint(&Self::checkpoint_dir(dir, 0))?;
                }
                Some(BufWriter::new(
                    fs::OpenOptions::new()
                        .create(true)
                        .append(self.epoch > 0)
                        .write(true)
                        .truncate(self.epoch == 0)
                        .open(dir.join(LOG_FILE))?,
                ))
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let (log, _) = self.step()?;
            if let (Some(dir), Some(f)) = (out, log_file.as_mut()) {
                serde_json::to_writer(&mut *f, &log)?;
                f.write_all(b"\n")?;
                f.flush()?;
                self.checkpoint(&Self::checkpoint_dir(dir, self.epoch))?;
            }
            logs.push(log);
        }
        Ok(logs)
    }
}
