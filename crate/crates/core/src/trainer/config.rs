use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curriculum::{ChunkOrder, CurriculumConfig, CurriculumMode, SwapBudget};
use crate::ial::{Activation, IalConfig};
use crate::model::ModelConfig;
use crate::retrieval::RetrievalConfig;

use super::TrainError;

/// Dev metric fed to the curriculum's failure test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    Bleu1,
    Bleu4,
    #[default]
    RougeL,
}

/// Every knob of a training run. Serialized as TOML; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub n: usize,
    pub e: usize,
    pub band: usize,
    pub chunk_sizes: Vec<usize>,
    pub delta: f64,
    pub max_context: usize,
    pub top_k: usize,
    pub max_answer_len: usize,
    pub max_question_len: usize,
    /// Generation-vocabulary story threshold.
    pub min_stories: usize,
    /// Count each training answer toward its story when building the
    /// generation vocabulary.
    pub vocab_from_answers: bool,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Examples per optimizer step.
    pub accumulate: usize,
    pub init_std: f64,
    pub embed_std: f64,
    pub activation: Activation,
    pub dev_metric: DevMetric,
    pub ial_off: bool,
    pub dense_attention: bool,
    pub enhancement_off: bool,
    pub pg_off: bool,
    pub curriculum_mode: CurriculumMode,
    pub chunk_order: ChunkOrder,
    pub swap_budget: SwapBudget,
    pub stopwords: Option<PathBuf>,
    /// Optional word-vector text file for the frozen embedding table.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 128,
            n: 256,
            e: 300,
            band: 200,
            chunk_sizes: vec![50, 100, 200, 500],
            delta: 0.05,
            max_context: 4000,
            top_k: 1000,
            max_answer_len: 8,
            max_question_len: 30,
            min_stories: 10,
            vocab_from_answers: false,
            learning_rate: 0.5,
            l2: 1e-6,
            epochs: 10,
            seed: 0,
            accumulate: 1,
            init_std: 0.1,
            embed_std: 0.1,
            activation: Activation::Relu,
            dev_metric: DevMetric::RougeL,
            ial_off: false,
            dense_attention: false,
            enhancement_off: false,
            pg_off: false,
            curriculum_mode: CurriculumMode::Full,
            chunk_order: ChunkOrder::Random,
            swap_budget: SwapBudget::Exhaustive,
            stopwords: None,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        TrainConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.d == 0 || self.d % 2 != 0 {
            return bad("d must be positive and even");
        }
        if self.n == 0 || self.e == 0 {
            return bad("n and e must be positive");
        }
        if self.chunk_sizes.is_empty() || self.chunk_sizes.contains(&0) {
            return bad("chunk_sizes must be non-empty and positive");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        if self.max_context == 0 || self.top_k == 0 {
            return bad("max_context and top_k must be positive");
        }
        if self.max_answer_len == 0 || self.max_question_len == 0 {
            return bad("answer and question lengths must be positive");
        }
        if self.min_stories == 0 {
            return bad("min_stories must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if self.accumulate == 0 {
            return bad("accumulate must be at least 1");
        }
        if !(self.init_std > 0.0 && self.embed_std > 0.0) {
            return bad("init stds must be positive");
        }
        Ok(())
    }

    /// Fields set outside the grids tuned for the full-scale model.
    pub fn off_grid(&self) -> Vec<String> {
        let mut out = Vec::new();
        if ![0.1, 0.2, 0.5].contains(&self.learning_rate) {
            out.push(format!("learning_rate {} not in {{0.1, 0.2, 0.5}}", self.learning_rate));
        }
        if ![1e-8, 1e-6, 1e-5].contains(&self.l2) {
            out.push(format!("l2 {} not in {{1e-8, 1e-6, 1e-5}}", self.l2));
        }
        if ![6, 8, 12].contains(&self.max_answer_len) {
            out.push(format!("max_answer_len {} not in {{6, 8, 12}}", self.max_answer_len));
        }
        if ![2000, 4000].contains(&self.max_context) {
            out.push(format!("max_context {} not in {{2000, 4000}}", self.max_context));
        }
        if self.chunk_sizes.iter().any(|k| ![50, 100, 200, 500].contains(k)) {
            out.push(format!("chunk_sizes {:?} outside {{50, 100, 200, 500}}", self.chunk_sizes));
        }
        out
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            n: self.n,
            e: self.e,
            ial: IalConfig {
                band: self.band,
                dense_attention: self.dense_attention,
                ial_off: self.ial_off,
                enhancement_off: self.enhancement_off,
                activation: self.activation,
            },
            pointer_only: self.pg_off,
            init_std: self.init_std,
            embed_std: self.embed_std,
        }
    }

    pub fn curriculum_config(&self) -> CurriculumConfig {
        CurriculumConfig {
            chunk_sizes: self.chunk_sizes.clone(),
            delta: self.delta,
            seed: self.seed,
            mode: self.curriculum_mode,
            order: self.chunk_order,
            budget: self.swap_budget,
        }
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            max_context: self.max_context,
            top_k: self.top_k,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        ablation.apply(&mut self);
        self
    }
}

/// Named ablation settings, one per reproducible row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoIal,
    DenseAttention,
    NoEnhancement,
    NoPg,
    NoUnderstandability,
    NoAnswerability,
    EasyOnly,
    HardOnly,
    Sizes50To200,
    Sizes50To500,
    Sizes100To50,
    Sizes500To200,
    Sizes500To50,
    Static50,
    Static500,
}

impl Ablation {
    pub const ALL: [Ablation; 16] = [
        Ablation::Full,
        Ablation::NoIal,
        Ablation::DenseAttention,
        Ablation::NoEnhancement,
        Ablation::NoPg,
        Ablation::NoUnderstandability,
        Ablation::NoAnswerability,
        Ablation::EasyOnly,
        Ablation::HardOnly,
        Ablation::Sizes50To200,
        Ablation::Sizes50To500,
        Ablation::Sizes100To50,
        Ablation::Sizes500To200,
        Ablation::Sizes500To50,
        Ablation::Static50,
        Ablation::Static500,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoIal => "no-ial",
            Ablation::DenseAttention => "dense-attention",
            Ablation::NoEnhancement => "no-enhancement",
            Ablation::NoPg => "no-pg",
            Ablation::NoUnderstandability => "no-understandability",
            Ablation::NoAnswerability => "no-answerability",
            Ablation::EasyOnly => "easy-only",
            Ablation::HardOnly => "hard-only",
            Ablation::Sizes50To200 => "sizes-50-100-200",
            Ablation::Sizes50To500 => "sizes-50-100-200-500",
            Ablation::Sizes100To50 => "sizes-100-200-500-50",
            Ablation::Sizes500To200 => "sizes-500-50-100-200",
            Ablation::Sizes500To50 => "sizes-500-200-100-50",
            Ablation::Static50 => "static-50",
            Ablation::Static500 => "static-500",
        }
    }

    /// Ablation-table row label.
    pub fn row(self) -> &'static str {
        match self {
            Ablation::Full => "full model",
            Ablation::NoIal => "(1) Remove IAL layer",
            Ablation::DenseAttention => "(2) Replace regular Self-Attention",
            Ablation::NoEnhancement => "(3) Remove Enhancement",
            Ablation::NoPg => "(4) Remove PG + CR",
            Ablation::NoUnderstandability => "(5) Remove CR (understandability)",
            Ablation::NoAnswerability => "(6) Remove CR (answerability)",
            Ablation::EasyOnly => "(7) Train Easy Only",
            Ablation::HardOnly => "(8) Train Hard Only",
            Ablation::Sizes50To200 => "(10) 50 -> 100 -> 200",
            Ablation::Sizes50To500 => "(11) 50 -> 100 -> 200 -> 500",
            Ablation::Sizes100To50 => "(12) 100 -> 200 -> 500 -> 50",
            Ablation::Sizes500To200 => "(13) 500 -> 50 -> 100 -> 200",
            Ablation::Sizes500To50 => "(14) 500 -> 200 -> 100 -> 50",
            Ablation::Static50 => "(15) 50 (static)",
            Ablation::Static500 => "(16) 500 (static)",
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        let fixed = |cfg: &mut TrainConfig, sizes: &[usize]| {
            cfg.chunk_sizes = sizes.to_vec();
            cfg.chunk_order = ChunkOrder::Fixed;
        };
        match self {
            Ablation::Full => {}
            Ablation::NoIal => cfg.ial_off = true,
            Ablation::DenseAttention => cfg.dense_attention = true,
            Ablation::NoEnhancement => cfg.enhancement_off = true,
            Ablation::NoPg => {
                cfg.pg_off = true;
                cfg.curriculum_mode = CurriculumMode::EasyOnly;
            }
            Ablation::NoUnderstandability => cfg.curriculum_mode = CurriculumMode::NoUnderstandability,
            Ablation::NoAnswerability => cfg.curriculum_mode = CurriculumMode::NoAnswerability,
            Ablation::EasyOnly => cfg.curriculum_mode = CurriculumMode::EasyOnly,
            Ablation::HardOnly => cfg.curriculum_mode = CurriculumMode::HardOnly,
            Ablation::Sizes50To200 => fixed(cfg, &[50, 100, 200]),
            Ablation::Sizes50To500 => fixed(cfg, &[50, 100, 200, 500]),
            Ablation::Sizes100To50 => fixed(cfg, &[100, 200, 500, 50]),
            Ablation::Sizes500To200 => fixed(cfg, &[500, 50, 100, 200]),
            Ablation::Sizes500To50 => fixed(cfg, &[500, 200, 100, 50]),
            Ablation::Static50 => fixed(cfg, &[50]),
            Ablation::Static500 => fixed(cfg, &[500]),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                format!("unknown ablation `{s}` (expected one of {})", names.join(", "))
            })
    }
}
