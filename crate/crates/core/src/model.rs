//! The full reader: shared encoder, introspective alignment and the
//! pointer-generator decoder over one parameter store.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{grad_check, AutogradError, CheckpointError, DType, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::corpus::{build_gold_labels, GoldLabel, Stopwords, Vocab, BOS, PAD};
use crate::decoder::{choose, step_loss, BoundDecoder, Choice, DecodeContext, DecoderParams, DecoderState};
use crate::encoder::{embed, BiLstm, EmbeddingTable};
use crate::ial::{Activation, IalConfig, IalParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty context or question")]
    EmptyInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder width; each BiLSTM direction has `d/2` units.
    pub d: usize,
    /// Decoder LSTM width.
    pub n: usize,
    /// Embedding width.
    pub e: usize,
    pub ial: IalConfig,
    /// Pin the switch to the pointer (no generation).
    pub pointer_only: bool,
    pub init_std: f64,
    pub embed_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            n: 256,
            e: 300,
            ial: IalConfig::default(),
            pointer_only: false,
            init_std: 0.1,
            embed_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(ModelError::Config(format!("d must be positive and even, got {}", self.d)));
        }
        if self.n == 0 || self.e == 0 {
            return Err(ModelError::Config("n and e must be positive".into()));
        }
        if !(self.init_std > 0.0 && self.embed_std > 0.0) {
            return Err(ModelError::Config("init std must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter handles, vocabularies and config; the values live in a
/// [`ParamStore`] kept alongside.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub embedding: EmbeddingTable,
    pub encoder: BiLstm,
    pub ial: IalParams,
    pub decoder: DecoderParams,
    pub input_vocab: Vocab,
    pub gen_vocab: Vocab,
}

/// One decoding target: gold labels plus the teacher-forced input ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub labels: Vec<GoldLabel>,
    /// Input-vocabulary id fed at each step (`BOS` first).
    pub inputs: Vec<usize>,
}

/// Context, question and targets resolved to ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub example_id: String,
    pub context: Vec<String>,
    pub context_ids: Vec<usize>,
    pub question_ids: Vec<usize>,
    pub targets: Vec<Target>,
}

/// Encoder side of one example, shared by every decoding target.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub decoder: BoundDecoder,
    pub context: DecodeContext,
    pub init: DecoderState,
    pub table: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub switch: f64,
    pub choice: Choice,
    pub token: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub steps: Vec<StepLog>,
}

/// Result of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct ForcedPass {
    /// Mean over targets of the per-target mean NLL.
    pub loss: Var,
    /// Switch values at counted steps.
    pub switches: Vec<f64>,
    /// Blended distributions per target and step.
    pub blended: Vec<Vec<Var>>,
}

impl Architecture {
    pub fn new(config: ModelConfig, input_vocab: Vocab, gen_vocab: Vocab, store: &mut ParamStore, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let embedding = EmbeddingTable::random(store, "embedding", input_vocab.size(), config.e, config.embed_std, &mut rng)?;
        let encoder = BiLstm::new(store, "enc", config.e, config.d / 2, std, &mut rng)?;
        let ial = IalParams::new(store, config.d, config.ial, std, &mut rng)?;
        let decoder = DecoderParams::new(store, 2 * config.d, config.d, config.e, config.n, gen_vocab.size(), std, &mut rng)?;
        Ok(Architecture {
            config,
            embedding,
            encoder,
            ial,
            decoder,
            input_vocab,
            gen_vocab,
        })
    }

    /// Gold targets for each answer: labels truncated to `max_answer_len`,
    /// then one PAD stop label if room remains. Targets without any counted
    /// label are dropped; `None` if nothing remains.
    pub fn prepare(
        &self,
        example_id: &str,
        context: &[String],
        question: &[String],
        answers: &[Vec<String>],
        stopwords: &Stopwords,
        max_answer_len: usize,
    ) -> Option<PreparedExample> {
        if context.is_empty() || question.is_empty() {
            return None;
        }
        let targets: Vec<Target> = answers
            .iter()
            .filter_map(|answer| {
                let mut labels = build_gold_labels(context, answer, &self.gen_vocab, stopwords, max_answer_len);
                if labels.len() < max_answer_len {
                    labels.push(GoldLabel::VocabIndex(PAD));
                }
                if self.config.pointer_only {
                    for l in &mut labels {
                        if matches!(l, GoldLabel::VocabIndex(_)) {
                            *l = GoldLabel::Ignored;
                        }
                    }
                }
                if labels.iter().all(|l| *l == GoldLabel::Ignored) {
                    return None;
                }
                let inputs = std::iter::once(BOS)
                    .chain(answer.iter().map(|t| self.input_vocab.id_or_unk(t)))
                    .take(labels.len())
                    .collect();
                Some(Target { labels, inputs })
            })
            .collect();
        if targets.is_empty() {
            return None;
        }
        Some(PreparedExample {
            example_id: example_id.to_string(),
            context: context.to_vec(),
            context_ids: self.input_vocab.encode(context),
            question_ids: self.input_vocab.encode(question),
            targets,
        })
    }

    pub fn encode(&self, graph: &mut Graph, store: &ParamStore, context_ids: &[usize], question_ids: &[usize]) -> Result<Encoded, ModelError> {
        if context_ids.is_empty() || question_ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let table = graph.param(store, self.embedding.id);
        let enc = self.encoder.bind(graph, store);
        let ctx = embed(graph, table, context_ids)?;
        let q = embed(graph, table, question_ids)?;
        let hc = enc.run(graph, ctx.value, &ctx.mask)?;
        let hq = enc.run(graph, q.value, &q.mask)?;
        let ial = self.ial.bind(graph, store);
        let out = ial.forward(graph, &self.config.ial, hc, &ctx.mask, hq, &q.mask)?;
        let decoder = self.decoder.bind(graph, store);
        let pooled = decoder.question_pool(graph, hq, &q.mask)?;
        let context = decoder.prepare(graph, out.y, &ctx.mask, pooled)?;
        let init = decoder.init_state(graph, out.y)?;
        Ok(Encoded {
            decoder,
            context,
            init,
            table,
        })
    }

    pub fn teacher_forced(&self, graph: &mut Graph, store: &ParamStore, ex: &PreparedExample) -> Result<ForcedPass, ModelError> {
        let enc = self.encode(graph, store, &ex.context_ids, &ex.question_ids)?;
        let ctx_len = ex.context_ids.len();
        let mut losses = Vec::with_capacity(ex.targets.len());
        let mut switches = Vec::new();
        let mut blended = Vec::new();
        for target in &ex.targets {
            let mut state = enc.init;
            let mut dists = Vec::with_capacity(target.labels.len());
            for (&input, &label) in target.inputs.iter().zip(&target.labels) {
                let prev = graph.embedding_lookup(enc.table, &[input])?;
                let out = enc.decoder.step(graph, &enc.context, state, prev, self.config.pointer_only)?;
                state = out.state;
                if label != GoldLabel::Ignored {
                    switches.push(graph.value(out.switch).item());
                }
                dists.push(out.blended);
            }
            losses.push(step_loss(graph, &dists, &target.labels, ctx_len)?);
            blended.push(dists);
        }
        let all = graph.concat(&losses, crate::autograd::Axis::Cols)?;
        let total = graph.sum(all);
        let loss = graph.affine(total, 1.0 / losses.len() as f64, 0.0);
        Ok(ForcedPass { loss, switches, blended })
    }

    /// Greedy decoding for up to `max_len` steps; stops at the first PAD.
    pub fn greedy_decode(&self, store: &ParamStore, context: &[String], question: &[String], max_len: usize) -> Result<Decoded, ModelError> {
        let mut graph = Graph::new();
        let ctx_ids = self.input_vocab.encode(context);
        let enc = self.encode(&mut graph, store, &ctx_ids, &self.input_vocab.encode(question))?;
        let mut state = enc.init;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut steps = Vec::new();
        for _ in 0..max_len {
            let emb = graph.embedding_lookup(enc.table, &[prev])?;
            let out = enc.decoder.step(&mut graph, &enc.context, state, emb, self.config.pointer_only)?;
            state = out.state;
            let choice = choose(graph.value(out.blended).data(), context.len());
            let token = match choice {
                Choice::Pointer(i) => context[i].clone(),
                Choice::Vocab(v) => self.gen_vocab.token(v).unwrap_or("<unk>").to_string(),
            };
            steps.push(StepLog {
                switch: graph.value(out.switch).item(),
                choice,
                token: token.clone(),
            });
            if choice == Choice::Vocab(PAD) {
                break;
            }
            prev = self.input_vocab.id_or_unk(&token);
            tokens.push(token);
        }
        Ok(Decoded { tokens, steps })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    input_vocab: Vocab,
    gen_vocab: Vocab,
}

const MODEL_FORMAT: &str = "ialcpg-model";
const MODEL_META: &str = "model.json";
const MODEL_PARAMS: &str = "params.bin";

/// Architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Architecture,
    pub store: ParamStore,
    pub seed: u64,
}

impl Model {
    pub fn new(config: ModelConfig, input_vocab: Vocab, gen_vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let arch = Architecture::new(config, input_vocab, gen_vocab, &mut store, seed)?;
        Ok(Model { arch, store, seed })
    }

    /// Writes `model.json` and `params.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            format: MODEL_FORMAT.into(),
            version: 1,
            config: self.arch.config.clone(),
            seed: self.seed,
            input_vocab: self.arch.input_vocab.clone(),
            gen_vocab: self.arch.gen_vocab.clone(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MODEL_META))?), &meta)?;
        self.store.save(BufWriter::new(File::create(dir.join(MODEL_PARAMS))?), DType::F64)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let meta: ModelMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(MODEL_META))?))?;
        if meta.format != MODEL_FORMAT || meta.version != 1 {
            return Err(ModelError::Config(format!("unsupported model file {} v{}", meta.format, meta.version)));
        }
        let mut model = Model::new(meta.config, meta.input_vocab, meta.gen_vocab, meta.seed)?;
        model.store.load_values(BufReader::new(File::open(dir.join(MODEL_PARAMS))?))?;
        Ok(model)
    }

    pub fn greedy_decode(&self, context: &[String], question: &[String], max_len: usize) -> Result<Decoded, ModelError> {
        self.arch.greedy_decode(&self.store, context, question, max_len)
    }

    /// Replaces the embedding matrix, keeping the PAD row at zero.
    pub fn set_embeddings(&mut self, mut table: Tensor) -> Result<(), ModelError> {
        let cur = self.store.value(self.arch.embedding.id).shape();
        if table.shape() != cur {
            return Err(ModelError::Config(format!("embedding shape {} != {}", table.shape(), cur)));
        }
        table.row_mut(PAD).fill(0.0);
        self.store.get_mut(self.arch.embedding.id).value = table;
        Ok(())
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Gradient-check scale model: d=4, n=6, e=4, |V_g|=9, band 2, tanh
/// projections.
pub fn micro_model(pointer_only: bool) -> Model {
    let words: Vec<String> = (0..14).map(|i| format!("w{i}")).collect();
    let input = Vocab::from_ordered(words.clone()).expect("distinct words");
    let gen = Vocab::from_ordered(words[..6].to_vec()).expect("distinct words");
    let config = ModelConfig {
        d: 4,
        n: 6,
        e: 4,
        ial: IalConfig {
            band: 2,
            activation: Activation::Tanh,
            ..Default::default()
        },
        pointer_only,
        init_std: 0.5,
        embed_std: 0.5,
    };
    Model::new(config, input, gen, 7).expect("micro config is valid")
}

/// 12-token context, 5-token question, two 3-step targets.
pub fn micro_example(arch: &Architecture) -> PreparedExample {
    let context: Vec<String> = (0..12).map(|i| format!("w{}", (i * 5) % 14)).collect();
    arch.prepare(
        "e",
        &context,
        &toks("w1 w2 w3 w4 w5"),
        &[toks("w5 w10"), toks("w3 w13 w0")],
        &Stopwords::parse("w3\n"),
        3,
    )
    .expect("micro example has counted labels")
}

/// Finite-difference check of the full teacher-forced loss of
/// [`micro_model`] on [`micro_example`].
pub fn micro_grad_check(eps: f64, tolerance: f64) -> Result<GradCheckReport, ModelError> {
    let mut m = micro_model(false);
    let ex = micro_example(&m.arch);
    let arch = m.arch.clone();
    let report = grad_check(
        |g, s| {
            arch.teacher_forced(g, s, &ex)
                .map(|p| p.loss)
                .map_err(|e| match e {
                    ModelError::Autograd(a) => a,
                    _ => AutogradError::InvalidArgument("model"),
                })
        },
        &mut m.store,
        eps,
        tolerance,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(arch: &Architecture) -> PreparedExample {
        micro_example(arch)
    }

    #[test]
    fn prepare_appends_stop_and_forces_inputs() {
        let m = micro_model(false);
        let ex = example(&m.arch);
        assert_eq!(ex.targets.len(), 2);
        let t = &ex.targets[0];
        assert_eq!(t.labels.len(), 3);
        assert_eq!(t.labels[2], GoldLabel::VocabIndex(PAD));
        assert_eq!(t.inputs, [BOS, m.arch.input_vocab.id("w5").unwrap(), m.arch.input_vocab.id("w10").unwrap()]);
        assert_eq!(ex.targets[1].labels.len(), 3);
        assert_eq!(ex.targets[1].labels[0], GoldLabel::ContextPosition(9));

        let p = micro_model(true);
        let ex = example(&p.arch);
        assert!(ex.targets.iter().flat_map(|t| &t.labels).all(|l| !matches!(l, GoldLabel::VocabIndex(_))));
    }

    #[test]
    fn composed_micro_model_gradcheck() {
        let report = micro_grad_check(1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.params.iter().map(|p| p.checked).sum::<usize>() > 100);
    }

    #[test]
    fn greedy_decode_follows_blended_argmax() {
        let m = micro_model(false);
        let context: Vec<String> = (0..12).map(|i| format!("w{}", (i * 5) % 14)).collect();
        let d = m.greedy_decode(&context, &toks("w1 w2"), 4).unwrap();
        assert!(d.steps.len() <= 4);
        for s in &d.steps {
            assert!(s.switch > 0.0 && s.switch < 1.0);
            match s.choice {
                Choice::Pointer(i) => assert_eq!(s.token, context[i]),
                Choice::Vocab(v) => assert_eq!(s.token, m.arch.gen_vocab.token(v).unwrap()),
            }
        }
        let stopped = d.steps.last().is_some_and(|s| s.choice == Choice::Vocab(PAD));
        assert_eq!(d.tokens.len(), d.steps.len() - usize::from(stopped));
    }

    #[test]
    fn pointer_only_emits_context_tokens() {
        let m = micro_model(true);
        let context: Vec<String> = (0..12).map(|i| format!("w{}", (i * 3) % 14)).collect();
        let d = m.greedy_decode(&context, &toks("w1"), 5).unwrap();
        assert_eq!(d.tokens.len(), 5);
        assert!(d.tokens.iter().all(|t| context.contains(t)));
        assert!(d.steps.iter().all(|s| s.switch == 1.0));
    }

    #[test]
    fn save_load_round_trip() {
        let m = micro_model(false);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back.store.to_named(), m.store.to_named());
        let context = toks("w1 w2 w3 w4");
        assert_eq!(
            back.greedy_decode(&context, &toks("w1"), 3).unwrap(),
            m.greedy_decode(&context, &toks("w1"), 3).unwrap()
        );
    }

    #[test]
    fn odd_width_rejected() {
        let v = Vocab::from_ordered(vec!["a".into()]).unwrap();
        let cfg = ModelConfig { d: 3, ..Default::default() };
        assert!(Model::new(cfg, v.clone(), v, 0).is_err());
    }
}
