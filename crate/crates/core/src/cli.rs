//! Command-line driver: `ialcpg <command> [flags]`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric. Failures print one
//! line `error[<category>]: <message>` on stderr.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{CorpusError, Dataset, Split, Stopwords};
use crate::curriculum::build_sets;
use crate::metrics::MetricReport;
use crate::model::{micro_grad_check, Model};
use crate::retrieval::{IndexFile, StoryIndex};
use crate::trainer::{
    evaluate, generation_vocab, question_windows, reference_map, Ablation, Prediction, Question, TrainConfig,
    TrainError, Trainer,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn line(&self) -> String {
        match self {
            CliError::Usage(m) => format!("error[usage]: {m}"),
            CliError::Data(m) => format!("error[data]: {m}"),
            CliError::Numeric(m) => format!("error[numeric]: {m}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let m = e.to_string();
        match e.exit_code() {
            2 => CliError::Usage(m),
            4 => CliError::Numeric(m),
            _ => CliError::Data(m),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "ialcpg", version, about = "Curriculum pointer-generator reader for long-narrative QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key overrides.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// TOML training config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use this single chunk size.
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    max_context: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    band: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Named ablation applied on top of the config.
    #[arg(long)]
    ablation: Option<Ablation>,
}

impl Overrides {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(a) = self.ablation {
            cfg = cfg.with_ablation(a);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.chunk_size {
            cfg.chunk_sizes = vec![v];
        }
        if let Some(v) = self.max_context {
            cfg.max_context = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.band {
            cfg.band = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus and write its vocabularies and a summary.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one TF-IDF index file per chunk size.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write easy/hard training windows and question-cued dev windows.
    MakeSets {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with the curriculum; writes checkpoints and a JSON-lines log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against references, or a model on a split.
    Evaluate {
        #[arg(long, requires = "gold", conflicts_with = "model")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[command(flatten)]
        overrides: Overrides,
        /// Also print the plain-text table on stderr.
        #[arg(long)]
        table: bool,
    },
    /// Greedy-decode a split to JSON-lines predictions.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[command(flatten)]
        overrides: Overrides,
        /// Output file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the composed model.
    Gradcheck {
        #[arg(long, default_value = "micro")]
        dims: String,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train and score one named ablation.
    Ablate {
        /// Print the available ablations and exit.
        #[arg(long)]
        list: bool,
        #[arg(long, required_unless_present = "list")]
        data: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, required_unless_present = "list")]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error[usage]: {first}");
            return 2;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.line());
            e.exit_code()
        }
    }
}

fn stopwords(cfg: &TrainConfig) -> Result<Stopwords, CliError> {
    match &cfg.stopwords {
        Some(p) => Stopwords::from_file(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => Ok(Stopwords::default()),
    }
}

fn load_data(path: &Path, cfg: &TrainConfig) -> Result<Dataset, CliError> {
    Ok(Dataset::load_with(path, cfg.max_question_len)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(data)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(data)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    stories: usize,
    train: usize,
    dev: usize,
    test: usize,
    input_vocab: usize,
    generation_vocab: usize,
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Ingest { data: path, overrides, out } => {
            let cfg = overrides.resolve()?;
            let dataset = load_data(&path, &cfg)?;
            let input = dataset.input_vocab()?;
            let gen = generation_vocab(&dataset, &cfg)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("input_vocab.json"), &input)?;
            write_json(&out.join("vocab.json"), &gen)?;
            let summary = Summary {
                stories: dataset.stories.len(),
                train: dataset.split(Split::Train).count(),
                dev: dataset.split(Split::Dev).count(),
                test: dataset.split(Split::Test).count(),
                input_vocab: input.size(),
                generation_vocab: gen.size(),
            };
            write_json(&out.join("summary.json"), &summary)?;
            print_json(stdout, &summary)
        }
        Command::Index { data: path, overrides, out } => {
            let cfg = overrides.resolve()?;
            let dataset = load_data(&path, &cfg)?;
            let stop = stopwords(&cfg)?;
            fs::create_dir_all(&out)?;
            for &k in &cfg.chunk_sizes {
                let indices = dataset
                    .stories
                    .iter()
                    .map(|s| StoryIndex::build(s, k, &stop).map(|i| i.index))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(data)?;
                let file = out.join(format!("index-{k}.json"));
                IndexFile::new(k, indices)
                    .write(BufWriter::new(File::create(&file)?))
                    .map_err(data)?;
                writeln!(stdout, "{}", file.display())?;
            }
            Ok(())
        }
        Command::MakeSets { data: path, overrides, out } => {
            let cfg = overrides.resolve()?;
            let dataset = load_data(&path, &cfg)?;
            let stop = stopwords(&cfg)?;
            let retrieval = cfg.retrieval_config();
            let train: Vec<_> = dataset.split(Split::Train).collect();
            let pairs = build_sets(&dataset, train.into_iter(), &retrieval, &cfg.chunk_sizes, &stop).map_err(data)?;
            let questions: Vec<Question> = dataset.split(Split::Dev).map(Question::from).collect();
            fs::create_dir_all(&out)?;
            for pair in &pairs {
                let k = pair.chunk_size;
                write_json(&out.join(format!("sets-{k}.json")), pair)?;
                let dev = question_windows(&dataset, &questions, &retrieval, k, &stop)?;
                write_json(&out.join(format!("dev-{k}.json")), &dev)?;
                writeln!(stdout, "chunk size {k}: {} train, {} dev", pair.easy.len(), dev.len())?;
            }
            Ok(())
        }
        Command::Train { data: path, overrides, out } => {
            let cfg = overrides.resolve()?;
            for note in cfg.off_grid() {
                writeln!(stderr, "note: {note}")?;
            }
            let dataset = load_data(&path, &cfg)?;
            let stop = stopwords(&cfg)?;
            let mut trainer = Trainer::new(cfg, &dataset, stop)?;
            let logs = trainer.run(Some(&out))?;
            match logs.last() {
                Some(last) => print_json(stdout, last),
                None => writeln!(stdout, "epochs = 0; wrote initial checkpoint").map_err(CliError::from),
            }
        }
        Command::Evaluate {
            pred,
            gold,
            model,
            data: path,
            split,
            overrides,
            table,
        } => {
            let report = match (pred, gold, model, path) {
                (Some(pred), Some(gold), None, _) => score_files(&pred, &gold)?,
                (None, _, Some(model), Some(path)) => {
                    let cfg = overrides.resolve()?;
                    let (preds, refs) = decode_split(&model, &path, split, &cfg)?;
                    let hyps: Vec<String> = preds.iter().map(|p| p.answer.clone()).collect();
                    let refs: Vec<Vec<String>> = preds.iter().map(|p| refs[&p.example_id].clone()).collect();
                    MetricReport::from_text(&hyps, &refs).map_err(data)?
                }
                _ => return Err(CliError::Usage("evaluate needs --pred and --gold, or --model and --data".into())),
            };
            if table {
                writeln!(stderr, "{report}")?;
            }
            print_json(stdout, &report)
        }
        Command::Decode {
            model,
            data: path,
            split,
            overrides,
            out,
        } => {
            let cfg = overrides.resolve()?;
            let (preds, _) = decode_split(&model, &path, split, &cfg)?;
            let mut sink: Box<dyn Write + '_> = match &out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(&mut *stdout),
            };
            for p in &preds {
                serde_json::to_writer(&mut sink, p).map_err(data)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
            Ok(())
        }
        Command::Gradcheck { dims, epsilon, tolerance } => {
            if dims != "micro" {
                return Err(CliError::Usage(format!("unknown --dims `{dims}` (only `micro`)")));
            }
            let report = micro_grad_check(epsilon, tolerance).map_err(|e| CliError::Numeric(e.to_string()))?;
            print_json(stdout, &report)?;
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Numeric(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_error()
                )))
            }
        }
        Command::Ablate {
            list,
            data: path,
            overrides,
            out,
        } => {
            if list {
                for a in Ablation::ALL {
                    writeln!(stdout, "{:<22} {}", a.name(), a.row())?;
                }
                return Ok(());
            }
            let (path, out) = (path.expect("required by clap"), out.expect("required by clap"));
            let ablation = overrides.ablation.unwrap_or(Ablation::Full);
            let cfg = overrides.resolve()?;
            let dataset = load_data(&path, &cfg)?;
            let stop = stopwords(&cfg)?;
            let mut trainer = Trainer::new(cfg, &dataset, stop)?;
            let logs = trainer.run(Some(&out))?;
            let dev = trainer.evaluate_dev()?;
            #[derive(Serialize)]
            struct AblationReport<'a> {
                ablation: &'a str,
                row: &'a str,
                epochs: usize,
                final_chunk_size: usize,
                dev: MetricReport,
            }
            let report = AblationReport {
                ablation: ablation.name(),
                row: ablation.row(),
                epochs: logs.len(),
                final_chunk_size: trainer.curriculum.active_k,
                dev: dev.report,
            };
            write_json(&out.join("report.json"), &report)?;
            print_json(stdout, &report)
        }
    }
}

fn decode_split(
    model_dir: &Path,
    path: &Path,
    split: Split,
    cfg: &TrainConfig,
) -> Result<(Vec<Prediction>, HashMap<String, Vec<String>>), CliError> {
    let model = Model::load(model_dir).map_err(|e| CliError::Data(format!("{}: {e}", model_dir.display())))?;
    let dataset = load_data(path, cfg)?;
    let stop = stopwords(cfg)?;
    let questions: Vec<Question> = dataset.split(split).map(Question::from).collect();
    let refs = reference_map(dataset.split(split));
    let k = cfg.chunk_sizes[0];
    let inputs = question_windows(&dataset, &questions, &cfg.retrieval_config(), k, &stop)?;
    let eval = evaluate(&model, &inputs, &refs, cfg.max_answer_len)?;
    Ok((eval.predictions, refs))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, serde_json::Value)>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Predictions are `{example_id, answer}` lines and are scored one by one.
/// References are any lines with `example_id` and an `answers` string array,
/// so a corpus file works as is (its story lines are skipped).
fn score_files(pred: &Path, gold: &Path) -> Result<MetricReport, CliError> {
    let mut refs: Vec<(String, Vec<String>)> = Vec::new();
    for (line, v) in read_lines(gold)? {
        if v.get("type").and_then(|t| t.as_str()) == Some("story") {
            continue;
        }
        let bad = || CliError::Data(format!("{}:{line}: expected example_id and answers", gold.display()));
        let id = v.get("example_id").and_then(|x| x.as_str()).ok_or_else(bad)?;
        let answers = v
            .get("answers")
            .and_then(|x| x.as_array())
            .ok_or_else(bad)?
            .iter()
            .map(|a| a.as_str().map(str::to_string).ok_or_else(bad))
            .collect::<Result<Vec<_>, _>>()?;
        refs.push((id.to_string(), answers));
    }
    let refs: HashMap<String, Vec<String>> = refs.into_iter().collect();
    let mut hyps = Vec::new();
    let mut references = Vec::new();
    for (line, v) in read_lines(pred)? {
        let p: Prediction = serde_json::from_value(v)
            .map_err(|e| CliError::Data(format!("{}:{line}: {e}", pred.display())))?;
        let r = refs
            .get(&p.example_id)
            .ok_or_else(|| CliError::Data(format!("prediction for unknown example `{}`", p.example_id)))?;
        hyps.push(p.answer);
        references.push(r.clone());
    }
    MetricReport::from_text(&hyps, &references).map_err(data)
}
