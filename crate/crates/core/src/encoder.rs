//! Frozen word embeddings and the shared BiLSTM encoder.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{AutogradError, Axis, Graph, LstmCell, LstmParams, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{Vocab, PAD};

/// Embedding matrix `|V| x e`, stored frozen. Row 0 (PAD) is zero.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Gaussian `N(0, std^2)` rows with a zero PAD row.
    pub fn random<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        let normal = Normal::new(0.0, std).map_err(|_| AutogradError::InvalidArgument("embedding std"))?;
        let mut t = Tensor::zeros(vocab_size, dim);
        for r in 1..vocab_size {
            for v in t.row_mut(r) {
                *v = normal.sample(rng);
            }
        }
        Self::from_tensor(store, name, t)
    }

    pub fn from_tensor(store: &mut ParamStore, name: &str, mut table: Tensor) -> Result<Self, AutogradError> {
        if table.rows() == 0 {
            return Err(AutogradError::EmptyInput("embedding table"));
        }
        table.row_mut(PAD).fill(0.0);
        let (vocab_size, dim) = (table.rows(), table.cols());
        let id = store.add(name, table, false, false)?;
        Ok(EmbeddingTable { id, vocab_size, dim })
    }

    /// Overwrites rows of tokens listed in a text vector file (`token v1 .. ve`
    /// per line). Returns how many vocabulary rows were replaced.
    pub fn load_text_vectors<R: BufRead>(
        &self,
        store: &mut ParamStore,
        vocab: &Vocab,
        reader: R,
    ) -> Result<usize, EmbeddingFileError> {
        let mut seen = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EmbeddingFileError::Io(e.to_string()))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| EmbeddingFileError::Parse { line: n + 1 })?;
            if values.len() != self.dim {
                return Err(EmbeddingFileError::Width {
                    line: n + 1,
                    expected: self.dim,
                    found: values.len(),
                });
            }
            if let Some(id) = vocab.id(token).filter(|&id| id != PAD) {
                seen.insert(id, values);
            }
        }
        let table = &mut store.get_mut(self.id).value;
        for (&id, values) in &seen {
            table.row_mut(id).copy_from_slice(values);
        }
        Ok(seen.len())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmbeddingFileError {
    #[error("embedding file: {0}")]
    Io(String),
    #[error("embedding file line {line}: not a number")]
    Parse { line: usize },
    #[error("embedding file line {line}: expected {expected} values, found {found}")]
    Width { line: usize, expected: usize, found: usize },
}

/// An `l x d` representation on a graph together with its length mask.
#[derive(Clone, Debug)]
pub struct SequenceRep {
    pub value: Var,
    /// `true` for real tokens, `false` for PAD.
    pub mask: Vec<bool>,
}

impl SequenceRep {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

pub fn embed(graph: &mut Graph, table: Var, ids: &[usize]) -> Result<SequenceRep, AutogradError> {
    if ids.is_empty() {
        return Err(AutogradError::EmptyInput("embed ids"));
    }
    Ok(SequenceRep {
        value: graph.embedding_lookup(table, ids)?,
        mask: ids.iter().map(|&i| i != PAD).collect(),
    })
}

/// Forward and backward LSTMs with independent weights.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundBiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden_per_direction: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(BiLstm {
            forward: LstmParams::new(store, &format!("{prefix}.fwd"), input, hidden_per_direction, std, rng)?,
            backward: LstmParams::new(store, &format!("{prefix}.bwd"), input, hidden_per_direction, std, rng)?,
        })
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> BoundBiLstm {
        BoundBiLstm {
            forward: self.forward.bind(graph, store),
            backward: self.backward.bind(graph, store),
        }
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.hidden
    }
}

impl BoundBiLstm {
    /// Runs both directions over the unmasked rows of `xs` and returns
    /// `l x 2h` with `[forward | backward]` per position and zero PAD rows.
    pub fn run(&self, graph: &mut Graph, xs: Var, mask: &[bool]) -> Result<Var, AutogradError> {
        let len = graph.shape(xs).rows;
        if mask.len() != len {
            return Err(AutogradError::ShapeMismatch {
                op: "bilstm",
                left: graph.shape(xs),
                right: crate::autograd::Shape::new(1, mask.len()),
            });
        }
        let keep: Vec<usize> = (0..len).filter(|&i| mask[i]).collect();
        let fwd = run_direction(graph, &self.forward, xs, keep.iter().copied(), len)?;
        let bwd = run_direction(graph, &self.backward, xs, keep.iter().rev().copied(), len)?;
        let width = self.forward.hidden + self.backward.hidden;
        let zero = graph.constant(Tensor::zeros(1, width));
        let mut rows = Vec::with_capacity(len);
        for i in 0..len {
            rows.push(match (fwd[i], bwd[i]) {
                (Some(f), Some(b)) => graph.concat(&[f, b], Axis::Cols)?,
                _ => zero,
            });
        }
        graph.concat(&rows, Axis::Rows)
    }
}

fn run_direction(
    graph: &mut Graph,
    cell: &LstmCell,
    xs: Var,
    order: impl Iterator<Item = usize>,
    len: usize,
) -> Result<Vec<Option<Var>>, AutogradError> {
    let proj = cell.project_inputs(graph, xs)?;
    let (mut h, mut c) = cell.zero_state(graph);
    let mut out = vec![None; len];
    for i in order {
        let x = graph.row(proj, i)?;
        (h, c) = cell.step_projected(graph, x, h, c)?;
        out[i] = Some(h);
    }
    Ok(out)
}
