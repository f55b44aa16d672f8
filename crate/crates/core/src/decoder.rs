//! Pointer-generator decoder: attention over the aggregated context with the
//! pooled question re-injected, a vocabulary softmax, and a scalar switch that
//! blends the two.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AutogradError, Axis, Graph, LstmCell, LstmParams, ParamId, ParamStore, Tensor, Var};
use crate::corpus::GoldLabel;

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub pool_v: ParamId,
    pub pool_out: ParamId,
    pub att_y: ParamId,
    pub att_b: ParamId,
    pub att_h: ParamId,
    pub att_v: ParamId,
    pub lstm: LstmParams,
    pub gen_w: ParamId,
    pub gen_b: ParamId,
    pub switch_c: ParamId,
    pub switch_h: ParamId,
    pub switch_y: ParamId,
    /// Width of the aggregated context rows.
    pub y_width: usize,
    pub q_width: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl DecoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        y_width: usize,
        q_width: usize,
        embed: usize,
        hidden: usize,
        vocab: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        let n = hidden;
        Ok(DecoderParams {
            init_w: store.add_weight("dec.init.w", y_width, n, std, rng)?,
            init_b: store.add_bias("dec.init.b", n)?,
            pool_w: store.add_weight("dec.qpool.w", q_width, n, std, rng)?,
            pool_b: store.add_bias("dec.qpool.b", n)?,
            pool_v: store.add_weight("dec.qpool.v", n, 1, std, rng)?,
            pool_out: store.add_weight("dec.qpool.out", q_width, n, std, rng)?,
            att_y: store.add_weight("dec.att.y", y_width, n, std, rng)?,
            att_b: store.add_bias("dec.att.b", n)?,
            att_h: store.add_weight("dec.att.h", n, n, std, rng)?,
            att_v: store.add_weight("dec.att.v", n, 1, std, rng)?,
            lstm: LstmParams::new(store, "dec.lstm", y_width + embed, n, std, rng)?,
            gen_w: store.add_weight("dec.gen.w", n, vocab, std, rng)?,
            gen_b: store.add_bias("dec.gen.b", vocab)?,
            switch_c: store.add_weight("dec.switch.c", n, 1, std, rng)?,
            switch_h: store.add_weight("dec.switch.h", n, 1, std, rng)?,
            switch_y: store.add_weight("dec.switch.y", y_width, 1, std, rng)?,
            y_width,
            q_width,
            hidden,
            vocab,
        })
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> BoundDecoder {
        let mut p = |id| graph.param(store, id);
        BoundDecoder {
            init_w: p(self.init_w),
            init_b: p(self.init_b),
            pool_w: p(self.pool_w),
            pool_b: p(self.pool_b),
            pool_v: p(self.pool_v),
            pool_out: p(self.pool_out),
            att_y: p(self.att_y),
            att_b: p(self.att_b),
            att_h: p(self.att_h),
            att_v: p(self.att_v),
            gen_w: p(self.gen_w),
            gen_b: p(self.gen_b),
            switch_c: p(self.switch_c),
            switch_h: p(self.switch_h),
            switch_y: p(self.switch_y),
            lstm: self.lstm.bind(graph, store),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDecoder {
    pub init_w: Var,
    pub init_b: Var,
    pub pool_w: Var,
    pub pool_b: Var,
    pub pool_v: Var,
    pub pool_out: Var,
    pub att_y: Var,
    pub att_b: Var,
    pub att_h: Var,
    pub att_v: Var,
    pub lstm: LstmCell,
    pub gen_w: Var,
    pub gen_b: Var,
    pub switch_c: Var,
    pub switch_h: Var,
    pub switch_y: Var,
}

/// `h_t`, `c_t` (each `1 x n`) and the step index.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub t: usize,
}

/// Per-example quantities shared by every decoding step.
#[derive(Clone, Debug)]
pub struct DecodeContext {
    pub y: Var,
    /// `Y W_a + b_a`.
    pub y_proj: Var,
    pub mask: Vec<bool>,
    /// Pooled question, `1 x n`.
    pub question: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// `1 x l_c` attention.
    pub attention: Var,
    /// `1 x 2d` attended context.
    pub context: Var,
    /// `1 x |V_g|` generation distribution.
    pub vocab: Var,
    /// `1 x 1` switch.
    pub switch: Var,
    /// `1 x (l_c + |V_g|)` blended distribution.
    pub blended: Var,
}

impl BoundDecoder {
    /// `h_0 = tanh(mean(Y) W + b)`, `c_0 = 0`.
    pub fn init_state(&self, graph: &mut Graph, y: Var) -> Result<DecoderState, AutogradError> {
        let pooled = graph.mean_pool(y, Axis::Rows)?;
        let proj = graph.matmul(pooled, self.init_w)?;
        let pre = graph.add_row_bias(proj, self.init_b)?;
        let h = graph.tanh(pre);
        let c = graph.constant(Tensor::zeros(1, self.lstm.hidden));
        Ok(DecoderState { h, c, t: 0 })
    }

    /// Attentive pooling `softmax(v^T tanh(W h_j + b))` over question rows,
    /// projected to `n` dimensions.
    pub fn question_pool(&self, graph: &mut Graph, hq: Var, mask: &[bool]) -> Result<Var, AutogradError> {
        let proj = graph.matmul(hq, self.pool_w)?;
        let pre = graph.add_row_bias(proj, self.pool_b)?;
        let act = graph.tanh(pre);
        let scores = graph.matmul(act, self.pool_v)?;
        let scores = graph.transpose(scores);
        let w = graph.masked_softmax(scores, mask)?;
        let pooled = graph.matmul(w, hq)?;
        graph.matmul(pooled, self.pool_out)
    }

    pub fn prepare(&self, graph: &mut Graph, y: Var, mask: &[bool], question: Var) -> Result<DecodeContext, AutogradError> {
        let proj = graph.matmul(y, self.att_y)?;
        let y_proj = graph.add_row_bias(proj, self.att_b)?;
        Ok(DecodeContext {
            y,
            y_proj,
            mask: mask.to_vec(),
            question,
        })
    }

    /// `a = softmax(w_a^T tanh(Y W_a + b_a + h W_h + q))`, `y_t = a Y`.
    pub fn attend(&self, graph: &mut Graph, ctx: &DecodeContext, h_prev: Var) -> Result<(Var, Var), AutogradError> {
        let hw = graph.matmul(h_prev, self.att_h)?;
        let pre = graph.add_row_bias(ctx.y_proj, hw)?;
        let pre = graph.add_row_bias(pre, ctx.question)?;
        let g = graph.tanh(pre);
        let scores = graph.matmul(g, self.att_v)?;
        let scores = graph.transpose(scores);
        let a = graph.masked_softmax(scores, &ctx.mask)?;
        let y_t = graph.matmul(a, ctx.y)?;
        Ok((a, y_t))
    }

    /// One LSTM step on `[y_t; emb(w_{t-1})]`.
    pub fn advance(&self, graph: &mut Graph, y_t: Var, prev_embedding: Var, state: DecoderState) -> Result<DecoderState, AutogradError> {
        let x = graph.concat(&[y_t, prev_embedding], Axis::Cols)?;
        let (h, c) = crate::autograd::lstm_cell(graph, &self.lstm, x, state.h, state.c)?;
        Ok(DecoderState { h, c, t: state.t + 1 })
    }

    /// `softmax(h W_v + b_v)`.
    pub fn generate(&self, graph: &mut Graph, h: Var) -> Result<Var, AutogradError> {
        let logits = graph.matmul(h, self.gen_w)?;
        let logits = graph.add_row_bias(logits, self.gen_b)?;
        graph.softmax(logits)
    }

    /// `sigmoid(c w_c + h w_h + y w_y)` without bias.
    pub fn switch(&self, graph: &mut Graph, c: Var, h: Var, y_t: Var) -> Result<Var, AutogradError> {
        let a = graph.matmul(c, self.switch_c)?;
        let b = graph.matmul(h, self.switch_h)?;
        let d = graph.matmul(y_t, self.switch_y)?;
        let s = graph.add(a, b)?;
        let s = graph.add(s, d)?;
        Ok(graph.sigmoid(s))
    }

    /// Full decoder step. With `pointer_only` the switch is pinned to 1 and
    /// the vocabulary block of the blend is zero.
    pub fn step(
        &self,
        graph: &mut Graph,
        ctx: &DecodeContext,
        state: DecoderState,
        prev_embedding: Var,
        pointer_only: bool,
    ) -> Result<StepOutput, AutogradError> {
        let (attention, context) = self.attend(graph, ctx, state.h)?;
        let next = self.advance(graph, context, prev_embedding, state)?;
        let vocab = self.generate(graph, next.h)?;
        let switch = if pointer_only {
            graph.constant(Tensor::scalar(1.0))
        } else {
            self.switch(graph, next.c, next.h, context)?
        };
        let blended = blend(graph, attention, vocab, switch)?;
        Ok(StepOutput {
            state: next,
            attention,
            context,
            vocab,
            switch,
            blended,
        })
    }
}

/// `[p a ; (1 - p) v]`.
pub fn blend(graph: &mut Graph, attention: Var, vocab: Var, switch: Var) -> Result<Var, AutogradError> {
    let pa = graph.scale_by(attention, switch)?;
    let q = graph.affine(switch, -1.0, 1.0);
    let qv = graph.scale_by(vocab, q)?;
    graph.concat(&[pa, qv], Axis::Cols)
}

/// Column of the blended distribution addressed by a gold label.
pub fn blended_index(label: GoldLabel, context_len: usize) -> Option<usize> {
    match label {
        GoldLabel::ContextPosition(i) => Some(i),
        GoldLabel::VocabIndex(v) => Some(context_len + v),
        GoldLabel::Ignored => None,
    }
}

/// Mean negative log-likelihood of the gold columns over steps whose label is
/// not ignored.
pub fn step_loss(graph: &mut Graph, blended: &[Var], gold: &[GoldLabel], context_len: usize) -> Result<Var, AutogradError> {
    if blended.len() != gold.len() {
        return Err(AutogradError::InvalidArgument("one distribution per gold label"));
    }
    let mut terms = Vec::new();
    for (&dist, &label) in blended.iter().zip(gold) {
        if let Some(col) = blended_index(label, context_len) {
            let p = graph.pick(dist, 0, col)?;
            terms.push(graph.ln(p));
        }
    }
    if terms.is_empty() {
        return Err(AutogradError::EmptyInput("every gold label is ignored"));
    }
    let n = terms.len() as f64;
    let all = graph.concat(&terms, Axis::Cols)?;
    let total = graph.sum(all);
    Ok(graph.affine(total, -1.0 / n, 0.0))
}

/// Which block of the blend a greedy choice came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "index", rename_all = "snake_case")]
pub enum Choice {
    Pointer(usize),
    Vocab(usize),
}

/// Argmax of a blended vector, first index on ties.
pub fn choose(blended: &[f64], context_len: usize) -> Choice {
    let mut best = 0;
    for (i, &v) in blended.iter().enumerate() {
        if v > blended[best] {
            best = i;
        }
    }
    if best < context_len {
        Choice::Pointer(best)
    } else {
        Choice::Vocab(best - context_len)
    }
}
