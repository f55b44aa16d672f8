use rand::Rng;

use super::{AutogradError, Graph, ParamId, ParamStore, Var};

/// Weights of one LSTM cell. Gate columns are laid out as
/// `[input | forget | output | candidate]`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self, AutogradError> {
        Ok(LstmParams {
            w_x: store.add_weight(format!("{prefix}.w_x"), input, 4 * hidden, std, rng)?,
            w_h: store.add_weight(format!("{prefix}.w_h"), hidden, 4 * hidden, std, rng)?,
            bias: store.add_bias(format!("{prefix}.b"), 4 * hidden)?,
            input,
            hidden,
        })
    }

    /// Places the weights on `graph` once so every step shares the same leaves.
    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> LstmCell {
        LstmCell {
            w_x: graph.param(store, self.w_x),
            w_h: graph.param(store, self.w_h),
            bias: graph.param(store, self.bias),
            input: self.input,
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Zero `1 x hidden` state.
    pub fn zero_state(&self, graph: &mut Graph) -> (Var, Var) {
        let z = super::Tensor::zeros(1, self.hidden);
        (graph.constant(z.clone()), graph.constant(z))
    }

    /// Projects a whole input sequence through `W_x` with one product so steps
    /// can slice their row.
    pub fn project_inputs(&self, graph: &mut Graph, xs: Var) -> Result<Var, AutogradError> {
        let xw = graph.matmul(xs, self.w_x)?;
        graph.add_row_bias(xw, self.bias)
    }

    /// One step given `x W_x + b` for this position.
    pub fn step_projected(&self, graph: &mut Graph, x_proj: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), AutogradError> {
        let n = self.hidden;
        let hw = graph.matmul(h_prev, self.w_h)?;
        let pre = graph.add(x_proj, hw)?;
        let i = graph.slice_cols(pre, 0, n)?;
        let f = graph.slice_cols(pre, n, n)?;
        let o = graph.slice_cols(pre, 2 * n, n)?;
        let cand = graph.slice_cols(pre, 3 * n, n)?;
        let i = graph.sigmoid(i);
        let f = graph.sigmoid(f);
        let o = graph.sigmoid(o);
        let cand = graph.tanh(cand);
        let keep = graph.hadamard(f, c_prev)?;
        let write = graph.hadamard(i, cand)?;
        let c = graph.add(keep, write)?;
        let tc = graph.tanh(c);
        let h = graph.hadamard(o, tc)?;
        Ok((h, c))
    }
}

/// Standard LSTM cell: sigmoid input/forget/output gates, tanh candidate.
/// `x` is `1 x input`, states are `1 x hidden`.
pub fn lstm_cell(graph: &mut Graph, cell: &LstmCell, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), AutogradError> {
    let xs = graph.shape(x);
    if xs.rows != 1 || xs.cols != cell.input {
        return Err(AutogradError::ShapeMismatch {
            op: "lstm_cell",
            left: xs,
            right: graph.shape(cell.w_x),
        });
    }
    let x_proj = cell.project_inputs(graph, x)?;
    cell.step_projected(graph, x_proj, h_prev, c_prev)
}
