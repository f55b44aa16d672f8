//! Introspective alignment: question-aware alignment of the context followed
//! by banded self-attention over the enhanced alignment features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AutogradError, Axis, Graph, ParamId, ParamStore, Unary, Var};
use crate::encoder::{BiLstm, BoundBiLstm};

/// Nonlinearity inside the shared projections `F` and `F_s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    /// No nonlinearity; used to test the score algebra directly.
    Identity,
}

/// Locality mask `|i - j| <= half_width` over `len` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandMask {
    pub len: usize,
    pub half_width: usize,
}

impl BandMask {
    pub fn new(len: usize, half_width: usize) -> Self {
        BandMask { len, half_width }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) <= self.half_width
    }

    /// Number of in-band pairs.
    pub fn count(&self) -> usize {
        (0..self.len)
            .map(|i| i.min(self.half_width) + 1 + (self.len - 1 - i).min(self.half_width))
            .sum()
    }

    /// Row-major `len x len` boolean mask.
    pub fn dense(&self) -> Vec<bool> {
        (0..self.len)
            .flat_map(|i| (0..self.len).map(move |j| (i, j)))
            .map(|(i, j)| self.contains(i, j))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IalConfig {
    /// Band half-width `b`.
    pub band: usize,
    /// Dense masked attention instead of the banded kernels.
    pub dense_attention: bool,
    /// Skip introspection and feed `[A; H^c]` straight to aggregation.
    pub ial_off: bool,
    /// Drop the subtraction and product blocks from `Z`.
    pub enhancement_off: bool,
    pub activation: Activation,
}

impl Default for IalConfig {
    fn default() -> Self {
        IalConfig {
            band: 200,
            dense_attention: false,
            ial_off: false,
            enhancement_off: false,
            activation: Activation::Relu,
        }
    }
}

impl IalConfig {
    /// Width of `Z` for encoder width `d`.
    pub fn feature_width(&self, d: usize) -> usize {
        if self.enhancement_off {
            2 * d
        } else {
            4 * d
        }
    }

    /// Width of the aggregation input.
    pub fn aggregate_input(&self, d: usize) -> usize {
        if self.ial_off {
            2 * d
        } else {
            2 * self.feature_width(d)
        }
    }
}

fn activate(graph: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => graph.map(Unary::Relu, x),
        Activation::Tanh => graph.map(Unary::Tanh, x),
        Activation::Identity => x,
    }
}

/// `act(x W + b)` applied row-wise.
pub fn project(graph: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var, AutogradError> {
    let xw = graph.matmul(x, w)?;
    let pre = graph.add_row_bias(xw, b)?;
    Ok(activate(graph, pre, act))
}

/// `E = F(H^c) F(H^q)^T`, given already projected rows.
pub fn affinity(graph: &mut Graph, fc: Var, fq: Var) -> Result<Var, AutogradError> {
    let t = graph.transpose(fq);
    graph.matmul(fc, t)
}

/// `A = softmax(E) H^q` with the softmax over unmasked question positions.
pub fn align(graph: &mut Graph, e: Var, hq: Var, q_mask: &[bool]) -> Result<Var, AutogradError> {
    let rows = graph.shape(e).rows;
    let mask: Vec<bool> = (0..rows).flat_map(|_| q_mask.iter().copied()).collect();
    let w = graph.masked_softmax(e, &mask)?;
    graph.matmul(w, hq)
}

/// `Z = [A; H^c; A - H^c; A * H^c]`, or `[A; H^c]` without enhancement.
pub fn enhance(graph: &mut Graph, a: Var, hc: Var, enhancement: bool) -> Result<Var, AutogradError> {
    if !enhancement {
        return graph.concat(&[a, hc], Axis::Cols);
    }
    let diff = graph.sub(a, hc)?;
    let prod = graph.hadamard(a, hc)?;
    graph.concat(&[a, hc, diff, prod], Axis::Cols)
}

/// Banded scores `G_ij = F_s(Z_i) . F_s(Z_j)` stored as `l x (2h+1)`.
pub fn introspective_scores(graph: &mut Graph, fz: Var, band: usize) -> Var {
    graph.band_scores(fz, band)
}

/// `B = softmax(G) Z` over the band, without forming an `l x l` matrix.
pub fn introspect(graph: &mut Graph, scores: Var, z: Var, band: usize) -> Result<Var, AutogradError> {
    let w = graph.band_softmax(scores, band);
    graph.band_apply(w, z, band)
}

/// Reference path: full score matrix with the band applied as a mask.
pub fn introspect_dense(graph: &mut Graph, fz: Var, z: Var, band: usize) -> Result<Var, AutogradError> {
    let len = graph.shape(z).rows;
    let t = graph.transpose(fz);
    let scores = graph.matmul(fz, t)?;
    let w = graph.masked_softmax(scores, &BandMask::new(len, band).dense())?;
    graph.matmul(w, z)
}

/// Unmasked full self-attention `softmax(F_s(Z) F_s(Z)^T) Z`.
pub fn self_attention(graph: &mut Graph, fz: Var, z: Var) -> Result<Var, AutogradError> {
    let t = graph.transpose(fz);
    let scores = graph.matmul(fz, t)?;
    let w = graph.softmax(scores)?;
    graph.matmul(w, z)
}

/// Parameters of `F`, `F_s` and the aggregation BiLSTM.
#[derive(Clone, Debug)]
pub struct IalParams {
    pub f_w: ParamId,
    pub f_b: ParamId,
    pub fs_w: ParamId,
    pub fs_b: ParamId,
    pub aggregate: BiLstm,
    pub d: usize,
    pub config: IalConfig,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundIal {
    pub f_w: Var,
    pub f_b: Var,
    pub fs_w: Var,
    pub fs_b: Var,
    pub aggregate: BoundBiLstm,
}

/// Intermediate tensors of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct IalOutput {
    pub affinity: Var,
    pub aligned: Var,
    pub features: Var,
    pub introspected: Option<Var>,
    /// `l_c x 2d`.
    pub y: Var,
}

impl IalParams {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, config: IalConfig, std: f64, rng: &mut R) -> Result<Self, AutogradError> {
        let zw = config.feature_width(d);
        Ok(IalParams {
            f_w: store.add_weight("ial.f.w", d, d, std, rng)?,
            f_b: store.add_bias("ial.f.b", d)?,
            fs_w: store.add_weight("ial.fs.w", zw, zw, std, rng)?,
            fs_b: store.add_bias("ial.fs.b", zw)?,
            aggregate: BiLstm::new(store, "ial.agg", config.aggregate_input(d), d, std, rng)?,
            d,
            config,
        })
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> BoundIal {
        BoundIal {
            f_w: graph.param(store, self.f_w),
            f_b: graph.param(store, self.f_b),
            fs_w: graph.param(store, self.fs_w),
            fs_b: graph.param(store, self.fs_b),
            aggregate: self.aggregate.bind(graph, store),
        }
    }
}

impl BoundIal {
    pub fn forward(
        &self,
        graph: &mut Graph,
        config: &IalConfig,
        hc: Var,
        c_mask: &[bool],
        hq: Var,
        q_mask: &[bool],
    ) -> Result<IalOutput, AutogradError> {
        let fc = project(graph, hc, self.f_w, self.f_b, config.activation)?;
        let fq = project(graph, hq, self.f_w, self.f_b, config.activation)?;
        let e = affinity(graph, fc, fq)?;
        let a = align(graph, e, hq, q_mask)?;
        if config.ial_off {
            let x = graph.concat(&[a, hc], Axis::Cols)?;
            return Ok(IalOutput {
                affinity: e,
                aligned: a,
                features: x,
                introspected: None,
                y: self.aggregate.run(graph, x, c_mask)?,
            });
        }
        let z = enhance(graph, a, hc, !config.enhancement_off)?;
        let fz = project(graph, z, self.fs_w, self.fs_b, config.activation)?;
        let len = graph.shape(z).rows;
        let b = if config.dense_attention {
            self_attention(graph, fz, z)?
        } else {
            let band = config.band.min(len);
            let g = introspective_scores(graph, fz, band);
            introspect(graph, g, z, band)?
        };
        let x = graph.concat(&[b, z], Axis::Cols)?;
        Ok(IalOutput {
            affinity: e,
            aligned: a,
            features: z,
            introspected: Some(b),
            y: self.aggregate.run(graph, x, c_mask)?,
        })
    }
}
