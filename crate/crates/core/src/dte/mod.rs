//! Attention machinery for the re-ranking encoder.
//!
//! Single-head scaled dot-product self-attention, a multi-head baseline, the
//! intention gate that turns a pooled list context into expert weights, the
//! expert bank whose mixed projections drive the dynamic attention, and the
//! encoder block built on top of it.

mod block;
mod cost;

use crate::error::{RaiseError, Result};
use crate::numerics::{glorot_from, madd, relu, relu_backward, softmax, softmax_rows, softmax_rows_backward};
use crate::numerics::{Matrix, Parameter, Parameterized, SeededRng};

pub use block::{encoder_block, EncoderBlock, LayerNorm};
pub(crate) use block::BlockCache;
pub use cost::{cost_report, format_cost_tsv, measured_cost, CostBreakdown, Mechanism};

#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    s: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Matrix,
    scale: f64,
}

#[cfg(test)]
impl AttentionCache {
    /// Row-stochastic attention weights.
    pub(crate) fn weights(&self) -> &Matrix {
        &self.probs
    }
}

fn check_projection(op: &'static str, s: &Matrix, w: &Matrix) -> Result<()> {
    if s.cols() != w.rows() {
        return Err(RaiseError::Dimension {
            op,
            left: s.shape(),
            right: w.shape(),
        });
    }
    Ok(())
}

pub(crate) fn attention_forward(s: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> (Matrix, AttentionCache) {
    let q = s.mul(wq);
    let k = s.mul(wk);
    let v = s.mul(wv);
    let scale = 1.0 / (wq.cols() as f64).sqrt();
    let probs = softmax_rows(&q.mul_t(&k).scale(scale));
    let out = probs.mul(&v);
    let cache = AttentionCache {
        s: s.clone(),
        q,
        k,
        v,
        probs,
        scale,
    };
    (out, cache)
}

/// Returns `(dS, dW_Q, dW_K, dW_V)`.
pub(crate) fn attention_backward(
    cache: &AttentionCache,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    dout: &Matrix,
) -> (Matrix, Matrix, Matrix, Matrix) {
    let dprobs = dout.mul_t(&cache.v);
    let dv = cache.probs.t_mul(dout);
    let dscores = softmax_rows_backward(&cache.probs, &dprobs).scale(cache.scale);
    let dq = dscores.mul(&cache.k);
    let dk = dscores.t_mul(&cache.q);
    let dwq = cache.s.t_mul(&dq);
    let dwk = cache.s.t_mul(&dk);
    let dwv = cache.s.t_mul(&dv);
    let mut ds = dq.mul_t(wq);
    ds.add_assign(&dk.mul_t(wk));
    ds.add_assign(&dv.mul_t(wv));
    (ds, dwq, dwk, dwv)
}

/// `softmax(S·W_Q·(S·W_K)ᵀ / √d_k) · S·W_V`, with `d_k` the width of `W_Q`.
pub fn self_attention(s: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> Result<Matrix> {
    check_projection("self_attention W_Q", s, wq)?;
    check_projection("self_attention W_K", s, wk)?;
    check_projection("self_attention W_V", s, wv)?;
    if wq.cols() != wk.cols() {
        return Err(RaiseError::Dimension {
            op: "self_attention W_Q/W_K",
            left: wq.shape(),
            right: wk.shape(),
        });
    }
    Ok(attention_forward(s, wq, wk, wv).0)
}

/// Multi-head baseline. `w_q`, `w_k`, `w_v` are `d × d`; head `i` uses
/// columns `i·d/h .. (i+1)·d/h`. `w_o` is `d × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticAttentionParams {
    pub w_q: Parameter,
    pub w_k: Parameter,
    pub w_v: Parameter,
    pub w_o: Parameter,
    pub heads: usize,
}

impl StaticAttentionParams {
    pub fn new(d: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        check_heads(d, heads)?;
        Ok(StaticAttentionParams {
            w_q: Parameter::new("mh.W_Q", glorot_from(d, d, rng)),
            w_k: Parameter::new("mh.W_K", glorot_from(d, d, rng)),
            w_v: Parameter::new("mh.W_V", glorot_from(d, d, rng)),
            w_o: Parameter::new("mh.W_O", glorot_from(d, d, rng)),
            heads,
        })
    }
}

pub(crate) fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(RaiseError::Config(format!("head count {heads} must divide d={d}")));
    }
    Ok(())
}

fn columns(m: &Matrix, start: usize, len: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), len);
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
    }
    out
}

pub fn multi_head(s: &Matrix, params: &StaticAttentionParams) -> Result<Matrix> {
    let d = params.w_q.value.rows();
    check_heads(d, params.heads)?;
    for w in [&params.w_q, &params.w_k, &params.w_v, &params.w_o] {
        if w.shape() != (d, d) {
            return Err(RaiseError::Dimension {
                op: "multi_head",
                left: (d, d),
                right: w.shape(),
            });
        }
    }
    let dk = d / params.heads;
    let mut concat: Option<Matrix> = None;
    for h in 0..params.heads {
        let head = self_attention(
            s,
            &columns(&params.w_q.value, h * dk, dk),
            &columns(&params.w_k.value, h * dk, dk),
            &columns(&params.w_v.value, h * dk, dk),
        )?;
        concat = Some(match concat {
            None => head,
            Some(c) => c.hconcat(&head),
        });
    }
    Ok(concat.unwrap().mul(&params.w_o.value))
}

/// `t` experts, each a `(W_Q, W_K, W_V)` triple of `d × d` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank {
    pub queries: Vec<Parameter>,
    pub keys: Vec<Parameter>,
    pub values: Vec<Parameter>,
}

impl ExpertBank {
    pub fn new(prefix: &str, t: usize, d: usize, rng: &mut SeededRng) -> Self {
        let mut queries = Vec::with_capacity(t);
        let mut keys = Vec::with_capacity(t);
        let mut values = Vec::with_capacity(t);
        for e in 0..t {
            queries.push(Parameter::new(format!("{prefix}.W_Q.{e}"), glorot_from(d, d, rng)));
            keys.push(Parameter::new(format!("{prefix}.W_K.{e}"), glorot_from(d, d, rng)));
            values.push(Parameter::new(format!("{prefix}.W_V.{e}"), glorot_from(d, d, rng)));
        }
        ExpertBank { queries, keys, values }
    }

    pub fn from_matrices(prefix: &str, q: Vec<Matrix>, k: Vec<Matrix>, v: Vec<Matrix>) -> Result<Self> {
        if q.is_empty() || q.len() != k.len() || q.len() != v.len() {
            return Err(RaiseError::Config(format!(
                "expert bank needs equal, non-zero expert counts (got {}, {}, {})",
                q.len(),
                k.len(),
                v.len()
            )));
        }
        let d = q[0].rows();
        for m in q.iter().chain(&k).chain(&v) {
            if m.shape() != (d, d) {
                return Err(RaiseError::Dimension {
                    op: "ExpertBank",
                    left: (d, d),
                    right: m.shape(),
                });
            }
        }
        let wrap = |kind: &str, ms: Vec<Matrix>| -> Vec<Parameter> {
            ms.into_iter()
                .enumerate()
                .map(|(e, m)| Parameter::new(format!("{prefix}.{kind}.{e}"), m))
                .collect()
        };
        Ok(ExpertBank {
            queries: wrap("W_Q", q),
            keys: wrap("W_K", k),
            values: wrap("W_V", v),
        })
    }

    pub fn t(&self) -> usize {
        self.queries.len()
    }

    pub fn dim(&self) -> usize {
        self.queries[0].value.rows()
    }
}

impl Parameterized for ExpertBank {
    fn params(&self) -> Vec<&Parameter> {
        self.queries.iter().chain(&self.keys).chain(&self.values).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.queries
            .iter_mut()
            .chain(self.keys.iter_mut())
            .chain(self.values.iter_mut())
            .collect()
    }
}

fn weighted_sum(a: &[f64], experts: &[Parameter]) -> Matrix {
    let (r, c) = experts[0].shape();
    let mut out = Matrix::zeros(r, c);
    for (w, e) in a.iter().zip(experts) {
        for (o, x) in out.as_mut_slice().iter_mut().zip(e.value.as_slice()) {
            *o += w * x;
        }
    }
    madd::record((a.len() * r * c) as u64);
    out
}

/// `Σ_t a_t·W_t` for queries, keys and values, one pass per matrix.
pub fn mix_experts(a: &[f64], bank: &ExpertBank) -> Result<(Matrix, Matrix, Matrix)> {
    if a.len() != bank.t() {
        return Err(RaiseError::Dimension {
            op: "mix_experts",
            left: (1, a.len()),
            right: (bank.t(), bank.dim()),
        });
    }
    Ok((
        weighted_sum(a, &bank.queries),
        weighted_sum(a, &bank.keys),
        weighted_sum(a, &bank.values),
    ))
}

/// Accumulates expert gradients for mixed-weight gradients and returns `∂/∂a`.
pub(crate) fn mix_experts_backward(a: &[f64], bank: &mut ExpertBank, dq: &Matrix, dk: &Matrix, dv: &Matrix) -> Vec<f64> {
    let mut da = vec![0.0; a.len()];
    for (e, &w) in a.iter().enumerate() {
        for (experts, g) in [(&mut bank.queries, dq), (&mut bank.keys, dk), (&mut bank.values, dv)] {
            experts[e].grad.axpy(w, g);
            da[e] += experts[e].value.frobenius_dot(g);
        }
    }
    da
}

/// Single-head attention with projections mixed from the bank by `a`.
pub fn dynamic_self_attention(s: &Matrix, a: &[f64], bank: &ExpertBank) -> Result<Matrix> {
    let (wq, wk, wv) = mix_experts(a, bank)?;
    self_attention(s, &wq, &wk, &wv)
}

/// `a = softmax(W_A·e + b_A)`, `e = ReLU(W_E·(p̄ ⊙ q̄) + b_E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentionGate {
    /// d×d
    pub w_e: Parameter,
    /// 1×d
    pub b_e: Parameter,
    /// t×d
    pub w_a: Parameter,
    /// 1×t
    pub b_a: Parameter,
}

#[derive(Clone, Debug)]
pub(crate) struct GateCache {
    x: Matrix,
    pre: Matrix,
    e: Matrix,
    pub(crate) a: Vec<f64>,
}

impl IntentionGate {
    pub fn new(prefix: &str, d: usize, t: usize, rng: &mut SeededRng) -> Self {
        IntentionGate {
            w_e: Parameter::new(format!("{prefix}.W_E"), glorot_from(d, d, rng)),
            b_e: Parameter::zeros(format!("{prefix}.b_E"), 1, d),
            w_a: Parameter::new(format!("{prefix}.W_A"), glorot_from(t, d, rng)),
            b_a: Parameter::zeros(format!("{prefix}.b_A"), 1, t),
        }
    }

    pub fn t(&self) -> usize {
        self.w_a.value.rows()
    }

    pub(crate) fn forward_cached(&self, p_bar: &[f64], q_bar: &[f64]) -> GateCache {
        let x: Vec<f64> = p_bar.iter().zip(q_bar).map(|(p, q)| p * q).collect();
        let x = Matrix::row_vector(&x);
        let pre = x.mul_t(&self.w_e.value).add_row_broadcast(self.b_e.value.as_slice());
        let e = relu(&pre);
        let z = e.mul_t(&self.w_a.value).add_row_broadcast(self.b_a.value.as_slice());
        let a = softmax(z.as_slice());
        GateCache { x, pre, e, a }
    }

    /// Accumulates gate gradients; returns `(∂/∂p̄, ∂/∂q̄)`.
    pub(crate) fn backward(&mut self, cache: &GateCache, da: &[f64], p_bar: &[f64], q_bar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let inner: f64 = cache.a.iter().zip(da).map(|(a, g)| a * g).sum();
        let dz: Vec<f64> = cache.a.iter().zip(da).map(|(a, g)| a * (g - inner)).collect();
        let dz = Matrix::row_vector(&dz);
        self.w_a.grad.add_assign(&dz.t_mul(&cache.e));
        self.b_a.grad.add_assign(&dz);
        let de = dz.mul(&self.w_a.value);
        let dpre = relu_backward(&cache.pre, &de);
        self.w_e.grad.add_assign(&dpre.t_mul(&cache.x));
        self.b_e.grad.add_assign(&dpre);
        let dx = dpre.mul(&self.w_e.value);
        let dp = dx.as_slice().iter().zip(q_bar).map(|(g, q)| g * q).collect();
        let dq = dx.as_slice().iter().zip(p_bar).map(|(g, p)| g * p).collect();
        (dp, dq)
    }
}

impl Parameterized for IntentionGate {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w_e, &self.b_e, &self.w_a, &self.b_a]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_e, &mut self.b_e, &mut self.w_a, &mut self.b_a]
    }
}

pub fn intention_gate(gate: &IntentionGate, p_bar: &[f64], q_bar: &[f64]) -> Result<Vec<f64>> {
    let d = gate.w_e.value.rows();
    if p_bar.len() != d || q_bar.len() != d || gate.w_a.value.cols() != d {
        return Err(RaiseError::Dimension {
            op: "intention_gate",
            left: (p_bar.len(), q_bar.len()),
            right: gate.w_e.shape(),
        });
    }
    Ok(gate.forward_cached(p_bar, q_bar).a)
}
