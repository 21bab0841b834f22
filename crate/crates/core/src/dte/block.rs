use crate::dte::{attention_backward, attention_forward, mix_experts, mix_experts_backward, AttentionCache, ExpertBank};
use crate::error::{RaiseError, Result};
use crate::numerics::{glorot_from, relu, relu_backward, Matrix, Parameter, Parameterized, SeededRng};

const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Debug)]
pub(crate) struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(prefix: &str, d: usize) -> Self {
        LayerNorm {
            gain: Parameter::new(format!("{prefix}.gain"), Matrix::filled(1, d, 1.0)),
            bias: Parameter::zeros(format!("{prefix}.bias"), 1, d),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> (Matrix, LnCache) {
        let d = x.cols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gain.value.as_slice(), self.bias.value.as_slice());
        for r in 0..y.rows() {
            for ((v, g), b) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * g + b;
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub(crate) fn backward(&mut self, cache: &LnCache, dy: &Matrix) -> Matrix {
        let d = dy.cols() as f64;
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        for r in 0..dy.rows() {
            let (xh, g_row) = (cache.xhat.row(r), dy.row(r));
            let dxhat: Vec<f64> = g_row.iter().zip(self.gain.value.as_slice()).map(|(a, g)| a * g).collect();
            for c in 0..dy.cols() {
                self.gain.grad.as_mut_slice()[c] += g_row[c] * xh[c];
                self.bias.grad.as_mut_slice()[c] += g_row[c];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = cache.inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
            }
        }
        dx
    }
}

/// Post-norm encoder block around a dynamic attention sublayer:
///
/// ```text
/// x1  = LN1(S + dropout(attention(S)))
/// out = LN2(x1 + dropout(relu(x1·W1 + b1)·W2 + b2))
/// ```
///
/// The expert bank driving the attention is held outside the block so that
/// several blocks can share one.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    /// d×4d
    pub ffn_w1: Parameter,
    pub ffn_b1: Parameter,
    /// 4d×d
    pub ffn_w2: Parameter,
    pub ffn_b2: Parameter,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    mixed: (Matrix, Matrix, Matrix),
    att: AttentionCache,
    drop1: Option<Matrix>,
    ln1: LnCache,
    x1: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
    drop2: Option<Matrix>,
    ln2: LnCache,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut SeededRng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = if rng.uniform() < rate { 0.0 } else { keep };
    }
    m
}

impl EncoderBlock {
    pub fn new(prefix: &str, d: usize, dropout_rate: f64, rng: &mut SeededRng) -> Self {
        EncoderBlock {
            ffn_w1: Parameter::new(format!("{prefix}.ffn.W1"), glorot_from(d, 4 * d, rng)),
            ffn_b1: Parameter::zeros(format!("{prefix}.ffn.b1"), 1, 4 * d),
            ffn_w2: Parameter::new(format!("{prefix}.ffn.W2"), glorot_from(4 * d, d, rng)),
            ffn_b2: Parameter::zeros(format!("{prefix}.ffn.b2"), 1, d),
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), d),
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), d),
            dropout_rate,
        }
    }

    pub fn dim(&self) -> usize {
        self.ffn_w1.value.rows()
    }

    pub(crate) fn forward_cached(
        &self,
        s: &Matrix,
        a: &[f64],
        bank: &ExpertBank,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<(Matrix, BlockCache)> {
        if s.cols() != self.dim() || bank.dim() != self.dim() {
            return Err(RaiseError::Dimension {
                op: "encoder_block",
                left: s.shape(),
                right: (bank.dim(), self.dim()),
            });
        }
        let mixed = mix_experts(a, bank)?;
        let (att, att_cache) = attention_forward(s, &mixed.0, &mixed.1, &mixed.2);
        let active = training && self.dropout_rate > 0.0;
        let drop1 = active.then(|| dropout_mask(s.rows(), s.cols(), self.dropout_rate, rng));
        let att = match &drop1 {
            Some(m) => att.hadamard(m),
            None => att,
        };
        let (x1, ln1) = self.ln1.forward_cached(&s.add(&att));
        let hidden_pre = x1.mul(&self.ffn_w1.value).add_row_broadcast(self.ffn_b1.value.as_slice());
        let hidden = relu(&hidden_pre);
        let f = hidden.mul(&self.ffn_w2.value).add_row_broadcast(self.ffn_b2.value.as_slice());
        let drop2 = active.then(|| dropout_mask(f.rows(), f.cols(), self.dropout_rate, rng));
        let f = match &drop2 {
            Some(m) => f.hadamard(m),
            None => f,
        };
        let (out, ln2) = self.ln2.forward_cached(&x1.add(&f));
        let cache = BlockCache {
            mixed,
            att: att_cache,
            drop1,
            ln1,
            x1,
            hidden_pre,
            hidden,
            drop2,
            ln2,
        };
        Ok((out, cache))
    }

    /// Accumulates block and bank gradients; returns `(∂/∂S, ∂/∂a)`.
    pub(crate) fn backward(&mut self, bank: &mut ExpertBank, a: &[f64], cache: &BlockCache, dout: &Matrix) -> (Matrix, Vec<f64>) {
        let dz2 = self.ln2.backward(&cache.ln2, dout);
        let df = match &cache.drop2 {
            Some(m) => dz2.hadamard(m),
            None => dz2.clone(),
        };
        self.ffn_w2.grad.add_assign(&cache.hidden.t_mul(&df));
        add_column_sums(&mut self.ffn_b2, &df);
        let dh = relu_backward(&cache.hidden_pre, &df.mul_t(&self.ffn_w2.value));
        self.ffn_w1.grad.add_assign(&cache.x1.t_mul(&dh));
        add_column_sums(&mut self.ffn_b1, &dh);
        let mut dx1 = dz2;
        dx1.add_assign(&dh.mul_t(&self.ffn_w1.value));

        let dz1 = self.ln1.backward(&cache.ln1, &dx1);
        let datt = match &cache.drop1 {
            Some(m) => dz1.hadamard(m),
            None => dz1.clone(),
        };
        let (wq, wk, wv) = &cache.mixed;
        let (ds_att, dwq, dwk, dwv) = attention_backward(&cache.att, wq, wk, wv, &datt);
        let da = mix_experts_backward(a, bank, &dwq, &dwk, &dwv);
        let mut ds = dz1;
        ds.add_assign(&ds_att);
        (ds, da)
    }
}

fn add_column_sums(p: &mut Parameter, g: &Matrix) {
    for (b, s) in p.grad.as_mut_slice().iter_mut().zip(g.column_sums()) {
        *b += s;
    }
}

impl Parameterized for EncoderBlock {
    fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln1.gain,
            &self.ln1.bias,
            &self.ln2.gain,
            &self.ln2.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.ln1.gain,
            &mut self.ln1.bias,
            &mut self.ln2.gain,
            &mut self.ln2.bias,
        ]
    }
}

/// One encoder block. Dropout masks are drawn from `rng` only when
/// `training` is set and the block's rate is positive.
pub fn encoder_block(
    s: &Matrix,
    a: &[f64],
    bank: &ExpertBank,
    block: &EncoderBlock,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    Ok(block.forward_cached(s, a, bank, training, rng)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dte::dynamic_self_attention;
    use crate::numerics::worst_gradient_error;

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        let mut m = Matrix::zeros(r, c);
        for v in m.as_mut_slice() {
            *v = rng.uniform_in(-1.0, 1.0);
        }
        m
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::new("ln", 4);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-5.0, 0.0, 5.0, 10.0]]).unwrap();
        let y = ln.forward(&x);
        for r in 0..2 {
            let mean = y.row(r).iter().sum::<f64>() / 4.0;
            let var = y.row(r).iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn matches_composition_of_public_ops() {
        let (d, n) = (4, 3);
        let mut rng = SeededRng::new(1);
        let bank = ExpertBank::new("b", 2, d, &mut rng);
        let mut block = EncoderBlock::new("blk", d, 0.0, &mut rng);
        block.ffn_b1.value = random(&mut rng, 1, 4 * d);
        block.ln2.gain.value = random(&mut rng, 1, d);
        let s = random(&mut rng, n, d);
        let a = [0.3, 0.7];
        let out = encoder_block(&s, &a, &bank, &block, false, &mut rng).unwrap();

        let x1 = block.ln1.forward(&s.add(&dynamic_self_attention(&s, &a, &bank).unwrap()));
        let h = relu(&x1.matmul(&block.ffn_w1.value).unwrap().add_row_broadcast(block.ffn_b1.value.as_slice()));
        let f = h.matmul(&block.ffn_w2.value).unwrap().add_row_broadcast(block.ffn_b2.value.as_slice());
        let expect = block.ln2.forward(&x1.add(&f));
        assert!(out.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn inference_is_repeatable_and_ignores_rng() {
        let mut rng = SeededRng::new(2);
        let bank = ExpertBank::new("b", 1, 4, &mut rng);
        let block = EncoderBlock::new("blk", 4, 0.3, &mut rng);
        let s = random(&mut rng, 5, 4);
        let a = encoder_block(&s, &[1.0], &bank, &block, false, &mut SeededRng::new(1)).unwrap();
        let b = encoder_block(&s, &[1.0], &bank, &block, false, &mut SeededRng::new(99)).unwrap();
        assert_eq!(a, b);
        let t1 = encoder_block(&s, &[1.0], &bank, &block, true, &mut SeededRng::new(1)).unwrap();
        let t2 = encoder_block(&s, &[1.0], &bank, &block, true, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, a);
    }

    #[derive(Clone)]
    struct BlockAndBank {
        block: EncoderBlock,
        bank: ExpertBank,
        s: Parameter,
    }

    impl Parameterized for BlockAndBank {
        fn params(&self) -> Vec<&Parameter> {
            let mut v = self.block.params();
            v.extend(self.bank.params());
            v.push(&self.s);
            v
        }
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            let mut v = self.block.params_mut();
            v.extend(self.bank.params_mut());
            v.push(&mut self.s);
            v
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let (d, n) = (4, 5);
        for rate in [0.0, 0.3] {
            let mut rng = SeededRng::new(3);
            let mut model = BlockAndBank {
                block: EncoderBlock::new("blk", d, rate, &mut rng),
                bank: ExpertBank::new("b", 2, d, &mut rng),
                s: Parameter::new("S", random(&mut rng, n, d)),
            };
            model.block.ln1.gain.value = random(&mut rng, 1, d);
            model.block.ln2.bias.value = random(&mut rng, 1, d);
            model.block.ffn_b1.value = random(&mut rng, 1, 4 * d).scale(0.3);
            let a = [0.6, 0.4];
            let w = random(&mut rng, n, d);
            // Same mask seed on every evaluation, so dropout is a fixed mask.
            let loss = |m: &BlockAndBank| {
                encoder_block(&m.s.value, &a, &m.bank, &m.block, true, &mut SeededRng::new(5))
                    .unwrap()
                    .frobenius_dot(&w)
            };
            let mut trained = model.clone();
            let (_, cache) = model.block.forward_cached(&model.s.value, &a, &model.bank, true, &mut SeededRng::new(5)).unwrap();
            let (ds, _) = trained.block.backward(&mut trained.bank, &a, &cache, &w);
            trained.s.grad = ds;
            let (err, name) = worst_gradient_error(&model, &trained, loss, 1e-5, 1e-6).unwrap();
            assert!(err <= 1e-4, "rate {rate}: {name} off by {err}");
        }
    }

    #[test]
    fn block_gradient_wrt_mixing_weights() {
        let (d, n) = (3, 4);
        let mut rng = SeededRng::new(4);
        let block = EncoderBlock::new("blk", d, 0.0, &mut rng);
        let bank = ExpertBank::new("b", 3, d, &mut rng);
        let s = random(&mut rng, n, d);
        let w = random(&mut rng, n, d);
        let a = Parameter::new("a", Matrix::row_vector(&[0.2, 0.5, 0.3]));
        let (_, cache) = block.forward_cached(&s, a.value.as_slice(), &bank, false, &mut rng).unwrap();
        let (_, da) = block.clone().backward(&mut bank.clone(), a.value.as_slice(), &cache, &w);
        let numeric = crate::numerics::finite_diff_grad(
            |p| {
                encoder_block(&s, p.value.as_slice(), &bank, &block, false, &mut SeededRng::new(0))
                    .unwrap()
                    .frobenius_dot(&w)
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(crate::numerics::max_relative_error(&Matrix::row_vector(&da), &numeric, 1e-6) <= 1e-4);
    }
}
