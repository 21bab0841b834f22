//! Intention discovery: co-attention between a user's reviews and an item's
//! reviews.
//!
//! For real (unmasked) user reviews `u_k` and item reviews `i_j` a matching
//! matrix `C` is scored by one of three functions:
//!
//! * bilinear: `c_kj = f_u(u_k)ᵀ M f_i(i_j)`
//! * soft:     `c_kj = f_u(u_k)ᵀ f_i(i_j)`
//! * mlp:      `c_kj = g([u_k ; i_j])`
//!
//! Each review is then scaled by the mean of its row (user side) or column
//! (item side) of `C`, where the mean divides by the number of real reviews
//! on the other side, and the scaled reviews are pooled by sum or mean into
//! the pair's two intention-aware vectors. Padded rows never enter any
//! computation, so their entries in `C` are exactly zero.

use crate::data::PaddedReviews;
use crate::error::{RaiseError, Result};
use crate::numerics::{dot, glorot_from, relu, relu_backward, Matrix, Parameter, Parameterized, SeededRng};

/// Fully connected layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

/// Multilayer perceptron with ReLU between layers and a linear last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// The review encoder `f`: a `d → d` [`Mlp`] of depth 1 to 4.
pub type ReviewEncoder = Mlp;

#[derive(Clone, Debug)]
pub(crate) struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    /// Glorot weights, zero biases. `dims = [in, hidden.., out]`.
    pub fn new(name: &str, dims: &[usize], rng: &mut SeededRng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense {
                weight: Parameter::new(format!("{name}.{l}.W"), glorot_from(w[0], w[1], rng)),
                bias: Parameter::zeros(format!("{name}.{l}.b"), 1, w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(RaiseError::Config("MLP needs at least one layer".into()));
        }
        for l in &layers {
            if l.bias.shape() != (1, l.weight.value.cols()) {
                return Err(RaiseError::Dimension {
                    op: "Mlp bias",
                    left: l.weight.shape(),
                    right: l.bias.shape(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].weight.value.cols() != w[1].weight.value.rows() {
                return Err(RaiseError::Dimension {
                    op: "Mlp layers",
                    left: w[0].weight.shape(),
                    right: w[1].weight.shape(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.value.cols()
    }

    /// Forward over the rows of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(RaiseError::Dimension {
                op: "Mlp::forward",
                left: x.shape(),
                right: self.layers[0].weight.shape(),
            });
        }
        Ok(self.forward_cached(x).0)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let last = self.layers.len() - 1;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = h.mul(&layer.weight.value).add_row_broadcast(layer.bias.value.as_slice());
            cache.inputs.push(h);
            if l < last {
                h = relu(&z);
                cache.pre.push(z);
            } else {
                h = z;
            }
        }
        (h, cache)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, cache: &MlpCache, dy: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut g = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                g = relu_backward(&cache.pre[l], &g);
            }
            let layer = &mut self.layers[l];
            layer.weight.grad.add_assign(&cache.inputs[l].t_mul(&g));
            for (b, s) in layer.bias.grad.as_mut_slice().iter_mut().zip(g.column_sums()) {
                *b += s;
            }
            g = g.mul_t(&layer.weight.value);
        }
        g
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Applies an encoder to one review vector.
pub fn encode_review(enc: &ReviewEncoder, r: &[f64]) -> Result<Vec<f64>> {
    Ok(enc.forward(&Matrix::row_vector(r))?.into_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoAttention {
    Bilinear,
    Soft,
    Mlp,
}

impl CoAttention {
    pub fn name(self) -> &'static str {
        match self {
            CoAttention::Bilinear => "bilinear",
            CoAttention::Soft => "soft",
            CoAttention::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilinear" => Some(CoAttention::Bilinear),
            "soft" => Some(CoAttention::Soft),
            "mlp" => Some(CoAttention::Mlp),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Sum,
    Mean,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Aggregation::Sum),
            "mean" => Some(Aggregation::Mean),
            _ => None,
        }
    }
}

/// Co-attention parameters. Only the fields the variant uses are present.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttentionParams {
    pub variant: CoAttention,
    pub m: Option<Parameter>,
    pub f_user: Option<ReviewEncoder>,
    pub f_item: Option<ReviewEncoder>,
    pub f_pair: Option<Mlp>,
}

impl CoAttentionParams {
    /// `depth` is the number of layers in each review encoder. The pair
    /// scorer of the mlp variant is fixed at `2d → d → 1`.
    pub fn new(variant: CoAttention, d: usize, depth: usize, rng: &mut SeededRng) -> Self {
        let enc_dims = vec![d; depth + 1];
        let mut p = CoAttentionParams {
            variant,
            m: None,
            f_user: None,
            f_item: None,
            f_pair: None,
        };
        match variant {
            CoAttention::Bilinear => {
                p.m = Some(Parameter::new("idm.M", glorot_from(d, d, rng)));
                p.f_user = Some(Mlp::new("idm.f_user", &enc_dims, rng));
                p.f_item = Some(Mlp::new("idm.f_item", &enc_dims, rng));
            }
            CoAttention::Soft => {
                p.f_user = Some(Mlp::new("idm.f_user", &enc_dims, rng));
                p.f_item = Some(Mlp::new("idm.f_item", &enc_dims, rng));
            }
            CoAttention::Mlp => {
                p.f_pair = Some(Mlp::new("idm.f_pair", &[2 * d, d, 1], rng));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.variant {
            CoAttention::Bilinear => {
                self.m.is_some() && self.f_user.is_some() && self.f_item.is_some() && self.f_pair.is_none()
            }
            CoAttention::Soft => {
                self.m.is_none() && self.f_user.is_some() && self.f_item.is_some() && self.f_pair.is_none()
            }
            CoAttention::Mlp => {
                self.m.is_none() && self.f_user.is_none() && self.f_item.is_none() && self.f_pair.is_some()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(RaiseError::Config(format!(
                "co-attention parameters do not match the {} variant",
                self.variant.name()
            )))
        }
    }

    fn review_dim(&self) -> usize {
        match self.variant {
            CoAttention::Mlp => self.f_pair.as_ref().unwrap().in_dim() / 2,
            _ => self.f_user.as_ref().unwrap().in_dim(),
        }
    }
}

impl Parameterized for CoAttentionParams {
    fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.m.iter().collect();
        for enc in [&self.f_user, &self.f_item, &self.f_pair].into_iter().flatten() {
            out.extend(enc.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.m.iter_mut().collect();
        for enc in [&mut self.f_user, &mut self.f_item, &mut self.f_pair].into_iter().flatten() {
            out.extend(enc.params_mut());
        }
        out
    }
}

/// Matching scores over the padded `l_u × l_i` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchMatrix {
    pub c: Matrix,
    pub user_mask: Vec<bool>,
    pub item_mask: Vec<bool>,
}

/// User-side state shared by every item of one list.
#[derive(Clone, Debug)]
pub(crate) struct UserSide {
    idx: Vec<usize>,
    raw: Option<Matrix>,
    enc: Option<(Matrix, MlpCache)>,
    /// `f_u(U)·M` (bilinear) or `f_u(U)` (soft).
    left: Option<Matrix>,
}

impl UserSide {
    /// Gradient buffer matching `left`.
    pub(crate) fn grad_buffer(&self) -> Option<Matrix> {
        self.left.as_ref().map(|l| Matrix::zeros(l.rows(), l.cols()))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PairCache {
    idx: Vec<usize>,
    raw: Option<Matrix>,
    enc: Option<(Matrix, MlpCache)>,
    pair: Option<MlpCache>,
    /// Real-row scores, `ku × kj`.
    c: Option<Matrix>,
    rho: Vec<f64>,
    gamma: Vec<f64>,
}

/// Output of the co-attention block for one (user, item) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct IdmOutput {
    pub r_user: Vec<f64>,
    pub r_item: Vec<f64>,
    pub matches: MatchMatrix,
}

fn check_inputs(params: &CoAttentionParams, ru: &PaddedReviews, ri: &PaddedReviews) -> Result<()> {
    params.validate()?;
    let d = params.review_dim();
    if ru.dim() != d || ri.dim() != d {
        return Err(RaiseError::Dimension {
            op: "co-attention",
            left: (ru.dim(), ri.dim()),
            right: (d, d),
        });
    }
    Ok(())
}

impl CoAttentionParams {
    pub(crate) fn forward_user_side(&self, ru: &PaddedReviews) -> UserSide {
        let idx = ru.real_indices();
        let raw = ru.real_rows();
        let (enc, left) = match (&raw, self.variant) {
            (Some(u), CoAttention::Bilinear | CoAttention::Soft) => {
                let (a, cache) = self.f_user.as_ref().unwrap().forward_cached(u);
                let left = match self.variant {
                    CoAttention::Bilinear => a.mul(&self.m.as_ref().unwrap().value),
                    _ => a.clone(),
                };
                (Some((a, cache)), Some(left))
            }
            _ => (None, None),
        };
        UserSide { idx, raw, enc, left }
    }

    /// Scores, refines and pools one pair. Returns `(r_user, r_item, cache)`.
    pub(crate) fn forward_pair(
        &self,
        user: &UserSide,
        ri: &PaddedReviews,
        mode: Aggregation,
    ) -> (Vec<f64>, Vec<f64>, PairCache) {
        let d = ri.dim();
        let idx = ri.real_indices();
        let raw = ri.real_rows();
        let mut cache = PairCache {
            idx,
            raw,
            enc: None,
            pair: None,
            c: None,
            rho: Vec::new(),
            gamma: Vec::new(),
        };
        let (Some(u), Some(it)) = (&user.raw, &cache.raw) else {
            return (vec![0.0; d], vec![0.0; d], cache);
        };
        let (ku, kj) = (u.rows(), it.rows());
        let c = match self.variant {
            CoAttention::Bilinear | CoAttention::Soft => {
                let (b, enc_cache) = self.f_item.as_ref().unwrap().forward_cached(it);
                let c = user.left.as_ref().unwrap().mul_t(&b);
                cache.enc = Some((b, enc_cache));
                c
            }
            CoAttention::Mlp => {
                let mut pairs = Matrix::zeros(ku * kj, 2 * d);
                for k in 0..ku {
                    for j in 0..kj {
                        let row = pairs.row_mut(k * kj + j);
                        row[..d].copy_from_slice(u.row(k));
                        row[d..].copy_from_slice(it.row(j));
                    }
                }
                let (out, pc) = self.f_pair.as_ref().unwrap().forward_cached(&pairs);
                cache.pair = Some(pc);
                Matrix::from_vec(ku, kj, out.into_vec()).expect("ku·kj scores")
            }
        };
        let rho: Vec<f64> = (0..ku).map(|k| c.row(k).iter().sum::<f64>() / kj as f64).collect();
        let gamma: Vec<f64> = c.column_sums().into_iter().map(|s| s / ku as f64).collect();
        let (su, si) = pool_scales(mode, ku, kj);
        let mut r_user = vec![0.0; d];
        for k in 0..ku {
            for (o, v) in r_user.iter_mut().zip(u.row(k)) {
                *o += rho[k] * v;
            }
        }
        let mut r_item = vec![0.0; d];
        for j in 0..kj {
            for (o, v) in r_item.iter_mut().zip(it.row(j)) {
                *o += gamma[j] * v;
            }
        }
        r_user.iter_mut().for_each(|x| *x *= su);
        r_item.iter_mut().for_each(|x| *x *= si);
        cache.c = Some(c);
        cache.rho = rho;
        cache.gamma = gamma;
        (r_user, r_item, cache)
    }

    /// Backward of [`forward_pair`]. Item-side and pair-scorer gradients go
    /// straight into the parameters; the user-side gradient is accumulated
    /// into `d_left` for a single [`backward_user_side`] per list.
    pub(crate) fn backward_pair(
        &mut self,
        user: &UserSide,
        cache: &PairCache,
        d_r_user: &[f64],
        d_r_item: &[f64],
        mode: Aggregation,
        d_left: &mut Option<Matrix>,
    ) {
        let (Some(u), Some(it), Some(c)) = (&user.raw, &cache.raw, &cache.c) else {
            return;
        };
        let (ku, kj) = (u.rows(), it.rows());
        let (su, si) = pool_scales(mode, ku, kj);
        let d_rho: Vec<f64> = (0..ku).map(|k| su * dot(d_r_user, u.row(k))).collect();
        let d_gamma: Vec<f64> = (0..kj).map(|j| si * dot(d_r_item, it.row(j))).collect();
        let mut dc = Matrix::zeros(c.rows(), c.cols());
        for k in 0..ku {
            for j in 0..kj {
                dc.set(k, j, d_rho[k] / kj as f64 + d_gamma[j] / ku as f64);
            }
        }
        match self.variant {
            CoAttention::Bilinear | CoAttention::Soft => {
                let (b, enc_cache) = cache.enc.as_ref().unwrap();
                let left = user.left.as_ref().unwrap();
                d_left.as_mut().expect("user-side gradient buffer").add_assign(&dc.mul(b));
                let db = dc.t_mul(left);
                self.f_item.as_mut().unwrap().backward(enc_cache, &db);
            }
            CoAttention::Mlp => {
                let dout = Matrix::from_vec(ku * kj, 1, dc.into_vec()).expect("flattened scores");
                self.f_pair.as_mut().unwrap().backward(cache.pair.as_ref().unwrap(), &dout);
            }
        }
    }

    pub(crate) fn backward_user_side(&mut self, user: &UserSide, d_left: Option<Matrix>) {
        let (Some((a, cache)), Some(dl)) = (&user.enc, d_left) else {
            return;
        };
        let da = match self.variant {
            CoAttention::Bilinear => {
                let m = self.m.as_mut().unwrap();
                m.grad.add_assign(&a.t_mul(&dl));
                dl.mul_t(&m.value)
            }
            _ => dl,
        };
        self.f_user.as_mut().unwrap().backward(cache, &da);
    }

    /// Full padded matching matrix from the cached real-row scores.
    pub(crate) fn scatter_matches(user: &UserSide, ru: &PaddedReviews, cache: &PairCache, ri: &PaddedReviews) -> MatchMatrix {
        let mut full = Matrix::zeros(ru.len(), ri.len());
        if let Some(c) = &cache.c {
            for (k, &uk) in user.idx.iter().enumerate() {
                for (j, &ij) in cache.idx.iter().enumerate() {
                    full.set(uk, ij, c.get(k, j));
                }
            }
        }
        MatchMatrix {
            c: full,
            user_mask: ru.mask.clone(),
            item_mask: ri.mask.clone(),
        }
    }
}

fn pool_scales(mode: Aggregation, ku: usize, kj: usize) -> (f64, f64) {
    match mode {
        Aggregation::Sum => (1.0, 1.0),
        Aggregation::Mean => (1.0 / ku as f64, 1.0 / kj as f64),
    }
}

/// Matching matrix for one pair; masked entries are exactly zero.
pub fn match_scores(params: &CoAttentionParams, ru: &PaddedReviews, ri: &PaddedReviews) -> Result<MatchMatrix> {
    check_inputs(params, ru, ri)?;
    let user = params.forward_user_side(ru);
    let (_, _, cache) = params.forward_pair(&user, ri, Aggregation::Sum);
    Ok(CoAttentionParams::scatter_matches(&user, ru, &cache, ri))
}

/// Scales each user review by its row mean of `C` and each item review by
/// its column mean, dividing by the other side's real review count.
pub fn refine(c: &MatchMatrix, ru: &PaddedReviews, ri: &PaddedReviews) -> Result<(PaddedReviews, PaddedReviews)> {
    if c.c.shape() != (ru.len(), ri.len()) || ru.dim() != ri.dim() {
        return Err(RaiseError::Dimension {
            op: "refine",
            left: c.c.shape(),
            right: (ru.len(), ri.len()),
        });
    }
    let mut out_u = ru.clone();
    let mut out_i = ri.clone();
    if ru.real_count == 0 || ri.real_count == 0 {
        out_u.matrix.fill(0.0);
        out_i.matrix.fill(0.0);
        return Ok((out_u, out_i));
    }
    for k in 0..ru.len() {
        let w = c.c.row(k).iter().sum::<f64>() / ri.real_count as f64;
        out_u.matrix.row_mut(k).iter_mut().for_each(|x| *x *= w);
    }
    let col = c.c.column_sums();
    for j in 0..ri.len() {
        let w = col[j] / ru.real_count as f64;
        out_i.matrix.row_mut(j).iter_mut().for_each(|x| *x *= w);
    }
    Ok((out_u, out_i))
}

/// Pools refined reviews into one vector per side.
pub fn aggregate(ru: &PaddedReviews, ri: &PaddedReviews, mode: Aggregation) -> (Vec<f64>, Vec<f64>) {
    let pool = |p: &PaddedReviews| -> Vec<f64> {
        let sum = p.matrix.column_sums();
        match mode {
            Aggregation::Sum => sum,
            Aggregation::Mean if p.real_count == 0 => vec![0.0; p.dim()],
            Aggregation::Mean => sum.into_iter().map(|s| s / p.real_count as f64).collect(),
        }
    };
    (pool(ru), pool(ri))
}

/// `match_scores → refine → aggregate`.
pub fn idm_forward(
    params: &CoAttentionParams,
    user_reviews: &PaddedReviews,
    item_reviews: &PaddedReviews,
    mode: Aggregation,
) -> Result<IdmOutput> {
    let matches = match_scores(params, user_reviews, item_reviews)?;
    let (ru, ri) = refine(&matches, user_reviews, item_reviews)?;
    let (r_user, r_item) = aggregate(&ru, &ri, mode);
    Ok(IdmOutput {
        r_user,
        r_item,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::worst_gradient_error;

    fn identity_encoder(name: &str, d: usize) -> Mlp {
        Mlp::from_layers(vec![Dense {
            weight: Parameter::new(format!("{name}.0.W"), Matrix::identity(d)),
            bias: Parameter::zeros(format!("{name}.0.b"), 1, d),
        }])
        .unwrap()
    }

    fn padded(rows: &[Vec<f64>], l: usize) -> PaddedReviews {
        PaddedReviews::from_reviews(rows, rows.first().map_or(2, Vec::len), l)
    }

    #[test]
    fn identity_encoder_is_identity() {
        let enc = identity_encoder("f", 3);
        assert_eq!(encode_review(&enc, &[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert!(encode_review(&enc, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = SeededRng::new(1);
        let enc = Mlp::new("f", &[4, 4, 4], &mut rng);
        assert_eq!(encode_review(&enc, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn two_layer_hand_forward() {
        let l0 = Dense {
            weight: Parameter::new("w0", Matrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![0.5, 2.0, 1.0], vec![0.0, 1.0, -3.0]]).unwrap()),
            bias: Parameter::new("b0", Matrix::row_vector(&[0.1, -0.2, 0.3])),
        };
        let l1 = Dense {
            weight: Parameter::new("w1", Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![-1.0, 1.0, 0.0], vec![0.5, 0.5, 0.5]]).unwrap()),
            bias: Parameter::new("b1", Matrix::row_vector(&[0.0, 1.0, -1.0])),
        };
        let enc = Mlp::from_layers(vec![l0, l1]).unwrap();
        let x = [1.0, 2.0, -1.0];
        // hidden = relu(x·W0 + b0)
        let z0 = [1.0 + 1.0 + 0.1, -1.0 + 4.0 - 1.0 - 0.2, 2.0 + 3.0 + 0.3];
        let h: Vec<f64> = z0.iter().map(|v: &f64| v.max(0.0)).collect();
        let expect = [
            h[0] - h[1] + 0.5 * h[2],
            h[1] + 0.5 * h[2] + 1.0,
            2.0 * h[0] + 0.5 * h[2] - 1.0,
        ];
        let got = encode_review(&enc, &x).unwrap();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_identity_on_orthonormal_reviews_gives_identity_pattern() {
        let d = 3;
        let params = CoAttentionParams {
            variant: CoAttention::Bilinear,
            m: Some(Parameter::new("M", Matrix::identity(d))),
            f_user: Some(identity_encoder("fu", d)),
            f_item: Some(identity_encoder("fi", d)),
            f_pair: None,
        };
        let basis: Vec<Vec<f64>> = (0..d).map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect();
        let m = match_scores(&params, &padded(&basis, 4), &padded(&basis, 5)).unwrap();
        for k in 0..4 {
            for j in 0..5 {
                let expect = if k == j && k < d { 1.0 } else { 0.0 };
                assert_eq!(m.c.get(k, j), expect);
            }
        }
    }

    #[test]
    fn variant_mismatch_is_config_error() {
        let mut rng = SeededRng::new(0);
        let mut p = CoAttentionParams::new(CoAttention::Bilinear, 2, 1, &mut rng);
        p.m = None;
        let r = padded(&[vec![1.0, 0.0]], 2);
        assert!(matches!(match_scores(&p, &r, &r), Err(RaiseError::Config(_))));
    }

    #[test]
    fn refine_with_unit_scores_is_identity() {
        let ru = padded(&[vec![1.0, 2.0], vec![3.0, -1.0]], 3);
        let ri = padded(&[vec![0.5, 0.5], vec![2.0, 0.0]], 3);
        let mut c = Matrix::zeros(3, 3);
        for k in 0..2 {
            for j in 0..2 {
                c.set(k, j, 1.0);
            }
        }
        let mm = MatchMatrix {
            c,
            user_mask: ru.mask.clone(),
            item_mask: ri.mask.clone(),
        };
        let (u, i) = refine(&mm, &ru, &ri).unwrap();
        assert_eq!(u.matrix, ru.matrix);
        assert_eq!(i.matrix, ri.matrix);

        let zero = MatchMatrix {
            c: Matrix::zeros(3, 3),
            ..mm
        };
        let (u, i) = refine(&zero, &ru, &ri).unwrap();
        assert_eq!(u.matrix, Matrix::zeros(3, 2));
        assert_eq!(i.matrix, Matrix::zeros(3, 2));
    }

    #[test]
    fn aggregate_examples() {
        let a = padded(&[vec![1.0, 0.0], vec![0.0, 1.0]], 3);
        assert_eq!(aggregate(&a, &a, Aggregation::Sum).0, vec![1.0, 1.0]);
        assert_eq!(aggregate(&a, &a, Aggregation::Mean).0, vec![0.5, 0.5]);
        let empty = PaddedReviews::from_reviews(&[], 2, 3);
        assert_eq!(aggregate(&empty, &empty, Aggregation::Mean).1, vec![0.0, 0.0]);
    }

    #[test]
    fn reviewless_pair_gives_zeros() {
        let mut rng = SeededRng::new(2);
        let p = CoAttentionParams::new(CoAttention::Bilinear, 4, 2, &mut rng);
        let empty = PaddedReviews::from_reviews(&[], 4, 3);
        let out = idm_forward(&p, &empty, &empty, Aggregation::Sum).unwrap();
        assert_eq!(out.r_user, vec![0.0; 4]);
        assert_eq!(out.r_item, vec![0.0; 4]);
        assert_eq!(out.matches.c, Matrix::zeros(3, 3));
    }

    fn random_reviews(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect()
    }

    fn brute_force_score(p: &CoAttentionParams, u: &[f64], i: &[f64]) -> f64 {
        match p.variant {
            CoAttention::Bilinear | CoAttention::Soft => {
                let a = encode_review(p.f_user.as_ref().unwrap(), u).unwrap();
                let b = encode_review(p.f_item.as_ref().unwrap(), i).unwrap();
                let mut s = 0.0;
                for x in 0..a.len() {
                    for y in 0..b.len() {
                        let m = match &p.m {
                            Some(m) => m.value.get(x, y),
                            None => f64::from(x == y),
                        };
                        s += a[x] * m * b[y];
                    }
                }
                s
            }
            CoAttention::Mlp => {
                let x: Vec<f64> = u.iter().chain(i).copied().collect();
                encode_review(p.f_pair.as_ref().unwrap(), &x).unwrap()[0]
            }
        }
    }

    const VARIANTS: [CoAttention; 3] = [CoAttention::Bilinear, CoAttention::Soft, CoAttention::Mlp];

    #[test]
    fn pipeline_matches_triple_loop_oracle() {
        let d = 4;
        for (v, variant) in VARIANTS.into_iter().enumerate() {
            for mode in [Aggregation::Sum, Aggregation::Mean] {
                let mut rng = SeededRng::new(10 + v as u64);
                let p = CoAttentionParams::new(variant, d, 2, &mut rng);
                let us = random_reviews(&mut rng, 3, d);
                let is = random_reviews(&mut rng, 2, d);
                let out = idm_forward(&p, &padded(&us, 5), &padded(&is, 4), mode).unwrap();

                let c: Vec<Vec<f64>> = us.iter().map(|u| is.iter().map(|i| brute_force_score(&p, u, i)).collect()).collect();
                let mut r_user = vec![0.0; d];
                for (k, u) in us.iter().enumerate() {
                    let rho: f64 = c[k].iter().sum::<f64>() / is.len() as f64;
                    for x in 0..d {
                        r_user[x] += rho * u[x];
                    }
                }
                let mut r_item = vec![0.0; d];
                for (j, i) in is.iter().enumerate() {
                    let gamma: f64 = c.iter().map(|row| row[j]).sum::<f64>() / us.len() as f64;
                    for x in 0..d {
                        r_item[x] += gamma * i[x];
                    }
                }
                if mode == Aggregation::Mean {
                    r_user.iter_mut().for_each(|x| *x /= us.len() as f64);
                    r_item.iter_mut().for_each(|x| *x /= is.len() as f64);
                }
                for k in 0..5 {
                    for j in 0..4 {
                        let expect = if k < 3 && j < 2 { c[k][j] } else { 0.0 };
                        assert!((out.matches.c.get(k, j) - expect).abs() < 1e-12);
                    }
                }
                for x in 0..d {
                    assert!((out.r_user[x] - r_user[x]).abs() < 1e-12, "{variant:?} {mode:?}");
                    assert!((out.r_item[x] - r_item[x]).abs() < 1e-12, "{variant:?} {mode:?}");
                }
            }
        }
    }

    #[test]
    fn cached_path_matches_public_pipeline() {
        let d = 3;
        for variant in VARIANTS {
            let mut rng = SeededRng::new(3);
            let p = CoAttentionParams::new(variant, d, 1, &mut rng);
            let ru = padded(&random_reviews(&mut rng, 4, d), 6);
            let ri = padded(&random_reviews(&mut rng, 2, d), 6);
            let public = idm_forward(&p, &ru, &ri, Aggregation::Mean).unwrap();
            let user = p.forward_user_side(&ru);
            let (a, b, _) = p.forward_pair(&user, &ri, Aggregation::Mean);
            for x in 0..d {
                assert!((a[x] - public.r_user[x]).abs() < 1e-12);
                assert!((b[x] - public.r_item[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_linear_scores_scale_quadratically() {
        let d = 3;
        let mut rng = SeededRng::new(5);
        let p = CoAttentionParams::new(CoAttention::Soft, d, 1, &mut rng);
        let p = CoAttentionParams {
            f_user: Some(Mlp::from_layers(vec![Dense {
                bias: Parameter::zeros("b", 1, d),
                ..p.f_user.unwrap().layers()[0].clone()
            }])
            .unwrap()),
            f_item: Some(Mlp::from_layers(vec![Dense {
                bias: Parameter::zeros("b", 1, d),
                ..p.f_item.unwrap().layers()[0].clone()
            }])
            .unwrap()),
            ..p
        };
        let us = random_reviews(&mut rng, 2, d);
        let is = random_reviews(&mut rng, 3, d);
        let base = match_scores(&p, &padded(&us, 2), &padded(&is, 3)).unwrap();
        let alpha = 2.5;
        let scale = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| x * alpha).collect()).collect::<Vec<Vec<f64>>>();
        let scaled = match_scores(&p, &padded(&scale(&us), 2), &padded(&scale(&is), 3)).unwrap();
        for (a, b) in base.c.as_slice().iter().zip(scaled.c.as_slice()) {
            assert!((b - alpha * alpha * a).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn masked_content_does_not_leak() {
        let d = 3;
        let mut rng = SeededRng::new(8);
        let p = CoAttentionParams::new(CoAttention::Bilinear, d, 2, &mut rng);
        let ru = padded(&random_reviews(&mut rng, 2, d), 4);
        let ri = padded(&random_reviews(&mut rng, 3, d), 4);
        let base = idm_forward(&p, &ru, &ri, Aggregation::Sum).unwrap();
        let mut dirty_u = ru.clone();
        let mut dirty_i = ri.clone();
        dirty_u.matrix.row_mut(3).copy_from_slice(&[9.0, -9.0, 9.0]);
        dirty_i.matrix.row_mut(3).copy_from_slice(&[-7.0, 7.0, 7.0]);
        let dirty = idm_forward(&p, &dirty_u, &dirty_i, Aggregation::Sum).unwrap();
        assert_eq!(base.matches.c, dirty.matches.c);
        assert_eq!(base.r_item, dirty.r_item);
        // Sum pooling runs over the padded block, so a non-zero padded row
        // is scaled by its (zero) row mean and still contributes nothing.
        assert_eq!(base.r_user, dirty.r_user);
    }

    /// One user, two items: the user side is shared, so its gradient must
    /// accumulate over both pairs.
    fn list_loss(p: &CoAttentionParams, ru: &PaddedReviews, items: &[PaddedReviews], w: &[Vec<f64>], mode: Aggregation) -> f64 {
        let user = p.forward_user_side(ru);
        let mut total = 0.0;
        for (n, ri) in items.iter().enumerate() {
            let (a, b, _) = p.forward_pair(&user, ri, mode);
            total += dot(&a, &w[2 * n]) + dot(&b, &w[2 * n + 1]);
        }
        total
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = 3;
        for variant in VARIANTS {
            for mode in [Aggregation::Sum, Aggregation::Mean] {
                let mut rng = SeededRng::new(21);
                let p = CoAttentionParams::new(variant, d, 2, &mut rng);
                let ru = padded(&random_reviews(&mut rng, 3, d), 4);
                let items = [
                    padded(&random_reviews(&mut rng, 2, d), 4),
                    padded(&random_reviews(&mut rng, 4, d), 4),
                ];
                let w = random_reviews(&mut rng, 4, d);

                let mut trained = p.clone();
                let user = p.forward_user_side(&ru);
                let mut d_left = user.grad_buffer();
                for (n, ri) in items.iter().enumerate() {
                    let (_, _, cache) = p.forward_pair(&user, ri, mode);
                    trained.backward_pair(&user, &cache, &w[2 * n], &w[2 * n + 1], mode, &mut d_left);
                }
                trained.backward_user_side(&user, d_left);

                let (err, name) =
                    worst_gradient_error(&p, &trained, |m| list_loss(m, &ru, &items, &w, mode), 1e-5, 1e-6).unwrap();
                assert!(err <= 1e-4, "{variant:?} {mode:?}: {name} off by {err}");
            }
        }
    }
}
