//! The intention-aware re-ranker.
//!
//! For one user and an initial list of `n` candidates:
//!
//! 1. co-attention over the user's and each item's reviews gives a pair of
//!    intention-aware vectors `(r_u, r_i)` per candidate;
//! 2. each candidate becomes `s = [f_im([p_u; q_i]) ; f_re([r_u; r_i])]·W_S + o_pos`
//!    where `p_u`, `q_i` are base-ranker latents and `o_pos` is a learned
//!    vector for the candidate's initial position;
//! 3. the list context `p̄ = p_u + mean r_u`, `q̄ = mean (q_i + r_i)` drives the
//!    intention gate, whose weights mix each block's expert bank;
//! 4. `b` encoder blocks run over the sequence and a linear head plus a
//!    softmax over the list gives the new scores.
//!
//! Training minimizes the list-wise negative log likelihood of the user's
//! positives among the candidates.

mod train;

use std::collections::BTreeSet;

use crate::base_ranker::{GmfModel, RankedList};
use crate::data::{EntityKind, ItemId, PaddedReviews, ReviewStore, UserId};
use crate::dte::{encoder_block, intention_gate, BlockCache, EncoderBlock, ExpertBank, IntentionGate};
use crate::error::{RaiseError, Result};
use crate::idm::{aggregate, idm_forward, Aggregation, CoAttention, CoAttentionParams, Mlp, MlpCache, PairCache, UserSide};
use crate::numerics::{glorot_from, softmax, Matrix, Parameter, Parameterized, SeededRng};

pub use train::{explain, fit, mean_nll, rerank, train, EpochStats, Explanation, TrainReport};

pub const EXPERT_CHOICES: [usize; 5] = [1, 2, 4, 8, 10];
pub const BLOCK_CHOICES: [usize; 6] = [1, 2, 3, 5, 8, 10];

/// Floor applied to a positive's score before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    /// No intention-aware representations: the review half of each item
    /// representation is zero and reviews drop out of the list context.
    NoIdm,
    /// Static single-head encoders in place of the gated expert mixture.
    NoDte,
    NoBoth,
    /// User reviews removed; item reviews pooled without co-attention.
    NoUserReviews,
    /// Item reviews removed; user reviews pooled without co-attention.
    NoItemReviews,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoIdm,
        Ablation::NoDte,
        Ablation::NoBoth,
        Ablation::NoUserReviews,
        Ablation::NoItemReviews,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoIdm => "no_idm",
            Ablation::NoDte => "no_dte",
            Ablation::NoBoth => "no_both",
            Ablation::NoUserReviews => "no_user_reviews",
            Ablation::NoItemReviews => "no_item_reviews",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn uses_idm(self) -> bool {
        !matches!(self, Ablation::NoIdm | Ablation::NoBoth)
    }

    pub fn uses_dte(self) -> bool {
        !matches!(self, Ablation::NoDte | Ablation::NoBoth)
    }

    fn uses_co_attention(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDte)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaiseConfig {
    pub d: usize,
    pub n: usize,
    pub t: usize,
    pub b: usize,
    pub l_u: usize,
    pub l_i: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub co_attention: CoAttention,
    pub aggregation: Aggregation,
    pub ablation: Ablation,
    pub shared_experts: bool,
    /// Layers in each review encoder and in `f_im` / `f_re`.
    pub mlp_depth: usize,
    /// Also update the base ranker's latents.
    pub finetune_base: bool,
}

impl Default for RaiseConfig {
    fn default() -> Self {
        RaiseConfig {
            d: 32,
            n: 50,
            t: 4,
            b: 1,
            l_u: 20,
            l_i: 20,
            lr: 1e-3,
            batch_size: 8,
            dropout: 0.1,
            epochs: 50,
            seed: 0,
            co_attention: CoAttention::Bilinear,
            aggregation: Aggregation::Sum,
            ablation: Ablation::Full,
            shared_experts: false,
            mlp_depth: 2,
            finetune_base: false,
        }
    }
}

impl RaiseConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(RaiseError::Config(m));
        for (name, v) in [("d", self.d), ("n", self.n), ("l_u", self.l_u), ("l_i", self.l_i), ("batch_size", self.batch_size)] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if !EXPERT_CHOICES.contains(&self.t) {
            return err(format!("t={} not in {{1,2,4,8,10}}", self.t));
        }
        if !BLOCK_CHOICES.contains(&self.b) {
            return err(format!("b={} not in {{1,2,3,5,8,10}}", self.b));
        }
        if !(self.dropout == 0.0 || (0.1..=0.5).contains(&self.dropout)) {
            return err(format!("dropout={} not in [0.1,0.5]∪{{0}}", self.dropout));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return err(format!("lr={} must be finite and non-negative", self.lr));
        }
        if !(1..=4).contains(&self.mlp_depth) {
            return err(format!("mlp_depth={} not in [1,4]", self.mlp_depth));
        }
        Ok(())
    }
}

/// All re-ranker weights plus the base ranker whose latents feed them.
#[derive(Clone, Debug, PartialEq)]
pub struct RaiseParameters {
    config: RaiseConfig,
    pub gmf: GmfModel,
    pub idm: CoAttentionParams,
    pub f_im: Mlp,
    pub f_re: Mlp,
    /// 2d×d
    pub w_s: Parameter,
    /// n×d, one row per initial list position.
    pub positions: Parameter,
    /// Absent when the ablation uses static encoders.
    pub gate: Option<IntentionGate>,
    /// One bank per block, or a single bank shared by all blocks.
    pub banks: Vec<ExpertBank>,
    pub blocks: Vec<EncoderBlock>,
    /// d×1
    pub w_p: Parameter,
    /// 1×1
    pub b_p: Parameter,
}

impl RaiseParameters {
    pub fn init(config: RaiseConfig, gmf: GmfModel) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        if gmf.dim() != d {
            return Err(RaiseError::Config(format!(
                "base ranker width {} differs from d={d}",
                gmf.dim()
            )));
        }
        let mut rng = SeededRng::derive(config.seed, INIT_STREAM);
        let idm = CoAttentionParams::new(config.co_attention, d, config.mlp_depth, &mut rng);
        let mut dims = vec![2 * d];
        dims.extend(std::iter::repeat_n(d, config.mlp_depth));
        let f_im = Mlp::new("f_im", &dims, &mut rng);
        let f_re = Mlp::new("f_re", &dims, &mut rng);
        let w_s = Parameter::new("W_S", glorot_from(2 * d, d, &mut rng));
        let positions = Parameter::new("positions", glorot_from(config.n, d, &mut rng));
        let dynamic = config.ablation.uses_dte();
        let gate = dynamic.then(|| IntentionGate::new("gate", d, config.t, &mut rng));
        let t = if dynamic { config.t } else { 1 };
        let banks = if config.shared_experts {
            vec![ExpertBank::new("experts", t, d, &mut rng)]
        } else {
            (0..config.b)
                .map(|i| ExpertBank::new(&format!("block{i}.experts"), t, d, &mut rng))
                .collect()
        };
        let blocks = (0..config.b)
            .map(|i| EncoderBlock::new(&format!("block{i}"), d, config.dropout, &mut rng))
            .collect();
        let w_p = Parameter::new("W_P", glorot_from(d, 1, &mut rng));
        let b_p = Parameter::zeros("b_P", 1, 1);
        Ok(RaiseParameters {
            config,
            gmf,
            idm,
            f_im,
            f_re,
            w_s,
            positions,
            gate,
            banks,
            blocks,
            w_p,
            b_p,
        })
    }

    pub fn config(&self) -> &RaiseConfig {
        &self.config
    }

    fn bank_for(&self, block: usize) -> usize {
        if self.config.shared_experts {
            0
        } else {
            block
        }
    }

    /// Parameters the optimizer updates: everything except the base ranker,
    /// unless fine-tuning is on.
    pub fn trainable_mut(&mut self) -> Vec<&mut Parameter> {
        let finetune = self.config.finetune_base;
        let mut out = self.params_mut();
        if !finetune {
            out.drain(..3);
        }
        out
    }
}

impl Parameterized for RaiseParameters {
    fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.gmf.parameters().into_iter().collect();
        out.extend(self.idm.params());
        out.extend(self.f_im.params());
        out.extend(self.f_re.params());
        out.push(&self.w_s);
        out.push(&self.positions);
        if let Some(g) = &self.gate {
            out.extend(g.params());
        }
        for bank in &self.banks {
            out.extend(bank.params());
        }
        for blk in &self.blocks {
            out.extend(blk.params());
        }
        out.push(&self.w_p);
        out.push(&self.b_p);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.gmf.parameters_mut().into_iter().collect();
        out.extend(self.idm.params_mut());
        out.extend(self.f_im.params_mut());
        out.extend(self.f_re.params_mut());
        out.push(&mut self.w_s);
        out.push(&mut self.positions);
        if let Some(g) = &mut self.gate {
            out.extend(g.params_mut());
        }
        for bank in &mut self.banks {
            out.extend(bank.params_mut());
        }
        for blk in &mut self.blocks {
            out.extend(blk.params_mut());
        }
        out.push(&mut self.w_p);
        out.push(&mut self.b_p);
        out
    }
}

/// One user's list with labels and padded reviews.
#[derive(Clone, Debug, PartialEq)]
pub struct ListBatchExample {
    pub user: UserId,
    pub list: RankedList,
    /// 1.0 where the candidate is relevant.
    pub labels: Vec<f64>,
    /// Everything relevant for the user, in the list or not.
    pub relevant: BTreeSet<ItemId>,
    pub user_reviews: PaddedReviews,
    pub item_reviews: Vec<PaddedReviews>,
}

fn padded_or_empty(store: &ReviewStore, kind: EntityKind, id: u64, l: usize) -> PaddedReviews {
    PaddedReviews::from_reviews(store.reviews(kind, id).unwrap_or(&[]), store.dim(), l)
}

impl ListBatchExample {
    /// Entities missing from `store` are treated as having no reviews.
    pub fn build(list: RankedList, relevant: BTreeSet<ItemId>, store: &ReviewStore, l_u: usize, l_i: usize) -> Self {
        let labels = list.items.iter().map(|i| f64::from(relevant.contains(i))).collect();
        let user_reviews = padded_or_empty(store, EntityKind::User, list.user.0, l_u);
        let item_reviews = list
            .items
            .iter()
            .map(|i| padded_or_empty(store, EntityKind::Item, i.0, l_i))
            .collect();
        ListBatchExample {
            user: list.user,
            list,
            labels,
            relevant,
            user_reviews,
            item_reviews,
        }
    }

    pub fn has_positive(&self) -> bool {
        self.labels.iter().any(|&y| y > 0.0)
    }
}

/// State kept from a forward pass for the backward pass.
pub(crate) struct ForwardCache {
    user_row: usize,
    item_rows: Vec<usize>,
    idm_user: Option<UserSide>,
    pairs: Vec<PairCache>,
    im_cache: MlpCache,
    re_cache: Option<MlpCache>,
    h: Matrix,
    p_bar: Vec<f64>,
    q_bar: Vec<f64>,
    gate: Option<crate::dte::GateCache>,
    a: Vec<f64>,
    blocks: Vec<BlockCache>,
    f: Matrix,
    pub(crate) scores: Vec<f64>,
}

fn rows_of(v: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(v).expect("equal-length rows")
}

impl RaiseParameters {
    fn check_example(&self, ex: &ListBatchExample) -> Result<()> {
        let cfg = &self.config;
        if ex.list.len() != cfg.n {
            return Err(RaiseError::Capacity {
                requested: cfg.n,
                available: ex.list.len(),
            });
        }
        if ex.labels.len() != cfg.n || ex.item_reviews.len() != cfg.n {
            return Err(RaiseError::Data(format!(
                "example for {} has {} labels and {} review blocks for {} candidates",
                ex.user,
                ex.labels.len(),
                ex.item_reviews.len(),
                cfg.n
            )));
        }
        let blocks = std::iter::once((&ex.user_reviews, cfg.l_u)).chain(ex.item_reviews.iter().map(|r| (r, cfg.l_i)));
        for (r, l) in blocks {
            if r.len() != l || r.dim() != cfg.d {
                return Err(RaiseError::Dimension {
                    op: "review block",
                    left: (r.len(), r.dim()),
                    right: (l, cfg.d),
                });
            }
        }
        Ok(())
    }

    /// Intention-aware vectors for every candidate through the public
    /// co-attention operations.
    fn review_vectors(&self, ex: &ListBatchExample) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let d = self.config.d;
        let mode = self.config.aggregation;
        ex.item_reviews
            .iter()
            .map(|ri| match self.config.ablation {
                Ablation::Full | Ablation::NoDte => {
                    let out = idm_forward(&self.idm, &ex.user_reviews, ri, mode)?;
                    Ok((out.r_user, out.r_item))
                }
                Ablation::NoUserReviews => Ok((vec![0.0; d], aggregate(ri, ri, mode).1)),
                Ablation::NoItemReviews => Ok((aggregate(&ex.user_reviews, &ex.user_reviews, mode).0, vec![0.0; d])),
                Ablation::NoIdm | Ablation::NoBoth => Ok((vec![0.0; d], vec![0.0; d])),
            })
            .collect()
    }

    pub(crate) fn forward_cached(&self, ex: &ListBatchExample, training: bool, rng: &mut SeededRng) -> Result<ForwardCache> {
        self.check_example(ex)?;
        let cfg = &self.config;
        let (d, n) = (cfg.d, cfg.n);
        let user_row = self.gmf.user_row(ex.user)?;
        let item_rows = ex.list.items.iter().map(|&i| self.gmf.item_row(i)).collect::<Result<Vec<_>>>()?;
        let p_u = self.gmf.p.value.row(user_row);

        let mut idm_user = None;
        let mut pairs = Vec::new();
        let mut r_u = Vec::with_capacity(n);
        let mut r_i = Vec::with_capacity(n);
        if cfg.ablation.uses_co_attention() {
            let user = self.idm.forward_user_side(&ex.user_reviews);
            for ri in &ex.item_reviews {
                let (a, b, cache) = self.idm.forward_pair(&user, ri, cfg.aggregation);
                r_u.push(a);
                r_i.push(b);
                pairs.push(cache);
            }
            idm_user = Some(user);
        } else {
            for (a, b) in self.review_vectors(ex)? {
                r_u.push(a);
                r_i.push(b);
            }
        }

        let x_im = rows_of(
            &item_rows
                .iter()
                .map(|&j| p_u.iter().chain(self.gmf.q.value.row(j)).copied().collect())
                .collect::<Vec<Vec<f64>>>(),
        );
        let (s_im, im_cache) = self.f_im.forward_cached(&x_im);
        let (s_re, re_cache) = if cfg.ablation.uses_idm() {
            let x_re = rows_of(
                &r_u.iter()
                    .zip(&r_i)
                    .map(|(a, b)| a.iter().chain(b).copied().collect())
                    .collect::<Vec<Vec<f64>>>(),
            );
            let (s, c) = self.f_re.forward_cached(&x_re);
            (s, Some(c))
        } else {
            (Matrix::zeros(n, d), None)
        };
        let h = s_im.hconcat(&s_re);
        let mut f = h.mul(&self.w_s.value);
        f.add_assign(&self.positions.value);

        let mut p_bar = p_u.to_vec();
        let mut q_bar = vec![0.0; d];
        for j in 0..n {
            let q_j = self.gmf.q.value.row(item_rows[j]);
            for x in 0..d {
                p_bar[x] += r_u[j][x] / n as f64;
                q_bar[x] += (q_j[x] + r_i[j][x]) / n as f64;
            }
        }
        let gate = self.gate.as_ref().map(|g| g.forward_cached(&p_bar, &q_bar));
        let a = gate.as_ref().map_or_else(|| vec![1.0], |g| g.a.clone());

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, blk) in self.blocks.iter().enumerate() {
            let (out, cache) = blk.forward_cached(&f, &a, &self.banks[self.bank_for(i)], training, rng)?;
            blocks.push(cache);
            f = out;
        }
        let logits: Vec<f64> = f.mul(&self.w_p.value).as_slice().iter().map(|z| z + self.b_p.value.get(0, 0)).collect();
        let scores = softmax(&logits);
        Ok(ForwardCache {
            user_row,
            item_rows,
            idm_user,
            pairs,
            im_cache,
            re_cache,
            h,
            p_bar,
            q_bar,
            gate,
            a,
            blocks,
            f,
            scores,
        })
    }

    /// List NLL of `ex`, with its gradient added to every parameter's `grad`.
    pub fn accumulate_nll_gradients(&mut self, ex: &ListBatchExample, training: bool, rng: &mut SeededRng) -> Result<f64> {
        let cache = self.forward_cached(ex, training, rng)?;
        let loss = nll_loss(&cache.scores, &ex.labels);
        let dlogits = nll_logit_grad(&cache.scores, &ex.labels);
        self.backward(&cache, &dlogits);
        Ok(loss)
    }

    /// Accumulates gradients of a loss whose derivative with respect to the
    /// pre-softmax logits is `dlogits`.
    pub(crate) fn backward(&mut self, cache: &ForwardCache, dlogits: &[f64]) {
        let cfg = self.config.clone();
        let (d, n) = (cfg.d, cfg.n);
        let dlog = Matrix::column_vector(dlogits);
        self.w_p.grad.add_assign(&cache.f.t_mul(&dlog));
        self.b_p.grad.as_mut_slice()[0] += dlogits.iter().sum::<f64>();
        let mut df = dlog.mul_t(&self.w_p.value);
        let mut da = vec![0.0; cache.a.len()];
        for i in (0..self.blocks.len()).rev() {
            let bi = self.bank_for(i);
            let (prev, dai) = self.blocks[i].backward(&mut self.banks[bi], &cache.a, &cache.blocks[i], &df);
            for (x, y) in da.iter_mut().zip(dai) {
                *x += y;
            }
            df = prev;
        }

        self.positions.grad.add_assign(&df);
        self.w_s.grad.add_assign(&cache.h.t_mul(&df));
        let (ds_im, ds_re) = df.mul_t(&self.w_s.value).hsplit(d);

        let mut dp_u = vec![0.0; d];
        let mut dq = Matrix::zeros(n, d);
        let mut dr_u = Matrix::zeros(n, d);
        let mut dr_i = Matrix::zeros(n, d);
        let dx_im = self.f_im.backward(&cache.im_cache, &ds_im);
        for j in 0..n {
            let row = dx_im.row(j);
            dp_u.iter_mut().zip(&row[..d]).for_each(|(o, g)| *o += g);
            dq.row_mut(j).iter_mut().zip(&row[d..]).for_each(|(o, g)| *o += g);
        }
        if let Some(rc) = &cache.re_cache {
            let dx_re = self.f_re.backward(rc, &ds_re);
            for j in 0..n {
                let row = dx_re.row(j);
                dr_u.row_mut(j).iter_mut().zip(&row[..d]).for_each(|(o, g)| *o += g);
                dr_i.row_mut(j).iter_mut().zip(&row[d..]).for_each(|(o, g)| *o += g);
            }
        }
        if let (Some(gate), Some(gc)) = (&mut self.gate, &cache.gate) {
            let (dpb, dqb) = gate.backward(gc, &da, &cache.p_bar, &cache.q_bar);
            dp_u.iter_mut().zip(&dpb).for_each(|(o, g)| *o += g);
            for j in 0..n {
                for x in 0..d {
                    let (gp, gq) = (dpb[x] / n as f64, dqb[x] / n as f64);
                    dr_u.row_mut(j)[x] += gp;
                    dq.row_mut(j)[x] += gq;
                    dr_i.row_mut(j)[x] += gq;
                }
            }
        }
        if let Some(user) = &cache.idm_user {
            let mut d_left = user.grad_buffer();
            for (j, pc) in cache.pairs.iter().enumerate() {
                self.idm
                    .backward_pair(user, pc, dr_u.row(j), dr_i.row(j), cfg.aggregation, &mut d_left);
            }
            self.idm.backward_user_side(user, d_left);
        }
        if cfg.finetune_base {
            self.gmf.p.grad.row_mut(cache.user_row).iter_mut().zip(&dp_u).for_each(|(o, g)| *o += g);
            for (j, &row) in cache.item_rows.iter().enumerate() {
                self.gmf.q.grad.row_mut(row).iter_mut().zip(dq.row(j)).for_each(|(o, g)| *o += g);
            }
        }
    }
}

/// Input row for one candidate at list `position`: `[f_im([p_u; q_i]), f_re([r_u; r_i])]·W_S` plus the position embedding.
pub fn item_repr(
    p_u: &[f64],
    q_i: &[f64],
    r_u: &[f64],
    r_i: &[f64],
    params: &RaiseParameters,
    position: usize,
) -> Result<Vec<f64>> {
    let cfg = &params.config;
    if position >= cfg.n {
        return Err(RaiseError::Range {
            index: position,
            limit: cfg.n,
        });
    }
    for v in [p_u, q_i, r_u, r_i] {
        if v.len() != cfg.d {
            return Err(RaiseError::Dimension {
                op: "item_repr",
                left: (1, v.len()),
                right: (1, cfg.d),
            });
        }
    }
    let cat = |a: &[f64], b: &[f64]| Matrix::row_vector(&a.iter().chain(b).copied().collect::<Vec<_>>());
    let s_im = params.f_im.forward(&cat(p_u, q_i))?;
    let s_re = if cfg.ablation.uses_idm() {
        params.f_re.forward(&cat(r_u, r_i))?
    } else {
        Matrix::zeros(1, cfg.d)
    };
    let mut s = s_im.hconcat(&s_re).matmul(&params.w_s.value)?.into_vec();
    for (o, p) in s.iter_mut().zip(params.positions.value.row(position)) {
        *o += p;
    }
    Ok(s)
}

/// The `n × d` input sequence, one [`item_repr`] row per candidate.
pub fn build_sequence(ex: &ListBatchExample, params: &RaiseParameters) -> Result<Matrix> {
    params.check_example(ex)?;
    let p_u = params.gmf.user_latent(ex.user)?;
    let reviews = params.review_vectors(ex)?;
    let mut rows = Vec::with_capacity(ex.list.len());
    for (j, (&item, (r_u, r_i))) in ex.list.items.iter().zip(&reviews).enumerate() {
        rows.push(item_repr(p_u, params.gmf.item_latent(item)?, r_u, r_i, params, j)?);
    }
    Matrix::from_rows(&rows)
}

/// `(p̄, q̄)`: the user latent plus the mean user-side review vector, and the
/// mean of item latent plus item-side review vector.
pub fn list_context(ex: &ListBatchExample, params: &RaiseParameters) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_example(ex)?;
    let n = ex.list.len() as f64;
    let mut p_bar = params.gmf.user_latent(ex.user)?.to_vec();
    let mut q_bar = vec![0.0; params.config.d];
    for (&item, (r_u, r_i)) in ex.list.items.iter().zip(params.review_vectors(ex)?) {
        let q = params.gmf.item_latent(item)?;
        for x in 0..q_bar.len() {
            p_bar[x] += r_u[x] / n;
            q_bar[x] += (q[x] + r_i[x]) / n;
        }
    }
    Ok((p_bar, q_bar))
}

/// Scores over the list's candidates; they sum to one.
pub fn forward(params: &RaiseParameters, ex: &ListBatchExample, training: bool, rng: &mut SeededRng) -> Result<Vec<f64>> {
    Ok(params.forward_cached(ex, training, rng)?.scores)
}

/// The same computation as [`forward`], assembled from the public
/// sub-operations. Slower; used to cross-check the cached path.
pub fn forward_by_composition(params: &RaiseParameters, ex: &ListBatchExample) -> Result<Vec<f64>> {
    let mut f = build_sequence(ex, params)?;
    let a = match &params.gate {
        Some(g) => {
            let (p_bar, q_bar) = list_context(ex, params)?;
            intention_gate(g, &p_bar, &q_bar)?
        }
        None => vec![1.0],
    };
    let mut rng = SeededRng::new(0);
    for (i, blk) in params.blocks.iter().enumerate() {
        f = encoder_block(&f, &a, &params.banks[params.bank_for(i)], blk, false, &mut rng)?;
    }
    let logits: Vec<f64> = f.matmul(&params.w_p.value)?.as_slice().iter().map(|z| z + params.b_p.value.get(0, 0)).collect();
    Ok(softmax(&logits))
}

/// `−Σ y·ln ŷ` with each score floored at [`LOG_CLAMP`]; also returns how
/// many positives hit the floor.
pub fn nll_with_clamps(scores: &[f64], labels: &[f64]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut clamped = 0;
    for (&s, &y) in scores.iter().zip(labels) {
        if y != 0.0 {
            if s < LOG_CLAMP {
                clamped += 1;
            }
            loss -= y * s.max(LOG_CLAMP).ln();
        }
    }
    (loss, clamped)
}

pub fn nll_loss(scores: &[f64], labels: &[f64]) -> f64 {
    nll_with_clamps(scores, labels).0
}

/// Gradient of the list NLL with respect to the logits: `ŷ·Σy − y`.
pub(crate) fn nll_logit_grad(scores: &[f64], labels: &[f64]) -> Vec<f64> {
    let total: f64 = labels.iter().sum();
    scores.iter().zip(labels).map(|(s, y)| s * total - y).collect()
}
