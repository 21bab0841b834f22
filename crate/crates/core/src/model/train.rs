use std::collections::BTreeSet;

use log::info;

use crate::base_ranker::{GmfModel, RankedList};
use crate::data::{EntityKind, ItemId, PaddedReviews, ReviewStore, UserId};
use crate::error::{RaiseError, Result};
use crate::eval::{map_at_k, ApDenominator};
use crate::idm::match_scores;
use crate::model::{nll_logit_grad, nll_with_clamps, ListBatchExample, RaiseConfig, RaiseParameters};
use crate::numerics::{adam_step, AdamHyper, Parameterized, SeededRng};

const SHUFFLE_STREAM: u64 = 0x5a1;
const DROPOUT_STREAM: u64 = 0xd80;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Summed list NLL over the training lists, dropout off.
    pub train_nll: f64,
    pub val_map5: f64,
    /// Positives whose score hit the log floor during this epoch's updates.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn initial_nll(&self) -> f64 {
        self.epochs[0].train_nll
    }

    pub fn min_nll(&self) -> f64 {
        self.epochs.iter().map(|e| e.train_nll).fold(f64::INFINITY, f64::min)
    }
}

/// Summed NLL over `examples` in inference mode, with the clamp count.
pub fn mean_nll(params: &RaiseParameters, examples: &[ListBatchExample]) -> Result<(f64, usize)> {
    let mut rng = SeededRng::new(0);
    let mut total = 0.0;
    let mut clamped = 0;
    for ex in examples.iter().filter(|e| e.has_positive()) {
        let scores = params.forward_cached(ex, false, &mut rng)?.scores;
        let (l, c) = nll_with_clamps(&scores, &ex.labels);
        total += l;
        clamped += c;
    }
    Ok((total, clamped))
}

fn validation_map5(params: &RaiseParameters, examples: &[ListBatchExample]) -> Result<f64> {
    let reranked = examples.iter().map(|ex| rerank(params, ex)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&[ItemId], &BTreeSet<ItemId>)> = reranked
        .iter()
        .zip(examples)
        .map(|(l, ex)| (l.items.as_slice(), &ex.relevant))
        .collect();
    Ok(map_at_k(&pairs, 5, ApDenominator::MinKRelevant))
}

/// Mini-batch Adam on the list NLL for `config.epochs` epochs. `params` ends
/// at the trained epoch with the best validation MAP@5, earliest on ties.
/// Without validation lists, or with zero epochs, the last state is kept.
pub fn fit(params: &mut RaiseParameters, train: &[ListBatchExample], val: &[ListBatchExample]) -> Result<TrainReport> {
    let cfg = params.config().clone();
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut shuffle_rng = SeededRng::derive(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = SeededRng::derive(cfg.seed, DROPOUT_STREAM);
    let usable: Vec<&ListBatchExample> = train.iter().filter(|e| e.has_positive()).collect();

    let stats = |p: &RaiseParameters, epoch: usize, clamped: usize| -> Result<EpochStats> {
        Ok(EpochStats {
            epoch,
            train_nll: mean_nll(p, train)?.0,
            val_map5: if val.is_empty() { 0.0 } else { validation_map5(p, val)? },
            clamped,
        })
    };
    let first = stats(params, 0, 0)?;
    info!("epoch 0: train nll {:.6}, val MAP@5 {:.4}", first.train_nll, first.val_map5);
    let mut best = (first.val_map5, 0, params.clone());
    let mut epochs = vec![first];

    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut clamped = 0;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grad();
            for &i in batch {
                let ex = usable[i];
                let cache = params.forward_cached(ex, true, &mut dropout_rng)?;
                clamped += nll_with_clamps(&cache.scores, &ex.labels).1;
                let dlogits = nll_logit_grad(&cache.scores, &ex.labels);
                params.backward(&cache, &dlogits);
            }
            for p in params.trainable_mut() {
                adam_step(p, &hyper)?;
            }
        }
        let s = stats(params, epoch, clamped)?;
        info!(
            "epoch {epoch}: train nll {:.6}, val MAP@5 {:.4}, clamped {clamped}",
            s.train_nll, s.val_map5
        );
        if val.is_empty() || epoch == 1 || s.val_map5 > best.0 {
            best = (s.val_map5, epoch, params.clone());
        }
        epochs.push(s);
    }
    let best_epoch = best.1;
    *params = best.2;
    params.zero_grad();
    Ok(TrainReport { epochs, best_epoch })
}

pub fn train(
    gmf: GmfModel,
    train_lists: &[ListBatchExample],
    val_lists: &[ListBatchExample],
    config: RaiseConfig,
) -> Result<(RaiseParameters, TrainReport)> {
    if train_lists.is_empty() {
        return Err(RaiseError::EmptyDataset("no training lists".into()));
    }
    let mut params = RaiseParameters::init(config, gmf)?;
    let report = fit(&mut params, train_lists, val_lists)?;
    Ok((params, report))
}

/// Candidates sorted by descending re-ranker score; equal scores keep their
/// original order.
pub fn rerank(params: &RaiseParameters, ex: &ListBatchExample) -> Result<RankedList> {
    let scores = params.forward_cached(ex, false, &mut SeededRng::new(0))?.scores;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(RankedList {
        user: ex.list.user,
        items: order.iter().map(|&j| ex.list.items[j]).collect(),
        scores: order.iter().map(|&j| scores[j]).collect(),
    })
}

/// Review pairs behind a (user, item) match, strongest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub user: UserId,
    pub item: ItemId,
    /// `(user review index, item review index, score)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// The `top_m` highest-scoring pairs of real reviews under the co-attention
/// scorer. Fails when either side has no reviews.
pub fn explain(params: &RaiseParameters, store: &ReviewStore, user: UserId, item: ItemId, top_m: usize) -> Result<Explanation> {
    let cfg = params.config();
    let pad = |kind, id, l| PaddedReviews::from_reviews(store.reviews(kind, id).unwrap_or(&[]), store.dim(), l);
    let ru = pad(EntityKind::User, user.0, cfg.l_u);
    let ri = pad(EntityKind::Item, item.0, cfg.l_i);
    for (p, who) in [(&ru, user.to_string()), (&ri, item.to_string())] {
        if p.real_count == 0 {
            return Err(RaiseError::ExplanationUnavailable(format!("{who} has no reviews")));
        }
    }
    let m = match_scores(&params.idm, &ru, &ri)?;
    let mut pairs = Vec::with_capacity(ru.real_count * ri.real_count);
    for k in ru.real_indices() {
        for j in ri.real_indices() {
            pairs.push((k, j, m.c.get(k, j)));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    pairs.truncate(top_m);
    Ok(Explanation { user, item, pairs })
}
