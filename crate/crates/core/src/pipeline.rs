//! End-to-end experiment protocol shared by the command-line tool and the
//! acceptance suite.
//!
//! 1. Binarize interactions, optionally drop users with few positives, and
//!    split users into train/validation/test.
//! 2. Withhold `base_holdout` positives per user from the base ranker and
//!    train GMF on the rest (by default nothing is withheld).
//! 3. Build each user's top-`n` initial list. With `exclude_train`, items the
//!    base ranker saw as positives are left out of the candidates and out of
//!    the relevance set, so lists are judged on withheld positives only.
//! 4. Train the re-ranker on training-user lists, select on validation
//!    users, report on test users.

use std::collections::{BTreeMap, BTreeSet};

use crate::base_ranker::{initial_list, train_gmf, GmfConfig, GmfModel, RankedList};
use crate::data::{binarize, holdout_positives, split_users, BaseHoldout, ImplicitDataset, Interaction, ItemId, ReviewStore, Split, UserId};
use crate::error::{RaiseError, Result};
use crate::eval::{evaluate, ApDenominator, MetricTable};
use crate::model::{rerank, train, ListBatchExample, RaiseConfig, RaiseParameters, TrainReport};

pub const INITIAL_METHOD: &str = "gmf_initial";

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub split: (f64, f64, f64),
    pub min_interactions: usize,
    pub base_holdout: usize,
    pub exclude_train: bool,
    pub gmf: GmfConfig,
    pub ks: Vec<usize>,
    pub ap_denominator: ApDenominator,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            split: (0.8, 0.1, 0.1),
            min_interactions: 0,
            base_holdout: 0,
            exclude_train: false,
            gmf: GmfConfig::default(),
            ks: vec![5, 10, 20],
            ap_denominator: ApDenominator::MinKRelevant,
        }
    }
}

/// Split dataset plus the base ranker's view of it.
pub fn prepare_dataset(interactions: &[Interaction], protocol: &ProtocolConfig, seed: u64) -> Result<(ImplicitDataset, BaseHoldout)> {
    let mut ds = binarize(interactions)?;
    if protocol.min_interactions > 1 {
        ds = ds.filter_min_interactions(protocol.min_interactions)?;
    }
    let ds = split_users(&ds, protocol.split, seed)?;
    let holdout = holdout_positives(&ds, protocol.base_holdout, seed);
    Ok((ds, holdout))
}

/// Per-user relevant items: all positives, minus the base ranker's observed
/// ones when those are excluded from the lists.
pub fn relevance(ds: &ImplicitDataset, holdout: &BaseHoldout, exclude_train: bool) -> BTreeMap<UserId, BTreeSet<ItemId>> {
    ds.users()
        .iter()
        .map(|&u| {
            let all = ds.positives(u);
            let rel = match (exclude_train, holdout.observed.get(&u)) {
                (true, Some(seen)) => all.difference(seen).copied().collect(),
                _ => all.clone(),
            };
            (u, rel)
        })
        .collect()
}

pub fn make_lists(
    ds: &ImplicitDataset,
    holdout: &BaseHoldout,
    gmf: &GmfModel,
    n: usize,
    exclude_train: bool,
) -> Result<BTreeMap<Split, Vec<RankedList>>> {
    let mut out = BTreeMap::new();
    for split in Split::ALL {
        let lists = ds
            .users_in(split)
            .into_iter()
            .map(|u| {
                let exclude = if exclude_train { holdout.observed.get(&u) } else { None };
                initial_list(gmf, u, n, exclude)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(split, lists);
    }
    Ok(out)
}

pub fn build_examples(
    lists: &[RankedList],
    relevant: &BTreeMap<UserId, BTreeSet<ItemId>>,
    store: &ReviewStore,
    cfg: &RaiseConfig,
) -> Result<Vec<ListBatchExample>> {
    lists
        .iter()
        .map(|l| {
            let rel = relevant
                .get(&l.user)
                .ok_or_else(|| RaiseError::Data(format!("no relevance set for user {}", l.user)))?;
            Ok(ListBatchExample::build(l.clone(), rel.clone(), store, cfg.l_u, cfg.l_i))
        })
        .collect()
}

pub fn evaluate_lists(
    method: &str,
    lists: &[RankedList],
    relevant: &BTreeMap<UserId, BTreeSet<ItemId>>,
    protocol: &ProtocolConfig,
) -> Result<MetricTable> {
    let ranked: BTreeMap<UserId, Vec<ItemId>> = lists.iter().map(|l| (l.user, l.items.clone())).collect();
    evaluate(method, &ranked, relevant, &protocol.ks, protocol.ap_denominator)
}

pub fn rerank_all(params: &RaiseParameters, examples: &[ListBatchExample]) -> Result<Vec<RankedList>> {
    examples.iter().map(|ex| rerank(params, ex)).collect()
}

/// Everything produced by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub gmf: GmfModel,
    pub params: RaiseParameters,
    pub report: TrainReport,
    /// Initial-list rows followed by re-ranked rows, on test users.
    pub metrics: MetricTable,
}

/// Prepared inputs for one seed, reusable across re-ranker variants.
#[derive(Clone, Debug)]
pub struct PreparedRun {
    pub gmf: GmfModel,
    pub train: Vec<ListBatchExample>,
    pub val: Vec<ListBatchExample>,
    pub test: Vec<ListBatchExample>,
    pub relevant: BTreeMap<UserId, BTreeSet<ItemId>>,
    pub initial_metrics: MetricTable,
}

pub fn prepare_run(
    interactions: &[Interaction],
    store: &ReviewStore,
    protocol: &ProtocolConfig,
    raise: &RaiseConfig,
    seed: u64,
) -> Result<PreparedRun> {
    let (ds, holdout) = prepare_dataset(interactions, protocol, seed)?;
    let gmf_cfg = GmfConfig {
        seed,
        dim: raise.d,
        ..protocol.gmf.clone()
    };
    let gmf = train_gmf(&holdout.observed_dataset(&ds), &gmf_cfg)?;
    let lists = make_lists(&ds, &holdout, &gmf, raise.n, protocol.exclude_train)?;
    let relevant = relevance(&ds, &holdout, protocol.exclude_train);
    let examples = |s: Split| build_examples(&lists[&s], &relevant, store, raise);
    let initial_metrics = evaluate_lists(INITIAL_METHOD, &lists[&Split::Test], &relevant, protocol)?;
    Ok(PreparedRun {
        gmf,
        train: examples(Split::Train)?,
        val: examples(Split::Val)?,
        test: examples(Split::Test)?,
        relevant,
        initial_metrics,
    })
}

/// Trains one re-ranker variant on a prepared run and scores its test lists.
pub fn run_variant(prepared: &PreparedRun, raise: RaiseConfig, method: &str, protocol: &ProtocolConfig) -> Result<(RaiseParameters, TrainReport, MetricTable)> {
    let (params, report) = train(prepared.gmf.clone(), &prepared.train, &prepared.val, raise)?;
    let reranked = rerank_all(&params, &prepared.test)?;
    let table = evaluate_lists(method, &reranked, &prepared.relevant, protocol)?;
    Ok((params, report, table))
}

pub fn run_experiment(
    interactions: &[Interaction],
    store: &ReviewStore,
    protocol: &ProtocolConfig,
    raise: RaiseConfig,
    seed: u64,
) -> Result<ExperimentResult> {
    let prepared = prepare_run(interactions, store, protocol, &raise, seed)?;
    let method = raise.ablation.name().to_string();
    let (params, report, table) = run_variant(&prepared, raise, &method, protocol)?;
    let mut metrics = prepared.initial_metrics.clone();
    metrics.extend(table);
    Ok(ExperimentResult {
        gmf: prepared.gmf,
        params,
        report,
        metrics,
    })
}
