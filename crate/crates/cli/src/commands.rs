use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use raise_core::base_ranker::{read_lists, train_gmf, write_lists, GmfConfig, GmfModel, RankedList};
use raise_core::checkpoint::{load_gmf, load_raise, save_gmf, save_raise};
use raise_core::data::{
    gen_synthetic, hash_embed_reviews, load_interactions, load_review_embeddings, load_review_jsonl,
    save_review_embeddings, write_interactions, write_review_jsonl, BaseHoldout, ImplicitDataset, ItemId,
    ReviewStore, Split, UserId,
};
use raise_core::dte::{
    cost_report, dynamic_self_attention, format_cost_tsv, intention_gate, multi_head, self_attention, ExpertBank,
    IntentionGate, StaticAttentionParams,
};
use raise_core::model::{explain, rerank, train, Ablation, ListBatchExample, RaiseParameters};
use raise_core::numerics::{glorot_init, Matrix, SeededRng};
use raise_core::pipeline::{build_examples, evaluate_lists, make_lists, prepare_dataset, relevance, rerank_all, INITIAL_METHOD};
use raise_core::{RaiseError, Result};

use crate::config::RunConfig;

pub const INTERACTIONS: &str = "interactions.tsv";
pub const REVIEWS: &str = "reviews.jsonl";
pub const EMBEDDINGS: &str = "embeddings.rve";
pub const GMF_CKPT: &str = "gmf.ckpt";
pub const RAISE_CKPT: &str = "raise.ckpt";
pub const METRICS: &str = "metrics.tsv";
pub const COST: &str = "cost.tsv";
pub const EXPLAIN: &str = "explain.tsv";

pub const ABLATIONS: [Ablation; 4] = [Ablation::Full, Ablation::NoIdm, Ablation::NoDte, Ablation::NoBoth];

pub fn lists_file(split: Split) -> String {
    format!("lists_{}.tsv", split.name())
}

fn require(path: PathBuf, producer: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(RaiseError::Dependency { path, producer })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RaiseError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Split dataset and base-ranker holdout, rebuilt from the interactions.
struct Data {
    ds: ImplicitDataset,
    holdout: BaseHoldout,
}

impl Data {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let path = match &cfg.interactions {
            Some(p) => p.clone(),
            None => require(cfg.path(INTERACTIONS), "gen-synth")?,
        };
        let (ds, holdout) = prepare_dataset(&load_interactions(&path)?, &cfg.protocol, cfg.raise.seed)?;
        Ok(Data { ds, holdout })
    }

    fn gmf(&self, cfg: &RunConfig) -> Result<GmfModel> {
        let observed = self.holdout.observed_dataset(&self.ds);
        load_gmf(&require(cfg.path(GMF_CKPT), "train-base")?, observed.users(), observed.items())
    }

    fn relevant(&self, cfg: &RunConfig) -> BTreeMap<UserId, std::collections::BTreeSet<ItemId>> {
        relevance(&self.ds, &self.holdout, cfg.protocol.exclude_train)
    }
}

fn review_store(cfg: &RunConfig) -> Result<ReviewStore> {
    let path = match &cfg.embeddings {
        Some(p) => p.clone(),
        None => require(cfg.path(EMBEDDINGS), "embed-reviews")?,
    };
    let store = load_review_embeddings(&path)?;
    if store.dim() != cfg.raise.d {
        return Err(RaiseError::Config(format!(
            "review embeddings have width {}, but d={}",
            store.dim(),
            cfg.raise.d
        )));
    }
    Ok(store)
}

fn lists(cfg: &RunConfig, split: Split) -> Result<Vec<RankedList>> {
    read_lists(&require(cfg.path(&lists_file(split)), "make-lists")?)
}

fn examples(cfg: &RunConfig, data: &Data, store: &ReviewStore, split: Split) -> Result<Vec<ListBatchExample>> {
    build_examples(&lists(cfg, split)?, &data.relevant(cfg), store, &cfg.raise)
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    let synth = gen_synthetic(&cfg.synth)?;
    write_interactions(&cfg.path(INTERACTIONS), &synth.interactions)?;
    write_review_jsonl(&cfg.path(REVIEWS), &synth.reviews)?;
    info!(
        "wrote {} interactions and {} reviews",
        synth.interactions.len(),
        synth.reviews.len()
    );
    Ok(())
}

pub fn embed_reviews(cfg: &RunConfig) -> Result<()> {
    let path = match &cfg.reviews {
        Some(p) => p.clone(),
        None => require(cfg.path(REVIEWS), "gen-synth")?,
    };
    let records = load_review_jsonl(&path)?;
    let store = hash_embed_reviews(&records, cfg.raise.d, cfg.embed_seed, cfg.raise.l_u, cfg.raise.l_i);
    save_review_embeddings(&cfg.path(EMBEDDINGS), &store)
}

pub fn train_base(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let gmf_cfg = GmfConfig {
        dim: cfg.raise.d,
        seed: cfg.raise.seed,
        ..cfg.protocol.gmf.clone()
    };
    let gmf = train_gmf(&data.holdout.observed_dataset(&data.ds), &gmf_cfg)?;
    save_gmf(&cfg.path(GMF_CKPT), &gmf)
}

pub fn make_lists_cmd(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let gmf = data.gmf(cfg)?;
    let by_split = make_lists(&data.ds, &data.holdout, &gmf, cfg.raise.n, cfg.protocol.exclude_train)?;
    for (split, lists) in &by_split {
        write_lists(&cfg.path(&lists_file(*split)), lists)?;
    }
    Ok(())
}

pub fn train_rerank(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let gmf = data.gmf(cfg)?;
    let store = review_store(cfg)?;
    let train_ex = examples(cfg, &data, &store, Split::Train)?;
    let val_ex = examples(cfg, &data, &store, Split::Val)?;
    let (params, report) = train(gmf, &train_ex, &val_ex, cfg.raise.clone())?;
    info!(
        "best epoch {} of {}, train nll {:.4} -> {:.4}",
        report.best_epoch,
        cfg.raise.epochs,
        report.initial_nll(),
        report.min_nll()
    );
    save_raise(&cfg.path(RAISE_CKPT), &params)
}

fn load_trained(cfg: &RunConfig, data: &Data) -> Result<RaiseParameters> {
    let path = require(cfg.path(RAISE_CKPT), "train-rerank")?;
    load_raise(&path, cfg.raise.clone(), data.gmf(cfg)?)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let params = load_trained(cfg, &data)?;
    let store = review_store(cfg)?;
    let test = examples(cfg, &data, &store, Split::Test)?;
    let relevant = data.relevant(cfg);
    let mut table = evaluate_lists(INITIAL_METHOD, &lists(cfg, Split::Test)?, &relevant, &cfg.protocol)?;
    let reranked = rerank_all(&params, &test)?;
    table.extend(evaluate_lists(cfg.raise.ablation.name(), &reranked, &relevant, &cfg.protocol)?);
    table.write_tsv(&cfg.path(METRICS))
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let gmf = data.gmf(cfg)?;
    let store = review_store(cfg)?;
    let train_ex = examples(cfg, &data, &store, Split::Train)?;
    let val_ex = examples(cfg, &data, &store, Split::Val)?;
    let test_ex = examples(cfg, &data, &store, Split::Test)?;
    let relevant = data.relevant(cfg);
    let mut table = evaluate_lists(INITIAL_METHOD, &lists(cfg, Split::Test)?, &relevant, &cfg.protocol)?;
    for ablation in ABLATIONS {
        let raise = raise_core::model::RaiseConfig {
            ablation,
            ..cfg.raise.clone()
        };
        let (params, _) = train(gmf.clone(), &train_ex, &val_ex, raise)?;
        let reranked = rerank_all(&params, &test_ex)?;
        table.extend(evaluate_lists(ablation.name(), &reranked, &relevant, &cfg.protocol)?);
        info!("trained {}", ablation.name());
    }
    table.write_tsv(&cfg.path(METRICS))
}

/// Mean seconds per call of each attention mechanism on random inputs.
fn bench_mechanisms(cfg: &RunConfig) -> Result<Vec<(&'static str, f64)>> {
    let r = &cfg.raise;
    let mut rng = SeededRng::new(r.seed);
    let s = glorot_init(r.n, r.d, r.seed);
    let w: Vec<Matrix> = (0..3).map(|k| glorot_init(r.d, r.d, r.seed + 1 + k)).collect();
    let mh = StaticAttentionParams::new(r.d, cfg.heads, &mut rng)?;
    let bank = ExpertBank::new("bench", r.t, r.d, &mut rng);
    let gate = IntentionGate::new("bench", r.d, r.t, &mut rng);
    let ctx = vec![0.1; r.d];
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        for _ in 0..cfg.bench_reps {
            f()?;
        }
        Ok(start.elapsed().as_secs_f64() / cfg.bench_reps as f64)
    };
    Ok(vec![
        ("static", time(&mut || self_attention(&s, &w[0], &w[1], &w[2]).map(drop))?),
        ("multihead", time(&mut || multi_head(&s, &mh).map(drop))?),
        (
            "dynamic",
            time(&mut || {
                let a = intention_gate(&gate, &ctx, &ctx)?;
                dynamic_self_attention(&s, &a, &bank).map(drop)
            })?,
        ),
    ])
}

pub fn profile(cfg: &RunConfig) -> Result<()> {
    let r = &cfg.raise;
    let rows = cost_report(r.n, r.d, r.t, cfg.heads, r.b)?;
    write_text(&cfg.path(COST), &format_cost_tsv(&rows))?;
    for (name, secs) in bench_mechanisms(cfg)? {
        eprintln!("{name}\t{:.3} us per attention layer", secs * 1e6);
    }
    Ok(())
}

pub fn explain_cmd(cfg: &RunConfig) -> Result<()> {
    let data = Data::load(cfg)?;
    let params = load_trained(cfg, &data)?;
    let store = review_store(cfg)?;
    let pairs: Vec<(UserId, ItemId)> = match (cfg.user, cfg.item) {
        (Some(u), Some(i)) => vec![(UserId(u), ItemId(i))],
        (None, None) => {
            let mut out = Vec::new();
            for ex in examples(cfg, &data, &store, Split::Test)? {
                let top = rerank(&params, &ex)?;
                out.push((top.user, top.items[0]));
            }
            out
        }
        _ => return Err(RaiseError::Config("explain needs both user and item, or neither".into())),
    };
    let mut text = String::from("user\titem\tk\tj\tscore\n");
    for (u, i) in pairs {
        match explain(&params, &store, u, i, cfg.top_m) {
            Ok(e) => {
                for (k, j, score) in e.pairs {
                    text.push_str(&format!("{u}\t{i}\t{k}\t{j}\t{score:.9}\n"));
                }
            }
            Err(RaiseError::ExplanationUnavailable(why)) if cfg.user.is_none() => info!("skipping {u}/{i}: {why}"),
            Err(e) => return Err(e),
        }
    }
    write_text(&cfg.path(EXPLAIN), &text)
}
