//! GMF global ranker: `σ(hᵀ(p_u ⊙ q_i))`, trained with binary
//! cross-entropy on observed positives plus uniformly sampled negatives.
//! Produces the initial top-n list that the re-ranker refines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::data::{parse_id, ImplicitDataset, ItemId, UserId};
use crate::error::{RaiseError, Result};
use crate::numerics::{adam_step, glorot_from, AdamHyper, Parameter, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct GmfConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub neg_per_pos: usize,
    pub seed: u64,
}

impl Default for GmfConfig {
    fn default() -> Self {
        GmfConfig {
            dim: 32,
            epochs: 100,
            lr: 0.01,
            neg_per_pos: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmfModel {
    users: Vec<UserId>,
    items: Vec<ItemId>,
    user_index: BTreeMap<UserId, usize>,
    item_index: BTreeMap<ItemId, usize>,
    /// |U|×d user latents.
    pub p: Parameter,
    /// |I|×d item latents.
    pub q: Parameter,
    /// d×1 output weights.
    pub h: Parameter,
}

impl GmfModel {
    pub fn init(users: &[UserId], items: &[ItemId], dim: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let p = Parameter::new("gmf.P", glorot_from(users.len(), dim, &mut rng));
        let q = Parameter::new("gmf.Q", glorot_from(items.len(), dim, &mut rng));
        let h = Parameter::new("gmf.h", glorot_from(dim, 1, &mut rng));
        GmfModel {
            users: users.to_vec(),
            items: items.to_vec(),
            user_index: users.iter().enumerate().map(|(i, &u)| (u, i)).collect(),
            item_index: items.iter().enumerate().map(|(i, &it)| (it, i)).collect(),
            p,
            q,
            h,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.value.rows()
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn user_row(&self, u: UserId) -> Result<usize> {
        self.user_index.get(&u).copied().ok_or_else(|| RaiseError::Lookup {
            kind: "user",
            id: u.to_string(),
        })
    }

    pub fn item_row(&self, i: ItemId) -> Result<usize> {
        self.item_index.get(&i).copied().ok_or_else(|| RaiseError::Lookup {
            kind: "item",
            id: i.to_string(),
        })
    }

    pub fn user_latent(&self, u: UserId) -> Result<&[f64]> {
        Ok(self.p.value.row(self.user_row(u)?))
    }

    pub fn item_latent(&self, i: ItemId) -> Result<&[f64]> {
        Ok(self.q.value.row(self.item_row(i)?))
    }

    pub fn score(&self, u: UserId, i: ItemId) -> Result<f64> {
        gmf_score(self.user_latent(u)?, self.item_latent(i)?, self.h.value.as_slice())
    }

    pub fn parameters(&self) -> [&Parameter; 3] {
        [&self.p, &self.q, &self.h]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.p, &mut self.q, &mut self.h]
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `σ(Σ_k h_k p_k q_k)`.
pub fn gmf_score(p: &[f64], q: &[f64], h: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.len() != h.len() {
        return Err(RaiseError::Dimension {
            op: "gmf_score",
            left: (p.len(), q.len()),
            right: (h.len(), 1),
        });
    }
    let z: f64 = p.iter().zip(q).zip(h).map(|((a, b), c)| a * b * c).sum();
    Ok(sigmoid(z))
}

/// `(user row, item row, label)` triples: every positive plus
/// `neg_per_pos` uniformly drawn non-positives, sampled once.
fn sample_training_set(ds: &ImplicitDataset, neg_per_pos: usize, rng: &mut SeededRng) -> Vec<(usize, usize, f64)> {
    let n_items = ds.items().len();
    let mut out = Vec::new();
    for (ui, &u) in ds.users().iter().enumerate() {
        let pos = ds.positives(u);
        let can_sample = pos.len() < n_items;
        for &i in pos {
            out.push((ui, ds.item_index(i).expect("registered item"), 1.0));
            if !can_sample {
                continue;
            }
            for _ in 0..neg_per_pos {
                let neg = loop {
                    let j = rng.below(n_items);
                    if !pos.contains(&ds.items()[j]) {
                        break j;
                    }
                };
                out.push((ui, neg, 0.0));
            }
        }
    }
    out
}

fn bce(s: f64, y: f64) -> f64 {
    let s = s.clamp(1e-12, 1.0 - 1e-12);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// Mean BCE and its full-batch gradient, accumulated into the parameters.
fn bce_epoch(model: &mut GmfModel, samples: &[(usize, usize, f64)]) -> f64 {
    let dim = model.dim();
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let h = model.h.value.as_slice().to_vec();
    for &(u, i, y) in samples {
        let pu = model.p.value.row(u).to_vec();
        let qi = model.q.value.row(i).to_vec();
        let z: f64 = (0..dim).map(|k| h[k] * pu[k] * qi[k]).sum();
        let s = sigmoid(z);
        loss += bce(s, y) * scale;
        let dz = (s - y) * scale;
        let gp = model.p.grad.row_mut(u);
        for k in 0..dim {
            gp[k] += dz * h[k] * qi[k];
        }
        let gq = model.q.grad.row_mut(i);
        for k in 0..dim {
            gq[k] += dz * h[k] * pu[k];
        }
        let gh = model.h.grad.as_mut_slice();
        for k in 0..dim {
            gh[k] += dz * pu[k] * qi[k];
        }
    }
    loss
}

/// Trains GMF and returns it with the per-epoch BCE, measured on the fixed
/// sampled set before each update.
pub fn train_gmf_with_history(ds: &ImplicitDataset, cfg: &GmfConfig) -> Result<(GmfModel, Vec<f64>)> {
    if ds.num_positives() == 0 {
        return Err(RaiseError::EmptyDataset("no positives to train the base ranker on".into()));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut model = GmfModel::init(ds.users(), ds.items(), cfg.dim, cfg.seed.wrapping_add(1));
    let samples = sample_training_set(ds, cfg.neg_per_pos, &mut rng);
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        history.push(bce_epoch(&mut model, &samples));
        for p in model.parameters_mut() {
            adam_step(p, &hyper)?;
        }
    }
    Ok((model, history))
}

pub fn train_gmf(ds: &ImplicitDataset, cfg: &GmfConfig) -> Result<GmfModel> {
    train_gmf_with_history(ds, cfg).map(|(m, _)| m)
}

/// One user's ordered candidates with their scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct items and non-increasing scores.
    pub fn is_well_formed(&self) -> bool {
        let distinct = self.items.iter().collect::<BTreeSet<_>>().len() == self.items.len();
        distinct
            && self.items.len() == self.scores.len()
            && self.scores.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Top-`n` items for `user` by GMF score; ties go to the lower item id.
pub fn initial_list(
    model: &GmfModel,
    user: UserId,
    n: usize,
    exclude: Option<&BTreeSet<ItemId>>,
) -> Result<RankedList> {
    let row = model.user_row(user)?;
    let pu = model.p.value.row(row);
    let h = model.h.value.as_slice();
    let mut scored: Vec<(ItemId, f64)> = model
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| exclude.is_none_or(|ex| !ex.contains(it)))
        .map(|(j, &it)| {
            let z = pu.iter().zip(model.q.value.row(j)).zip(h).map(|((a, b), c)| a * b * c).sum();
            (it, sigmoid(z))
        })
        .collect();
    if n > scored.len() {
        return Err(RaiseError::Capacity {
            requested: n,
            available: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(RankedList {
        user,
        items: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
    })
}

const LIST_HEADER: &str = "# user_id\titem_id\tscore";

pub fn write_lists(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut buf = String::from(LIST_HEADER);
    buf.push('\n');
    for l in lists {
        for (it, s) in l.items.iter().zip(&l.scores) {
            buf.push_str(&format!("{}\t{}\t{:.9}\n", l.user, it, s));
        }
    }
    fs::write(path, buf).map_err(|e| RaiseError::io(path, e))
}

/// Reads lists back in file order; consecutive lines of one user form one list.
pub fn read_lists(path: &Path) -> Result<Vec<RankedList>> {
    let text = fs::read_to_string(path).map_err(|e| RaiseError::io(path, e))?;
    let source = path.display().to_string();
    let mut out: Vec<RankedList> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| RaiseError::Parse {
            path: source.clone(),
            line: idx + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let user = UserId(parse_id(f[0]).ok_or_else(|| err(format!("bad user id {:?}", f[0])))?);
        let item = ItemId(parse_id(f[1]).ok_or_else(|| err(format!("bad item id {:?}", f[1])))?);
        let score: f64 = f[2].parse().map_err(|_| err(format!("bad score {:?}", f[2])))?;
        match out.last_mut() {
            Some(l) if l.user == user => {
                l.items.push(item);
                l.scores.push(score);
            }
            _ => out.push(RankedList {
                user,
                items: vec![item],
                scores: vec![score],
            }),
        }
    }
    Ok(out)
}
