//! Interaction ingestion, implicit binarization, user-level splits and
//! review embedding stores.
//!
//! Identifiers in every input file are an optional ASCII-letter/underscore
//! prefix followed by a decimal number (`u17`, `item_42`, `9`). The number
//! is the entity's identity; the prefix is cosmetic and is rewritten as `u`
//! or `i` on output.

mod reviews;
mod rve;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{RaiseError, Result};
use crate::numerics::SeededRng;

pub use reviews::{
    baseline_review_feature, hash_embed_reviews, load_review_jsonl, pad_review_sequence,
    parse_review_jsonl, word_vector, write_review_jsonl, EntityKind, PaddedReviews, ReviewRecord,
    ReviewStore,
};
pub use rve::{decode_rve, encode_rve, load_review_embeddings, save_review_embeddings};
pub use synth::{gen_synthetic, SynthConfig, SynthData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

/// Parses `[A-Za-z_]*[0-9]+` into its numeric part.
pub fn parse_id(raw: &str) -> Option<u64> {
    let digits_at = raw.find(|c: char| c.is_ascii_digit())?;
    let (prefix, digits) = raw.split_at(digits_at);
    if !prefix.chars().all(|c| c.is_ascii_alphabetic() || c == '_') {
        return None;
    }
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

pub fn load_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path).map_err(|e| RaiseError::io(path, e))?;
    parse_interactions(&text, &path.display().to_string())
}

/// Parses interaction TSV: `user<TAB>item<TAB>rating[<TAB>timestamp]`.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_interactions(text: &str, source: &str) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| RaiseError::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!("expected 3 or 4 tab-separated fields, found {}", fields.len())));
        }
        let user = parse_id(fields[0]).ok_or_else(|| err(format!("bad user id {:?}", fields[0])))?;
        let item = parse_id(fields[1]).ok_or_else(|| err(format!("bad item id {:?}", fields[1])))?;
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad rating {:?}", fields[2])))?;
        if !rating.is_finite() {
            return Err(err(format!("non-finite rating {:?}", fields[2])));
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(t.parse().map_err(|_| err(format!("bad timestamp {t:?}")))?),
            None => None,
        };
        out.push(Interaction {
            user: UserId(user),
            item: ItemId(item),
            rating,
            timestamp,
        });
    }
    Ok(out)
}

pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<()> {
    let mut buf = String::from("# user_id\titem_id\trating\ttimestamp\n");
    for it in interactions {
        buf.push_str(&format!("{}\t{}\t{}", it.user, it.item, it.rating));
        if let Some(ts) = it.timestamp {
            buf.push_str(&format!("\t{ts}"));
        }
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| RaiseError::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| RaiseError::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Binary implicit feedback with a per-user split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitDataset {
    users: Vec<UserId>,
    items: Vec<ItemId>,
    user_index: BTreeMap<UserId, usize>,
    item_index: BTreeMap<ItemId, usize>,
    positives: BTreeMap<UserId, BTreeSet<ItemId>>,
    splits: BTreeMap<UserId, Split>,
}

impl ImplicitDataset {
    fn from_positives(positives: BTreeMap<UserId, BTreeSet<ItemId>>, items: BTreeSet<ItemId>) -> Self {
        let users: Vec<UserId> = positives.keys().copied().collect();
        let items: Vec<ItemId> = items.into_iter().collect();
        let user_index = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index = items.iter().enumerate().map(|(i, &it)| (it, i)).collect();
        ImplicitDataset {
            users,
            items,
            user_index,
            item_index,
            positives,
            splits: BTreeMap::new(),
        }
    }

    /// Users in ascending id order; a user's position here is its row index.
    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn user_index(&self, u: UserId) -> Option<usize> {
        self.user_index.get(&u).copied()
    }

    pub fn item_index(&self, i: ItemId) -> Option<usize> {
        self.item_index.get(&i).copied()
    }

    pub fn positives(&self, u: UserId) -> &BTreeSet<ItemId> {
        static EMPTY: BTreeSet<ItemId> = BTreeSet::new();
        self.positives.get(&u).unwrap_or(&EMPTY)
    }

    pub fn num_positives(&self) -> usize {
        self.positives.values().map(BTreeSet::len).sum()
    }

    pub fn split_of(&self, u: UserId) -> Option<Split> {
        self.splits.get(&u).copied()
    }

    pub fn users_in(&self, split: Split) -> Vec<UserId> {
        self.users
            .iter()
            .copied()
            .filter(|u| self.splits.get(u) == Some(&split))
            .collect()
    }

    /// One rating-1 interaction per positive pair, in (user, item) order.
    pub fn to_interactions(&self) -> Vec<Interaction> {
        self.positives
            .iter()
            .flat_map(|(&u, items)| {
                items.iter().map(move |&i| Interaction {
                    user: u,
                    item: i,
                    rating: 1.0,
                    timestamp: None,
                })
            })
            .collect()
    }

    /// Drops users with fewer than `min` positives. Items stay registered.
    pub fn filter_min_interactions(&self, min: usize) -> Result<ImplicitDataset> {
        let kept: BTreeMap<UserId, BTreeSet<ItemId>> = self
            .positives
            .iter()
            .filter(|(_, s)| s.len() >= min)
            .map(|(&u, s)| (u, s.clone()))
            .collect();
        if kept.is_empty() {
            return Err(RaiseError::EmptyDataset(format!("no user has at least {min} interactions")));
        }
        let mut ds = ImplicitDataset::from_positives(kept, self.items.iter().copied().collect());
        ds.splits = self
            .splits
            .iter()
            .filter(|(u, _)| ds.user_index.contains_key(u))
            .map(|(&u, &s)| (u, s))
            .collect();
        Ok(ds)
    }
}

/// Every rated pair becomes a positive, whatever the rating value.
pub fn binarize(interactions: &[Interaction]) -> Result<ImplicitDataset> {
    if interactions.is_empty() {
        return Err(RaiseError::EmptyDataset("no interactions".into()));
    }
    let mut positives: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
    let mut items = BTreeSet::new();
    for it in interactions {
        positives.entry(it.user).or_default().insert(it.item);
        items.insert(it.item);
    }
    Ok(ImplicitDataset::from_positives(positives, items))
}

/// Seeded user-level partition. Validation and test sizes are
/// `round(ratio · |users|)`; training takes the remainder.
pub fn split_users(ds: &ImplicitDataset, ratios: (f64, f64, f64), seed: u64) -> Result<ImplicitDataset> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(RaiseError::Config(format!(
            "split ratios ({tr}, {va}, {te}) must be in [0,1] and sum to 1"
        )));
    }
    let n = ds.users.len();
    let n_val = (va * n as f64).round() as usize;
    let n_test = ((te * n as f64).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n);
    let n_train = n - n_val - n_test;

    let mut order = ds.users.clone();
    SeededRng::new(seed).shuffle(&mut order);
    let mut out = ds.clone();
    out.splits = order
        .into_iter()
        .enumerate()
        .map(|(pos, u)| {
            let s = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (u, s)
        })
        .collect();
    Ok(out)
}

/// Positives withheld from the base ranker, per user.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BaseHoldout {
    pub observed: BTreeMap<UserId, BTreeSet<ItemId>>,
    pub heldout: BTreeMap<UserId, BTreeSet<ItemId>>,
}

impl BaseHoldout {
    /// Dataset containing only the observed pairs (same split labels).
    pub fn observed_dataset(&self, full: &ImplicitDataset) -> ImplicitDataset {
        let mut ds = ImplicitDataset::from_positives(self.observed.clone(), full.items.iter().copied().collect());
        ds.splits = full.splits.clone();
        ds
    }
}

/// Withholds `per_user` randomly chosen positives of every user from the
/// base ranker, always leaving at least one observed positive.
/// `per_user = 0` observes everything.
pub fn holdout_positives(ds: &ImplicitDataset, per_user: usize, seed: u64) -> BaseHoldout {
    let mut rng = SeededRng::new(seed ^ 0x686f_6c64_6f75_74);
    let mut out = BaseHoldout::default();
    for (&u, items) in &ds.positives {
        let mut list: Vec<ItemId> = items.iter().copied().collect();
        rng.shuffle(&mut list);
        let k = per_user.min(list.len().saturating_sub(1));
        out.heldout.insert(u, list[..k].iter().copied().collect());
        out.observed.insert(u, list[k..].iter().copied().collect());
    }
    out
}
