use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::data::parse_id;
use crate::error::{RaiseError, Result};
use crate::numerics::{Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    User,
    Item,
}

impl EntityKind {
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
        }
    }

    fn prefix(self) -> char {
        match self {
            EntityKind::User => 'u',
            EntityKind::Item => 'i',
        }
    }
}

/// One raw review as read from JSONL.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewRecord {
    pub kind: EntityKind,
    pub id: u64,
    pub text: String,
}

pub fn load_review_jsonl(path: &Path) -> Result<Vec<ReviewRecord>> {
    let text = fs::read_to_string(path).map_err(|e| RaiseError::io(path, e))?;
    parse_review_jsonl(&text, &path.display().to_string())
}

pub fn parse_review_jsonl(text: &str, source: &str) -> Result<Vec<ReviewRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| RaiseError::Parse {
            path: source.to_string(),
            line: idx + 1,
            msg,
        };
        let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let kind = match v.get("kind").and_then(Value::as_str) {
            Some("user") => EntityKind::User,
            Some("item") => EntityKind::Item,
            other => return Err(err(format!("bad kind {other:?}"))),
        };
        let id = match v.get("id") {
            Some(Value::String(s)) => parse_id(s),
            Some(Value::Number(n)) => n.as_u64(),
            _ => None,
        }
        .ok_or_else(|| err("missing or malformed id".into()))?;
        let text = v
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing text".into()))?
            .to_string();
        out.push(ReviewRecord { kind, id, text });
    }
    Ok(out)
}

pub fn write_review_jsonl(path: &Path, records: &[ReviewRecord]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        let v = json!({
            "kind": r.kind.name(),
            "id": format!("{}{}", r.kind.prefix(), r.id),
            "text": r.text,
        });
        buf.push_str(&v.to_string());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| RaiseError::io(path, e))
}

/// Per-entity ordered review embeddings of a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewStore {
    dim: usize,
    users: BTreeMap<u64, Vec<Vec<f64>>>,
    items: BTreeMap<u64, Vec<Vec<f64>>>,
}

impl ReviewStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "review dimension must be positive");
        ReviewStore {
            dim,
            users: BTreeMap::new(),
            items: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn side(&self, kind: EntityKind) -> &BTreeMap<u64, Vec<Vec<f64>>> {
        match kind {
            EntityKind::User => &self.users,
            EntityKind::Item => &self.items,
        }
    }

    fn side_mut(&mut self, kind: EntityKind) -> &mut BTreeMap<u64, Vec<Vec<f64>>> {
        match kind {
            EntityKind::User => &mut self.users,
            EntityKind::Item => &mut self.items,
        }
    }

    /// Registers an entity with no reviews if it is not already present.
    pub fn register(&mut self, kind: EntityKind, id: u64) {
        self.side_mut(kind).entry(id).or_default();
    }

    pub fn push(&mut self, kind: EntityKind, id: u64, review: Vec<f64>) -> Result<()> {
        if review.len() != self.dim {
            return Err(RaiseError::Dimension {
                op: "ReviewStore::push",
                left: (1, review.len()),
                right: (1, self.dim),
            });
        }
        if review.iter().any(|v| !v.is_finite()) {
            return Err(RaiseError::NonFinite(format!("review of {} {id}", kind.name())));
        }
        self.side_mut(kind).entry(id).or_default().push(review);
        Ok(())
    }

    pub fn reviews(&self, kind: EntityKind, id: u64) -> Option<&[Vec<f64>]> {
        self.side(kind).get(&id).map(Vec::as_slice)
    }

    /// `(kind, id)` pairs in file order: users ascending, then items ascending.
    pub fn entities(&self) -> impl Iterator<Item = (EntityKind, u64)> + '_ {
        self.users
            .keys()
            .map(|&id| (EntityKind::User, id))
            .chain(self.items.keys().map(|&id| (EntityKind::Item, id)))
    }
}

/// Deterministic unit-norm vector for `word`: FNV-1a 64 of the UTF-8 bytes,
/// mixed with `seed`, seeds a [`SeededRng`] that draws `dim` uniforms in
/// `[-1, 1)`; the result is normalized to unit length.
pub fn word_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = SeededRng::derive(seed, h);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Embeds each review as the sum of its word vectors (lowercased,
/// whitespace-tokenized). Keeps the first `max_user` / `max_item` reviews
/// per entity in input order.
pub fn hash_embed_reviews(
    records: &[ReviewRecord],
    dim: usize,
    seed: u64,
    max_user: usize,
    max_item: usize,
) -> ReviewStore {
    let mut store = ReviewStore::new(dim);
    let mut cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let limit = match r.kind {
            EntityKind::User => max_user,
            EntityKind::Item => max_item,
        };
        store.register(r.kind, r.id);
        if store.side(r.kind)[&r.id].len() >= limit {
            continue;
        }
        let mut emb = vec![0.0; dim];
        for word in r.text.split_whitespace() {
            let w = word.to_lowercase();
            let v = cache.entry(w).or_insert_with_key(|w| word_vector(w, dim, seed));
            for (e, x) in emb.iter_mut().zip(v.iter()) {
                *e += x;
            }
        }
        store.push(r.kind, r.id, emb).expect("embedding has store dimension");
    }
    store
}

/// Fixed-length review block: real reviews first, zero rows after.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedReviews {
    pub matrix: Matrix,
    pub mask: Vec<bool>,
    pub real_count: usize,
}

impl PaddedReviews {
    pub fn from_reviews(reviews: &[Vec<f64>], dim: usize, l: usize) -> Self {
        let mut matrix = Matrix::zeros(l, dim);
        let mut mask = vec![false; l];
        let real_count = reviews.len().min(l);
        for (k, r) in reviews.iter().take(l).enumerate() {
            matrix.row_mut(k).copy_from_slice(r);
            mask[k] = true;
        }
        PaddedReviews {
            matrix,
            mask,
            real_count,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real_count == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Row indices of real reviews.
    pub fn real_indices(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Real reviews stacked, or `None` if there are none.
    pub fn real_rows(&self) -> Option<Matrix> {
        let idx = self.real_indices();
        (!idx.is_empty()).then(|| self.matrix.select_rows(&idx))
    }
}

pub fn pad_review_sequence(store: &ReviewStore, kind: EntityKind, id: u64, l: usize) -> Result<PaddedReviews> {
    let reviews = store.reviews(kind, id).ok_or_else(|| RaiseError::Lookup {
        kind: kind.name(),
        id: format!("{}{}", kind.prefix(), id),
    })?;
    Ok(PaddedReviews::from_reviews(reviews, store.dim(), l))
}

/// Plain sum of an item's stored reviews; the review feature handed to
/// review-aware baselines.
pub fn baseline_review_feature(store: &ReviewStore, item: u64) -> Result<Vec<f64>> {
    let reviews = store.reviews(EntityKind::Item, item).ok_or_else(|| RaiseError::Lookup {
        kind: "item",
        id: format!("i{item}"),
    })?;
    let mut out = vec![0.0; store.dim()];
    for r in reviews {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    Ok(out)
}
