//! RVE1 review-embedding files.
//!
//! ```text
//! "RVE1"                      magic, 4 bytes
//! u32 LE                      dim
//! repeated to end of file:
//!   u8                        kind (0 = user, 1 = item)
//!   u64 LE                    entity id
//!   u32 LE                    review count
//!   count × dim f32 LE        review vectors, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::data::{EntityKind, ReviewStore};
use crate::error::{RaiseError, Result};

const MAGIC: &[u8; 4] = b"RVE1";

pub fn encode_rve(store: &ReviewStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    for (kind, id) in store.entities() {
        let reviews = store.reviews(kind, id).unwrap_or(&[]);
        out.push(match kind {
            EntityKind::User => 0,
            EntityKind::Item => 1,
        });
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(reviews.len() as u32).to_le_bytes());
        for r in reviews {
            for &v in r {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(RaiseError::Format {
                offset: self.pos as u64,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_rve(bytes: &[u8]) -> Result<ReviewStore> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(RaiseError::Format {
            offset: 0,
            msg: "bad magic, expected RVE1".into(),
        });
    }
    let dim = cur.u32("header")? as usize;
    if dim == 0 {
        return Err(RaiseError::Format {
            offset: 4,
            msg: "dimension must be positive".into(),
        });
    }
    let mut store = ReviewStore::new(dim);
    while cur.pos < bytes.len() {
        let record_at = cur.pos as u64;
        let kind = match cur.take(1, "record kind")?[0] {
            0 => EntityKind::User,
            1 => EntityKind::Item,
            k => {
                return Err(RaiseError::Format {
                    offset: record_at,
                    msg: format!("unknown record kind {k}"),
                })
            }
        };
        let id = u64::from_le_bytes(cur.take(8, "record id")?.try_into().unwrap());
        let count = cur.u32("review count")? as usize;
        store.register(kind, id);
        for _ in 0..count {
            let raw = cur.take(4 * dim, "review vector")?;
            let v: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            store.push(kind, id, v).map_err(|e| RaiseError::Format {
                offset: record_at,
                msg: e.to_string(),
            })?;
        }
    }
    Ok(store)
}

pub fn save_review_embeddings(path: &Path, store: &ReviewStore) -> Result<()> {
    fs::write(path, encode_rve(store)).map_err(|e| RaiseError::io(path, e))
}

pub fn load_review_embeddings(path: &Path) -> Result<ReviewStore> {
    let bytes = fs::read(path).map_err(|e| RaiseError::io(path, e))?;
    decode_rve(&bytes)
}
