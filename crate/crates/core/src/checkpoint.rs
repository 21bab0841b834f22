//! RAISE1 checkpoint files.
//!
//! ```text
//! "RAISE1"                    magic, 6 bytes
//! u32 LE                      format version (1)
//! u32 LE × 6                  d, n, t, b, l_u, l_i
//! repeated to end of file:
//!   u16 LE                    name length
//!   name bytes                UTF-8 tensor name
//!   u32 LE, u32 LE            rows, cols
//!   rows × cols f32 LE        values, row-major
//! ```
//!
//! Base-ranker files use the same layout with only `d` set and the tensors
//! `gmf.P`, `gmf.Q`, `gmf.h`. Re-ranker files hold every tensor of
//! [`RaiseParameters`], including the base ranker's. Loading requires the
//! exact set of names and shapes the configuration implies.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::base_ranker::GmfModel;
use crate::data::{ItemId, UserId};
use crate::error::{RaiseError, Result};
use crate::model::{RaiseConfig, RaiseParameters};
use crate::numerics::{Matrix, Parameter, Parameterized};

const MAGIC: &[u8; 6] = b"RAISE1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub d: u32,
    pub n: u32,
    pub t: u32,
    pub b: u32,
    pub l_u: u32,
    pub l_i: u32,
}

impl CheckpointHeader {
    pub fn for_config(cfg: &RaiseConfig) -> Self {
        CheckpointHeader {
            version: FORMAT_VERSION,
            d: cfg.d as u32,
            n: cfg.n as u32,
            t: cfg.t as u32,
            b: cfg.b as u32,
            l_u: cfg.l_u as u32,
            l_i: cfg.l_i as u32,
        }
    }
}

pub fn encode_checkpoint(header: &CheckpointHeader, params: &[&Parameter]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for v in [header.version, header.d, header.n, header.t, header.b, header.l_u, header.l_i] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in params {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for &v in p.value.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() - *pos < n {
        return Err(RaiseError::Format {
            offset: *pos as u64,
            msg: format!("truncated {what}: need {n} bytes, {} left", buf.len() - *pos),
        });
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_u32(buf: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, pos, 4, what)?.try_into().unwrap()))
}

/// Header and named tensors in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Matrix)>)> {
    let mut pos = 0;
    if take(bytes, &mut pos, MAGIC.len(), "magic")? != MAGIC {
        return Err(RaiseError::Format {
            offset: 0,
            msg: "bad magic, expected RAISE1".into(),
        });
    }
    let mut h = [0u32; 7];
    for v in h.iter_mut() {
        *v = read_u32(bytes, &mut pos, "header")?;
    }
    let header = CheckpointHeader {
        version: h[0],
        d: h[1],
        n: h[2],
        t: h[3],
        b: h[4],
        l_u: h[5],
        l_i: h[6],
    };
    if header.version != FORMAT_VERSION {
        return Err(RaiseError::Format {
            offset: 6,
            msg: format!("unsupported version {}", header.version),
        });
    }
    let mut sections = Vec::new();
    while pos < bytes.len() {
        let at = pos as u64;
        let len = u16::from_le_bytes(take(bytes, &mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(bytes, &mut pos, len, "name")?)
            .map_err(|_| RaiseError::Format {
                offset: at,
                msg: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rows = read_u32(bytes, &mut pos, "rows")? as usize;
        let cols = read_u32(bytes, &mut pos, "cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(RaiseError::Format {
                offset: at,
                msg: format!("tensor `{name}` has an empty shape"),
            });
        }
        let raw = take(bytes, &mut pos, 4 * rows * cols, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        sections.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok((header, sections))
}

/// Copies each section into the parameter of the same name. Unknown,
/// missing, repeated or mis-shaped tensors are errors.
pub fn assign_sections(params: Vec<&mut Parameter>, sections: Vec<(String, Matrix)>) -> Result<()> {
    let mut by_name: BTreeMap<String, Matrix> = BTreeMap::new();
    for (name, m) in sections {
        if by_name.contains_key(&name) {
            return Err(RaiseError::Format {
                offset: 0,
                msg: format!("tensor `{name}` appears twice"),
            });
        }
        by_name.insert(name, m);
    }
    for p in params {
        let m = by_name.remove(&p.name).ok_or_else(|| RaiseError::Format {
            offset: 0,
            msg: format!("missing tensor `{}`", p.name),
        })?;
        if m.shape() != p.shape() {
            return Err(RaiseError::Format {
                offset: 0,
                msg: format!("tensor `{}` has shape {:?}, expected {:?}", p.name, m.shape(), p.shape()),
            });
        }
        p.set_value(m)?;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(RaiseError::Format {
            offset: 0,
            msg: format!("unknown tensor `{name}`"),
        });
    }
    Ok(())
}

pub fn encode_raise(params: &RaiseParameters) -> Vec<u8> {
    encode_checkpoint(&CheckpointHeader::for_config(params.config()), &params.params())
}

/// Rebuilds a model for `config` around `gmf` and loads every tensor.
pub fn decode_raise(bytes: &[u8], config: RaiseConfig, gmf: GmfModel) -> Result<RaiseParameters> {
    let (header, sections) = decode_checkpoint(bytes)?;
    let expected = CheckpointHeader::for_config(&config);
    if header != expected {
        return Err(RaiseError::Config(format!(
            "checkpoint header {header:?} does not match configuration {expected:?}"
        )));
    }
    let mut params = RaiseParameters::init(config, gmf)?;
    assign_sections(params.params_mut(), sections)?;
    Ok(params)
}

pub fn encode_gmf(model: &GmfModel) -> Vec<u8> {
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        d: model.dim() as u32,
        ..Default::default()
    };
    encode_checkpoint(&header, &model.parameters())
}

/// `users` and `items` give the row order the file was written with.
pub fn decode_gmf(bytes: &[u8], users: &[UserId], items: &[ItemId]) -> Result<GmfModel> {
    let (header, sections) = decode_checkpoint(bytes)?;
    let mut model = GmfModel::init(users, items, header.d as usize, 0);
    assign_sections(model.parameters_mut().into_iter().collect(), sections)?;
    Ok(model)
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| RaiseError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| RaiseError::io(path, e))
}

pub fn save_raise(path: &Path, params: &RaiseParameters) -> Result<()> {
    write(path, encode_raise(params))
}

pub fn load_raise(path: &Path, config: RaiseConfig, gmf: GmfModel) -> Result<RaiseParameters> {
    decode_raise(&read(path)?, config, gmf)
}

pub fn save_gmf(path: &Path, model: &GmfModel) -> Result<()> {
    write(path, encode_gmf(model))
}

pub fn load_gmf(path: &Path, users: &[UserId], items: &[ItemId]) -> Result<GmfModel> {
    decode_gmf(&read(path)?, users, items)
}
