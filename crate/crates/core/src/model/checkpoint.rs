//! Binary checkpoint format.
//!
//! ```text
//! "EMBC"                      magic
//! u32                         format version
//! u32                         entry count
//! per entry:                  manifest
//!     u32 + bytes             name (UTF-8)
//!     u8                      dtype (1 = f64, 2 = u64, 3 = u8)
//!     u64, u64                rows, cols
//! payloads                    in manifest order, little-endian
//! ```
//!
//! All integers are little-endian. The model architecture travels as a `u8`
//! entry holding `key=value` text, so a checkpoint is self-describing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::{Param, ParamStore};
use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMBC";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_U64: u8 = 2;
const DTYPE_U8: u8 = 3;

const SPEC_ENTRY: &str = "model.spec";
const STEP_ENTRY: &str = "adam.step";
const EXTRA_PREFIX: &str = "extra.";

/// Auxiliary state stored alongside the parameters (trainer counters, RNG state, caches).
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F64(DenseMatrix),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub extras: Vec<(String, Payload)>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            extras: Vec::new(),
        }
    }

    pub fn extra(&self, name: &str) -> Option<&Payload> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn set_extra(&mut self, name: impl Into<String>, payload: Payload) {
        let name = name.into();
        match self.extras.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = payload,
            None => self.extras.push((name, payload)),
        }
    }

    pub fn extra_u64(&self, name: &str) -> Result<&[u64]> {
        match self.extra(name) {
            Some(Payload::U64(v)) => Ok(v),
            _ => Err(Error::Checkpoint(format!("missing u64 entry {name}"))),
        }
    }

    pub fn extra_bytes(&self, name: &str) -> Result<&[u8]> {
        match self.extra(name) {
            Some(Payload::Bytes(v)) => Ok(v),
            _ => Err(Error::Checkpoint(format!("missing byte entry {name}"))),
        }
    }

    pub fn extra_matrix(&self, name: &str) -> Option<&DenseMatrix> {
        match self.extra(name) {
            Some(Payload::F64(m)) => Some(m),
            _ => None,
        }
    }
}

struct Entry<'a> {
    name: String,
    dtype: u8,
    rows: u64,
    cols: u64,
    bytes: Box<dyn Fn(&mut Vec<u8>) + 'a>,
}

fn f64_entry(name: String, m: &DenseMatrix) -> Entry<'_> {
    Entry {
        name,
        dtype: DTYPE_F64,
        rows: m.rows() as u64,
        cols: m.cols() as u64,
        bytes: Box::new(move |out| {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }),
    }
}

fn payload_entry(name: String, p: &Payload) -> Entry<'_> {
    match p {
        Payload::F64(m) => f64_entry(name, m),
        Payload::U64(v) => Entry {
            name,
            dtype: DTYPE_U64,
            rows: 1,
            cols: v.len() as u64,
            bytes: Box::new(move |out| {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }),
        },
        Payload::Bytes(b) => Entry {
            name,
            dtype: DTYPE_U8,
            rows: 1,
            cols: b.len() as u64,
            bytes: Box::new(move |out| out.extend_from_slice(b)),
        },
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ckpt.model.params;
    if !params.all_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let spec_payload = Payload::Bytes(ckpt.model.spec.to_text().into_bytes());
    let step_payload = Payload::U64(vec![params.adam_step]);

    let mut entries = vec![
        payload_entry(SPEC_ENTRY.into(), &spec_payload),
        payload_entry(STEP_ENTRY.into(), &step_payload),
    ];
    for p in params.iter() {
        entries.push(f64_entry(format!("param.{}", p.name), &p.value));
        entries.push(f64_entry(format!("grad.{}", p.name), &p.grad));
        entries.push(f64_entry(format!("adam_m.{}", p.name), &p.first_moment));
        entries.push(f64_entry(format!("adam_v.{}", p.name), &p.second_moment));
    }
    for (name, payload) in &ckpt.extras {
        entries.push(payload_entry(format!("{EXTRA_PREFIX}{name}"), payload));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in &entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype);
        out.extend_from_slice(&e.rows.to_le_bytes());
        out.extend_from_slice(&e.cols.to_le_bytes());
    }
    for e in &entries {
        (e.bytes)(&mut out);
    }
    Ok(out)
}

/// Writes atomically: the previous file at `path` survives a failed write.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes for {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct ManifestEntry {
    name: String,
    dtype: u8,
    rows: usize,
    cols: usize,
}

impl ManifestEntry {
    fn byte_len(&self) -> Result<usize> {
        let width = match self.dtype {
            DTYPE_F64 | DTYPE_U64 => 8,
            DTYPE_U8 => 1,
            d => return Err(Error::Checkpoint(format!("unknown dtype {d} for {}", self.name))),
        };
        self.rows
            .checked_mul(self.cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Checkpoint(format!("entry {} is too large", self.name)))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = r.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "entry name")?)
            .map_err(|_| Error::Checkpoint(format!("entry {i} has a non UTF-8 name")))?
            .to_string();
        let dtype = r.take(1, "dtype")?[0];
        let rows = r.u64("rows")? as usize;
        let cols = r.u64("cols")? as usize;
        manifest.push(ManifestEntry { name, dtype, rows, cols });
    }
    let mut payload_len = 0usize;
    for e in &manifest {
        payload_len = payload_len
            .checked_add(e.byte_len()?)
            .ok_or_else(|| Error::Checkpoint("payload size overflows".into()))?;
    }
    let remaining = bytes.len() - r.pos;
    if remaining != payload_len {
        return Err(Error::Checkpoint(format!(
            "{} file: manifest declares {payload_len} payload bytes, found {remaining}",
            if remaining < payload_len { "truncated" } else { "oversized" }
        )));
    }

    let mut payloads = Vec::with_capacity(manifest.len());
    for e in &manifest {
        let raw = r.take(e.byte_len()?, &e.name)?;
        let payload = match e.dtype {
            DTYPE_F64 => Payload::F64(DenseMatrix::new(
                e.rows,
                e.cols,
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )?),
            DTYPE_U64 => Payload::U64(
                raw.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            _ => Payload::Bytes(raw.to_vec()),
        };
        payloads.push((e.name.clone(), payload));
    }

    let find = |name: &str| payloads.iter().find(|(n, _)| n == name).map(|(_, p)| p);
    let spec_text = match find(SPEC_ENTRY) {
        Some(Payload::Bytes(b)) => String::from_utf8(b.clone())
            .map_err(|_| Error::Checkpoint("model spec is not UTF-8".into()))?,
        _ => return Err(Error::Checkpoint("missing model spec entry".into())),
    };
    let spec = ModelSpec::from_text(&spec_text)?;
    let adam_step = match find(STEP_ENTRY) {
        Some(Payload::U64(v)) if v.len() == 1 => v[0],
        _ => return Err(Error::Checkpoint("missing optimizer step entry".into())),
    };

    let layout = Model::layout(&spec)?;
    let mut params = ParamStore::new();
    params.adam_step = adam_step;
    for expected in layout.iter() {
        let tensor = |prefix: &str| -> Result<DenseMatrix> {
            let name = format!("{prefix}.{}", expected.name);
            match find(&name) {
                Some(Payload::F64(m)) if m.shape() == expected.value.shape() => Ok(m.clone()),
                Some(Payload::F64(m)) => Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: file has {:?}, model spec needs {:?}",
                    m.shape(),
                    expected.value.shape()
                ))),
                _ => Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        };
        params.push(Param {
            name: expected.name.clone(),
            value: tensor("param")?,
            grad: tensor("grad")?,
            first_moment: tensor("adam_m")?,
            second_moment: tensor("adam_v")?,
        });
    }
    let expected_entries = 2 + 4 * layout.len();
    let extras: Vec<(String, Payload)> = payloads
        .into_iter()
        .filter_map(|(n, p)| n.strip_prefix(EXTRA_PREFIX).map(|s| (s.to_string(), p)))
        .collect();
    if expected_entries + extras.len() != manifest.len() {
        return Err(Error::Checkpoint(format!(
            "unexpected entries: manifest lists {}, model spec accounts for {}",
            manifest.len(),
            expected_entries + extras.len()
        )));
    }
    Ok(Checkpoint {
        model: Model { spec, params },
        extras,
    })
}
