//! Binary checkpoint format. All integers are little-endian `u32`.
//!
//! ```text
//! "MBCK"
//! version                  (= 1)
//! config length, config    (UTF-8 JSON of the ArchConfig)
//! tensor count
//! per tensor, sorted by name:
//!   name length, name      (UTF-8)
//!   rank                   (= 4)
//!   dims                   (rank values)
//!   values                 (f32 little-endian, row-major)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ArchConfig, Model};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MBCK";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("checkpoint field exceeds u32")
            .to_le_bytes(),
    );
}

/// Serializes the architecture and parameters. Frozen flags are not stored.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    put_u32(&mut out, model.params.len());
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, 4);
        for d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }
}

/// Parses a checkpoint and checks its parameters against the architecture
/// it declares.
pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let config: ArchConfig = serde_json::from_str(r.string("config")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("bad config: {e}")))?;
    config.validate()?;
    let count = r.u32("tensor count")?;
    let mut params = ModelParams::new();
    let mut previous: Option<&str> = None;
    for _ in 0..count {
        let name = r.string("tensor name")?;
        if previous.is_some_and(|p| p >= name) {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} out of order"
            )));
        }
        previous = Some(name);
        let rank = r.u32("rank")?;
        if !(1..=4).contains(&rank) {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} has rank {rank}"
            )));
        }
        let mut shape = [1usize; 4];
        for d in &mut shape[4 - rank..] {
            *d = r.u32("dims")?;
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = len
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(bytes, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Model::from_params(config, params)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// Loads a checkpoint and requires its parameters to fit `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if &model.config == expected {
        return Ok(model);
    }
    Model::from_params(expected.clone(), model.params)
}
