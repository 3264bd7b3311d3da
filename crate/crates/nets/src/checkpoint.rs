//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `DCLN`, u8 version = 1, u32 parameter count,
//! then per parameter: u16 name length, UTF-8 name, u8 rank, rank × u32 dims,
//! row-major f32 payload. A teacher-student pair is stored as one parameter
//! set with `student.` / `teacher.` name prefixes plus a one-element
//! `ema.alpha` entry.

use std::fs;
use std::path::Path;

use tensorgrad::Tensor;

use crate::ema::TeacherStudentPair;
use crate::error::{NetError, Result};
use crate::params::ModelParams;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DCLN";
pub const CHECKPOINT_VERSION: u8 = 1;
const STUDENT: &str = "student.";
const TEACHER: &str = "teacher.";
const ALPHA: &str = "ema.alpha";

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

pub fn encode_params(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name {name:?} too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("{name}: rank {}", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("{name}: dim {d}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(bad(format!("truncated while reading {what}")));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut c = Cursor { b: bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.take(1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u32("parameter count")?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_owned();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("{name}: dims {shape:?} overflow")))?;
        let data = c
            .take(n, "payload")?
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes(ch.try_into().expect("4 bytes")))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(bad(format!("duplicate parameter {name:?}")));
        }
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    fs::write(path, encode_params(params)?).map_err(|source| NetError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_params(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = fs::read(path).map_err(|source| NetError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_params(&bytes)
}

fn strip(params: &ModelParams<f32>, prefix: &str) -> ModelParams<f32> {
    let mut out = ModelParams::new();
    for (name, t) in params.iter() {
        if let Some(rest) = name.strip_prefix(prefix) {
            out.insert(rest, t.clone());
        }
    }
    out
}

pub fn pair_to_params(pair: &TeacherStudentPair<f32>) -> ModelParams<f32> {
    let mut all = ModelParams::new();
    for (name, t) in pair.student.iter() {
        all.insert(format!("{STUDENT}{name}"), t.clone());
    }
    for (name, t) in pair.teacher.iter() {
        all.insert(format!("{TEACHER}{name}"), t.clone());
    }
    all.insert(ALPHA, Tensor::new(vec![1], vec![pair.alpha() as f32]).expect("one element"));
    all
}

pub fn pair_from_params(all: &ModelParams<f32>) -> Result<TeacherStudentPair<f32>> {
    let alpha = all
        .get(ALPHA)
        .map_err(|_| bad("missing ema.alpha; not a teacher-student checkpoint"))?;
    if alpha.numel() != 1 {
        return Err(bad("ema.alpha must hold one value"));
    }
    let known = all
        .names()
        .all(|n| n == ALPHA || n.starts_with(STUDENT) || n.starts_with(TEACHER));
    if !known {
        return Err(bad("unexpected parameter outside student/teacher sets"));
    }
    TeacherStudentPair::new(strip(all, STUDENT), strip(all, TEACHER), alpha.data()[0] as f64)
}

pub fn save_pair(path: &Path, pair: &TeacherStudentPair<f32>) -> Result<()> {
    save_params(path, &pair_to_params(pair))
}

pub fn load_pair(path: &Path) -> Result<TeacherStudentPair<f32>> {
    pair_from_params(&load_params(path)?)
}
