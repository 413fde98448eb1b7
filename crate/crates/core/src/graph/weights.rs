//! Named-tensor weight files.
//!
//! Layout (little endian): magic `EDGW`, version `u32`, tensor count `u32`,
//! then per tensor: name length `u16`, UTF-8 name, rank `u8`, `rank` dims as
//! `u32`, and the `f32` data.

use super::{dims_to_shape, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"EDGW";
pub const WEIGHTS_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error(self.pos, "size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.error(self.pos, "size overflow"))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.error(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u32) -> Result<()> {
        let at = self.pos;
        let v = self.u32("version")?;
        if v != expected {
            return Err(self.error(at, format!("unsupported version {v}, expected {expected}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn parse(path: &Path) -> Result<Vec<Entry>> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(WEIGHTS_MAGIC)?;
    r.version(WEIGHTS_VERSION)?;
    let count = r.u32("tensor count")?;
    let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let at = r.offset();
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.error(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        if !(1..=4).contains(&rank) {
            return Err(r.error(r.offset() - 1, format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&n| n > 0).ok_or_else(|| r.error(at, format!("tensor `{name}` has invalid dims {dims:?}")))?;
        let data = r.f32s(numel, "tensor data")?;
        entries.push(Entry { name, dims, data });
    }
    r.finish()?;
    Ok(entries)
}

/// Writes every parameter (running statistics included) as `f32`.
pub fn save_weights<S: Scalar>(graph: &ModelGraph<S>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(graph.params().len() as u32).to_le_bytes());
    for p in graph.params() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.dims.len() as u8);
        for &d in &p.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    write_file(path, &out)
}

/// Outcome of a partial load.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Parameters overwritten from the file.
    pub loaded: Vec<String>,
    /// Graph parameters the file did not provide.
    pub missing: Vec<String>,
    /// File tensors the graph has no parameter for.
    pub unused: Vec<String>,
    /// Tensors present in both but with different dims (left untouched).
    pub mismatched: Vec<String>,
}

fn apply<S: Scalar>(graph: &mut ModelGraph<S>, entries: Vec<Entry>, strict: bool) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut found = std::collections::BTreeSet::new();
    let mut updates = Vec::new();
    for e in entries {
        match graph.param(&e.name) {
            None => report.unused.push(e.name),
            Some(p) if p.dims != e.dims => {
                report
                    .mismatched
                    .push(format!("{}: file dims {:?}, graph dims {:?}", e.name, e.dims, p.dims));
                found.insert(e.name);
            }
            Some(_) => {
                found.insert(e.name.clone());
                updates.push(e);
            }
        }
    }
    report.missing = graph
        .params()
        .iter()
        .filter(|p| !found.contains(&p.name))
        .map(|p| p.name.clone())
        .collect();
    if strict && (!report.missing.is_empty() || !report.unused.is_empty() || !report.mismatched.is_empty()) {
        let mut problems: Vec<String> = report.mismatched.iter().map(|m| format!("shape mismatch: {m}")).collect();
        problems.extend(report.missing.iter().map(|m| format!("missing from file: {m}")));
        problems.extend(report.unused.iter().map(|m| format!("not in graph: {m}")));
        return Err(Error::WeightMismatch(problems));
    }
    for e in updates {
        let p = graph.param_mut(&e.name).expect("checked above");
        let data = e.data.iter().map(|&v| S::cast_from(v as f64)).collect();
        p.value = Tensor::from_vec(dims_to_shape(&e.dims), data)?;
        report.loaded.push(e.name);
    }
    Ok(report)
}

/// Loads a weight file that must match the graph exactly.
pub fn load_weights<S: Scalar>(graph: &mut ModelGraph<S>, path: &Path) -> Result<()> {
    apply(graph, parse(path)?, true).map(|_| ())
}

/// Loads whatever tensors match by name and dims; the rest is reported.
pub fn load_weights_partial<S: Scalar>(graph: &mut ModelGraph<S>, path: &Path) -> Result<LoadReport> {
    apply(graph, parse(path)?, false)
}

/// Copies every parameter of `src` whose name and dims match one in `dst`.
pub fn transfer_params<S: Scalar>(src: &ModelGraph<S>, dst: &mut ModelGraph<S>) -> LoadReport {
    let entries = src
        .params()
        .iter()
        .map(|p| Entry {
            name: p.name.clone(),
            dims: p.dims.clone(),
            data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect();
    apply(dst, entries, false).expect("non-strict transfer cannot fail")
}
