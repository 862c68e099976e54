//! Binary checkpoint: magic, format version, config echo, group manifest and
//! named `f32` little-endian parameter blobs.
//!
//! ```text
//! "ZSRCKPT2" | u32 version | u32 len, config text
//! u32 groups  { u8 len, name, u8 train_only }
//! u32 params  { u16 len, name, u8 group index, 4 × u32 shape, f32[] values }
//! ```

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::model::Model;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ZSRCKPT2";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header and manifest of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub config: KeyValues,
    /// `(group, train_only)` in file order.
    pub groups: Vec<(ParamGroup, bool)>,
    /// `(name, group)` of every stored parameter.
    pub params: Vec<(String, ParamGroup)>,
}

/// Writes `model`; `include_train_only = false` drops the detachable groups.
pub fn save_checkpoint(path: &Path, model: &Model, include_train_only: bool) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = model.cfg.to_kv().to_text();
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&(ParamGroup::ALL.len() as u32).to_le_bytes());
    for g in ParamGroup::ALL {
        buf.push(g.name().len() as u8);
        buf.extend_from_slice(g.name().as_bytes());
        buf.push(u8::from(g.train_only()));
    }
    let kept: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| include_train_only || !p.group.train_only())
        .collect();
    buf.extend_from_slice(&(kept.len() as u32).to_le_bytes());
    for (_, p) in kept {
        buf.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        let gi = ParamGroup::ALL.iter().position(|&g| g == p.group).expect("known group");
        buf.push(gi as u8);
        for d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated checkpoint", self.path.display())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format(format!("{}: non-UTF-8 text", self.path.display())))
    }
}

fn parse(path: &Path, buf: &[u8]) -> Result<(CheckpointInfo, ParamStore)> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format(format!("{}: missing ZSRCKPT2 header", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let n = r.u32()? as usize;
    let config = KeyValues::parse(&r.string(n)?)?;
    let mut groups = Vec::new();
    for _ in 0..r.u32()? {
        let n = r.u8()? as usize;
        let g = ParamGroup::parse(&r.string(n)?)?;
        groups.push((g, r.u8()? != 0));
    }
    let mut store = ParamStore::new();
    let mut params = Vec::new();
    for _ in 0..r.u32()? {
        let n = r.u16()? as usize;
        let name = r.string(n)?;
        let gi = r.u8()? as usize;
        let group = groups
            .get(gi)
            .map(|g| g.0)
            .ok_or_else(|| Error::Format(format!("{}: bad group index {gi}", path.display())))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let len: usize = shape.iter().product();
        let data = r
            .take(4 * len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if store.id(&name).is_some() {
            return Err(Error::Format(format!("{}: duplicate parameter {name}", path.display())));
        }
        params.push((name.clone(), group));
        store.add(name, group, Tensor::from_vec(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok((
        CheckpointInfo {
            version,
            config,
            groups,
            params,
        },
        store,
    ))
}

pub fn read_checkpoint_info(path: &Path) -> Result<CheckpointInfo> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(path, &buf)?.0)
}

/// Rebuilds the model from the config echo and loads every stored
/// parameter. Groups absent from the file must be train-only; they are
/// poisoned so any use of them aborts.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (info, stored) = parse(path, &buf)?;
    let cfg = TrainConfig::from_kv(&info.config)?;
    let mut model = Model::new(cfg)?;
    let loaded = model.store.load_from(&stored)?;
    if loaded != stored.len() {
        return Err(Error::Format(format!(
            "{}: {} stored parameters do not belong to this configuration",
            path.display(),
            stored.len() - loaded
        )));
    }
    let mut missing = Vec::new();
    for (_, p) in model.store.iter() {
        if stored.id(&p.name).is_none() {
            missing.push((p.name.clone(), p.group));
        }
    }
    for (name, group) in &missing {
        if !group.train_only() {
            return Err(Error::Format(format!(
                "{}: parameter {name} ({}) missing",
                path.display(),
                group.name()
            )));
        }
    }
    for (_, group) in missing {
        model.store.poison(group);
    }
    Ok(model)
}
