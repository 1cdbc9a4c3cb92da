//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic "GPCK", u32 version
//!   u32 entry count, then per entry:
//!     u16 name length + UTF-8 name
//!     u8 kind (0 conv, 1 dense, 2 batch norm)
//!     u8 ndim, u32 dims...
//!     u64 weight count + f64 weights  (batch norm: gamma)
//!     u64 bias count + f64 biases     (batch norm: shift)
//!     u8 extra blob count, each u64 count + f64 values
//!       (batch norm: running mean, running variance)
//!     u8 has-mask flag; if set, u64 count + i8 entries

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::nn::layers::Layer;
use crate::nn::network::Network;

const MAGIC: &[u8; 4] = b"GPCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Conv,
    Dense,
    BatchNorm,
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: EntryKind,
    pub dims: Vec<u32>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub extras: Vec<Vec<f64>>,
    pub mask: Option<Vec<i8>>,
}

fn collect_entries(layers: &[Layer], out: &mut Vec<CheckpointEntry>) {
    for layer in layers {
        match layer {
            Layer::Conv(c) => out.push(CheckpointEntry {
                name: c.name.clone(),
                kind: EntryKind::Conv,
                dims: vec![c.c_out as u32, c.c_in as u32, c.k as u32, c.k as u32],
                weights: c.weights.clone(),
                bias: c.bias.clone(),
                extras: Vec::new(),
                mask: c.prune.as_ref().map(|s| s.mask.entries().to_vec()),
            }),
            Layer::Dense(d) => out.push(CheckpointEntry {
                name: d.name.clone(),
                kind: EntryKind::Dense,
                dims: vec![d.out_features as u32, d.in_features as u32],
                weights: d.weights.clone(),
                bias: d.bias.clone(),
                extras: Vec::new(),
                mask: d.prune.as_ref().map(|s| s.mask.entries().to_vec()),
            }),
            Layer::BatchNorm(b) => out.push(CheckpointEntry {
                name: b.name.clone(),
                kind: EntryKind::BatchNorm,
                dims: vec![b.channels as u32],
                weights: b.gamma.clone(),
                bias: b.shift.clone(),
                extras: vec![b.running_mean.clone(), b.running_var.clone()],
                mask: None,
            }),
            Layer::Residual(inner) => collect_entries(inner, out),
            _ => {}
        }
    }
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut entries = Vec::new();
    collect_entries(&net.layers, &mut entries);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for entry in &entries {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        let kind = match entry.kind {
            EntryKind::Conv => 0u8,
            EntryKind::Dense => 1,
            EntryKind::BatchNorm => 2,
        };
        w.write_all(&[kind, entry.dims.len() as u8])?;
        for d in &entry.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        write_f64s(&mut w, &entry.weights)?;
        write_f64s(&mut w, &entry.bias)?;
        w.write_all(&[entry.extras.len() as u8])?;
        for extra in &entry.extras {
            write_f64s(&mut w, extra)?;
        }
        match &entry.mask {
            Some(mask) => {
                w.write_all(&[1u8])?;
                w.write_all(&(mask.len() as u64).to_le_bytes())?;
                let bytes: Vec<u8> = mask.iter().map(|e| *e as u8).collect();
                w.write_all(&bytes)?;
            }
            None => w.write_all(&[0u8])?,
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let count = self.u64()? as usize;
        let bytes = self.bytes(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if r.bytes(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let kind = match r.u8()? {
            0 => EntryKind::Conv,
            1 => EntryKind::Dense,
            2 => EntryKind::BatchNorm,
            other => return Err(Error::Checkpoint(format!("unknown entry kind {other}"))),
        };
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()?);
        }
        let weights = r.f64s()?;
        let bias = r.f64s()?;
        let extra_count = r.u8()? as usize;
        let mut extras = Vec::with_capacity(extra_count);
        for _ in 0..extra_count {
            extras.push(r.f64s()?);
        }
        let mask = if r.u8()? == 1 {
            let count = r.u64()? as usize;
            let bytes = r.bytes(count)?;
            let entries: Vec<i8> = bytes.iter().map(|b| *b as i8).collect();
            if let Some(bad) = entries.iter().find(|e| **e != -1 && **e != 1) {
                return Err(Error::Checkpoint(format!(
                    "mask entry {bad} outside {{-1,+1}}"
                )));
            }
            Some(entries)
        } else {
            None
        };
        entries.push(CheckpointEntry {
            name,
            kind,
            dims,
            weights,
            bias,
            extras,
            mask,
        });
    }
    Ok(entries)
}

/// Load parameters (and masks, where a layer carries prune state) into a
/// structurally matching network. Entries are matched by name; shape
/// mismatches error.
pub fn load_checkpoint(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let entries = read_checkpoint(path)?;
    for entry in &entries {
        let mut matched = false;
        net.visit_layers_mut(&mut |layer| match layer {
            Layer::Conv(c) if c.name == entry.name => {
                matched = true;
                if entry.weights.len() == c.weights.len() && entry.bias.len() == c.bias.len() {
                    c.weights.copy_from_slice(&entry.weights);
                    c.bias.copy_from_slice(&entry.bias);
                    if let (Some(mask), Some(state)) = (&entry.mask, c.prune.as_mut()) {
                        if let Ok(m) = PruneMask::new(mask.clone()) {
                            if m.len() == state.mask.len() {
                                state.mask = m;
                            }
                        }
                    }
                }
            }
            Layer::Dense(d) if d.name == entry.name => {
                matched = true;
                if entry.weights.len() == d.weights.len() && entry.bias.len() == d.bias.len() {
                    d.weights.copy_from_slice(&entry.weights);
                    d.bias.copy_from_slice(&entry.bias);
                    if let (Some(mask), Some(state)) = (&entry.mask, d.prune.as_mut()) {
                        if let Ok(m) = PruneMask::new(mask.clone()) {
                            if m.len() == state.mask.len() {
                                state.mask = m;
                            }
                        }
                    }
                }
            }
            Layer::BatchNorm(b) if b.name == entry.name => {
                matched = true;
                if entry.weights.len() == b.channels && entry.extras.len() == 2 {
                    b.gamma.copy_from_slice(&entry.weights);
                    b.shift.copy_from_slice(&entry.bias);
                    b.running_mean.copy_from_slice(&entry.extras[0]);
                    b.running_var.copy_from_slice(&entry.extras[1]);
                }
            }
            _ => {}
        });
        if !matched {
            return Err(Error::Checkpoint(format!(
                "checkpoint entry {} has no matching layer",
                entry.name
            )));
        }
    }
    Ok(())
}
