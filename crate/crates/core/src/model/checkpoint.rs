//! Versioned little-endian checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TRIRECKP"
//! version  u32      1
//! input    u32
//! depth    u32      number of hidden layers
//! hidden   u32 * depth
//! classes  u32
//! count    u32      number of sections
//! section  tag [u8; 4], len u64, payload[len]   (repeated `count` times)
//! ```
//!
//! Sections: `WORK` and `EMA_` hold `f64` parameters in layout order; `MASK`
//! holds per-layer neuron flags and per-parameter flags as bytes; `BUFF`
//! holds buffer capacity, examples seen and its slots. `WORK` is required,
//! the rest are optional. Unknown tags are skipped.

use std::path::Path;

use super::{Architecture, Layout, MlpNet, ParamVector};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::masks::{NeuronMask, SubnetworkMask};
use crate::rehearsal::{BufferSlot, MemoryBuffer};

pub const MAGIC: &[u8; 8] = b"TRIRECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub working: ParamVector,
    pub ema: Option<ParamVector>,
    pub mask: Option<SubnetworkMask>,
    pub buffer: Option<MemoryBuffer>,
}

impl Checkpoint {
    pub fn of(net: &MlpNet) -> Self {
        Self {
            arch: net.architecture().clone(),
            working: net.snapshot(),
            ema: None,
            mask: None,
            buffer: None,
        }
    }

    pub fn working_net(&self) -> Result<MlpNet> {
        MlpNet::from_params(self.arch.clone(), self.working.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.arch.input as u32);
        put_u32(&mut out, self.arch.hidden.len() as u32);
        for &h in &self.arch.hidden {
            put_u32(&mut out, h as u32);
        }
        put_u32(&mut out, self.arch.classes as u32);

        let mut sections: Vec<([u8; 4], Vec<u8>)> = vec![(*b"WORK", params_bytes(&self.working))];
        if let Some(e) = &self.ema {
            sections.push((*b"EMA_", params_bytes(e)));
        }
        if let Some(m) = &self.mask {
            let mut p = Vec::new();
            put_u32(&mut p, m.neurons().layers.len() as u32);
            for l in &m.neurons().layers {
                put_u32(&mut p, l.len() as u32);
                p.extend(l.iter().map(|&b| u8::from(b)));
            }
            put_u64(&mut p, m.weights().len() as u64);
            p.extend(m.weights().iter().map(|&b| u8::from(b)));
            sections.push((*b"MASK", p));
        }
        if let Some(b) = &self.buffer {
            let mut p = Vec::new();
            put_u64(&mut p, b.capacity() as u64);
            put_u64(&mut p, b.seen());
            put_u32(&mut p, b.len() as u32);
            put_u32(&mut p, b.slots().first().map_or(0, |s| s.example.features.len()) as u32);
            for s in b.slots() {
                put_u32(&mut p, s.example.label as u32);
                put_u32(&mut p, s.task_id as u32);
                p.extend_from_slice(&s.stored_loss.to_le_bytes());
                for &f in s.example.features.iter() {
                    p.extend_from_slice(&f.to_le_bytes());
                }
            }
            sections.push((*b"BUFF", p));
        }
        put_u32(&mut out, sections.len() as u32);
        for (tag, payload) in sections {
            out.extend_from_slice(&tag);
            put_u64(&mut out, payload.len() as u64);
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(4, format!("unsupported checkpoint version {version}")));
        }
        let input = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let hidden = (0..depth).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
        let classes = r.u32()? as usize;
        let arch = Architecture::new(input, hidden, classes);
        let layout = Layout::new(&arch);

        let mut ckpt = Checkpoint {
            arch,
            working: ParamVector(Vec::new()),
            ema: None,
            mask: None,
            buffer: None,
        };
        let mut have_work = false;
        let count = r.u32()?;
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
            let len = r.u64()? as usize;
            let start = r.pos;
            let mut s = Reader {
                bytes: &bytes[..start + len.min(bytes.len() - start)],
                pos: start,
            };
            r.take(len)?;
            match &tag {
                b"WORK" => {
                    ckpt.working = s.params(layout.total())?;
                    have_work = true;
                }
                b"EMA_" => ckpt.ema = Some(s.params(layout.total())?),
                b"MASK" => ckpt.mask = Some(s.mask(&layout)?),
                b"BUFF" => ckpt.buffer = Some(s.buffer(input)?),
                _ => {}
            }
        }
        if !have_work {
            return Err(r.error(0, "checkpoint has no WORK section".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn params_bytes(p: &ParamVector) -> Vec<u8> {
    p.0.iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn error(&self, back: usize, message: String) -> Error {
        Error::Format {
            offset: self.pos.saturating_sub(back) as u64,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.bytes.len() as u64,
            message: format!("truncated: needed {n} bytes at offset {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn flags(&mut self, n: usize) -> Result<Vec<bool>> {
        let pos = self.pos + n;
        let raw = self.take(n)?;
        raw.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Format {
                    offset: pos as u64,
                    message: format!("mask flag byte {b} is neither 0 nor 1"),
                }),
            })
            .collect()
    }

    fn params(&mut self, total: usize) -> Result<ParamVector> {
        let v = (0..total).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(ParamVector(v))
    }

    fn mask(&mut self, layout: &Layout) -> Result<SubnetworkMask> {
        let depth = self.u32()? as usize;
        if depth != layout.hidden_layers().len() {
            return Err(self.error(4, format!("mask has {depth} layers")));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in layout.hidden_layers() {
            let w = self.u32()? as usize;
            if w != l.fan_out {
                return Err(self.error(4, format!("mask layer width {w}, expected {}", l.fan_out)));
            }
            layers.push(self.flags(w)?);
        }
        let n = self.u64()? as usize;
        if n != layout.feature_len() {
            return Err(self.error(8, format!("mask covers {n} parameters, expected {}", layout.feature_len())));
        }
        let weights = self.flags(n)?;
        Ok(SubnetworkMask::from_parts(NeuronMask { layers }, weights))
    }

    fn buffer(&mut self, input: usize) -> Result<MemoryBuffer> {
        let capacity = self.u64()? as usize;
        let seen = self.u64()?;
        let n = self.u32()? as usize;
        let width = self.u32()? as usize;
        if n > 0 && width != input {
            return Err(self.error(4, format!("buffer feature width {width}, network input {input}")));
        }
        let mut slots = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let label = self.u32()? as usize;
            let task_id = self.u32()? as usize;
            let stored_loss = self.f64()?;
            let features = (0..width).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            slots.push(BufferSlot {
                example: Example::new(features, label),
                task_id,
                stored_loss,
            });
        }
        MemoryBuffer::from_slots(capacity, seen, slots).map_err(|e| self.error(0, e.to_string()))
    }
}
