//! IDX binary files (the MNIST container format).
//!
//! Images: magic `0x00000803`, then count, rows and cols as big-endian
//! `u32`, then `count * rows * cols` raw pixel bytes. Labels: magic
//! `0x00000801`, then count, then `count` label bytes. Files whose first
//! two bytes are the gzip magic are inflated transparently.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use super::Example;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw pixel payload of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [self.count, self.rows, self.cols] {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header, needed 4 bytes at offset {offset}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad {what} magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, "image")?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "truncated image payload: {} of {need} pixel bytes present",
                payload.len()
            ),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..need].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, "label")?;
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated labels: {} of {count} present", payload.len()),
        });
    }
    Ok(payload[..count].to_vec())
}

/// Reads a file, inflating it when it is gzip-compressed.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                offset: 0,
                message: format!("{}: gzip: {e}", path.display()),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Decodes paired image/label payloads into examples with features in `[0, 1]`.
pub fn decode(images: &[u8], labels: &[u8]) -> Result<Vec<Example>> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.count != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "label count {} does not match image count {}",
                labels.len(),
                images.count
            ),
        });
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Example {
            features: images.image(i).iter().map(|&p| f64::from(p) / 255.0).collect::<Arc<[f64]>>(),
            label: usize::from(label),
        })
        .collect())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let images = read_maybe_gzip(images_path.as_ref())?;
    let labels = read_maybe_gzip(labels_path.as_ref())?;
    decode(&images, &labels)
}
