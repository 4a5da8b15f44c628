//! Big-endian IDX files: images (magic 2051) and labels (magic 2049).

use std::fs;
use std::path::Path;

use super::{DomainDataset, LabeledSample};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Malformed(format!("{what}: truncated header")))
}

/// Loads a single-domain (id 0) dataset with pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DomainDataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = be_u32(&images, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = be_u32(&images, 4, "image file")? as usize;
    let rows = be_u32(&images, 8, "image file")? as usize;
    let cols = be_u32(&images, 12, "image file")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Malformed(format!(
            "expected {IMAGE_SIDE}×{IMAGE_SIDE} images, header says {rows}×{cols}"
        )));
    }
    let payload = &images[16..];
    if payload.len() < count * IMAGE_PIXELS {
        return Err(Error::Malformed(format!(
            "image payload truncated: {} bytes for {count} images",
            payload.len()
        )));
    }

    let magic = be_u32(&labels, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let label_count = be_u32(&labels, 4, "label file")? as usize;
    if label_count != count {
        return Err(Error::Data(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Malformed(format!(
            "label payload truncated: {} bytes for {count} labels",
            label_bytes.len()
        )));
    }

    let samples: Vec<LabeledSample> = (0..count)
        .map(|i| LabeledSample {
            id: i,
            features: payload[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect(),
            label: usize::from(label_bytes[i]),
            domain: 0,
        })
        .collect();
    let classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let domains = if samples.is_empty() { vec![] } else { vec![0] };
    DomainDataset::new(samples, classes, IMAGE_PIXELS, domains)
}

/// Writes 28×28 byte images and their labels as an IDX pair.
pub fn write_idx(images: &[Vec<u8>], labels: &[u8], images_path: &Path, labels_path: &Path) -> Result<()> {
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut img = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    img.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for im in images {
        if im.len() != IMAGE_PIXELS {
            return Err(Error::Data(format!("image with {} pixels", im.len())));
        }
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}
