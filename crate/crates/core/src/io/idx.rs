//! MNIST IDX files (big-endian headers, unsigned-byte payload).

use std::fs;
use std::path::Path;

use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(buf: &[u8], at: usize, what: &'static str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

/// Parses an IDX3 image file into `(count, rows, cols, bytes)`.
pub fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let what = "idx image file";
    let magic = be_u32(buf, 0, what)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(what, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(buf, 4, what)? as usize;
    let rows = be_u32(buf, 8, what)? as usize;
    let cols = be_u32(buf, 12, what)? as usize;
    let body = &buf[16..];
    let need = count * rows * cols;
    if body.len() != need {
        return Err(Error::format(
            what,
            format!("expected {need} pixel bytes, found {}", body.len()),
        ));
    }
    Ok((count, rows, cols, body))
}

pub fn parse_labels(buf: &[u8]) -> Result<&[u8]> {
    let what = "idx label file";
    let magic = be_u32(buf, 0, what)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(what, format!("bad magic {magic:#010x}")));
    }
    let count = be_u32(buf, 4, what)? as usize;
    let body = &buf[8..];
    if body.len() != count {
        return Err(Error::format(
            what,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body)
}

pub fn decode_mnist(images: &[u8], labels: &[u8], provenance: Provenance) -> Result<LabeledDataset> {
    let (count, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != count {
        return Err(Error::format(
            "idx pair",
            format!("{count} images but {} labels", labels.len()),
        ));
    }
    LabeledDataset::new(
        [1, rows, cols],
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
        labels.iter().map(|&l| l as usize).collect(),
        10,
        provenance,
    )
}

pub fn load_mnist(images: &Path, labels: &Path, provenance: Provenance) -> Result<LabeledDataset> {
    decode_mnist(&fs::read(images)?, &fs::read(labels)?, provenance)
}

/// Loads `train-*` or `t10k-*` files from a directory with the standard names.
pub fn load_mnist_split(dir: &Path, provenance: Provenance) -> Result<LabeledDataset> {
    let prefix = match provenance {
        Provenance::Test => "t10k",
        _ => "train",
    };
    load_mnist(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(body);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn decodes_and_scales() {
        let imgs = image_file(2, 1, 2, &[0, 255, 51, 102]);
        let ds = decode_mnist(&imgs, &label_file(&[3, 9]), Provenance::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), [1, 1, 2]);
        assert_eq!(ds.pixels(0), &[0.0, 1.0]);
        assert_eq!(ds.pixels(1), &[0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 9]);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let mut bad = image_file(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(parse_images(&bad).is_err());
        assert!(parse_images(&image_file(2, 1, 1, &[0])).is_err());
        assert!(parse_images(&[0, 0, 8]).is_err());
        let imgs = image_file(2, 1, 1, &[0, 1]);
        assert!(decode_mnist(&imgs, &label_file(&[1]), Provenance::Test).is_err());
        assert!(decode_mnist(&imgs, &label_file(&[1, 10]), Provenance::Test).is_err());
    }
}
