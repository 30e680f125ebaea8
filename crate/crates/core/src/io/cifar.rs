//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the red, green and blue 32×32 planes.

use std::fs;
use std::path::Path;

use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;

pub fn decode_cifar10(buf: &[u8], provenance: Provenance) -> Result<LabeledDataset> {
    if !buf.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(
            "cifar-10 batch",
            format!("length {} is not a multiple of {RECORD_LEN}", buf.len()),
        ));
    }
    let n = buf.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_LEN - 1));
    for rec in buf.chunks_exact(RECORD_LEN) {
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    LabeledDataset::new([3, 32, 32], pixels, labels, 10, provenance)
}

/// Concatenates the given batch files in order.
pub fn load_cifar10(paths: &[impl AsRef<Path>], provenance: Provenance) -> Result<LabeledDataset> {
    let mut buf = Vec::new();
    for p in paths {
        let bytes = fs::read(p)?;
        if bytes.len() % RECORD_LEN != 0 {
            return Err(Error::format(
                "cifar-10 batch",
                format!("{}: length {} is not a multiple of {RECORD_LEN}", p.as_ref().display(), bytes.len()),
            ));
        }
        buf.extend(bytes);
    }
    decode_cifar10(&buf, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_order_and_labels() {
        let mut rec = vec![0u8; RECORD_LEN];
        rec[0] = 9;
        rec[1] = 255; // red (0, 0)
        rec[1 + 1024 + 33] = 51; // green (1, 1)
        rec[1 + 2048 + 1023] = 102; // blue (31, 31)
        let ds = decode_cifar10(&rec, Provenance::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 9);
        let img = ds.pixels(0);
        assert_eq!(img[0], 1.0);
        assert_eq!(img[1024 + 32 + 1], 0.2);
        assert_eq!(img[2 * 1024 + 31 * 32 + 31], 0.4);
    }

    #[test]
    fn rejects_partial_record() {
        assert!(decode_cifar10(&vec![0u8; RECORD_LEN + 5], Provenance::Train).is_err());
        assert!(decode_cifar10(&[10u8; RECORD_LEN], Provenance::Train).is_err());
    }
}
