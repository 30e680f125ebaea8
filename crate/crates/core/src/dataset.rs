use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Train,
    Test,
    Adversarial,
}

/// Images in `[0, 1]` with class labels, in a stable order.
///
/// Pixels are held in 32-bit storage precision and widened on access.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    shape: [usize; 3],
    pixels: Vec<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        shape: [usize; 3],
        pixels: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let image_len: usize = shape.iter().product();
        if image_len == 0 {
            return Err(Error::invalid("image shape has a zero extent"));
        }
        if pixels.len() != image_len * labels.len() {
            return Err(Error::invalid(format!(
                "{} pixels do not form {} images of {shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} is not below {num_classes}")));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel outside [0, 1]"));
        }
        Ok(LabeledDataset {
            shape,
            pixels,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let data = self.pixels(i).iter().map(|&p| T::from_stored(p)).collect();
        Tensor::new(self.shape.to_vec(), data).expect("dataset shape is validated")
    }

    /// FNV-1a hash of the image bits and label.
    pub fn fingerprint(&self, i: usize) -> u64 {
        fingerprint(self.pixels(i), self.labels[i])
    }

    pub fn slice(&self, range: Range<usize>) -> LabeledDataset {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        self.select(&(start..end).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
        }
        LabeledDataset {
            shape: self.shape,
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance,
        }
    }
}

pub fn fingerprint(pixels: &[f32], label: usize) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = pixels
        .iter()
        .flat_map(|p| p.to_bits().to_le_bytes())
        .chain((label as u64).to_le_bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}
