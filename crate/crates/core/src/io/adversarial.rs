//! Adversarial-set file (`RGRPADVX`).
//!
//! Header: magic, version, record count, then the image shape as three u32
//! (channels, height, width). Each record: source index, true label, target
//! (`0xFFFFFFFF` when untargeted), success byte, confidence (f32), image (f32).

use std::fs;
use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::attacks::AdversarialRecord;
use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"RGRPADVX";
pub const VERSION: u32 = 1;
pub const UNTARGETED: u32 = u32::MAX;
const WHAT: &str = "adversarial set";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredRecord {
    pub source_index: usize,
    pub true_label: usize,
    pub target: Option<usize>,
    pub success: bool,
    pub confidence: f32,
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet {
    pub shape: [usize; 3],
    pub records: Vec<StoredRecord>,
}

impl AdversarialSet {
    pub fn from_records<T: Scalar>(shape: [usize; 3], records: &[AdversarialRecord<T>]) -> Result<Self> {
        let image_len: usize = shape.iter().product();
        let records = records
            .iter()
            .map(|r| {
                if r.image.len() != image_len {
                    return Err(Error::invalid(format!(
                        "record for sample {} has {} pixels, expected {image_len}",
                        r.source_index,
                        r.image.len()
                    )));
                }
                Ok(StoredRecord {
                    source_index: r.source_index,
                    true_label: r.true_label,
                    target: r.target,
                    success: r.success,
                    confidence: r.confidence as f32,
                    pixels: r.image.data().iter().map(|v| v.as_f32()).collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(AdversarialSet { shape, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `#S`.
    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    pub fn successful(&self) -> AdversarialSet {
        AdversarialSet {
            shape: self.shape,
            records: self.records.iter().filter(|r| r.success).cloned().collect(),
        }
    }

    /// Images labelled with their true class.
    pub fn to_dataset(&self, num_classes: usize) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.shape,
            self.records.iter().flat_map(|r| r.pixels.iter().copied()).collect(),
            self.records.iter().map(|r| r.true_label).collect(),
            num_classes,
            Provenance::Adversarial,
        )
    }
}

fn index_u32(v: usize) -> Result<u32> {
    u32::try_from(v)
        .ok()
        .filter(|&v| v != UNTARGETED)
        .ok_or_else(|| Error::invalid(format!("{v} does not fit the adversarial-set format")))
}

pub fn encode_adversarial(set: &AdversarialSet) -> Result<Vec<u8>> {
    let image_len: usize = set.shape.iter().product();
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.usize(set.records.len())?;
    for e in set.shape {
        w.usize(e)?;
    }
    for r in &set.records {
        if r.pixels.len() != image_len {
            return Err(Error::invalid(format!("record for sample {} has the wrong pixel count", r.source_index)));
        }
        w.u32(index_u32(r.source_index)?);
        w.u32(index_u32(r.true_label)?);
        w.u32(r.target.map(index_u32).transpose()?.unwrap_or(UNTARGETED));
        w.u8(r.success as u8);
        w.f32(r.confidence);
        for &p in &r.pixels {
            w.f32(p);
        }
    }
    Ok(w.buf)
}

pub fn decode_adversarial(buf: &[u8]) -> Result<AdversarialSet> {
    let mut r = Reader::new(buf, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.usize()?;
    let shape = [r.usize()?, r.usize()?, r.usize()?];
    let image_len: usize = shape.iter().product();
    if image_len == 0 {
        return Err(Error::format(WHAT, format!("image shape {shape:?} has a zero extent")));
    }
    let mut records = Vec::new();
    for i in 0..count {
        let source_index = r.usize()?;
        let true_label = r.usize()?;
        let target = match r.u32()? {
            UNTARGETED => None,
            t => Some(t as usize),
        };
        let success = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::format(WHAT, format!("record {i}: success byte {b}"))),
        };
        let confidence = r.f32()?;
        let pixels = r.f32s(image_len)?;
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::format(WHAT, format!("record {i}: pixel outside [0, 1]")));
        }
        records.push(StoredRecord {
            source_index,
            true_label,
            target,
            success,
            confidence,
            pixels,
        });
    }
    r.finish()?;
    Ok(AdversarialSet { shape, records })
}

pub fn save_adversarial_set(set: &AdversarialSet, path: &Path) -> Result<()> {
    fs::write(path, encode_adversarial(set)?)?;
    Ok(())
}

pub fn load_adversarial_set(path: &Path) -> Result<AdversarialSet> {
    decode_adversarial(&fs::read(path)?)
}
