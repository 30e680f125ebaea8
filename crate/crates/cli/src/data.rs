use std::path::{Path, PathBuf};

use regroup::io::{load_cifar10, load_mnist_split};
use regroup::{LabeledDataset, Provenance};

use crate::config::{DatasetKind, Split, Window};
use crate::CliError;

fn cifar_files(dir: &Path, split: Split) -> Vec<PathBuf> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    }
}

/// Loads one split from a directory holding the standard file names.
pub fn load_split(kind: DatasetKind, dir: &Path, split: Split) -> Result<LabeledDataset, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("data directory {} does not exist", dir.display())));
    }
    let provenance = match split {
        Split::Train => Provenance::Train,
        Split::Test => Provenance::Test,
    };
    let ds = match kind {
        DatasetKind::Mnist => load_mnist_split(dir, provenance),
        DatasetKind::Cifar10 => load_cifar10(&cifar_files(dir, split), provenance),
    };
    ds.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// A window of a split together with the absolute index of its first sample.
pub struct Samples {
    pub data: LabeledDataset,
    pub offset: usize,
}

impl Samples {
    pub fn absolute(&self, i: usize) -> usize {
        self.offset + i
    }
}

pub fn load_window(kind: DatasetKind, dir: &Path, split: Split, window: Window) -> Result<Samples, CliError> {
    let full = load_split(kind, dir, split)?;
    let range = window.resolve(full.len())?;
    Ok(Samples {
        offset: range.start,
        data: full.slice(range),
    })
}
