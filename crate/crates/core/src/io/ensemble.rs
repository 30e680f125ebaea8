//! Ensemble file (`RGRPENSB`), PMFs in 64-bit little-endian.
//!
//! Build metadata (member indices, weights, warnings) does not fit the
//! binary layout and is kept in a JSON sidecar next to the file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use super::bytes::{Reader, Writer};
use crate::error::{Error, Result};
use crate::regroup::{BuildInfo, EnsembleLayer, GenerativeEnsemble};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"RGRPENSB";
pub const VERSION: u32 = 1;
const WHAT: &str = "ensemble file";

pub fn encode_ensemble<T: Scalar>(ensemble: &GenerativeEnsemble<T>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.f64(ensemble.delta().as_f64());
    w.usize(ensemble.num_classes())?;
    w.usize(ensemble.depth())?;
    w.usize(ensemble.selected_k().unwrap_or(0))?;
    for layer in ensemble.layers() {
        w.usize(layer.layer)?;
        w.usize(layer.dim)?;
        for v in layer.positive.iter().chain(&layer.negative) {
            w.f64(v.as_f64());
        }
    }
    Ok(w.buf)
}

pub fn decode_ensemble<T: Scalar>(buf: &[u8]) -> Result<GenerativeEnsemble<T>> {
    let mut r = Reader::new(buf, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let delta = r.f64()?;
    let num_classes = r.usize()?;
    let depth = r.usize()?;
    let k = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..depth {
        let layer = r.usize()?;
        let dim = r.usize()?;
        let n = num_classes
            .checked_mul(dim)
            .ok_or_else(|| Error::format(WHAT, "matrix size overflows"))?;
        let read = |r: &mut Reader| -> Result<Vec<T>> { Ok(r.f64s(n)?.into_iter().map(T::lit).collect()) };
        let positive = read(&mut r)?;
        let negative = read(&mut r)?;
        layers.push(EnsembleLayer {
            layer,
            dim,
            positive,
            negative,
        });
    }
    r.finish()?;
    GenerativeEnsemble::new(num_classes, T::lit(delta), layers, (k > 0).then_some(k))
        .map_err(|e| Error::format(WHAT, e.to_string()))
}

/// `<path>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = OsString::from(path.as_os_str());
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the binary file and, when build metadata is present, its sidecar.
pub fn save_ensemble<T: Scalar>(ensemble: &GenerativeEnsemble<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_ensemble(ensemble)?)?;
    if let Some(info) = ensemble.build_info() {
        let json = serde_json::to_vec_pretty(info).map_err(|e| Error::format("ensemble metadata", e.to_string()))?;
        fs::write(sidecar_path(path), json)?;
    }
    Ok(())
}

/// Reads the binary file and attaches the sidecar metadata if one exists.
pub fn load_ensemble<T: Scalar>(path: &Path) -> Result<GenerativeEnsemble<T>> {
    let ensemble = decode_ensemble(&fs::read(path)?)?;
    let meta = sidecar_path(path);
    if !meta.exists() {
        return Ok(ensemble);
    }
    let info: BuildInfo =
        serde_json::from_slice(&fs::read(meta)?).map_err(|e| Error::format("ensemble metadata", e.to_string()))?;
    Ok(ensemble.with_build_info(info))
}
