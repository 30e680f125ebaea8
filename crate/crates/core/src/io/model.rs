//! Portable model file (`RGRPMODL`), weights in 32-bit little-endian.

use std::fs;
use std::path::Path;

use super::bytes::{Reader, Writer};
use crate::engine::{Conv2d, Layer, LayerKind, Linear, MaxPool2d, NetworkModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"RGRPMODL";
pub const VERSION: u32 = 1;
const WHAT: &str = "model file";

fn put_params<T: Scalar>(w: &mut Writer, weight: &[T], bias: &[T]) {
    for v in weight.iter().chain(bias) {
        w.f32(v.as_f32());
    }
}

fn get_params<T: Scalar>(r: &mut Reader, n: usize) -> Result<Vec<T>> {
    Ok(r.f32s(n)?.into_iter().map(T::from_stored).collect())
}

pub fn encode_model<T: Scalar>(model: &NetworkModel<T>) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    for e in model.input_shape() {
        w.usize(e)?;
    }
    w.usize(model.num_classes())?;
    w.usize(model.layers().len())?;
    for layer in model.layers() {
        w.u8(layer.kind() as u8);
        match layer {
            Layer::Conv2d(c) => {
                for v in [c.in_channels, c.out_channels, c.kernel_h, c.kernel_w, c.stride, c.padding] {
                    w.usize(v)?;
                }
                put_params(&mut w, &c.weight, &c.bias);
            }
            Layer::Linear(l) => {
                w.usize(l.in_dim)?;
                w.usize(l.out_dim)?;
                put_params(&mut w, &l.weight, &l.bias);
            }
            Layer::MaxPool2d(p) => {
                w.usize(p.window)?;
                w.usize(p.stride)?;
            }
            Layer::Relu | Layer::Flatten => {}
        }
    }
    Ok(w.buf)
}

pub fn decode_model<T: Scalar>(buf: &[u8]) -> Result<NetworkModel<T>> {
    let mut r = Reader::new(buf, WHAT);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let input_shape = [r.usize()?, r.usize()?, r.usize()?];
    let num_classes = r.usize()?;
    let count = r.usize()?;
    if count == 0 {
        return Err(Error::format(WHAT, "model has no layers"));
    }
    let mut layers = Vec::new();
    for i in 0..count {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code)
            .ok_or_else(|| Error::format(WHAT, format!("layer {i}: unknown kind code {code}")))?;
        let layer = match kind {
            LayerKind::Conv2d => {
                let [cin, cout, kh, kw, stride, pad] =
                    [r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?];
                let n = cin
                    .checked_mul(cout)
                    .and_then(|v| v.checked_mul(kh))
                    .and_then(|v| v.checked_mul(kw))
                    .ok_or_else(|| Error::format(WHAT, format!("layer {i}: weight count overflows")))?;
                let weight = get_params(&mut r, n)?;
                let bias = get_params(&mut r, cout)?;
                Layer::Conv2d(Conv2d::new(cin, cout, (kh, kw), stride, pad, weight, bias).map_err(|e| Error::shape(i, e.to_string()))?)
            }
            LayerKind::Linear => {
                let (din, dout) = (r.usize()?, r.usize()?);
                let n = din
                    .checked_mul(dout)
                    .ok_or_else(|| Error::format(WHAT, format!("layer {i}: weight count overflows")))?;
                let weight = get_params(&mut r, n)?;
                let bias = get_params(&mut r, dout)?;
                Layer::Linear(Linear::new(din, dout, weight, bias).map_err(|e| Error::shape(i, e.to_string()))?)
            }
            LayerKind::MaxPool2d => Layer::MaxPool2d(MaxPool2d {
                window: r.usize()?,
                stride: r.usize()?,
            }),
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    r.finish()?;
    let model = NetworkModel::new(input_shape, layers)?;
    if model.num_classes() != num_classes {
        return Err(Error::format(
            WHAT,
            format!("header declares {num_classes} classes, last layer has {}", model.num_classes()),
        ));
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &NetworkModel<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<NetworkModel<T>> {
    decode_model(&fs::read(path)?)
}
