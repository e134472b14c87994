//! Binary model file.
//!
//! Little-endian layout:
//!
//! ```text
//! "TSNN" | u32 version | u32 name_len | name bytes
//! u32 x3 input shape | f64 norm offset | f64 norm scale | f64 z_max | f64 epsilon_denom
//! u32 layer_count
//! per layer: u8 kind | shape u32s (kind-specific) | u64 weight_count | f64 weights
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Layer kinds: 0 dense (inputs, outputs), 1 conv (input h, w, c, channels,
//! kernel, stride, padding 0=same/1=valid), 2 average pool and 3
//! earliest-spike pool (input h, w, c, size, stride).

use std::path::Path;

use crate::coding::TimeNorm;
use crate::error::{Error, Result};
use crate::network::{Conv, Dense, Layer, Network, Padding, Pool};

pub const MODEL_MAGIC: &[u8; 4] = b"TSNN";
pub const MODEL_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_model(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.0.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    w.u32(net.name.len());
    w.0.extend_from_slice(net.name.as_bytes());
    net.input_shape.iter().for_each(|&d| w.u32(d));
    w.f64(net.time_norm.offset);
    w.f64(net.time_norm.scale);
    w.f64(net.z_max);
    w.f64(net.epsilon_denom);
    w.u32(net.layers.len());
    for layer in &net.layers {
        match layer {
            Layer::Dense(d) => {
                w.u8(0);
                w.u32(d.inputs);
                w.u32(d.outputs);
            }
            Layer::Conv(c) => {
                w.u8(1);
                c.input.iter().for_each(|&d| w.u32(d));
                w.u32(c.channels);
                w.u32(c.kernel);
                w.u32(c.stride);
                w.u8(match c.padding {
                    Padding::Same => 0,
                    Padding::Valid => 1,
                });
            }
            Layer::AvgPool(p) | Layer::EarliestPool(p) => {
                w.u8(if matches!(layer, Layer::AvgPool(_)) { 2 } else { 3 });
                p.input.iter().for_each(|&d| w.u32(d));
                w.u32(p.size);
                w.u32(p.stride);
            }
        }
        let weights = layer.weights();
        w.u64(weights.len());
        weights.iter().for_each(|&x| w.f64(x));
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated model: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn shape(&mut self) -> Result<[usize; 3]> {
        Ok([self.u32()?, self.u32()?, self.u32()?])
    }
}

pub fn load_model(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("bad magic, not a model file".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Format("truncated model header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Format("truncated model header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 8 };
    let name_len = r.u32()?;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::Format("model name is not UTF-8".into()))?;
    let input_shape = r.shape()?;
    let time_norm = TimeNorm {
        offset: r.f64()?,
        scale: r.f64()?,
    };
    let z_max = r.f64()?;
    let epsilon_denom = r.f64()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    let mut shape = input_shape;
    for i in 0..n_layers {
        let kind = r.u8()?;
        let mut layer = match kind {
            0 => {
                let inputs = r.u32()?;
                let outputs = r.u32()?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weights: Vec::new(),
                })
            }
            1 => {
                let input = r.shape()?;
                let (channels, kernel, stride) = (r.u32()?, r.u32()?, r.u32()?);
                let padding = match r.u8()? {
                    0 => Padding::Same,
                    1 => Padding::Valid,
                    p => return Err(Error::Format(format!("layer {i}: unknown padding tag {p}"))),
                };
                Layer::Conv(Conv {
                    input,
                    channels,
                    kernel,
                    stride,
                    padding,
                    weights: Vec::new(),
                })
            }
            2 | 3 => {
                let p = Pool {
                    input: r.shape()?,
                    size: r.u32()?,
                    stride: r.u32()?,
                };
                if kind == 2 {
                    Layer::AvgPool(p)
                } else {
                    Layer::EarliestPool(p)
                }
            }
            k => return Err(Error::Format(format!("layer {i}: unknown kind tag {k}"))),
        };
        // shapes must chain and match a freshly built layer
        let fresh = Layer::from_spec(&layer.spec(), shape)
            .map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
        let count = r.u64()?;
        if count != fresh.weights().len() as u64 {
            return Err(Error::Format(format!(
                "layer {i}: {count} weights, expected {}",
                fresh.weights().len()
            )));
        }
        let weights = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        match &mut layer {
            Layer::Dense(d) => d.weights = weights,
            Layer::Conv(c) => c.weights = weights,
            _ => {}
        }
        let chained = match (&layer, &fresh) {
            (Layer::Dense(a), Layer::Dense(b)) => a.inputs == b.inputs,
            (Layer::Conv(a), Layer::Conv(b)) => a.input == b.input,
            (Layer::AvgPool(a), Layer::AvgPool(b)) | (Layer::EarliestPool(a), Layer::EarliestPool(b)) => a.input == b.input,
            _ => false,
        };
        if !chained {
            return Err(Error::Format(format!("layer {i}: shape does not chain")));
        }
        shape = layer.output_shape();
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if layers.is_empty() {
        return Err(Error::Format("model has no layers".into()));
    }
    Ok(Network {
        name,
        input_shape,
        layers,
        z_max,
        epsilon_denom,
        time_norm,
    })
}

pub fn write_model(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, save_model(net)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<Network> {
    load_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
