//! Layer specifications, architecture strings and the named presets.
//!
//! Architecture strings follow the compact notation `C5-32` (5x5 spiking
//! convolution, 32 kernels), `F256` (fully connected, 256 neurons), `AP`
//! (2x2 average pool, stride 2) and `MP` (2x2 earliest-spike pool, stride 2).
//! Convolutions default to stride 2 with "same" padding; `C3-32/s1` overrides
//! the stride.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`, padding split with the extra row or
    /// column at the bottom/right. Padded taps never spike.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        outputs: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    EarliestPool {
        size: usize,
        stride: usize,
    },
}

/// Output size and leading padding of a strided window along one axis.
pub(crate) fn window_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

impl LayerSpec {
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [h, w, c] = input;
        match *self {
            LayerSpec::Dense { outputs } => {
                if outputs == 0 {
                    return Err(Error::Shape("dense layer with no outputs".into()));
                }
                Ok([1, 1, outputs])
            }
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                padding,
            } => {
                if channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Shape(format!("degenerate conv {self:?}")));
                }
                let (oh, _) = window_geometry(h, kernel, stride, padding)
                    .ok_or_else(|| Error::Shape(format!("kernel {kernel} larger than input {h}")))?;
                let (ow, _) = window_geometry(w, kernel, stride, padding)
                    .ok_or_else(|| Error::Shape(format!("kernel {kernel} larger than input {w}")))?;
                Ok([oh, ow, channels])
            }
            LayerSpec::AvgPool { size, stride } | LayerSpec::EarliestPool { size, stride } => {
                if size == 0 || stride == 0 || h < size || w < size {
                    return Err(Error::Shape(format!("pool {size}/{stride} on {h}x{w}")));
                }
                Ok([(h - size) / stride + 1, (w - size) / stride + 1, c])
            }
        }
    }

    fn parse(token: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer token `{token}`"));
        let t = token.trim();
        match t {
            "AP" => return Ok(LayerSpec::AvgPool { size: 2, stride: 2 }),
            "MP" => return Ok(LayerSpec::EarliestPool { size: 2, stride: 2 }),
            _ => {}
        }
        if let Some(n) = t.strip_prefix('F') {
            return Ok(LayerSpec::Dense {
                outputs: n.parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = t.strip_prefix('C') {
            let (body, stride) = match rest.split_once("/s") {
                Some((b, s)) => (b, s.parse().map_err(|_| bad())?),
                None => (rest, 2),
            };
            let (k, ch) = body.split_once('-').ok_or_else(bad)?;
            return Ok(LayerSpec::Conv {
                channels: ch.parse().map_err(|_| bad())?,
                kernel: k.parse().map_err(|_| bad())?,
                stride,
                padding: Padding::Same,
            });
        }
        Err(bad())
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LayerSpec::Dense { outputs } => write!(f, "F{outputs}"),
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                padding,
            } => {
                write!(f, "C{kernel}-{channels}")?;
                if stride != 2 {
                    write!(f, "/s{stride}")?;
                }
                if padding == Padding::Valid {
                    write!(f, " (valid)")?;
                }
                Ok(())
            }
            LayerSpec::AvgPool { .. } => write!(f, "AP"),
            LayerSpec::EarliestPool { .. } => write!(f, "MP"),
        }
    }
}

/// Network topology without weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub name: String,
    /// `(height, width, channels)`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Renders the same notation [`Architecture::parse`] reads.
impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [h, w, c] = self.input;
        write!(f, "{h}x{w}x{c}:")?;
        for (i, l) in self.layers.iter().enumerate() {
            write!(f, "{}{l}", if i == 0 { " " } else { ", " })?;
        }
        Ok(())
    }
}

impl Architecture {
    /// Parses `"28x28x1: C5-32, C5-16, F10"`.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let (shape, layers) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("architecture `{text}` lacks `shape:`")))?;
        let dims: Vec<usize> = shape
            .trim()
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad input shape `{shape}`")))?;
        let input = match dims[..] {
            [n] => [1, 1, n],
            [h, w] => [h, w, 1],
            [h, w, c] => [h, w, c],
            _ => return Err(Error::Config(format!("bad input shape `{shape}`"))),
        };
        let arch = Architecture {
            name: name.to_string(),
            input,
            layers: layers
                .split(',')
                .map(LayerSpec::parse)
                .collect::<Result<_>>()?,
        };
        arch.shapes()?;
        Ok(arch)
    }

    /// Output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("empty input shape {:?}", self.input)));
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(shape)?;
            out.push(shape);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { .. } | LayerSpec::Conv { .. })) {
            return Err(Error::Shape("the last layer must contain spiking neurons".into()));
        }
        Ok(out)
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(|s| s.iter().product()).unwrap_or(0))
    }

    /// Number of trainable weights.
    pub fn weight_count(&self) -> Result<usize> {
        let mut shape = self.input;
        let mut n = 0;
        for l in &self.layers {
            let fan_in: usize = match *l {
                LayerSpec::Dense { .. } => shape.iter().product(),
                LayerSpec::Conv { kernel, .. } => kernel * kernel * shape[2],
                _ => 0,
            };
            let next = l.output_shape(shape)?;
            n += match *l {
                LayerSpec::Dense { outputs } => fan_in * outputs,
                LayerSpec::Conv { channels, .. } => fan_in * channels,
                _ => 0,
            };
            shape = next;
        }
        Ok(n)
    }
}

/// Preset names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "kitti",
    "nsydney",
    "dvs-barrel",
    "nmnist",
    "ncaltech101",
    "hand-gesture",
    "cifar-small",
    "cifar-mid",
    "cifar-large",
];

/// Named network topologies for each evaluated dataset.
pub fn preset(name: &str) -> Result<Architecture> {
    let text = match name {
        "kitti" => "50x118x1: C5-48, C5-24, F256, F8",
        "nsydney" => "32x32x32: C5-32, C3-32, F128, F9",
        "dvs-barrel" => "1024: F2000, F36",
        "nmnist" => "28x28x1: C5-32, C5-16, F10",
        "ncaltech101" => "200x300x1: C5-16, C3-8, F64, F101",
        "hand-gesture" => "120x320x1: C5-32, C3-48, C3-16, F64, F10",
        "cifar-small" => "128x128x1: C3-32, AP, C3-48, AP, F256, F10",
        "cifar-mid" => "128x128x1: C3-32, C3-48, AP, C3-64, AP, F256, F10",
        "cifar-large" => "128x128x1: C3-32, C3-64, AP, C3-128, C3-256, AP, F1024, F10",
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Architecture::parse(name, text)
}
