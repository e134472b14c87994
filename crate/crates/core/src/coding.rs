//! Temporal coding: maps preprocessed event data and arrival times to one
//! spike time per input neuron.
//!
//! Encoders work in raw seconds. [`InputSpikes::normalized`] applies the
//! affine [`TimeNorm`] that brings spike times into the range the network was
//! trained on, since `e^t` of raw second-scale LiDAR times overflows quickly.

use crate::error::{Error, Result};
use crate::events::DvsStream;
use crate::preprocess::{Frame, VoxelGrid};

/// Affine map `t' = (t - offset) * scale` from sensor seconds to network
/// time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeNorm {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TimeNorm {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TimeNorm {
    pub const IDENTITY: TimeNorm = TimeNorm {
        offset: 0.0,
        scale: 1.0,
    };

    /// Maps `[t0, t_k]` onto `[0, t_norm]`.
    pub fn from_window(t0: f64, t_k: f64, t_norm: f64) -> Result<Self> {
        if !(t_k > t0) {
            return Err(Error::Window { t0, t_k });
        }
        if !(t_norm > 0.0 && t_norm.is_finite()) {
            return Err(Error::Config(format!("t_norm must be > 0, got {t_norm}")));
        }
        Ok(Self {
            offset: t0,
            scale: t_norm / (t_k - t0),
        })
    }

    pub fn apply(&self, t: f64) -> f64 {
        (t - self.offset) * self.scale
    }

    pub fn invert(&self, t: f64) -> f64 {
        t / self.scale + self.offset
    }

    /// Composition `other ∘ self`.
    pub fn then(&self, other: &TimeNorm) -> TimeNorm {
        TimeNorm {
            offset: self.offset + other.offset / self.scale,
            scale: self.scale * other.scale,
        }
    }
}

/// Per-neuron input spike times.
///
/// `times[i]` is `None` when input neuron `i` never spikes. `norm` records
/// the map already applied to the times, so [`InputSpikes::raw_time`] can
/// recover sensor seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpikes {
    /// `(height, width, channels)`.
    pub shape: [usize; 3],
    pub times: Vec<Option<f64>>,
    pub norm: TimeNorm,
}

impl InputSpikes {
    pub fn new(shape: [usize; 3], times: Vec<Option<f64>>) -> Result<Self> {
        if shape.iter().product::<usize>() != times.len() {
            return Err(Error::Shape(format!(
                "{} spike slots for shape {shape:?}",
                times.len()
            )));
        }
        Ok(Self {
            shape,
            times,
            norm: TimeNorm::IDENTITY,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `z_i = e^{t_i}`, `None` for silent inputs.
    pub fn z(&self) -> Vec<Option<f64>> {
        self.times.iter().map(|t| t.map(f64::exp)).collect()
    }

    /// Applies `norm` on top of whatever map is already recorded.
    pub fn normalized(&self, norm: TimeNorm) -> Self {
        Self {
            shape: self.shape,
            times: self.times.iter().map(|t| t.map(|t| norm.apply(t))).collect(),
            norm: self.norm.then(&norm),
        }
    }

    /// Sensor-time value of a network-time spike.
    pub fn raw_time(&self, t: f64) -> f64 {
        self.norm.invert(t)
    }

    /// Earliest present spike, in the stored (possibly normalized) time.
    pub fn first_spike(&self) -> Option<f64> {
        self.times.iter().flatten().copied().reduce(f64::min)
    }

    /// Shifts every present spike by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t.map(|t| t + delta)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarEncoderConfig {
    /// Seconds per unit of voxel value.
    pub alpha: f64,
    /// Delay floor, seconds.
    pub beta: f64,
}

impl LidarEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite())
        {
            return Err(Error::Config(format!(
                "lidar encoder needs finite alpha, beta >= 0 (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Spike time of a voxel first hit at `arrival` with value `d`.
    pub fn spike_time(&self, arrival: f64, d: f64) -> f64 {
        self.beta.max(arrival) + self.alpha * d
    }
}

/// `t_i = max(beta, A_i) + alpha * D_i` for occupied voxels.
pub fn encode_lidar(grid: &VoxelGrid, config: &LidarEncoderConfig) -> Result<InputSpikes> {
    config.validate()?;
    let times = grid
        .arrival
        .iter()
        .zip(&grid.values)
        .map(|(a, &d)| a.map(|a| config.spike_time(a, d)))
        .collect();
    InputSpikes::new(grid.shape(), times)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `Γ(t) = alpha` (event-count units).
    Constant { alpha: f64 },
    /// `Γ(t) = beta_rate * (t_k - t)`.
    Linear { beta_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvsEncoderConfig {
    pub threshold: Threshold,
    pub t0: f64,
    pub t_k: f64,
}

impl DvsEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 < self.t_k) {
            return Err(Error::Window {
                t0: self.t0,
                t_k: self.t_k,
            });
        }
        match self.threshold {
            Threshold::Constant { alpha } if !(alpha >= 0.0) => {
                Err(Error::Config(format!("threshold alpha must be >= 0, got {alpha}")))
            }
            Threshold::Linear { beta_rate } if !(beta_rate >= 0.0) => Err(Error::Config(format!(
                "threshold beta_rate must be >= 0, got {beta_rate}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn gamma(&self, t: f64) -> f64 {
        match self.threshold {
            Threshold::Constant { alpha } => alpha,
            Threshold::Linear { beta_rate } => beta_rate * (self.t_k - t),
        }
    }

    pub fn in_window(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t_k
    }
}

/// Spikes each pixel at the first candidate time where its running polarity
/// sum (plus the initial image) reaches the threshold. Candidates are the
/// pixel's in-window event times and `t_k`.
pub fn encode_dvs(
    stream: &DvsStream,
    config: &DvsEncoderConfig,
    initial: Option<&[i64]>,
) -> Result<InputSpikes> {
    config.validate()?;
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let n = w * h;
    if let Some(i) = initial {
        if i.len() != n {
            return Err(Error::Shape(format!("initial image {} vs {n} pixels", i.len())));
        }
    }
    let mut per_pixel: Vec<Vec<(f64, i8)>> = vec![Vec::new(); n];
    for e in stream.events() {
        if config.in_window(e.t) {
            per_pixel[e.y as usize * w + e.x as usize].push((e.t, e.p));
        }
    }
    let times = per_pixel
        .iter()
        .enumerate()
        .map(|(i, events)| {
            let mut sum = initial.map_or(0, |v| v[i]);
            let mut k = 0;
            while k < events.len() {
                let t = events[k].0;
                // all events sharing a timestamp count together
                while k < events.len() && events[k].0 == t {
                    sum += events[k].1 as i64;
                    k += 1;
                }
                if sum as f64 >= config.gamma(t) {
                    return Some(t);
                }
            }
            (sum as f64 >= config.gamma(config.t_k)).then_some(config.t_k)
        })
        .collect();
    InputSpikes::new([h, w, 1], times)
}

/// Synchronous baseline: `t_i = alpha * D_i` where `D_i > 0`, ignoring
/// arrival times.
pub fn encode_frame_static(values: &[f64], shape: [usize; 3], alpha: f64) -> Result<InputSpikes> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite frame value".into()));
    }
    InputSpikes::new(
        shape,
        values
            .iter()
            .map(|&d| (d > 0.0).then(|| alpha * d))
            .collect(),
    )
}

pub fn frame_values(frame: &Frame) -> (Vec<f64>, [usize; 3]) {
    (
        frame.values.iter().map(|&v| v as f64).collect(),
        [frame.height, frame.width, 1],
    )
}
