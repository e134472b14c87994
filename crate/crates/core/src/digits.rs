//! Bundled 28x28 handwritten-digit sample (2,500 images, 250 per class)
//! and its conversion to synthetic DVS streams.
//!
//! Record layout: one label byte followed by 784 row-major intensity bytes.
//! The first 2,000 records are the training split and the last 500 the test
//! split; labels cycle `0..10` so both splits are balanced.

use std::ops::Range;

use crate::coding::{DvsEncoderConfig, InputSpikes, Threshold, TimeNorm};
use crate::error::{Error, Result};
use crate::events::{synth_events_from_image, EventStream, Image};
use crate::network::{classify, preset, Network, WeightInit};
use crate::runtime::{evaluate, EvalReport, Pipeline};
use crate::training::{fit_with, init_network, EpochStats, History, LossConfig, LossVariant, TrainConfig};

pub const SIDE: usize = 28;
pub const RECORD: usize = 1 + SIDE * SIDE;
pub const TRAIN: Range<usize> = 0..2000;
pub const TEST: Range<usize> = 2000..2500;

static BUNDLED: &[u8] = include_bytes!("../data/digits-2500.bin");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digit {
    pub label: usize,
    /// Row-major intensities, 0..=255.
    pub pixels: Vec<u8>,
}

impl Digit {
    pub fn image(&self) -> Image {
        let pixels = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Image::new(SIDE as u32, SIDE as u32, pixels).expect("28x28 image")
    }
}

pub fn parse_digits(bytes: &[u8]) -> Result<Vec<Digit>> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::Format(format!(
            "digit file of {} bytes is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(RECORD)
        .enumerate()
        .map(|(i, r)| {
            if r[0] > 9 {
                return Err(Error::Format(format!("record {i}: label {}", r[0])));
            }
            Ok(Digit {
                label: r[0] as usize,
                pixels: r[1..].to_vec(),
            })
        })
        .collect()
}

/// The bundled corpus.
pub fn bundled() -> Vec<Digit> {
    parse_digits(BUNDLED).expect("bundled digits are well formed")
}

/// How digits become event streams and input spikes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitEncoding {
    /// DVS events per unit of normalized intensity.
    pub events_per_unit: f64,
    pub t0: f64,
    pub t_k: f64,
    pub threshold: Threshold,
    /// Network time that `[t0, t_k]` is mapped onto.
    pub t_norm: f64,
}

impl Default for DigitEncoding {
    fn default() -> Self {
        Self {
            events_per_unit: 8.0,
            t0: 0.0,
            t_k: 1.0,
            threshold: Threshold::Constant { alpha: 0.0 },
            t_norm: 4.0,
        }
    }
}

impl DigitEncoding {
    pub fn pipeline(&self) -> Pipeline {
        Pipeline::Dvs {
            encoder: DvsEncoderConfig {
                threshold: self.threshold,
                t0: self.t0,
                t_k: self.t_k,
            },
            initial: None,
        }
    }

    pub fn time_norm(&self) -> Result<TimeNorm> {
        TimeNorm::from_window(self.t0, self.t_k, self.t_norm)
    }

    /// Event stream of `digit`; the per-pixel phases come from `seed`.
    pub fn stream(&self, digit: &Digit, seed: u64) -> Result<EventStream> {
        synth_events_from_image(&digit.image(), self.events_per_unit, self.t0, self.t_k, seed).map(EventStream::Dvs)
    }

    /// Streams for `digits[range]` with labels; sample `i` uses seed
    /// `seed + i`.
    pub fn streams(&self, digits: &[Digit], range: Range<usize>, seed: u64) -> Result<Vec<(EventStream, usize)>> {
        digits[range.clone()]
            .iter()
            .zip(range)
            .map(|(d, i)| Ok((self.stream(d, seed.wrapping_add(i as u64))?, d.label)))
            .collect()
    }

    /// Normalized input spikes for training.
    pub fn spikes(&self, streams: &[(EventStream, usize)]) -> Result<Vec<(InputSpikes, usize)>> {
        let pipeline = self.pipeline();
        let norm = self.time_norm()?;
        streams
            .iter()
            .map(|(s, l)| Ok((pipeline.encode(s)?.normalized(norm), *l)))
            .collect()
    }
}

/// Training settings for the digit task with the `nmnist` preset.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 8,
        lr_initial: 1e-3,
        lr_final: 1e-4,
        seed,
        init: WeightInit { lo: 0.0, hi: 8.0 },
        loss: LossConfig {
            variant: LossVariant::Softmax,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Outcome of [`run_task`].
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub net: Network,
    pub history: History,
    /// Batch accuracy on the test split after each epoch.
    pub test_accuracy: Vec<f64>,
    /// Streaming evaluation of the final network on the test split.
    pub report: EvalReport,
}

/// Batch accuracy of `net` on encoded samples.
pub fn accuracy(net: &Network, data: &[(InputSpikes, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (x, l) in data {
        correct += (classify(&net.forward_spikes(x)?, net.z_max) == *l) as usize;
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Trains `preset` on the bundled training split and streams the test
/// split through the result. Event phases use `cfg.seed` as well.
pub fn run_task(
    preset_name: &str,
    enc: &DigitEncoding,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, f64),
) -> Result<TaskRun> {
    let digits = bundled();
    let train_streams = enc.streams(&digits, TRAIN, cfg.seed)?;
    let test_streams = enc.streams(&digits, TEST, cfg.seed)?;
    let train = enc.spikes(&train_streams)?;
    let test = enc.spikes(&test_streams)?;
    let mut net = init_network(&preset(preset_name)?, cfg)?;
    net.time_norm = enc.time_norm()?;
    let mut test_accuracy = Vec::new();
    let mut err = None;
    let history = fit_with(&mut net, &train, cfg, |s, n| match accuracy(n, &test) {
        Ok(a) => {
            test_accuracy.push(a);
            on_epoch(s, a);
        }
        Err(e) => err = Some(e),
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let report = evaluate(&net, &enc.pipeline(), &test_streams, None)?;
    Ok(TaskRun {
        net,
        history,
        test_accuracy,
        report,
    })
}
