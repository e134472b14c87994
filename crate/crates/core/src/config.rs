//! Run configuration: a line-oriented `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors. Every key is optional; see [`RunConfig::default`].
//!
//! ```text
//! sensor = dvs              # dvs | lidar
//! threshold_kind = constant # constant | linear
//! alpha = 1                 # DVS threshold, or LiDAR seconds per unit
//! beta = 0                  # LiDAR delay floor, seconds
//! beta_rate = 1             # linear DVS threshold slope
//! t0 = 0
//! t_k = 1
//! t_norm = 4
//! projection = voxel        # voxel | front_view (lidar only)
//! voxel_delta = 0.2, 0.2, 0.2
//! voxel_dims = 16, 16, 8
//! voxel_origin = 0, -1.6, -0.8
//! voxel_value = flying_time # flying_time | distance | intensity | count
//! light_speed = 299792458
//! fv_r_h = 0.0035
//! fv_r_v = 0.007
//! fv_x0 = -59
//! fv_y0 = -25
//! fv_width = 118
//! fv_height = 50
//! epochs = 20
//! batch_size = 16
//! lr_initial = 0.01
//! lr_final = 0.00001
//! optimizer = adam          # adam | sgd
//! init_lo = 0
//! init_hi = 8
//! loss = exclusive          # exclusive | softmax
//! k = 1
//! mute_silent_target = true
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::coding::{DvsEncoderConfig, LidarEncoderConfig, Threshold, TimeNorm};
use crate::error::{Error, Result};
use crate::events::SensorKind;
use crate::network::WeightInit;
use crate::preprocess::{FrontViewConfig, FrontViewCrop, VoxelGridConfig, VoxelValue, LIGHT_SPEED};
use crate::runtime::Pipeline;
use crate::training::{LossVariant, Optimizer, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Voxel,
    FrontView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sensor: SensorKind,
    pub threshold_kind: ThresholdKind,
    pub alpha: f64,
    pub beta: f64,
    pub beta_rate: f64,
    pub t0: f64,
    pub t_k: f64,
    pub t_norm: f64,
    pub projection: Projection,
    pub voxel: VoxelGridConfig,
    pub front_view: FrontViewConfig,
    pub crop: FrontViewCrop,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sensor: SensorKind::Dvs,
            threshold_kind: ThresholdKind::Constant,
            alpha: 1.0,
            beta: 0.0,
            beta_rate: 1.0,
            t0: 0.0,
            t_k: 1.0,
            t_norm: 4.0,
            projection: Projection::Voxel,
            voxel: VoxelGridConfig {
                delta: [0.2, 0.2, 0.2],
                dims: [16, 16, 8],
                origin: [0.0, -1.6, -0.8],
                c: LIGHT_SPEED,
                value: VoxelValue::FlyingTime,
            },
            front_view: FrontViewConfig {
                r_h: 0.0035,
                r_v: 0.007,
            },
            crop: FrontViewCrop::kitti(-59, -25),
            train: TrainConfig::default(),
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("`{key}`: cannot parse `{v}`")))
}

fn triple<T: std::str::FromStr + Copy>(line: usize, key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = v
        .split(',')
        .map(|p| num(line, key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::parse(line, format!("`{key}` needs three comma-separated values")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, v) = body
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{body}`")))?;
            let (key, v) = (key.trim(), v.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(line, format!("duplicate key `{key}`")));
            }
            let bad = |what: &str| Error::parse(line, format!("`{key}` must be {what}, got `{v}`"));
            match key {
                "sensor" => {
                    cfg.sensor = match v {
                        "dvs" => SensorKind::Dvs,
                        "lidar" => SensorKind::Lidar,
                        _ => return Err(bad("dvs|lidar")),
                    }
                }
                "threshold_kind" => {
                    cfg.threshold_kind = match v {
                        "constant" => ThresholdKind::Constant,
                        "linear" => ThresholdKind::Linear,
                        _ => return Err(bad("constant|linear")),
                    }
                }
                "alpha" => cfg.alpha = num(line, key, v)?,
                "beta" => cfg.beta = num(line, key, v)?,
                "beta_rate" => cfg.beta_rate = num(line, key, v)?,
                "t0" => cfg.t0 = num(line, key, v)?,
                "t_k" => cfg.t_k = num(line, key, v)?,
                "t_norm" => cfg.t_norm = num(line, key, v)?,
                "projection" => {
                    cfg.projection = match v {
                        "voxel" => Projection::Voxel,
                        "front_view" => Projection::FrontView,
                        _ => return Err(bad("voxel|front_view")),
                    }
                }
                "voxel_delta" => cfg.voxel.delta = triple(line, key, v)?,
                "voxel_dims" => cfg.voxel.dims = triple(line, key, v)?,
                "voxel_origin" => cfg.voxel.origin = triple(line, key, v)?,
                "voxel_value" => {
                    cfg.voxel.value = match v {
                        "flying_time" => VoxelValue::FlyingTime,
                        "distance" => VoxelValue::Distance,
                        "intensity" => VoxelValue::Intensity,
                        "count" => VoxelValue::Count,
                        _ => return Err(bad("flying_time|distance|intensity|count")),
                    }
                }
                "light_speed" => cfg.voxel.c = num(line, key, v)?,
                "fv_r_h" => cfg.front_view.r_h = num(line, key, v)?,
                "fv_r_v" => cfg.front_view.r_v = num(line, key, v)?,
                "fv_x0" => cfg.crop.x0 = num(line, key, v)?,
                "fv_y0" => cfg.crop.y0 = num(line, key, v)?,
                "fv_width" => cfg.crop.width = num(line, key, v)?,
                "fv_height" => cfg.crop.height = num(line, key, v)?,
                "epochs" => cfg.train.epochs = num(line, key, v)?,
                "batch_size" => cfg.train.batch_size = num(line, key, v)?,
                "lr_initial" => cfg.train.lr_initial = num(line, key, v)?,
                "lr_final" => cfg.train.lr_final = num(line, key, v)?,
                "optimizer" => cfg.train.optimizer = Optimizer::parse(v).map_err(|_| bad("adam|sgd"))?,
                "init_lo" => cfg.train.init.lo = num(line, key, v)?,
                "init_hi" => cfg.train.init.hi = num(line, key, v)?,
                "loss" => cfg.train.loss.variant = LossVariant::parse(v).map_err(|_| bad("exclusive|softmax"))?,
                "k" => cfg.train.loss.k = num(line, key, v)?,
                "mute_silent_target" => cfg.train.loss.mute_silent_target = num(line, key, v)?,
                _ => return Err(Error::parse(line, format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.time_norm()?;
        self.pipeline()?.validate()?;
        self.train.validate()?;
        let WeightInit { lo, hi } = self.train.init;
        if !(hi >= lo) {
            return Err(Error::Config(format!("init range [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn time_norm(&self) -> Result<TimeNorm> {
        TimeNorm::from_window(self.t0, self.t_k, self.t_norm)
    }

    pub fn threshold(&self) -> Threshold {
        match self.threshold_kind {
            ThresholdKind::Constant => Threshold::Constant { alpha: self.alpha },
            ThresholdKind::Linear => Threshold::Linear {
                beta_rate: self.beta_rate,
            },
        }
    }

    pub fn lidar_encoder(&self) -> LidarEncoderConfig {
        LidarEncoderConfig {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        Ok(match (self.sensor, self.projection) {
            (SensorKind::Dvs, _) => Pipeline::Dvs {
                encoder: DvsEncoderConfig {
                    threshold: self.threshold(),
                    t0: self.t0,
                    t_k: self.t_k,
                },
                initial: None,
            },
            (SensorKind::Lidar, Projection::Voxel) => Pipeline::Voxel {
                grid: self.voxel.clone(),
                encoder: self.lidar_encoder(),
            },
            (SensorKind::Lidar, Projection::FrontView) => Pipeline::FrontView {
                view: self.front_view,
                crop: self.crop,
                value: self.voxel.value,
                c: self.voxel.c,
                encoder: self.lidar_encoder(),
            },
        })
    }
}
