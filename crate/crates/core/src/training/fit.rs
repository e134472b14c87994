use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, LossConfig};
use crate::coding::InputSpikes;
use crate::error::{Error, Result};
use crate::network::{classify, Architecture, Network, WeightInit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::ADAM),
            _ => Err(Error::Config(format!("optimizer must be sgd|adam, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub init: WeightInit,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr_initial: 1e-2,
            lr_final: 1e-5,
            optimizer: Optimizer::ADAM,
            seed: 0,
            init: WeightInit::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must be > 0 (got {}, {})",
                self.lr_initial, self.lr_final
            )));
        }
        self.loss.validate()
    }
}

/// Learning rate of `epoch` (0-based): exponential interpolation from
/// `lr_initial` at the first epoch to `lr_final` at the last.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_initial;
    }
    let frac = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(frac)
}

/// Random network from `cfg.seed`.
pub fn init_network(arch: &Architecture, cfg: &TrainConfig) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Network::random(arch, &cfg.init, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's samples, measured before each update.
    pub loss: f64,
    /// Training accuracy over the epoch, measured before each update.
    pub accuracy: f64,
    pub clamped: usize,
}

pub type History = Vec<EpochStats>;

/// Mini-batch training of `net` in place.
pub fn fit(net: &mut Network, data: &[(InputSpikes, usize)], cfg: &TrainConfig) -> Result<History> {
    fit_with(net, data, cfg, |_, _| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F>(net: &mut Network, data: &[(InputSpikes, usize)], cfg: &TrainConfig, mut on_epoch: F) -> Result<History>
where
    F: FnMut(&EpochStats, &Network),
{
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let classes = net.classes();
    let mut inputs = Vec::with_capacity(data.len());
    for (x, label) in data {
        if x.shape != net.input_shape {
            return Err(Error::Shape(format!(
                "sample shape {:?} does not match network input {:?}",
                x.shape, net.input_shape
            )));
        }
        if *label >= classes {
            return Err(Error::Label { label: *label, classes });
        }
        inputs.push(x.z());
    }

    // shuffling draws from its own stream so it does not depend on init
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_w = net.weight_count();
    let mut m = vec![0.0; n_w];
    let mut v = vec![0.0; n_w];
    let mut step = 0i32;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut clamped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = vec![0.0; n_w];
            for &i in batch {
                let r = backward(net, &inputs[i], data[i].1, &cfg.loss)?;
                if !r.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        msg: format!("loss {} on sample {i}", r.loss),
                    });
                }
                loss_sum += r.loss;
                correct += (classify(&r.output, net.z_max) == data[i].1) as usize;
                clamped += r.clamped;
                g.iter_mut().zip(&r.grad).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            let mut w = net.flat_weights();
            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (wi, gi) in w.iter_mut().zip(&g) {
                        *wi -= lr * gi * scale;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for j in 0..n_w {
                        let gj = g[j] * scale;
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            if let Some(bad) = w.iter().position(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!("weight {bad} became {}", w[bad]),
                });
            }
            net.set_flat_weights(&w)?;
        }
        let stats = EpochStats {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            clamped,
        };
        on_epoch(&stats, net);
        history.push(stats);
    }
    Ok(history)
}
