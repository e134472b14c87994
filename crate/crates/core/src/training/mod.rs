//! Loss, analytic gradients, finite-difference checking, the training loop
//! and the model file format.
//!
//! The loss for target class `c` over output values `z` is
//!
//! ```text
//! L = ln z_c + ln sum_{i != c} 1/z_i  +  k * sum_rows max(0, 1 - sum_i w_i)
//! ```
//!
//! (the `softmax` variant keeps `i = c` in the sum). Silent outputs take the
//! value `z_max`. The penalty runs over every weight row: one per neuron in
//! dense layers, one per kernel in convolutional layers.

mod exact;
mod fit;
mod model_io;

pub use fit::{fit, fit_with, init_network, lr_at, EpochStats, History, Optimizer, TrainConfig};
pub use model_io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use crate::error::{Error, Result};
use exact::{forward_dd, Dd};
use crate::network::{LayerTrace, Network};
use crate::Z_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    /// Target class excluded from the normalizing sum.
    #[default]
    Exclusive,
    /// Normalizing sum over all classes, `-ln softmax(-t)_c`.
    Softmax,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exclusive" => Ok(Self::Exclusive),
            "softmax" => Ok(Self::Softmax),
            _ => Err(Error::Config(format!("loss_variant must be exclusive|softmax, got `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Exclusive => "exclusive",
            Self::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight-sum penalty coefficient.
    pub k: f64,
    pub z_max: f64,
    pub variant: LossVariant,
    /// When the target output is silent, drop the class-term gradient and
    /// keep only the penalty. Without this every step pushes all outputs
    /// later and training can collapse into an all-silent network.
    pub mute_silent_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            z_max: Z_MAX,
            variant: LossVariant::Exclusive,
            mute_silent_target: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("penalty k must be >= 0, got {}", self.k)));
        }
        if !(self.z_max > 1.0) {
            return Err(Error::Config(format!("z_max must exceed 1, got {}", self.z_max)));
        }
        Ok(())
    }
}

fn output_values(z: &[Option<f64>], c: usize, cfg: &LossConfig) -> Result<Vec<f64>> {
    if c >= z.len() {
        return Err(Error::Label {
            label: c,
            classes: z.len(),
        });
    }
    if z.len() < 2 && cfg.variant == LossVariant::Exclusive {
        return Err(Error::Shape("the loss needs at least two classes".into()));
    }
    z.iter()
        .enumerate()
        .map(|(i, v)| match *v {
            Some(v) if !(v >= 1.0) => Err(Error::Domain(format!("output {i} has z = {v} < 1"))),
            Some(v) => Ok(v),
            None => Ok(cfg.z_max),
        })
        .collect()
}

/// Classification term and its gradient with respect to each output `z`.
fn class_term(z: &[f64], c: usize, variant: LossVariant) -> (f64, Vec<f64>) {
    let s: f64 = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != c || variant == LossVariant::Softmax)
        .map(|(_, v)| 1.0 / v)
        .sum();
    let value = z[c].ln() + s.ln();
    let grad = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let from_sum = if i != c || variant == LossVariant::Softmax {
                -1.0 / (v * v * s)
            } else {
                0.0
            };
            from_sum + if i == c { 1.0 / v } else { 0.0 }
        })
        .collect();
    (value, grad)
}

/// `class_term(a) - class_term(b)` without subtracting two rounded logs:
/// each log difference becomes `ln_1p` of a relative change.
fn class_term_difference(a: &[Dd], b: &[Dd], c: usize, variant: LossVariant) -> Dd {
    let in_sum = |i: usize| i != c || variant == LossVariant::Softmax;
    let one = Dd::new(1.0);
    let mut s_b = Dd::ZERO;
    let mut ds = Dd::ZERO;
    for i in (0..a.len()).filter(|&i| in_sum(i)) {
        s_b = s_b + one / b[i];
        // 1/a_i - 1/b_i = (b_i - a_i) / (a_i b_i)
        ds = ds + (b[i] - a[i]) / (a[i] * b[i]);
    }
    ((a[c] - b[c]) / b[c]).ln_1p() + (ds / s_b).ln_1p()
}

fn penalty_dd(net: &Network, w: &[Dd]) -> Dd {
    let mut p = Dd::ZERO;
    let mut off = 0;
    for layer in &net.layers {
        let n_w = layer.weights().len();
        if let Some(n) = layer.row_len() {
            for row in w[off..off + n_w].chunks_exact(n) {
                let gap = row.iter().fold(Dd::new(1.0), |g, &x| g - x);
                if gap > Dd::ZERO {
                    p = p + gap;
                }
            }
        }
        off += n_w;
    }
    p
}

/// `sum_rows max(0, 1 - sum w)` over all weight rows of `net`.
pub fn weight_penalty(net: &Network) -> f64 {
    let mut p = 0.0;
    for layer in &net.layers {
        let Some(n) = layer.row_len() else { continue };
        for row in layer.weights().chunks_exact(n) {
            p += (1.0 - row.iter().sum::<f64>()).max(0.0);
        }
    }
    p
}

/// Loss of output values `z` for target `c`, including the weight penalty of
/// `net`.
pub fn loss(z: &[Option<f64>], c: usize, net: &Network, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let z = output_values(z, c, cfg)?;
    Ok(class_term(&z, c, cfg.variant).0 + cfg.k * weight_penalty(net))
}

/// Gradient of the loss with respect to every weight, in
/// [`Network::flat_weights`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Neurons whose denominator was clamped to `epsilon_denom`.
    pub clamped: usize,
    /// Output `z` of the forward pass.
    pub output: Vec<Option<f64>>,
}

fn backward_traced(
    net: &Network,
    z_in: &[Option<f64>],
    traces: &[LayerTrace],
    c: usize,
    cfg: &LossConfig,
) -> Result<Gradients> {
    cfg.validate()?;
    let output = traces.last().map(|t| t.output.clone()).unwrap_or_default();
    let values = output_values(&output, c, cfg)?;
    let (term, dz) = class_term(&values, c, cfg.variant);

    // silent outputs are constants (z_max) and pass no gradient
    let mut grad_out: Vec<f64> = dz
        .iter()
        .zip(&output)
        .map(|(g, o)| if o.is_some() { *g } else { 0.0 })
        .collect();
    if cfg.mute_silent_target && output[c].is_none() {
        grad_out.iter_mut().for_each(|g| *g = 0.0);
    }
    let mut per_layer: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights().len()]).collect();
    let mut clamped = 0;
    for k in (0..net.layers.len()).rev() {
        let input = if k == 0 { z_in } else { &traces[k - 1].output };
        let (g_in, n) = net.layers[k].backward(input, &traces[k], &grad_out, &mut per_layer[k], net.epsilon_denom);
        clamped += n;
        grad_out = g_in;
    }

    let mut penalty = 0.0;
    for (layer, g) in net.layers.iter().zip(&mut per_layer) {
        let Some(n) = layer.row_len() else { continue };
        for (row, grow) in layer.weights().chunks_exact(n).zip(g.chunks_exact_mut(n)) {
            let gap = 1.0 - row.iter().sum::<f64>();
            if gap > 0.0 {
                penalty += gap;
                grow.iter_mut().for_each(|x| *x -= cfg.k);
            }
        }
    }
    Ok(Gradients {
        loss: term + cfg.k * penalty,
        grad: per_layer.concat(),
        clamped,
        output,
    })
}

/// Forward pass, loss and analytic gradient for one sample.
pub fn backward(net: &Network, z_in: &[Option<f64>], c: usize, cfg: &LossConfig) -> Result<Gradients> {
    let traces = net.forward_trace(z_in)?;
    backward_traced(net, z_in, &traces, c, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub analytic: Vec<f64>,
    /// Central-difference estimate; `NaN` where skipped.
    pub numeric: Vec<f64>,
    /// Per-parameter flag: perturbing by `±h` changed a causal set.
    pub skipped: Vec<bool>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_count: usize,
}

/// `|a - f| / max(|a|, |f|, 1e-12)`.
pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-12)
}

fn signatures(traces: &[LayerTrace]) -> Vec<Vec<u64>> {
    traces.iter().map(LayerTrace::signature).collect()
}

/// Compares the analytic gradient with central differences of step `h` on
/// every weight. The perturbed forward passes run in double-double
/// precision and the loss difference is formed from their outputs directly,
/// so small gradients are not lost to rounding. Weights whose perturbation moves any neuron across a
/// causal-set boundary are skipped. An input with no spikes yields an empty
/// report.
pub fn grad_check(net: &Network, z_in: &[Option<f64>], c: usize, cfg: &LossConfig, h: f64) -> Result<GradientReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    if z_in.iter().all(Option::is_none) {
        return Ok(GradientReport {
            analytic: Vec::new(),
            numeric: Vec::new(),
            skipped: Vec::new(),
            max_rel_error: 0.0,
            checked: 0,
            skipped_count: 0,
        });
    }
    let traces = net.forward_trace(z_in)?;
    let base = signatures(&traces);
    let exact = LossConfig {
        mute_silent_target: false,
        ..*cfg
    };
    let analytic = backward_traced(net, z_in, &traces, c, &exact)?.grad;

    let w0 = net.flat_weights();
    let mut w: Vec<Dd> = w0.iter().copied().map(Dd::new).collect();
    let mut numeric = vec![f64::NAN; w0.len()];
    let mut skipped = vec![false; w0.len()];
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for i in 0..w0.len() {
        let (wp, wm) = (w0[i] + h, w0[i] - h);
        w[i] = Dd::new(wp);
        let (zp, sig_p) = forward_dd(net, &w, z_in);
        let pp = penalty_dd(net, &w);
        w[i] = Dd::new(wm);
        let (zm, sig_m) = forward_dd(net, &w, z_in);
        let pm = penalty_dd(net, &w);
        w[i] = Dd::new(w0[i]);
        // the penalty hinge is a boundary too
        if sig_p != base || sig_m != base || penalty_kink_within(net, i, h) {
            skipped[i] = true;
            continue;
        }
        let fill = |z: Vec<Option<Dd>>| -> Vec<Dd> {
            z.into_iter().map(|v| v.unwrap_or(Dd::new(cfg.z_max))).collect()
        };
        let dl = class_term_difference(&fill(zp), &fill(zm), c, cfg.variant) + Dd::new(cfg.k) * (pp - pm);
        numeric[i] = (dl / (Dd::new(wp) - Dd::new(wm))).to_f64();
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric[i]));
        checked += 1;
    }
    let skipped_count = skipped.iter().filter(|&&s| s).count();
    Ok(GradientReport {
        analytic,
        numeric,
        skipped,
        max_rel_error,
        checked,
        skipped_count,
    })
}

/// Whether weight `flat` sits within `h` of its row's `sum w = 1` hinge.
fn penalty_kink_within(net: &Network, flat: usize, h: f64) -> bool {
    let mut off = 0;
    for layer in &net.layers {
        let w = layer.weights();
        if flat < off + w.len() {
            let n = layer.row_len().expect("weights imply rows");
            let r = (flat - off) / n;
            let sum: f64 = w[r * n..(r + 1) * n].iter().sum();
            return (sum - 1.0).abs() <= h;
        }
        off += w.len();
    }
    false
}

#[cfg(test)]
mod tests;
