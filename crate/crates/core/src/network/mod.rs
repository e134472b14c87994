//! Spiking layers in the `z = e^t` domain.
//!
//! Every neuron fires at most once. Fully-connected and convolutional layers
//! solve each neuron with the closed-form causal-set rule from [`neuron`];
//! pooling layers act on `z` directly (mean for average pooling, minimum for
//! earliest-spike pooling). Silent neurons are `None` throughout and only
//! become [`crate::Z_MAX`] at the loss / classification boundary and inside
//! average pooling.

pub mod neuron;
pub mod ode;
pub mod presets;

use rand::Rng;

use crate::coding::{InputSpikes, TimeNorm};
use crate::error::{Error, Result};
use crate::{EPSILON_DENOM, Z_MAX};

pub use neuron::{solve_neuron, NeuronSolveResult};
pub use ode::{simulate_ode, OdeSimConfig};
pub use presets::{preset, Architecture, LayerSpec, Padding, PRESET_NAMES};

use neuron::{solve_sorted, sort_entries, Entry, Solved};
use presets::window_geometry;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `[output][input]`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `(height, width, channels)` of the input.
    pub input: [usize; 3],
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `[out_channel][ky][kx][in_channel]`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pool {
    pub input: [usize; 3],
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv),
    AvgPool(Pool),
    /// Max pooling in the spike-time sense: the earliest spike wins.
    EarliestPool(Pool),
}

impl Conv {
    fn row_len(&self) -> usize {
        self.kernel * self.kernel * self.input[2]
    }

    fn geometry(&self) -> ([usize; 3], usize, usize) {
        let (oh, pt) = window_geometry(self.input[0], self.kernel, self.stride, self.padding)
            .expect("validated conv geometry");
        let (ow, pl) = window_geometry(self.input[1], self.kernel, self.stride, self.padding)
            .expect("validated conv geometry");
        ([oh, ow, self.channels], pt, pl)
    }
}

impl Pool {
    fn output_shape(&self) -> [usize; 3] {
        let [h, w, c] = self.input;
        [(h - self.size) / self.stride + 1, (w - self.size) / self.stride + 1, c]
    }

    /// Input indices of the window behind output `o`.
    fn window(&self, o: usize, out: &mut Vec<usize>) {
        let [_, w, c] = self.input;
        let [_, ow, _] = self.output_shape();
        let ch = o % c;
        let ox = (o / c) % ow;
        let oy = o / c / ow;
        out.clear();
        for dy in 0..self.size {
            for dx in 0..self.size {
                let (y, x) = (oy * self.stride + dy, ox * self.stride + dx);
                out.push((y * w + x) * c + ch);
            }
        }
    }
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec, input: [usize; 3]) -> Result<Self> {
        spec.output_shape(input)?;
        Ok(match *spec {
            LayerSpec::Dense { outputs } => {
                let inputs = input.iter().product();
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weights: vec![0.0; inputs * outputs],
                })
            }
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv(Conv {
                input,
                channels,
                kernel,
                stride,
                padding,
                weights: vec![0.0; channels * kernel * kernel * input[2]],
            }),
            LayerSpec::AvgPool { size, stride } => Layer::AvgPool(Pool {
                input,
                size,
                stride,
            }),
            LayerSpec::EarliestPool { size, stride } => Layer::EarliestPool(Pool {
                input,
                size,
                stride,
            }),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { outputs: d.outputs },
            Layer::Conv(c) => LayerSpec::Conv {
                channels: c.channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::AvgPool(p) => LayerSpec::AvgPool {
                size: p.size,
                stride: p.stride,
            },
            Layer::EarliestPool(p) => LayerSpec::EarliestPool {
                size: p.size,
                stride: p.stride,
            },
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.inputs,
            Layer::Conv(c) => c.input.iter().product(),
            Layer::AvgPool(p) | Layer::EarliestPool(p) => p.input.iter().product(),
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        match self {
            Layer::Dense(d) => [1, 1, d.outputs],
            Layer::Conv(c) => c.geometry().0,
            Layer::AvgPool(p) | Layer::EarliestPool(p) => p.output_shape(),
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Layer::Dense(d) => &d.weights,
            Layer::Conv(c) => &c.weights,
            _ => &[],
        }
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Dense(d) => &mut d.weights,
            Layer::Conv(c) => &mut c.weights,
            _ => &mut [],
        }
    }

    /// Length of one neuron's weight row (the kernel for convolutions).
    pub fn row_len(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.inputs),
            Layer::Conv(c) => Some(c.row_len()),
            _ => None,
        }
    }
}

/// Per-layer record of a forward pass, enough to backpropagate.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub output: Vec<Option<f64>>,
    kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq)]
enum TraceKind {
    /// Sorted present inputs per receptive field (one group for dense
    /// layers, one per output position for convolutions) and the solve of
    /// every output neuron.
    Neurons {
        groups: Vec<Vec<Entry>>,
        solved: Vec<Solved>,
    },
    /// Window members per output.
    Avg { windows: Vec<Vec<usize>> },
    /// Winning input per output.
    Earliest { winner: Vec<Option<usize>> },
}

impl LayerTrace {
    /// Causal-set fingerprint: one hash per neuron over the indices of its
    /// causal set; for pools the presence pattern or the
    /// winning input. Equal signatures mean identical piecewise branches.
    pub fn signature(&self) -> Vec<u64> {
        match &self.kind {
            TraceKind::Neurons { groups, solved } => {
                let per_group = (solved.len() / groups.len().max(1)).max(1);
                let mut idx = Vec::new();
                solved
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        let g = &groups[j / per_group];
                        idx.clear();
                        idx.extend(g[..s.causal as usize].iter().map(|e| e.input));
                        causal_hash(s.causal as usize, &mut idx)
                    })
                    .collect()
            }
            TraceKind::Avg { .. } => self.output.iter().map(|z| z.is_some() as u64).collect(),
            TraceKind::Earliest { winner } => winner
                .iter()
                .map(|w| w.map_or(u64::MAX, |w| w as u64))
                .collect(),
        }
    }
}

/// FNV-1a hash of a causal set given by its input indices (any order).
pub(crate) fn causal_hash(size: usize, members: &mut [u32]) -> u64 {
    members.sort_unstable();
    members.iter().fold(0xcbf2_9ce4_8422_2325u64 ^ size as u64, |h, &i| {
        (h ^ i as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn check_inputs(z: &[Option<f64>]) -> Result<()> {
    for (i, zi) in z.iter().enumerate() {
        if let Some(v) = *zi {
            if !(v >= 1.0) {
                return Err(Error::Domain(format!("input {i} has z = {v} < 1")));
            }
        }
    }
    Ok(())
}

fn forward_dense(d: &Dense, z: &[Option<f64>], eps: f64) -> LayerTrace {
    let mut entries: Vec<Entry> = z
        .iter()
        .enumerate()
        .filter_map(|(i, zi)| {
            zi.map(|z| Entry {
                z,
                input: i as u32,
                weight: i as u32,
            })
        })
        .collect();
    sort_entries(&mut entries);
    let solved: Vec<Solved> = d
        .weights
        .chunks_exact(d.inputs)
        .map(|row| solve_sorted(&entries, row, eps))
        .collect();
    LayerTrace {
        output: solved.iter().map(|s| s.z_out).collect(),
        kind: TraceKind::Neurons {
            groups: vec![entries],
            solved,
        },
    }
}

fn conv_entries(c: &Conv, z: &[Option<f64>], oy: usize, ox: usize, pad: (usize, usize)) -> Vec<Entry> {
    let [ih, iw, ic] = c.input;
    let k = c.kernel;
    let mut entries = Vec::new();
    for ky in 0..k {
        let iy = (oy * c.stride + ky) as isize - pad.0 as isize;
        if iy < 0 || iy >= ih as isize {
            continue;
        }
        for kx in 0..k {
            let ix = (ox * c.stride + kx) as isize - pad.1 as isize;
            if ix < 0 || ix >= iw as isize {
                continue;
            }
            let base = (iy as usize * iw + ix as usize) * ic;
            for ch in 0..ic {
                if let Some(zv) = z[base + ch] {
                    entries.push(Entry {
                        z: zv,
                        input: (base + ch) as u32,
                        weight: ((ky * k + kx) * ic + ch) as u32,
                    });
                }
            }
        }
    }
    sort_entries(&mut entries);
    entries
}

fn forward_conv(c: &Conv, z: &[Option<f64>], eps: f64) -> LayerTrace {
    let ([oh, ow, oc], pad_top, pad_left) = c.geometry();
    let row_len = c.row_len();
    let mut groups = Vec::with_capacity(oh * ow);
    let mut solved = Vec::with_capacity(oh * ow * oc);
    for oy in 0..oh {
        for ox in 0..ow {
            let entries = conv_entries(c, z, oy, ox, (pad_top, pad_left));
            for row in c.weights.chunks_exact(row_len) {
                solved.push(solve_sorted(&entries, row, eps));
            }
            groups.push(entries);
        }
    }
    LayerTrace {
        output: solved.iter().map(|s| s.z_out).collect(),
        kind: TraceKind::Neurons { groups, solved },
    }
}

fn avg_of(win: &[usize], z: &[Option<f64>]) -> Option<f64> {
    if win.iter().all(|&i| z[i].is_none()) {
        return None;
    }
    let sum: f64 = win.iter().map(|&i| z[i].unwrap_or(Z_MAX)).sum();
    Some(sum / win.len() as f64)
}

fn earliest_of(win: &[usize], z: &[Option<f64>]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for &i in win {
        if let Some(v) = z[i] {
            if best.map_or(true, |(b, _)| v < b) {
                best = Some((v, i));
            }
        }
    }
    best
}

fn forward_avg(p: &Pool, z: &[Option<f64>]) -> LayerTrace {
    let n = p.output_shape().iter().product();
    let mut windows = Vec::with_capacity(n);
    let mut output = Vec::with_capacity(n);
    let mut win = Vec::new();
    for o in 0..n {
        p.window(o, &mut win);
        output.push(avg_of(&win, z));
        windows.push(win.clone());
    }
    LayerTrace {
        output,
        kind: TraceKind::Avg { windows },
    }
}

fn forward_earliest(p: &Pool, z: &[Option<f64>]) -> LayerTrace {
    let n = p.output_shape().iter().product();
    let mut winner = Vec::with_capacity(n);
    let mut output = Vec::with_capacity(n);
    let mut win = Vec::new();
    for o in 0..n {
        p.window(o, &mut win);
        let best = earliest_of(&win, z);
        output.push(best.map(|b| b.0));
        winner.push(best.map(|b| b.1));
    }
    LayerTrace {
        output,
        kind: TraceKind::Earliest { winner },
    }
}

/// Output ranges `[lo, hi)` of windows of `size`/`stride` (after `pad`)
/// that cover input coordinate `i`.
fn covering(i: usize, size: usize, stride: usize, pad: usize, n_out: usize) -> (usize, usize) {
    let p = i + pad;
    let lo = (p + 1).saturating_sub(size).div_ceil(stride);
    let hi = (p / stride + 1).min(n_out);
    (lo, hi.max(lo))
}

impl Layer {
    /// Recomputes the outputs that depend on inputs `changed` (indices into
    /// `z`) and writes them into `out`. Returns the indices of outputs whose
    /// value changed. Each recomputed output is bit-identical to what a full
    /// forward pass over `z` would give.
    fn update(&self, z: &[Option<f64>], changed: &[usize], out: &mut [Option<f64>], eps: f64) -> Vec<usize> {
        let mut touched = Vec::new();
        let mut mark = vec![false; out.len()];
        let [oh, ow, oc] = self.output_shape();
        match self {
            Layer::Dense(d) => {
                if !changed.is_empty() {
                    let t = forward_dense(d, z, eps);
                    for (o, v) in t.output.into_iter().enumerate() {
                        if out[o] != v {
                            out[o] = v;
                            touched.push(o);
                        }
                    }
                }
            }
            Layer::Conv(c) => {
                let (_, pt, pl) = c.geometry();
                let [_, iw, ic] = c.input;
                let row_len = c.row_len();
                for &i in changed {
                    let (iy, ix) = (i / ic / iw, (i / ic) % iw);
                    let (y0, y1) = covering(iy, c.kernel, c.stride, pt, oh);
                    let (x0, x1) = covering(ix, c.kernel, c.stride, pl, ow);
                    for oy in y0..y1 {
                        for ox in x0..x1 {
                            let pos = oy * ow + ox;
                            if mark[pos * oc] {
                                continue;
                            }
                            mark[pos * oc] = true;
                            let entries = conv_entries(c, z, oy, ox, (pt, pl));
                            for (ch, row) in c.weights.chunks_exact(row_len).enumerate() {
                                let v = solve_sorted(&entries, row, eps).z_out;
                                let o = pos * oc + ch;
                                if out[o] != v {
                                    out[o] = v;
                                    touched.push(o);
                                }
                            }
                        }
                    }
                }
            }
            Layer::AvgPool(p) | Layer::EarliestPool(p) => {
                let [_, iw, ic] = p.input;
                let avg = matches!(self, Layer::AvgPool(_));
                let mut win = Vec::new();
                for &i in changed {
                    let (iy, ix, ch) = (i / ic / iw, (i / ic) % iw, i % ic);
                    let (y0, y1) = covering(iy, p.size, p.stride, 0, oh);
                    let (x0, x1) = covering(ix, p.size, p.stride, 0, ow);
                    for oy in y0..y1 {
                        for ox in x0..x1 {
                            let o = (oy * ow + ox) * oc + ch;
                            if mark[o] {
                                continue;
                            }
                            mark[o] = true;
                            p.window(o, &mut win);
                            let v = if avg {
                                avg_of(&win, z)
                            } else {
                                earliest_of(&win, z).map(|b| b.0)
                            };
                            if out[o] != v {
                                out[o] = v;
                                touched.push(o);
                            }
                        }
                    }
                }
            }
        }
        touched
    }
}

impl Layer {
    pub fn forward_trace(&self, z: &[Option<f64>], eps: f64) -> Result<LayerTrace> {
        if z.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.input_len(),
                z.len()
            )));
        }
        check_inputs(z)?;
        Ok(match self {
            Layer::Dense(d) => forward_dense(d, z, eps),
            Layer::Conv(c) => forward_conv(c, z, eps),
            Layer::AvgPool(p) => forward_avg(p, z),
            Layer::EarliestPool(p) => forward_earliest(p, z),
        })
    }

    /// Output `z` of every unit.
    pub fn forward(&self, z: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
        Ok(self.forward_trace(z, EPSILON_DENOM)?.output)
    }

    /// Backpropagates `grad_out` (dL/dz per output unit).
    ///
    /// Adds weight gradients into `grad_w` and returns dL/dz per input.
    /// Returns the number of neurons whose denominator had to be clamped to
    /// `eps` as the second element.
    pub(crate) fn backward(
        &self,
        input: &[Option<f64>],
        trace: &LayerTrace,
        grad_out: &[f64],
        grad_w: &mut [f64],
        eps: f64,
    ) -> (Vec<f64>, usize) {
        let mut grad_in = vec![0.0; self.input_len()];
        let mut clamped = 0;
        match (&trace.kind, self) {
            (TraceKind::Neurons { groups, solved }, layer) => {
                let weights = layer.weights();
                let row_len = layer.row_len().expect("neuron layer");
                let rows = weights.len() / row_len;
                for (j, s) in solved.iter().enumerate() {
                    let (Some(z_out), g) = (s.z_out, grad_out[j]) else {
                        continue;
                    };
                    if g == 0.0 {
                        continue;
                    }
                    let row_idx = j % rows;
                    let group = &groups[j / rows];
                    let row = &weights[row_idx * row_len..(row_idx + 1) * row_len];
                    let gw = &mut grad_w[row_idx * row_len..(row_idx + 1) * row_len];
                    let mut d = s.denom;
                    if d.abs() <= eps {
                        d = eps;
                        clamped += 1;
                    }
                    let scale = g / d;
                    for e in &group[..s.causal as usize] {
                        gw[e.weight as usize] += scale * (e.z - z_out);
                        grad_in[e.input as usize] += scale * row[e.weight as usize];
                    }
                }
            }
            (TraceKind::Avg { windows }, _) => {
                for (o, win) in windows.iter().enumerate() {
                    if trace.output[o].is_none() || grad_out[o] == 0.0 {
                        continue;
                    }
                    let share = grad_out[o] / win.len() as f64;
                    for &i in win {
                        if input[i].is_some() {
                            grad_in[i] += share;
                        }
                    }
                }
            }
            (TraceKind::Earliest { winner }, _) => {
                for (o, w) in winner.iter().enumerate() {
                    if let Some(i) = *w {
                        grad_in[i] += grad_out[o];
                    }
                }
            }
        }
        (grad_in, clamped)
    }
}

/// Weight initialization: each weight uniform in `[lo, hi] / fan_in`, so the
/// expected row sum is `(lo + hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInit {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        Self { lo: 0.0, hi: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// Preset or architecture name.
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
    pub z_max: f64,
    pub epsilon_denom: f64,
    /// Map from sensor seconds to network time used when this network was
    /// trained.
    pub time_norm: TimeNorm,
}

impl Network {
    /// Builds a network with all weights zero.
    pub fn zeroed(arch: &Architecture) -> Result<Self> {
        arch.shapes()?;
        let mut shape = arch.input;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            let l = Layer::from_spec(spec, shape)?;
            shape = l.output_shape();
            layers.push(l);
        }
        Ok(Self {
            name: arch.name.clone(),
            input_shape: arch.input,
            layers,
            z_max: Z_MAX,
            epsilon_denom: EPSILON_DENOM,
            time_norm: TimeNorm::IDENTITY,
        })
    }

    pub fn random<R: Rng>(arch: &Architecture, init: &WeightInit, rng: &mut R) -> Result<Self> {
        if !(init.hi >= init.lo) {
            return Err(Error::Config(format!("weight init range [{}, {}]", init.lo, init.hi)));
        }
        let mut net = Self::zeroed(arch)?;
        for layer in &mut net.layers {
            let Some(fan_in) = layer.row_len() else { continue };
            let (lo, hi) = (init.lo / fan_in as f64, init.hi / fan_in as f64);
            for w in layer.weights_mut() {
                *w = lo + (hi - lo) * rng.gen::<f64>();
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            name: self.name.clone(),
            input: self.input_shape,
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_len)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights().len()).sum()
    }

    pub fn has_avg_pool(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::AvgPool(_)))
    }

    /// All weights, layer by layer.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights().iter().copied()).collect()
    }

    pub fn set_flat_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.weight_count() {
            return Err(Error::Shape(format!("{} weights for {}", w.len(), self.weight_count())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let dst = l.weights_mut();
            dst.copy_from_slice(&w[off..off + dst.len()]);
            off += dst.len();
        }
        Ok(())
    }

    fn check_input(&self, z: &[Option<f64>]) -> Result<()> {
        if z.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "network expects {} inputs ({:?}), got {}",
                self.input_len(),
                self.input_shape,
                z.len()
            )));
        }
        Ok(())
    }

    /// Layer-by-layer forward pass keeping every layer's trace.
    pub fn forward_trace(&self, z: &[Option<f64>]) -> Result<Vec<LayerTrace>> {
        self.check_input(z)?;
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = traces.last().map_or(z, |t| t.output.as_slice());
            let t = layer.forward_trace(input, self.epsilon_denom)?;
            traces.push(t);
        }
        Ok(traces)
    }

    /// Output-layer `z` values.
    pub fn forward(&self, z: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
        Ok(self
            .forward_trace(z)?
            .pop()
            .map(|t| t.output)
            .unwrap_or_default())
    }

    /// Forward pass on encoded spikes; their times must already be in
    /// network time.
    pub fn forward_spikes(&self, input: &InputSpikes) -> Result<Vec<Option<f64>>> {
        if input.shape != self.input_shape {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape, self.input_shape
            )));
        }
        self.forward(&input.z())
    }

    /// Forward pass over a partially known input.
    ///
    /// `z` must hold exactly the inputs with `z < z_h`; all others are
    /// unknown but known to be `>= z_h`. Returns the output values and a
    /// bound `h <= z_h` such that every output below `h` equals the value a
    /// forward pass over the complete input would produce, and every other
    /// output is `>= h` there as well. Neuron and earliest-spike layers keep
    /// the bound; an average pool lowers it to the smallest mean its
    /// unknown members could still produce.
    pub fn forward_horizon(&self, z: &[Option<f64>], z_h: f64) -> Result<(Vec<Option<f64>>, f64)> {
        let traces = self.forward_trace(z)?;
        let mut h = z_h;
        let mut win = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let Layer::AvgPool(p) = layer else { continue };
            let input = if k == 0 { z } else { &traces[k - 1].output };
            h = avg_horizon(p, input, h, &mut win);
        }
        let out = traces.into_iter().last().map(|t| t.output).unwrap_or_default();
        Ok((out, h))
    }
}

/// Output `z` of one layer.
pub fn forward_layer(layer: &Layer, z: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    layer.forward(z)
}

/// Output-layer `z` of `net` for encoded input spikes.
pub fn forward_network(net: &Network, input: &InputSpikes) -> Result<Vec<Option<f64>>> {
    net.forward_spikes(input)
}

/// Every layer's output `z` (the last entry is the output layer).
pub fn layer_outputs(net: &Network, z: &[Option<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    Ok(net.forward_trace(z)?.into_iter().map(|t| t.output).collect())
}

/// Index of the earliest output spike; silent outputs rank as `z_max` and
/// ties go to the lowest index.
pub fn classify(z: &[Option<f64>], z_max: f64) -> usize {
    let mut best = 0;
    let mut best_z = f64::INFINITY;
    for (i, v) in z.iter().enumerate() {
        let v = v.unwrap_or(z_max);
        if v < best_z {
            best = i;
            best_z = v;
        }
    }
    best
}

/// Forward pass that is kept up to date as input spikes are added one at a
/// time. Only neurons whose receptive field contains a changed unit are
/// re-solved; the result always equals [`Network::forward`] on the current
/// input.
#[derive(Debug, Clone)]
pub struct IncrementalForward {
    input: Vec<Option<f64>>,
    layers: Vec<Vec<Option<f64>>>,
}

impl IncrementalForward {
    /// State for an input with no spikes yet.
    pub fn new(net: &Network) -> Result<Self> {
        let input = vec![None; net.input_len()];
        let layers = layer_outputs(net, &input)?;
        Ok(Self { input, layers })
    }

    pub fn input(&self) -> &[Option<f64>] {
        &self.input
    }

    pub fn output(&self) -> &[Option<f64>] {
        self.layers.last().map_or(&[], |v| v.as_slice())
    }

    /// Sets input `i` to `z` (a later call for the same input overwrites it).
    pub fn set(&mut self, net: &Network, spikes: &[(usize, f64)]) -> Result<()> {
        let mut changed = Vec::with_capacity(spikes.len());
        for &(i, z) in spikes {
            if i >= self.input.len() {
                return Err(Error::Shape(format!("input {i} out of range {}", self.input.len())));
            }
            if !(z >= 1.0) {
                return Err(Error::Domain(format!("input {i} has z = {z} < 1")));
            }
            if self.input[i] != Some(z) {
                self.input[i] = Some(z);
                changed.push(i);
            }
        }
        for (k, layer) in net.layers.iter().enumerate() {
            if changed.is_empty() {
                break;
            }
            let (before, after) = self.layers.split_at_mut(k);
            let z = if k == 0 { &self.input } else { &before[k - 1] };
            changed = layer.update(z, &changed, &mut after[0], net.epsilon_denom);
        }
        Ok(())
    }

    /// The bound of [`Network::forward_horizon`] for the current input,
    /// which must hold exactly the inputs below `z_h`.
    pub fn horizon(&self, net: &Network, z_h: f64) -> f64 {
        let mut h = z_h;
        let mut win = Vec::new();
        for (k, layer) in net.layers.iter().enumerate() {
            let Layer::AvgPool(p) = layer else { continue };
            let input = if k == 0 { &self.input } else { &self.layers[k - 1] };
            h = avg_horizon(p, input, h, &mut win);
        }
        h
    }
}

fn avg_horizon(p: &Pool, input: &[Option<f64>], h: f64, win: &mut Vec<usize>) -> f64 {
    let mut h_next = h;
    for o in 0..p.output_shape().iter().product() {
        p.window(o, win);
        let mut known = 0.0;
        let mut unknown = 0usize;
        for &i in win.iter() {
            match input[i] {
                Some(v) if v < h => known += v,
                _ => unknown += 1,
            }
        }
        if unknown > 0 {
            h_next = h_next.min((known + unknown as f64 * h) / win.len() as f64);
        }
    }
    h_next
}
