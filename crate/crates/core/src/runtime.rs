//! Streaming inference with first-spike decisions, event-ratio metrics and
//! dataset evaluation.
//!
//! [`stream_infer`] consumes a stream one timestamp at a time. Encoders run
//! incrementally: an input spike is released once its time is known and lies
//! before the next event, so every spike still to come is at or after that
//! horizon. The network is updated incrementally on each release and the
//! decision is taken as soon as the earliest output spike is provably final.
//! [`batch_infer`] encodes the whole stream first and runs one forward pass;
//! both give bit-identical decisions.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::coding::{encode_dvs, encode_lidar, DvsEncoderConfig, InputSpikes, LidarEncoderConfig, TimeNorm};
use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::network::{classify, IncrementalForward, Network};
use crate::preprocess::{
    front_view_grid, project_front_view, voxel_value, voxelize, FrontViewConfig, FrontViewCrop, VoxelGrid,
    VoxelGridConfig, VoxelValue,
};

/// Preprocessing plus encoding from a raw stream to input spikes.
#[derive(Debug, Clone, PartialEq)]
pub enum Pipeline {
    /// LiDAR voxel grid and the arrival-time encoder.
    Voxel {
        grid: VoxelGridConfig,
        encoder: LidarEncoderConfig,
    },
    /// LiDAR front-view image and the arrival-time encoder.
    FrontView {
        view: FrontViewConfig,
        crop: FrontViewCrop,
        value: VoxelValue,
        c: f64,
        encoder: LidarEncoderConfig,
    },
    /// DVS threshold encoder, with an optional initial image.
    Dvs {
        encoder: DvsEncoderConfig,
        initial: Option<Vec<i64>>,
    },
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        match self {
            Pipeline::Voxel { grid, encoder } => {
                grid.validate()?;
                encoder.validate()
            }
            Pipeline::FrontView { view, encoder, .. } => {
                if !(view.r_h > 0.0 && view.r_v > 0.0) {
                    return Err(Error::Config("angular resolutions must be > 0".into()));
                }
                encoder.validate()
            }
            Pipeline::Dvs { encoder, .. } => encoder.validate(),
        }
    }

    /// Shape of the encoded input for `stream`.
    pub fn input_shape(&self, stream: &EventStream) -> Result<[usize; 3]> {
        Ok(match self {
            Pipeline::Voxel { grid, .. } => [grid.dims[1], grid.dims[0], grid.dims[2]],
            Pipeline::FrontView { crop, .. } => [crop.height, crop.width, 1],
            Pipeline::Dvs { .. } => {
                let d = stream.as_dvs()?;
                [d.height() as usize, d.width() as usize, 1]
            }
        })
    }

    /// Input spikes in sensor seconds.
    pub fn encode(&self, stream: &EventStream) -> Result<InputSpikes> {
        self.validate()?;
        match self {
            Pipeline::Voxel { grid, encoder } => encode_lidar(&voxelize(stream, grid)?, encoder),
            Pipeline::FrontView {
                view,
                crop,
                value,
                c,
                encoder,
            } => encode_lidar(&front_view_grid(stream, view, crop, *value, *c)?, encoder),
            Pipeline::Dvs { encoder, initial } => encode_dvs(stream.as_dvs()?, encoder, initial.as_deref()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub class: usize,
    /// Earliest output spike in sensor seconds; `None` if no output fired.
    pub t_decision: Option<f64>,
    pub n_contributing: usize,
    pub n_all: usize,
    pub r_event: f64,
    pub ghat_time: f64,
    /// `t_decision` minus the earliest input spike, seconds.
    pub ideal_delay: Option<f64>,
    /// Earliest input spike in sensor seconds.
    pub first_input: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMetrics {
    pub r_event: f64,
    pub ghat_time: f64,
    pub ideal_delay: Option<f64>,
}

/// `r = n_contributing / n_all`, `ghat = 1 - r` and the ideal delay.
pub fn event_metrics(
    n_contributing: usize,
    n_all: usize,
    first_input: Option<f64>,
    t_decision: Option<f64>,
) -> Result<EventMetrics> {
    if n_all == 0 {
        return Err(Error::UndefinedRatio);
    }
    if n_contributing > n_all {
        return Err(Error::Domain(format!("{n_contributing} contributing of {n_all} events")));
    }
    let r_event = n_contributing as f64 / n_all as f64;
    Ok(EventMetrics {
        r_event,
        ghat_time: 1.0 - r_event,
        ideal_delay: match (first_input, t_decision) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        },
    })
}

/// Relative accuracy gain `(a - a_ref) / a_ref`.
pub fn g_acc(a: f64, a_ref: f64) -> Result<f64> {
    if !(a_ref > 0.0) {
        return Err(Error::Domain(format!("reference accuracy {a_ref} must be > 0")));
    }
    Ok((a - a_ref) / a_ref)
}

fn check_shape(net: &Network, shape: [usize; 3]) -> Result<()> {
    if shape != net.input_shape {
        return Err(Error::Shape(format!(
            "pipeline produces {shape:?}, network expects {:?}",
            net.input_shape
        )));
    }
    Ok(())
}

/// Decision from final output values and the smallest input `z`.
fn decide(net: &Network, out: &[Option<f64>], z_first: Option<f64>, times: &[f64]) -> Result<Decision> {
    let norm = net.time_norm;
    let raw = |z: f64| norm.invert(z.ln());
    let z_out = out.iter().flatten().copied().reduce(f64::min);
    let t_decision = z_out.map(raw);
    let first_input = z_first.map(raw);
    let n_contributing = match t_decision {
        Some(t) => times.partition_point(|&x| x <= t),
        None => times.len(),
    };
    let m = event_metrics(n_contributing, times.len(), first_input, t_decision)?;
    Ok(Decision {
        class: classify(out, net.z_max),
        t_decision,
        n_contributing,
        n_all: times.len(),
        r_event: m.r_event,
        ghat_time: m.ghat_time,
        ideal_delay: m.ideal_delay,
        first_input,
    })
}

/// Encodes the whole stream and runs one forward pass.
pub fn batch_infer(net: &Network, pipeline: &Pipeline, stream: &EventStream) -> Result<Decision> {
    let spikes = pipeline.encode(stream)?;
    check_shape(net, spikes.shape)?;
    let z = spikes.normalized(net.time_norm).z();
    let out = net.forward(&z)?;
    let z_first = z.iter().flatten().copied().reduce(f64::min);
    decide(net, &out, z_first, &stream.times())
}

/// Progress report passed to the [`stream_infer_with`] callback after each
/// timestamp group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamStep {
    /// Events consumed so far.
    pub consumed: usize,
    /// Input spikes released so far.
    pub released: usize,
    /// Every unreleased input spikes at or after this time (sensor seconds).
    pub horizon: f64,
    /// Earliest output spike so far, as `(class, network-time z)`.
    pub leader: Option<(usize, f64)>,
    pub decided: bool,
}

/// Event-by-event inference; stops at the first provably final output
/// spike. Agrees bit for bit with [`batch_infer`].
pub fn stream_infer(net: &Network, pipeline: &Pipeline, stream: &EventStream) -> Result<Decision> {
    stream_infer_with(net, pipeline, stream, |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Key(f64, usize);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

/// Incremental encoder state.
enum Encoder<'a> {
    Lidar {
        pipeline: &'a Pipeline,
        encoder: LidarEncoderConfig,
        grid: VoxelGrid,
        value: VoxelValue,
    },
    Dvs {
        encoder: DvsEncoderConfig,
        width: usize,
        sum: Vec<i64>,
        spiked: Vec<bool>,
        stamp: Vec<usize>,
        touched: Vec<usize>,
        k_resolved: bool,
    },
}

impl Encoder<'_> {
    /// Consumes the events `lo..hi`, which share one timestamp, and pushes
    /// spikes whose time became known.
    fn consume(&mut self, stream: &EventStream, lo: usize, hi: usize, known: &mut BinaryHeap<Reverse<Key>>) -> Result<()> {
        match self {
            Encoder::Lidar {
                pipeline,
                encoder,
                grid,
                value,
            } => {
                for e in &stream.as_lidar()?.events()[lo..hi] {
                    let cell = match pipeline {
                        Pipeline::Voxel { grid: g, .. } => g.voxel_of([e.x, e.y, e.z]).map(|v| grid.index(v)),
                        Pipeline::FrontView { view, crop, .. } => project_front_view([e.x, e.y, e.z], view)
                            .ok()
                            .map(|(fx, fy)| (fx - crop.x0, fy - crop.y0))
                            .filter(|&(u, v)| u >= 0 && v >= 0 && u < crop.width as i64 && v < crop.height as i64)
                            .map(|(u, v)| grid.index([u as usize, v as usize, 0])),
                        Pipeline::Dvs { .. } => unreachable!(),
                    };
                    let Some(i) = cell else {
                        grid.dropped += 1;
                        continue;
                    };
                    let c = match pipeline {
                        Pipeline::Voxel { grid: g, .. } => g.c,
                        Pipeline::FrontView { c, .. } => *c,
                        Pipeline::Dvs { .. } => unreachable!(),
                    };
                    match grid.arrival[i] {
                        None => {
                            grid.arrival[i] = Some(e.t_a);
                            grid.values[i] = voxel_value(e, *value, c);
                            if *value != VoxelValue::Count {
                                known.push(Reverse(Key(encoder.spike_time(e.t_a, grid.values[i]), i)));
                            }
                        }
                        Some(_) if *value == VoxelValue::Count => grid.values[i] += 1.0,
                        Some(_) => {}
                    }
                }
            }
            Encoder::Dvs {
                encoder,
                width,
                sum,
                spiked,
                stamp,
                touched,
                ..
            } => {
                let events = &stream.as_dvs()?.events()[lo..hi];
                touched.clear();
                for e in events {
                    if !encoder.in_window(e.t) {
                        continue;
                    }
                    let i = e.y as usize * *width + e.x as usize;
                    sum[i] += e.p as i64;
                    if stamp[i] != hi {
                        stamp[i] = hi;
                        touched.push(i);
                    }
                }
                if let Some(t) = events.first().map(|e| e.t).filter(|&t| encoder.in_window(t)) {
                    for &i in touched.iter() {
                        if !spiked[i] && sum[i] as f64 >= encoder.gamma(t) {
                            spiked[i] = true;
                            known.push(Reverse(Key(t, i)));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Lower bound on unreleased spikes whose time is not yet known, given
    /// that the next event is at `next`.
    fn bound(&mut self, next: f64, known: &mut BinaryHeap<Reverse<Key>>) -> f64 {
        match self {
            Encoder::Lidar {
                encoder, grid, value, ..
            } => {
                if *value != VoxelValue::Count {
                    return next;
                }
                if next == f64::INFINITY {
                    for (i, a) in grid.arrival.iter().enumerate() {
                        if let Some(a) = a {
                            known.push(Reverse(Key(encoder.spike_time(*a, grid.values[i]), i)));
                        }
                    }
                    grid.arrival.iter_mut().for_each(|a| *a = None);
                    return next;
                }
                // counts can still grow until the stream ends
                grid.arrival
                    .iter()
                    .zip(&grid.values)
                    .filter_map(|(a, &d)| a.map(|a| encoder.spike_time(a, d)))
                    .fold(next, f64::min)
            }
            Encoder::Dvs {
                encoder,
                sum,
                spiked,
                k_resolved,
                ..
            } => {
                if !*k_resolved && next > encoder.t_k {
                    *k_resolved = true;
                    let g = encoder.gamma(encoder.t_k);
                    for i in 0..sum.len() {
                        if !spiked[i] && sum[i] as f64 >= g {
                            spiked[i] = true;
                            known.push(Reverse(Key(encoder.t_k, i)));
                        }
                    }
                }
                next
            }
        }
    }
}

/// [`stream_infer`] with a callback after every timestamp group.
pub fn stream_infer_with<F>(net: &Network, pipeline: &Pipeline, stream: &EventStream, mut on_step: F) -> Result<Decision>
where
    F: FnMut(&StreamStep),
{
    pipeline.validate()?;
    check_shape(net, pipeline.input_shape(stream)?)?;
    let times = stream.times();
    let n = times.len();
    if n == 0 {
        return Err(Error::UndefinedRatio);
    }
    let mut enc = match pipeline {
        Pipeline::Voxel { grid, encoder } => {
            stream.as_lidar()?;
            Encoder::Lidar {
                pipeline,
                encoder: *encoder,
                grid: VoxelGrid::empty(grid.dims),
                value: grid.value,
            }
        }
        Pipeline::FrontView {
            crop, value, encoder, ..
        } => {
            stream.as_lidar()?;
            Encoder::Lidar {
                pipeline,
                encoder: *encoder,
                grid: VoxelGrid::empty([crop.width, crop.height, 1]),
                value: *value,
            }
        }
        Pipeline::Dvs { encoder, initial } => {
            let d = stream.as_dvs()?;
            let len = d.width() as usize * d.height() as usize;
            let sum = match initial {
                Some(v) if v.len() != len => {
                    return Err(Error::Shape(format!("initial image {} vs {len} pixels", v.len())))
                }
                Some(v) => v.clone(),
                None => vec![0; len],
            };
            Encoder::Dvs {
                encoder: *encoder,
                width: d.width() as usize,
                sum,
                spiked: vec![false; len],
                stamp: vec![usize::MAX; len],
                touched: Vec::new(),
                k_resolved: false,
            }
        }
    };

    let norm: TimeNorm = net.time_norm;
    let avg = net.has_avg_pool();
    let mut state = IncrementalForward::new(net)?;
    let mut known = BinaryHeap::new();
    let mut released = 0usize;
    let mut z_first: Option<f64> = None;
    let mut batch = Vec::new();
    let mut lo = 0;
    while lo < n {
        let t = times[lo];
        let hi = lo + times[lo..].partition_point(|&x| x == t);
        enc.consume(stream, lo, hi, &mut known)?;
        let next = if hi < n { times[hi] } else { f64::INFINITY };
        let horizon = enc.bound(next, &mut known);

        batch.clear();
        while let Some(&Reverse(Key(ts, i))) = known.peek() {
            if ts >= horizon {
                break;
            }
            known.pop();
            let z = norm.apply(ts).exp();
            z_first = Some(z_first.map_or(z, |f: f64| f.min(z)));
            batch.push((i, z));
        }
        released += batch.len();
        state.set(net, &batch)?;

        let z_h = norm.apply(horizon).exp();
        let h = if avg { state.horizon(net, z_h) } else { z_h };
        let out = state.output();
        let leader = out
            .iter()
            .enumerate()
            .filter_map(|(c, z)| z.map(|z| (c, z)))
            .fold(None, |b: Option<(usize, f64)>, c| match b {
                Some(b) if b.1 <= c.1 => Some(b),
                _ => Some(c),
            });
        let decided = hi == n || leader.is_some_and(|(_, z)| z < h);
        on_step(&StreamStep {
            consumed: hi,
            released,
            horizon,
            leader,
            decided,
        });
        if decided {
            return decide(net, out, z_first, &times);
        }
        lo = hi;
    }
    unreachable!("the last group always decides")
}

/// Fixed-bin histogram; values outside the range go to the end bins and
/// `None` values to `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub undefined: usize,
}

impl Histogram {
    pub fn build(values: impl IntoIterator<Item = Option<f64>>, lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0; bins];
        let mut undefined = 0;
        for v in values {
            match v {
                Some(v) if v.is_finite() => {
                    let k = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
                    counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
                }
                _ => undefined += 1,
            }
        }
        Self {
            edges,
            counts,
            undefined,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.undefined
    }

    /// `lo,hi,count` rows plus an `undefined` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c}", self.edges[k], self.edges[k + 1]);
        }
        let _ = writeln!(s, "undefined,,{}", self.undefined);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCount {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub name: String,
    pub accuracy: f64,
    pub g_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassCount>,
    pub mean_r_event: f64,
    pub median_r_event: f64,
    pub mean_ghat_time: f64,
    /// Fraction of samples decided before their last event.
    pub early_fraction: f64,
    pub mean_ideal_delay: Option<f64>,
    pub r_event_hist: Histogram,
    pub ideal_delay_hist: Histogram,
    pub reference: Option<Reference>,
    /// Per-sample decisions in input order.
    pub decisions: Vec<Decision>,
}

impl EvalReport {
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.per_class
            .iter()
            .map(|c| (c.total > 0).then(|| c.correct as f64 / c.total as f64))
            .collect()
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "samples,{}", self.samples);
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        for (c, a) in self.per_class_accuracy().iter().enumerate() {
            let _ = writeln!(s, "accuracy_class_{c},{}", a.map_or(String::new(), |a| a.to_string()));
        }
        let _ = writeln!(s, "mean_r_event,{}", self.mean_r_event);
        let _ = writeln!(s, "median_r_event,{}", self.median_r_event);
        let _ = writeln!(s, "mean_ghat_time,{}", self.mean_ghat_time);
        let _ = writeln!(s, "early_fraction,{}", self.early_fraction);
        let _ = writeln!(
            s,
            "mean_ideal_delay,{}",
            self.mean_ideal_delay.map_or(String::new(), |d| d.to_string())
        );
        if let Some(r) = &self.reference {
            let _ = writeln!(s, "reference,{}", r.name);
            let _ = writeln!(s, "reference_accuracy,{}", r.accuracy);
            let _ = writeln!(s, "g_acc,{}", r.g_acc);
        }
        s
    }

    /// One `index,label,class,t_decision,...` row per sample.
    pub fn decisions_csv(&self, labels: &[usize]) -> String {
        let mut s = String::from("index,label,class,t_decision,n_contributing,n_all,r_event,ghat_time,ideal_delay\n");
        for (i, (d, l)) in self.decisions.iter().zip(labels).enumerate() {
            let _ = writeln!(s, "{i},{l},{}", decision_fields(d));
        }
        s
    }
}

/// `class,t_decision,n_contributing,n_all,r_event,ghat_time,ideal_delay`;
/// missing times are empty fields.
pub fn decision_fields(d: &Decision) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    format!(
        "{},{},{},{},{},{},{}",
        d.class,
        opt(d.t_decision),
        d.n_contributing,
        d.n_all,
        d.r_event,
        d.ghat_time,
        opt(d.ideal_delay)
    )
}

/// Number of bins in the report histograms.
pub const HIST_BINS: usize = 10;

/// Streams every sample and aggregates the decisions. `reference` is a
/// named accuracy to report `G_acc` against.
pub fn evaluate(
    net: &Network,
    pipeline: &Pipeline,
    samples: &[(EventStream, usize)],
    reference: Option<(&str, f64)>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let classes = net.classes();
    let mut decisions = Vec::with_capacity(samples.len());
    let mut per_class = vec![ClassCount::default(); classes];
    for (stream, label) in samples {
        if *label >= classes {
            return Err(Error::Label { label: *label, classes });
        }
        let d = stream_infer(net, pipeline, stream)?;
        per_class[*label].total += 1;
        per_class[*label].correct += (d.class == *label) as usize;
        decisions.push(d);
    }
    aggregate(decisions, per_class, reference)
}

fn aggregate(decisions: Vec<Decision>, per_class: Vec<ClassCount>, reference: Option<(&str, f64)>) -> Result<EvalReport> {
    let n = decisions.len() as f64;
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    let accuracy = correct as f64 / n;
    let mut rs: Vec<f64> = decisions.iter().map(|d| d.r_event).collect();
    let mean_r_event = rs.iter().sum::<f64>() / n;
    rs.sort_by(f64::total_cmp);
    let mid = rs.len() / 2;
    let median_r_event = if rs.len() % 2 == 1 {
        rs[mid]
    } else {
        (rs[mid - 1] + rs[mid]) / 2.0
    };
    let delays: Vec<f64> = decisions.iter().filter_map(|d| d.ideal_delay).collect();
    let max_delay = delays.iter().copied().fold(0.0, f64::max);
    let reference = reference
        .map(|(name, a_ref)| {
            Ok::<_, Error>(Reference {
                name: name.to_string(),
                accuracy: a_ref,
                g_acc: g_acc(accuracy, a_ref)?,
            })
        })
        .transpose()?;
    Ok(EvalReport {
        samples: decisions.len(),
        accuracy,
        per_class,
        mean_r_event,
        median_r_event,
        mean_ghat_time: decisions.iter().map(|d| d.ghat_time).sum::<f64>() / n,
        early_fraction: decisions.iter().filter(|d| d.r_event < 1.0).count() as f64 / n,
        mean_ideal_delay: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
        r_event_hist: Histogram::build(decisions.iter().map(|d| Some(d.r_event)), 0.0, 1.0, HIST_BINS),
        ideal_delay_hist: Histogram::build(
            decisions.iter().map(|d| d.ideal_delay),
            0.0,
            if max_delay > 0.0 { max_delay } else { 1.0 },
            HIST_BINS,
        ),
        reference,
        decisions,
    })
}
