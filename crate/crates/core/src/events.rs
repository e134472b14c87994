//! Event data model, the text event-file format and synthetic generators.
//!
//! File layout (UTF-8):
//!
//! ```text
//! #sensor=dvs,w=2,h=2,polarity=pm1
//! 0.5,1,0,+1
//! ```
//!
//! LiDAR rows are `t_a,x,y,z,r`, DVS rows are `t,x,y,p`. Anything after a `#`
//! on a data line is a comment.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorKind {
    Lidar,
    Dvs,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Lidar => "lidar",
            SensorKind::Dvs => "dvs",
        }
    }
}

/// How polarity is written in a file. Internally polarity is always `-1/+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarityConvention {
    /// `-1` / `+1`
    PlusMinusOne,
    /// `0` / `1`, with `0` read as `-1`
    ZeroOne,
}

impl PolarityConvention {
    fn tag(self) -> &'static str {
        match self {
            PolarityConvention::PlusMinusOne => "pm1",
            PolarityConvention::ZeroOne => "01",
        }
    }

    fn parse_value(self, s: &str) -> Option<i8> {
        match (self, s) {
            (PolarityConvention::PlusMinusOne, "+1" | "1") => Some(1),
            (PolarityConvention::PlusMinusOne, "-1") => Some(-1),
            (PolarityConvention::ZeroOne, "1") => Some(1),
            (PolarityConvention::ZeroOne, "0") => Some(-1),
            _ => None,
        }
    }

    fn render(self, p: i8) -> &'static str {
        match (self, p > 0) {
            (PolarityConvention::PlusMinusOne, true) => "+1",
            (PolarityConvention::PlusMinusOne, false) => "-1",
            (PolarityConvention::ZeroOne, true) => "1",
            (PolarityConvention::ZeroOne, false) => "0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarEvent {
    /// Arrival time in seconds.
    pub t_a: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvsEvent {
    pub t: f64,
    pub x: u32,
    pub y: u32,
    /// `-1` or `+1`.
    pub p: i8,
}

/// Time-ordered LiDAR events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarStream {
    events: Vec<LidarEvent>,
}

impl LidarStream {
    /// Validates and stably sorts `events` by arrival time.
    pub fn new(mut events: Vec<LidarEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !(e.t_a.is_finite() && e.t_a >= 0.0) {
                return Err(Error::InvalidEvent(format!(
                    "event {i}: arrival time {} is not a finite non-negative number",
                    e.t_a
                )));
            }
            if !(e.x.is_finite() && e.y.is_finite() && e.z.is_finite()) {
                return Err(Error::InvalidEvent(format!("event {i}: non-finite position")));
            }
            if !(e.r.is_finite() && e.r >= 0.0) {
                return Err(Error::InvalidEvent(format!("event {i}: reflectance {}", e.r)));
            }
        }
        events.sort_by(|a, b| a.t_a.total_cmp(&b.t_a));
        Ok(Self { events })
    }

    pub fn events(&self) -> &[LidarEvent] {
        &self.events
    }

    /// Returns a copy with every arrival time shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.events
                .iter()
                .map(|e| LidarEvent {
                    t_a: e.t_a + delta,
                    ..*e
                })
                .collect(),
        )
    }
}

/// Time-ordered DVS events for a `width x height` sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DvsStream {
    width: u32,
    height: u32,
    polarity: PolarityConvention,
    events: Vec<DvsEvent>,
}

impl DvsStream {
    /// Validates bounds, polarity and times, then stably sorts by time.
    pub fn new(
        width: u32,
        height: u32,
        polarity: PolarityConvention,
        mut events: Vec<DvsEvent>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidEvent(format!("sensor size {width}x{height}")));
        }
        for (i, e) in events.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(Error::InvalidEvent(format!(
                    "event {i}: time {} is not a finite non-negative number",
                    e.t
                )));
            }
            if e.x >= width || e.y >= height {
                return Err(Error::InvalidEvent(format!(
                    "event {i}: pixel ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::InvalidEvent(format!("event {i}: polarity {}", e.p)));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self {
            width,
            height,
            polarity,
            events,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn polarity(&self) -> PolarityConvention {
        self.polarity
    }

    pub fn events(&self) -> &[DvsEvent] {
        &self.events
    }

    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.polarity,
            self.events
                .iter()
                .map(|e| DvsEvent { t: e.t + delta, ..*e })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventStream {
    Lidar(LidarStream),
    Dvs(DvsStream),
}

impl EventStream {
    pub fn kind(&self) -> SensorKind {
        match self {
            EventStream::Lidar(_) => SensorKind::Lidar,
            EventStream::Dvs(_) => SensorKind::Dvs,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EventStream::Lidar(s) => s.events.len(),
            EventStream::Dvs(s) => s.events.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Timestamp of event `i` in stream order.
    pub fn time(&self, i: usize) -> f64 {
        match self {
            EventStream::Lidar(s) => s.events[i].t_a,
            EventStream::Dvs(s) => s.events[i].t,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    pub fn as_lidar(&self) -> Result<&LidarStream> {
        match self {
            EventStream::Lidar(s) => Ok(s),
            other => Err(Error::SensorKind {
                expected: "lidar",
                found: other.kind().name(),
            }),
        }
    }

    pub fn as_dvs(&self) -> Result<&DvsStream> {
        match self {
            EventStream::Dvs(s) => Ok(s),
            other => Err(Error::SensorKind {
                expected: "dvs",
                found: other.kind().name(),
            }),
        }
    }

    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Ok(match self {
            EventStream::Lidar(s) => EventStream::Lidar(s.shifted(delta)?),
            EventStream::Dvs(s) => EventStream::Dvs(s.shifted(delta)?),
        })
    }

    /// The first `n` events (in time order).
    pub fn prefix(&self, n: usize) -> Self {
        match self {
            EventStream::Lidar(s) => EventStream::Lidar(LidarStream {
                events: s.events[..n.min(s.events.len())].to_vec(),
            }),
            EventStream::Dvs(s) => EventStream::Dvs(DvsStream {
                events: s.events[..n.min(s.events.len())].to_vec(),
                ..s.clone()
            }),
        }
    }
}

enum Header {
    Lidar,
    Dvs {
        width: u32,
        height: u32,
        polarity: PolarityConvention,
    },
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(1, "missing `#sensor=...` header"))?;
    let mut sensor = None;
    let mut width = None;
    let mut height = None;
    let mut polarity = None;
    for part in body.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("malformed header field `{part}`")))?;
        let value = value.trim();
        match key.trim() {
            "sensor" => sensor = Some(value.to_string()),
            "w" => {
                width = Some(value.parse::<u32>().map_err(|_| {
                    Error::parse(1, format!("header width `{value}` is not an integer"))
                })?)
            }
            "h" => {
                height = Some(value.parse::<u32>().map_err(|_| {
                    Error::parse(1, format!("header height `{value}` is not an integer"))
                })?)
            }
            "polarity" => {
                polarity = Some(match value {
                    "pm1" => PolarityConvention::PlusMinusOne,
                    "01" => PolarityConvention::ZeroOne,
                    other => {
                        return Err(Error::parse(1, format!("unknown polarity convention `{other}`")))
                    }
                })
            }
            other => return Err(Error::parse(1, format!("unknown header key `{other}`"))),
        }
    }
    match sensor.as_deref() {
        Some("lidar") => Ok(Header::Lidar),
        Some("dvs") => Ok(Header::Dvs {
            width: width.ok_or_else(|| Error::parse(1, "dvs header needs `w`"))?,
            height: height.ok_or_else(|| Error::parse(1, "dvs header needs `h`"))?,
            polarity: polarity.ok_or_else(|| Error::parse(1, "dvs header needs `polarity`"))?,
        }),
        Some(other) => Err(Error::parse(1, format!("unknown sensor `{other}`"))),
        None => Err(Error::parse(1, "header lacks `sensor=`")),
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{name} `{}` is not numeric", s.trim())))
}

/// Parses an event file into a validated, time-sorted stream.
pub fn parse_event_file(bytes: &[u8]) -> Result<EventStream> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::parse(1, "file is not UTF-8"))?;
    let mut lines = text.lines();
    let header = parse_header(lines.next().unwrap_or(""))?;

    let rows = lines.enumerate().filter_map(|(i, raw)| {
        let data = raw.split('#').next().unwrap_or("").trim();
        (!data.is_empty()).then_some((i + 2, data))
    });

    match header {
        Header::Lidar => {
            let mut events = Vec::new();
            for (line, data) in rows {
                let cols: Vec<&str> = data.split(',').collect();
                if cols.len() != 5 {
                    return Err(Error::parse(line, format!("expected 5 fields, got {}", cols.len())));
                }
                let e = LidarEvent {
                    t_a: field(line, "t_a", cols[0])?,
                    x: field(line, "x", cols[1])?,
                    y: field(line, "y", cols[2])?,
                    z: field(line, "z", cols[3])?,
                    r: field(line, "r", cols[4])?,
                };
                if !(e.t_a >= 0.0) {
                    return Err(Error::parse(line, format!("negative arrival time {}", e.t_a)));
                }
                if !(e.t_a.is_finite() && e.x.is_finite() && e.y.is_finite() && e.z.is_finite())
                {
                    return Err(Error::parse(line, "non-finite field"));
                }
                if !(e.r.is_finite() && e.r >= 0.0) {
                    return Err(Error::parse(line, format!("invalid reflectance {}", e.r)));
                }
                events.push(e);
            }
            Ok(EventStream::Lidar(LidarStream::new(events)?))
        }
        Header::Dvs {
            width,
            height,
            polarity,
        } => {
            let mut events = Vec::new();
            for (line, data) in rows {
                let cols: Vec<&str> = data.split(',').collect();
                if cols.len() != 4 {
                    return Err(Error::parse(line, format!("expected 4 fields, got {}", cols.len())));
                }
                let t: f64 = field(line, "t", cols[0])?;
                if !(t >= 0.0) || !t.is_finite() {
                    return Err(Error::parse(line, format!("invalid time {t}")));
                }
                let x: u32 = field(line, "x", cols[1])?;
                let y: u32 = field(line, "y", cols[2])?;
                if x >= width || y >= height {
                    return Err(Error::parse(
                        line,
                        format!("pixel ({x}, {y}) outside {width}x{height}"),
                    ));
                }
                let p = polarity.parse_value(cols[3].trim()).ok_or_else(|| {
                    Error::parse(
                        line,
                        format!(
                            "polarity `{}` outside declared convention `{}`",
                            cols[3].trim(),
                            polarity.tag()
                        ),
                    )
                })?;
                events.push(DvsEvent { t, x, y, p });
            }
            Ok(EventStream::Dvs(DvsStream::new(width, height, polarity, events)?))
        }
    }
}

/// Renders a stream in the text format. `f64` values use the shortest
/// representation that parses back to the same bits.
pub fn write_event_file(stream: &EventStream) -> Vec<u8> {
    let mut out = String::new();
    match stream {
        EventStream::Lidar(s) => {
            out.push_str("#sensor=lidar\n");
            for e in &s.events {
                let _ = writeln!(out, "{:?},{:?},{:?},{:?},{:?}", e.t_a, e.x, e.y, e.z, e.r);
            }
        }
        EventStream::Dvs(s) => {
            let _ = writeln!(
                out,
                "#sensor=dvs,w={},h={},polarity={}",
                s.width,
                s.height,
                s.polarity.tag()
            );
            for e in &s.events {
                let _ = writeln!(out, "{:?},{},{},{}", e.t, e.x, e.y, s.polarity.render(e.p));
            }
        }
    }
    out.into_bytes()
}

/// Assigns each point an arrival time growing linearly with its `x`
/// coordinate: `t_a = t_start + rate * (x - x_min)`.
pub fn synth_lidar_arrivals(points: &[[f64; 4]], t_start: f64, rate: f64) -> Result<LidarStream> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Config(format!("arrival rate must be > 0, got {rate}")));
    }
    if !(t_start.is_finite() && t_start >= 0.0) {
        return Err(Error::Config(format!("t_start must be >= 0, got {t_start}")));
    }
    let x_min = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    LidarStream::new(
        points
            .iter()
            .map(|&[x, y, z, r]| LidarEvent {
                t_a: t_start + rate * (x - x_min),
                x,
                y,
                z,
                r,
            })
            .collect(),
    )
}

/// A grayscale image with intensities in `[0, 255]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

/// Turns an intensity image into a DVS stream.
///
/// A pixel of intensity `v` emits `round(v * events_per_unit)` positive
/// events, evenly spaced over `[t0, t_k]` with spacing `(t_k - t0) / n`. The
/// seed only draws a per-pixel phase in `[0, 1)` of that spacing, so event
/// counts never depend on it.
pub fn synth_events_from_image(
    image: &Image,
    events_per_unit: f64,
    t0: f64,
    t_k: f64,
    seed: u64,
) -> Result<DvsStream> {
    if !(t_k > t0) || t0 < 0.0 || !t_k.is_finite() {
        return Err(Error::Window { t0, t_k });
    }
    if !(events_per_unit > 0.0 && events_per_unit.is_finite()) {
        return Err(Error::Config(format!(
            "events_per_unit must be > 0, got {events_per_unit}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = t_k - t0;
    let mut events = Vec::new();
    for (i, &v) in image.pixels.iter().enumerate() {
        // drawn for every pixel so that phases do not depend on intensities
        let phase: f64 = rng.gen();
        let n = (v.max(0.0) * events_per_unit).round() as usize;
        let (x, y) = ((i % image.width as usize) as u32, (i / image.width as usize) as u32);
        for k in 0..n {
            events.push(DvsEvent {
                t: t0 + (k as f64 + phase) * span / n as f64,
                x,
                y,
                p: 1,
            });
        }
    }
    DvsStream::new(image.width, image.height, PolarityConvention::PlusMinusOne, events)
}
