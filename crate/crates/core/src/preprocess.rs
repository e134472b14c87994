//! Spatial representations built from event streams: LiDAR voxel grids with
//! first-arrival values, DVS exposure-window frames and the LiDAR front-view
//! projection.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::{DvsStream, EventStream, LidarEvent};

/// Speed of light in vacuum, m/s.
pub const LIGHT_SPEED: f64 = 299_792_458.0;

/// What a voxel stores. Only [`VoxelValue::FlyingTime`] is used by the
/// temporal encoder; the others are kept for experimentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoxelValue {
    /// Round-trip light time `2 * |p| / c`.
    #[default]
    FlyingTime,
    Distance,
    Intensity,
    /// Number of events falling in the voxel.
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridConfig {
    /// Quantization step per axis, meters.
    pub delta: [f64; 3],
    /// Voxels per axis (`nx`, `ny`, `nz`).
    pub dims: [usize; 3],
    /// World position of the grid corner, meters.
    pub origin: [f64; 3],
    /// Light speed used by [`VoxelValue::FlyingTime`].
    pub c: f64,
    pub value: VoxelValue,
}

impl VoxelGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Config(format!("voxel steps must be > 0: {:?}", self.delta)));
        }
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::Config(format!("voxel dims must be >= 1: {:?}", self.dims)));
        }
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("light speed must be > 0, got {}", self.c)));
        }
        Ok(())
    }

    /// Voxel containing `(x, y, z)` under half-open intervals, or `None`
    /// outside the grid.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut v = [0usize; 3];
        for a in 0..3 {
            let q = ((p[a] - self.origin[a]) / self.delta[a]).floor();
            if !(q >= 0.0 && q < self.dims[a] as f64) {
                return None;
            }
            v[a] = q as usize;
        }
        Some(v)
    }
}

/// Dense voxel grid.
///
/// Linear index of voxel `(x, y, z)` is `(y * nx + x) * nz + z`, so the grid
/// reads as an `ny x nx x nz` (height, width, channels) network input.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// `D` per voxel; `0` where empty.
    pub values: Vec<f64>,
    /// Arrival time of the first event in each voxel.
    pub arrival: Vec<Option<f64>>,
    /// In-stream events that fell outside the grid.
    pub dropped: usize,
}

impl VoxelGrid {
    pub fn empty(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            values: vec![0.0; n],
            arrival: vec![None; n],
            dropped: 0,
        }
    }

    pub fn index(&self, v: [usize; 3]) -> usize {
        grid_index(self.dims, v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Network input shape `(height, width, channels)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.dims[1], self.dims[0], self.dims[2]]
    }

    pub fn to_text(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let mut out = format!("#grid,nx={nx},ny={ny},nz={nz},dropped={}\n", self.dropped);
        for y in 0..ny {
            let row: Vec<String> = (0..nx * nz)
                .map(|k| {
                    let i = y * nx * nz + k;
                    match self.arrival[i] {
                        Some(a) => format!("{:?}@{:?}", self.values[i], a),
                        None => format!("{:?}", self.values[i]),
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty grid file"))?;
        let kv = header_fields(header, "#grid")?;
        let get = |k: &str| -> Result<usize> {
            kv.iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::parse(1, format!("grid header needs integer `{k}`")))
        };
        let dims = [get("nx")?, get("ny")?, get("nz")?];
        let mut grid = VoxelGrid::empty(dims);
        grid.dropped = get("dropped")?;
        let mut count = 0;
        for (row, line) in lines.enumerate() {
            for (k, cell) in line.split(',').enumerate() {
                let i = row * dims[0] * dims[2] + k;
                if i >= grid.values.len() {
                    return Err(Error::parse(row + 2, "too many grid values"));
                }
                let (d, a) = match cell.split_once('@') {
                    Some((d, a)) => (d, Some(a)),
                    None => (cell, None),
                };
                grid.values[i] = d
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(row + 2, format!("bad value `{d}`")))?;
                grid.arrival[i] = a
                    .map(|a| a.trim().parse())
                    .transpose()
                    .map_err(|_| Error::parse(row + 2, "bad arrival time"))?;
                count += 1;
            }
        }
        if count != grid.values.len() {
            return Err(Error::parse(1, format!("expected {} values, got {count}", grid.len())));
        }
        Ok(grid)
    }
}

pub(crate) fn grid_index(dims: [usize; 3], v: [usize; 3]) -> usize {
    (v[1] * dims[0] + v[0]) * dims[2] + v[2]
}

fn header_fields(line: &str, tag: &str) -> Result<Vec<(String, String)>> {
    let rest = line
        .trim()
        .strip_prefix(tag)
        .ok_or_else(|| Error::parse(1, format!("expected `{tag}` header")))?;
    Ok(rest
        .split(',')
        .filter(|p| !p.is_empty())
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Value a single event contributes to its voxel.
pub fn voxel_value(e: &LidarEvent, kind: VoxelValue, c: f64) -> f64 {
    let dist = (e.x * e.x + e.y * e.y + e.z * e.z).sqrt();
    match kind {
        VoxelValue::FlyingTime => 2.0 * dist / c,
        VoxelValue::Distance => dist,
        VoxelValue::Intensity => e.r,
        VoxelValue::Count => 1.0,
    }
}

/// Voxelizes a LiDAR stream. The first event to arrive in a voxel sets its
/// value and arrival time; later events in the same voxel are ignored (or
/// counted, for [`VoxelValue::Count`]).
pub fn voxelize(stream: &EventStream, config: &VoxelGridConfig) -> Result<VoxelGrid> {
    let lidar = stream.as_lidar()?;
    config.validate()?;
    let mut grid = VoxelGrid::empty(config.dims);
    for e in lidar.events() {
        let Some(v) = config.voxel_of([e.x, e.y, e.z]) else {
            grid.dropped += 1;
            continue;
        };
        let i = grid.index(v);
        match grid.arrival[i] {
            None => {
                grid.arrival[i] = Some(e.t_a);
                grid.values[i] = voxel_value(e, config.value, config.c);
            }
            Some(_) if config.value == VoxelValue::Count => grid.values[i] += 1.0,
            Some(_) => {}
        }
    }
    Ok(grid)
}

/// Accumulated DVS image over a closed exposure window.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// `D = I + sum of in-window polarities`, row-major.
    pub values: Vec<i64>,
    pub initial: Vec<i64>,
    pub t0: f64,
    pub t_k: f64,
}

impl Frame {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#frame,w={},h={},t0={:?},t_k={:?}\n",
            self.width, self.height, self.t0, self.t_k
        );
        for block in [&self.values, &self.initial] {
            for row in block.chunks(self.width) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse(1, "empty frame file"))?;
        let kv = header_fields(header, "#frame")?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::parse(1, format!("frame header needs `{k}`")))
        };
        let num_err = |k: &str| Error::parse(1, format!("frame header `{k}` is not numeric"));
        let width: usize = get("w")?.parse().map_err(|_| num_err("w"))?;
        let height: usize = get("h")?.parse().map_err(|_| num_err("h"))?;
        let t0: f64 = get("t0")?.parse().map_err(|_| num_err("t0"))?;
        let t_k: f64 = get("t_k")?.parse().map_err(|_| num_err("t_k"))?;
        let mut cells = Vec::with_capacity(2 * width * height);
        for (row, line) in lines.enumerate() {
            for c in line.split(',') {
                cells.push(
                    c.trim()
                        .parse::<i64>()
                        .map_err(|_| Error::parse(row + 2, format!("bad value `{c}`")))?,
                );
            }
        }
        if cells.len() != 2 * width * height {
            return Err(Error::parse(1, "frame value count does not match header"));
        }
        let initial = cells.split_off(width * height);
        Ok(Frame {
            width,
            height,
            values: cells,
            initial,
            t0,
            t_k,
        })
    }
}

/// Sums polarities of events with `t0 <= t <= t_k` per pixel on top of the
/// initial image (zeros when `initial` is `None`).
pub fn accumulate_frame(
    stream: &EventStream,
    t0: f64,
    t_k: f64,
    initial: Option<&[i64]>,
) -> Result<Frame> {
    let dvs = stream.as_dvs()?;
    accumulate_dvs(dvs, t0, t_k, initial)
}

pub fn accumulate_dvs(dvs: &DvsStream, t0: f64, t_k: f64, initial: Option<&[i64]>) -> Result<Frame> {
    if !(t0 < t_k) {
        return Err(Error::Window { t0, t_k });
    }
    let (w, h) = (dvs.width() as usize, dvs.height() as usize);
    let initial = match initial {
        Some(i) if i.len() != w * h => {
            return Err(Error::Shape(format!(
                "initial image has {} pixels, sensor has {}",
                i.len(),
                w * h
            )))
        }
        Some(i) => i.to_vec(),
        None => vec![0; w * h],
    };
    let mut values = initial.clone();
    for e in dvs.events() {
        if e.t >= t0 && e.t <= t_k {
            values[e.y as usize * w + e.x as usize] += e.p as i64;
        }
    }
    Ok(Frame {
        width: w,
        height: h,
        values,
        initial,
        t0,
        t_k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontViewConfig {
    /// Horizontal angular resolution, radians.
    pub r_h: f64,
    /// Vertical angular resolution, radians.
    pub r_v: f64,
}

/// Maps a LiDAR point to front-view pixel coordinates
/// `(floor(-azimuth / r_h), floor(-elevation / r_v))`.
pub fn project_front_view(p: [f64; 3], config: &FrontViewConfig) -> Result<(i64, i64)> {
    let [x, y, z] = p;
    if x == 0.0 && y == 0.0 {
        return Err(Error::Projection);
    }
    if !(config.r_h > 0.0 && config.r_v > 0.0) {
        return Err(Error::Config("angular resolutions must be > 0".into()));
    }
    let azimuth = y.atan2(x);
    let elevation = (z / x.hypot(y)).atan();
    Ok((
        (-azimuth / config.r_h).floor() as i64,
        (-elevation / config.r_v).floor() as i64,
    ))
}

/// Fixed-size window on the front-view image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontViewCrop {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl FrontViewCrop {
    /// The 50x118 (height x width) crop used by the `kitti` preset.
    pub fn kitti(x0: i64, y0: i64) -> Self {
        Self {
            x0,
            y0,
            width: 118,
            height: 50,
        }
    }
}

/// Projects a LiDAR stream to the front view and crops it into a
/// single-channel grid, applying the same first-arrival rule as
/// [`voxelize`]. Points at the origin or outside the crop are dropped.
pub fn front_view_grid(
    stream: &EventStream,
    config: &FrontViewConfig,
    crop: &FrontViewCrop,
    value: VoxelValue,
    c: f64,
) -> Result<VoxelGrid> {
    let lidar = stream.as_lidar()?;
    let dims = [crop.width, crop.height, 1];
    let mut grid = VoxelGrid::empty(dims);
    for e in lidar.events() {
        let Ok((fx, fy)) = project_front_view([e.x, e.y, e.z], config) else {
            grid.dropped += 1;
            continue;
        };
        let (u, v) = (fx - crop.x0, fy - crop.y0);
        if u < 0 || v < 0 || u >= crop.width as i64 || v >= crop.height as i64 {
            grid.dropped += 1;
            continue;
        }
        let i = grid.index([u as usize, v as usize, 0]);
        match grid.arrival[i] {
            None => {
                grid.arrival[i] = Some(e.t_a);
                grid.values[i] = voxel_value(e, value, c);
            }
            Some(_) if value == VoxelValue::Count => grid.values[i] += 1.0,
            Some(_) => {}
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{DvsEvent, LidarStream, PolarityConvention};
    use proptest::prelude::*;

    fn cfg(dims: [usize; 3], c: f64) -> VoxelGridConfig {
        VoxelGridConfig {
            delta: [1.0; 3],
            dims,
            origin: [0.0; 3],
            c,
            value: VoxelValue::FlyingTime,
        }
    }

    fn lidar(ev: &[(f64, f64, f64, f64)]) -> EventStream {
        EventStream::Lidar(
            LidarStream::new(
                ev.iter()
                    .map(|&(t_a, x, y, z)| LidarEvent { t_a, x, y, z, r: 0.5 })
                    .collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn empty_voxels_are_zero() {
        let g = voxelize(&lidar(&[]), &cfg([2, 2, 2], 3e8)).unwrap();
        assert!(g.values.iter().all(|&d| d == 0.0));
        assert!(g.arrival.iter().all(Option::is_none));
    }

    #[test]
    fn flying_time_value() {
        let g = voxelize(&lidar(&[(0.0, 3.0, 4.0, 0.0)]), &cfg([5, 5, 1], 3e8)).unwrap();
        let i = g.index([3, 4, 0]);
        assert!((g.values[i] - 2.0 * 5.0 / 3e8).abs() <= 1e-12 * g.values[i]);
        assert!((g.values[i] / 3.3333e-8 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn first_arrival_wins() {
        let s = lidar(&[(0.5, 0.9, 0.1, 0.1), (0.2, 0.1, 0.2, 0.3)]);
        let g = voxelize(&s, &cfg([1, 1, 1], 3e8)).unwrap();
        assert_eq!(g.arrival[0], Some(0.2));
        let d = 2.0 * (0.01f64 + 0.04 + 0.09).sqrt() / 3e8;
        assert_eq!(g.values[0], d);
    }

    #[test]
    fn out_of_grid_events_are_counted() {
        let s = lidar(&[(0.0, -0.5, 0.0, 0.0), (0.1, 2.0, 0.0, 0.0), (0.2, 1.0, 0.0, 0.0)]);
        let g = voxelize(&s, &cfg([2, 1, 1], 3e8)).unwrap();
        assert_eq!(g.dropped, 2);
        assert!(g.arrival[1].is_some());
    }

    #[test]
    fn voxelize_rejects_dvs() {
        let s = EventStream::Dvs(
            DvsStream::new(1, 1, PolarityConvention::PlusMinusOne, vec![]).unwrap(),
        );
        assert!(matches!(voxelize(&s, &cfg([1, 1, 1], 1.0)), Err(Error::SensorKind { .. })));
    }

    fn one_pixel_stream() -> EventStream {
        let ev = [(1.0, 1), (2.0, 1), (3.0, -1)]
            .iter()
            .map(|&(t, p)| DvsEvent { t, x: 0, y: 0, p })
            .collect();
        EventStream::Dvs(DvsStream::new(2, 1, PolarityConvention::PlusMinusOne, ev).unwrap())
    }

    #[test]
    fn frame_accumulation() {
        let empty = EventStream::Dvs(
            DvsStream::new(2, 2, PolarityConvention::ZeroOne, vec![]).unwrap(),
        );
        assert_eq!(accumulate_frame(&empty, 0.0, 1.0, None).unwrap().values, vec![0; 4]);

        let s = one_pixel_stream();
        assert_eq!(accumulate_frame(&s, 0.0, 4.0, None).unwrap().values, vec![1, 0]);
        assert_eq!(accumulate_frame(&s, 0.0, 2.5, None).unwrap().values, vec![2, 0]);
        // closed window on both ends
        assert_eq!(accumulate_frame(&s, 1.0, 3.0, None).unwrap().values, vec![1, 0]);
        assert_eq!(accumulate_frame(&s, 0.0, 4.0, Some(&[5, -2])).unwrap().values, vec![6, -2]);
        assert!(matches!(
            accumulate_frame(&s, 2.0, 2.0, None),
            Err(Error::Window { .. })
        ));
    }

    #[test]
    fn front_view_examples() {
        let c = FrontViewConfig { r_h: 0.01, r_v: 0.01 };
        assert_eq!(project_front_view([1.0, 0.0, 0.0], &c).unwrap(), (0, 0));
        assert_eq!(project_front_view([1.0, 1.0, 0.0], &c).unwrap().0, -79);
        let (_, up) = project_front_view([1.0, 0.0, 0.3], &c).unwrap();
        let (_, down) = project_front_view([1.0, 0.0, -0.3], &c).unwrap();
        // floor(-a) and floor(a) differ by one for non-integer a
        assert_eq!(up + down, -1);
        assert!(matches!(
            project_front_view([0.0, 0.0, 1.0], &c),
            Err(Error::Projection)
        ));
    }

    #[test]
    fn front_view_grid_first_arrival() {
        let c = FrontViewConfig { r_h: 0.01, r_v: 0.01 };
        let crop = FrontViewCrop { x0: -2, y0: -2, width: 4, height: 4 };
        let s = lidar(&[(0.3, 2.0, 0.0, 0.0), (0.1, 1.0, 0.0, 0.0), (0.2, 0.0, 0.0, 1.0)]);
        let g = front_view_grid(&s, &c, &crop, VoxelValue::Distance, LIGHT_SPEED).unwrap();
        let i = g.index([2, 2, 0]);
        assert_eq!(g.arrival[i], Some(0.1));
        assert_eq!(g.values[i], 1.0);
        assert_eq!(g.dropped, 1);
        assert_eq!(g.shape(), [4, 4, 1]);
    }

    #[test]
    fn text_containers_round_trip() {
        let s = lidar(&[(0.1, 0.5, 1.5, 0.0), (0.2, 1.5, 0.5, 0.0), (0.3, 9.0, 0.0, 0.0)]);
        let g = voxelize(&s, &cfg([2, 2, 1], 3e8)).unwrap();
        assert_eq!(VoxelGrid::from_text(&g.to_text()).unwrap(), g);

        let f = accumulate_frame(&one_pixel_stream(), 0.0, 4.0, Some(&[3, -1])).unwrap();
        assert_eq!(Frame::from_text(&f.to_text()).unwrap(), f);
    }

    proptest! {
        #[test]
        fn voxel_membership_is_a_partition(
            pts in prop::collection::vec((0.0f64..4.0, 0.0f64..3.0, 0.0f64..2.0), 1..40)
        ) {
            let c = VoxelGridConfig { delta: [0.5, 0.75, 0.5], dims: [8, 4, 4], origin: [0.0; 3], c: 3e8, value: VoxelValue::Count };
            let ev: Vec<_> = pts.iter().enumerate().map(|(i, &(x, y, z))| (i as f64, x, y, z)).collect();
            let g = voxelize(&lidar(&ev), &c).unwrap();
            let total: f64 = g.values.iter().sum();
            prop_assert_eq!(total as usize + g.dropped, pts.len());
            for &(x, y, z) in &pts {
                if let Some(v) = c.voxel_of([x, y, z]) {
                    for a in 0..3 {
                        let lo = c.origin[a] + v[a] as f64 * c.delta[a];
                        let p = [x, y, z][a];
                        prop_assert!(lo <= p + 1e-12 && p < lo + c.delta[a] + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn late_duplicates_do_not_change_grid(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..1.0), 1..20),
            later in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.0f64..1.0), 0..20)
        ) {
            let c = cfg([3, 3, 1], 3e8);
            let base = lidar(&pts);
            let g = voxelize(&base, &c).unwrap();
            let mut all = pts.clone();
            for &(x, y, z) in &later {
                if let Some(v) = c.voxel_of([x, y, z]) {
                    if g.arrival[g.index(v)].is_some() {
                        all.push((5.0, x, y, z));
                    }
                }
            }
            let g2 = voxelize(&lidar(&all), &c).unwrap();
            prop_assert_eq!(g.values, g2.values);
            prop_assert_eq!(g.arrival, g2.arrival);
        }

        #[test]
        fn flying_time_matches_distance(
            x in 0.0f64..50.0, y in 0.0f64..50.0, z in 0.0f64..5.0
        ) {
            let c = VoxelGridConfig { delta: [1.0; 3], dims: [50, 50, 5], origin: [0.0; 3], c: LIGHT_SPEED, value: VoxelValue::FlyingTime };
            let g = voxelize(&lidar(&[(0.0, x, y, z)]), &c).unwrap();
            if let Some(v) = c.voxel_of([x, y, z]) {
                let d = g.values[g.index(v)];
                let expect = 2.0 * (x * x + y * y + z * z).sqrt() / LIGHT_SPEED;
                prop_assert!(d >= 0.0);
                prop_assert!((d - expect).abs() <= 1e-12 * expect.max(f64::MIN_POSITIVE));
            }
        }

        #[test]
        fn frame_windows_compose(
            ev in prop::collection::vec((0.0f64..10.0, 0u32..3, any::<bool>()), 0..40),
            t1 in 1.0f64..9.0
        ) {
            let eps = 1e-3;
            let events: Vec<DvsEvent> = ev.iter()
                .filter(|(t, _, _)| !(*t > t1 && *t < t1 + eps))
                .map(|&(t, x, p)| DvsEvent { t, x, y: 0, p: if p { 1 } else { -1 } })
                .collect();
            let s = EventStream::Dvs(DvsStream::new(3, 1, PolarityConvention::PlusMinusOne, events).unwrap());
            let first = accumulate_frame(&s, 0.0, t1, None).unwrap();
            let second = accumulate_frame(&s, t1 + eps, 10.0, Some(&first.values)).unwrap();
            let whole = accumulate_frame(&s, 0.0, 10.0, None).unwrap();
            prop_assert_eq!(second.values, whole.values);
        }
    }
}
