use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcsnn::coding::{LidarEncoderConfig, TimeNorm};
use tcsnn::config::RunConfig;
use tcsnn::events::{parse_event_file, write_event_file, EventStream, LidarEvent, LidarStream};
use tcsnn::network::{Architecture, Network, WeightInit};
use tcsnn::preprocess::{VoxelGridConfig, VoxelValue};
use tcsnn::runtime::{batch_infer, stream_infer, Pipeline};
use tcsnn::training::{load_model, save_model};

fn lidar(seed: u64, n: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|_| LidarEvent {
            t_a: rng.gen_range(0.0..0.5),
            x: rng.gen_range(0.0..4.0),
            y: rng.gen_range(0.0..4.0),
            z: rng.gen_range(0.0..2.0),
            r: rng.gen_range(0.0..1.0),
        })
        .collect();
    EventStream::Lidar(LidarStream::new(events).unwrap())
}

fn voxel_pipeline() -> Pipeline {
    Pipeline::Voxel {
        grid: VoxelGridConfig {
            delta: [1.0, 1.0, 1.0],
            dims: [4, 4, 2],
            origin: [0.0, 0.0, 0.0],
            c: 1.0,
            value: VoxelValue::Distance,
        },
        encoder: LidarEncoderConfig { alpha: 0.05, beta: 0.0 },
    }
}

fn net(seed: u64) -> Network {
    let arch = Architecture::parse("it", "4x4x2: C3-4/s1, F8, F3").unwrap();
    let mut n = Network::random(&arch, &WeightInit { lo: 0.0, hi: 8.0 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    n.time_norm = TimeNorm::from_window(0.0, 1.0, 4.0).unwrap();
    n
}

#[test]
fn file_to_decision() {
    let s = lidar(1, 80);
    let parsed = parse_event_file(&write_event_file(&s)).unwrap();
    assert_eq!(parsed, s);
    let n = load_model(&save_model(&net(2))).unwrap();
    let d = stream_infer(&n, &voxel_pipeline(), &parsed).unwrap();
    assert_eq!(d, batch_infer(&n, &voxel_pipeline(), &parsed).unwrap());
    assert_eq!(d.n_all, 80);
    assert!(d.r_event > 0.0 && d.r_event <= 1.0);
    assert!(d.ideal_delay.map_or(true, |x| x >= 0.0));
}

#[test]
fn config_file_drives_the_pipeline() {
    let cfg = RunConfig::parse(
        "sensor = lidar\nprojection = voxel\nalpha = 0.05\nbeta = 0\nvoxel_delta = 1, 1, 1\n\
         voxel_dims = 4, 4, 2\nvoxel_origin = 0, 0, 0\nvoxel_value = distance\nlight_speed = 1\n",
    )
    .unwrap();
    let s = lidar(3, 50);
    let n = net(4);
    assert_eq!(
        stream_infer(&n, &cfg.pipeline().unwrap(), &s).unwrap(),
        stream_infer(&n, &voxel_pipeline(), &s).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // shifting every arrival by delta shifts the decision by delta and
    // leaves the class and event ratio alone
    #[test]
    fn stream_shift_equivariance(seed in 0u64..10_000, delta in 0.0f64..2.0) {
        let s = lidar(seed, 60);
        let n = net(seed + 1);
        let a = stream_infer(&n, &voxel_pipeline(), &s).unwrap();
        let b = stream_infer(&n, &voxel_pipeline(), &s.shifted(delta).unwrap()).unwrap();
        prop_assert_eq!(a.class, b.class);
        prop_assert_eq!(a.r_event, b.r_event);
        match (a.t_decision, b.t_decision) {
            (Some(x), Some(y)) => prop_assert!((y - x - delta).abs() <= 1e-9 * y.abs().max(1.0)),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
