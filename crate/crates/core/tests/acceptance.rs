//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- 1 3 8` runs a subset.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcsnn::checks::{gradient_fidelity, neuron_oracle};
use tcsnn::coding::{encode_frame_static, encode_lidar, DvsEncoderConfig, InputSpikes, LidarEncoderConfig, Threshold, TimeNorm};
use tcsnn::digits::{run_task, train_config, DigitEncoding, TaskRun};
use tcsnn::events::{DvsEvent, DvsStream, EventStream, LidarEvent, LidarStream, PolarityConvention};
use tcsnn::network::{classify, layer_outputs, Architecture, Network, WeightInit};
use tcsnn::preprocess::{voxelize, VoxelGridConfig, VoxelValue};
use tcsnn::runtime::{batch_infer, event_metrics, stream_infer, Pipeline};
use tcsnn::training::{load_model, save_model};
use tcsnn::Error;

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_net(text: &str, init: WeightInit, rng: &mut ChaCha8Rng) -> Network {
    Network::random(&Architecture::parse("acceptance", text).unwrap(), &init, rng).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn c1_oracle() -> Outcome {
    let t = Instant::now();
    let s = neuron_oracle(1000, 1e-4, 1e-3, SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s.failures == 0 && secs < 60.0,
        format!(
            "{} neurons, {} failures, {} both silent, max |dt| {:.2e}, {secs:.1} s",
            s.neurons, s.failures, s.both_silent, s.max_abs_dt
        ),
    )
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    let g = gradient_fidelity(100, 1e-6, SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        g.max_rel_error <= 1e-4 && secs < 120.0,
        format!(
            "{} nets, {} parameters checked, {} at a causal-set boundary, max rel error {:.2e}, {secs:.1} s",
            g.nets, g.checked, g.skipped, g.max_rel_error
        ),
    )
}

fn dvs_sample(rng: &mut ChaCha8Rng) -> EventStream {
    let n = rng.gen_range(20..200);
    let events = (0..n)
        .map(|_| DvsEvent {
            t: rng.gen_range(0..100) as f64 * 0.01,
            x: rng.gen_range(0..10),
            y: rng.gen_range(0..10),
            p: if rng.gen_bool(0.8) { 1 } else { -1 },
        })
        .collect();
    EventStream::Dvs(DvsStream::new(10, 10, PolarityConvention::PlusMinusOne, events).unwrap())
}

fn lidar_sample(rng: &mut ChaCha8Rng) -> EventStream {
    let n = rng.gen_range(10..120);
    let events = (0..n)
        .map(|_| LidarEvent {
            t_a: rng.gen_range(0..1000) as f64 * 1e-3,
            x: rng.gen_range(-1.0..9.0),
            y: rng.gen_range(-1.0..9.0),
            z: rng.gen_range(-0.5..2.5),
            r: rng.gen_range(0.0..1.0),
        })
        .collect();
    EventStream::Lidar(LidarStream::new(events).unwrap())
}

fn c3_streaming() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let init = WeightInit { lo: 0.0, hi: 8.0 };
    let mut dvs_net = random_net("10x10x1: C3-6/s1, F16, F5", init, &mut rng);
    dvs_net.time_norm = TimeNorm::from_window(0.0, 1.0, 4.0).unwrap();
    let mut lidar_net = random_net("8x8x2: C3-4/s1, F12, F4", init, &mut rng);
    lidar_net.time_norm = TimeNorm::from_window(0.0, 1.0, 4.0).unwrap();
    let dvs = Pipeline::Dvs {
        encoder: DvsEncoderConfig {
            threshold: Threshold::Constant { alpha: 1.0 },
            t0: 0.0,
            t_k: 1.0,
        },
        initial: None,
    };
    let lidar = Pipeline::Voxel {
        grid: VoxelGridConfig {
            delta: [1.0, 1.0, 1.0],
            dims: [8, 8, 2],
            origin: [0.0, 0.0, 0.0],
            c: 1.0,
            value: VoxelValue::FlyingTime,
        },
        encoder: LidarEncoderConfig { alpha: 0.02, beta: 0.0 },
    };
    let (mut same, mut decided, mut early) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let (net, pipeline, stream) = if i % 2 == 0 {
            (&dvs_net, &dvs, dvs_sample(&mut rng))
        } else {
            (&lidar_net, &lidar, lidar_sample(&mut rng))
        };
        let s = stream_infer(net, pipeline, &stream).unwrap();
        let b = batch_infer(net, pipeline, &stream).unwrap();
        let times_ok = match (s.t_decision, b.t_decision) {
            (Some(x), Some(y)) => {
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE));
                rel_close(x, y, 1e-9)
            }
            (None, None) => true,
            _ => false,
        };
        same += (s.class == b.class && times_ok) as usize;
        decided += s.t_decision.is_some() as usize;
        early += (s.r_event < 1.0) as usize;
    }
    outcome(
        same == 500,
        format!("{same}/500 agree, {decided} decided, {early} before the last event, worst rel dt {worst:.1e}"),
    )
}

fn c4_shift() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let net = random_net("10x10x1: C3-6/s1, F16, F5", WeightInit { lo: -1.0, hi: 6.0 }, &mut rng);
    let (mut class_ok, mut worst) = (0, 0.0f64);
    let mut presence_ok = true;
    for _ in 0..100 {
        let times = (0..100)
            .map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0.0..2.0)))
            .collect();
        let x = InputSpikes::new([10, 10, 1], times).unwrap();
        let base = layer_outputs(&net, &x.z()).unwrap();
        let mut all = true;
        for delta in [0.5, 2.0] {
            let shifted = layer_outputs(&net, &x.shifted(delta).z()).unwrap();
            let scale = f64::exp(delta);
            for (a, b) in base.iter().flatten().zip(shifted.iter().flatten()) {
                match (a, b) {
                    (Some(a), Some(b)) => worst = worst.max((a * scale - b).abs() / b.abs()),
                    (None, None) => {}
                    _ => presence_ok = false,
                }
            }
            all &= classify(base.last().unwrap(), net.z_max) == classify(shifted.last().unwrap(), net.z_max);
        }
        class_ok += all as usize;
    }
    outcome(
        presence_ok && worst <= 1e-9 && class_ok == 100,
        format!("class unchanged {class_ok}/100, worst rel z error {worst:.1e}, presence preserved {presence_ok}"),
    )
}

fn c5_fallback() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut exact = 0;
    let mut cells = 0;
    for _ in 0..50 {
        let stream = lidar_sample(&mut rng);
        let value = [VoxelValue::FlyingTime, VoxelValue::Distance, VoxelValue::Intensity, VoxelValue::Count][rng.gen_range(0..4)];
        let grid = voxelize(
            &stream,
            &VoxelGridConfig {
                delta: [1.0, 1.0, 1.0],
                dims: [8, 8, 2],
                origin: [0.0, 0.0, 0.0],
                c: 1.0,
                value,
            },
        )
        .unwrap();
        let max_a = grid.arrival.iter().flatten().copied().fold(0.0, f64::max);
        let alpha = rng.gen_range(0.001..0.1);
        let beta = max_a + rng.gen_range(0.0..1.0);
        let lidar = encode_lidar(&grid, &LidarEncoderConfig { alpha, beta }).unwrap();
        let occupied: Vec<f64> = grid
            .values
            .iter()
            .zip(&grid.arrival)
            .map(|(d, a)| if a.is_some() { *d } else { 0.0 })
            .collect();
        let frame = encode_frame_static(&occupied, grid.shape(), alpha).unwrap();
        let ok = lidar.times.iter().zip(&frame.times).zip(&grid.arrival).all(|((l, f), a)| match (l, a) {
            // a voxel with value 0 spikes at beta, the frame baseline at 0
            (Some(l), Some(_)) => l.to_bits() == (beta + f.unwrap_or(0.0)).to_bits(),
            (None, None) => f.is_none(),
            _ => false,
        });
        cells += grid.arrival.iter().flatten().count();
        exact += ok as usize;
    }
    outcome(exact == 50, format!("{exact}/50 grids bit-identical ({cells} occupied voxels)"))
}

fn digit_run() -> (TaskRun, f64) {
    let t = Instant::now();
    let run = run_task("nmnist", &DigitEncoding::default(), &train_config(SEED), |s, acc| {
        eprintln!("  epoch {:>2}: train {:.3}, test {acc:.3}", s.epoch, s.accuracy);
    })
    .unwrap();
    (run, t.elapsed().as_secs_f64())
}

fn c6_learning(run: &TaskRun, secs: f64) -> Outcome {
    let acc = *run.test_accuracy.last().unwrap();
    outcome(
        acc >= 0.90 && run.history.len() <= 20 && secs <= 1800.0,
        format!(
            "test accuracy {acc:.3} after {} epochs (streamed {:.3}), {secs:.0} s",
            run.history.len(),
            run.report.accuracy
        ),
    )
}

fn c7_early(run: &TaskRun) -> Outcome {
    let r = &run.report;
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("r_event_hist.csv"), r.r_event_hist.to_csv()).unwrap();
    std::fs::write(dir.join("ideal_delay_hist.csv"), r.ideal_delay_hist.to_csv()).unwrap();
    std::fs::write(dir.join("report.csv"), r.to_csv()).unwrap();
    eprintln!("  r_event histogram:\n{}", indent(&r.r_event_hist.to_csv()));
    eprintln!("  ideal delay histogram (s):\n{}", indent(&r.ideal_delay_hist.to_csv()));
    outcome(
        r.mean_r_event <= 0.9 && r.early_fraction >= 0.5,
        format!(
            "mean r_event {:.3}, median {:.3}, r < 1 for {:.1}%, histograms in {}",
            r.mean_r_event,
            r.median_r_event,
            100.0 * r.early_fraction,
            dir.display()
        ),
    )
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}\n")).collect()
}

fn c8_metrics() -> Outcome {
    let a = event_metrics(76, 100, None, None).unwrap();
    let b = event_metrics(38, 100, None, None).unwrap();
    outcome(
        a.ghat_time == 0.24 && b.ghat_time == 0.62,
        format!("r 0.76 -> {}, r 0.38 -> {}", a.ghat_time, b.ghat_time),
    )
}

fn c9_persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let texts = ["12: F8, F3", "8x8x1: C3-4, F10", "6x6x2: C3-4/s1, AP, F5", "10x10x1: C3-3/s1, MP, F6, F2"];
    let mut identical = 0;
    let mut rejected = 0;
    let mut attempts = 0;
    for i in 0..20 {
        let mut net = random_net(texts[i % texts.len()], WeightInit { lo: -2.0, hi: 6.0 }, &mut rng);
        net.time_norm = TimeNorm::from_window(rng.gen(), 2.0, 4.0).unwrap();
        let bytes = save_model(&net);
        let back = load_model(&bytes).unwrap();
        let same_bits = back
            .flat_weights()
            .iter()
            .zip(net.flat_weights())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        identical += (same_bits && back == net && save_model(&back) == bytes) as usize;

        let mut flipped = bytes.clone();
        let at = rng.gen_range(8..flipped.len());
        flipped[at] ^= 0x10;
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let cases = [
            (flipped, "checksum"),
            (bytes[..bytes.len() - 3].to_vec(), "truncated"),
            (bad_magic, "magic"),
            (Vec::new(), "empty"),
        ];
        for (b, _) in cases {
            attempts += 1;
            rejected += matches!(
                load_model(&b),
                Err(Error::Checksum { .. } | Error::Format(_) | Error::UnsupportedVersion { .. })
            ) as usize;
        }
    }
    outcome(
        identical == 20 && rejected == attempts,
        format!("{identical}/20 round trips bit-identical, {rejected}/{attempts} corrupted files rejected"),
    )
}

fn c10_determinism(first: &TaskRun) -> Outcome {
    let (second, _) = digit_run();
    let weights = first
        .net
        .flat_weights()
        .iter()
        .zip(second.net.flat_weights())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let report = first.report == second.report;
    outcome(weights && report, format!("weights identical {weights}, reports identical {report}"))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        eprintln!("[{n} done] {}", o.detail);
        results.push((n, name, o));
    };

    if on(1) {
        report(1, "oracle equivalence", c1_oracle());
    }
    if on(2) {
        report(2, "gradient fidelity", c2_gradients());
    }
    if on(3) {
        report(3, "streaming equals batch", c3_streaming());
    }
    if on(4) {
        report(4, "time-shift equivariance", c4_shift());
    }
    if on(5) {
        report(5, "synchronous fallback", c5_fallback());
    }
    if on(6) || on(7) || on(10) {
        let (run, secs) = digit_run();
        if on(6) {
            report(6, "desk-scale learning", c6_learning(&run, secs));
        }
        if on(7) {
            report(7, "early decision", c7_early(&run));
        }
        if on(10) {
            report(10, "determinism", c10_determinism(&run));
        }
    }
    if on(8) {
        report(8, "metric arithmetic", c8_metrics());
    }
    if on(9) {
        report(9, "persistence", c9_persistence());
    }

    results.sort_by_key(|r| r.0);
    for (n, name, o) in &results {
        println!("criterion {n:>2} {name:<26} {}  {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} criteria, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
