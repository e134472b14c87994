use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tcsnn::checks::{gradient_fidelity, neuron_oracle};
use tcsnn::coding::InputSpikes;
use tcsnn::config::RunConfig;
use tcsnn::dataset::{read_dataset, write_dataset};
use tcsnn::digits::{bundled, DigitEncoding, TEST, TRAIN};
use tcsnn::events::parse_event_file;
use tcsnn::network::{preset, Architecture};
use tcsnn::runtime::{batch_infer, decision_fields, evaluate, stream_infer};
use tcsnn::training::{fit_with, init_network, read_model, write_model};

#[derive(Parser)]
#[command(name = "tcsnn", version, about = "Temporal-coded spiking networks for event sensors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode one event file into input spike times.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a labelled event directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Preset name or an architecture such as `28x28x1: C5-32, F10`.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one event file; prints
    /// `class,t_decision,n_contributing,n_all,r_event,ghat_time,ideal_delay`.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Encoder and preprocessing settings; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "batch")]
        stream: bool,
        #[arg(long)]
        batch: bool,
    },
    /// Stream every sample of a labelled directory and report metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reference accuracy for the accuracy gain.
        #[arg(long)]
        ref_acc: f64,
        #[arg(long, default_value = "reference")]
        ref_name: String,
        /// Where to write report.csv, the histogram CSVs and decisions.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compare the closed-form neuron with the ODE simulator and check
    /// gradients against finite differences.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        nets: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Write the bundled digit corpus as DVS event files under
    /// `OUT/train` and `OUT/test`.
    SynthDigits {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        events_per_unit: f64,
        #[arg(long)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn read_events(path: &Path) -> Result<tcsnn::events::EventStream> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_event_file(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn spikes_text(s: &InputSpikes) -> String {
    let [c, h, w] = s.shape;
    let mut out = format!("# shape={c}x{h}x{w} (channel-major)\nindex,t\n");
    for (i, t) in s.times.iter().enumerate() {
        if let Some(t) = t {
            let _ = writeln!(out, "{i},{t:?}");
        }
    }
    out
}

fn architecture(name: &str) -> Result<Architecture> {
    if name.contains(':') {
        Ok(Architecture::parse("custom", name)?)
    } else {
        Ok(preset(name)?)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Encode { config, data, out } => {
            let cfg = load_config(Some(&config))?;
            let spikes = cfg.pipeline()?.encode(&read_events(&data)?)?.normalized(cfg.time_norm()?);
            write(&out, &spikes_text(&spikes))?;
        }
        Cmd::Train {
            config,
            data,
            preset,
            seed,
            out,
        } => {
            let cfg = load_config(Some(&config))?;
            let samples = read_dataset(&data)?;
            if samples.is_empty() {
                bail!("{} lists no samples", data.display());
            }
            let pipeline = cfg.pipeline()?;
            let norm = cfg.time_norm()?;
            let train = samples
                .iter()
                .map(|(s, l)| Ok((pipeline.encode(s)?.normalized(norm), *l)))
                .collect::<Result<Vec<_>>>()?;
            let arch = architecture(&preset)?;
            let mut tc = cfg.train;
            tc.seed = seed;
            let mut net = init_network(&arch, &tc)?;
            net.time_norm = norm;
            fit_with(&mut net, &train, &tc, |s, _| {
                eprintln!(
                    "epoch {:>3}  lr {:.2e}  loss {:.4}  train acc {:.3}",
                    s.epoch, s.lr, s.loss, s.accuracy
                );
            })?;
            write_model(&net, &out)?;
        }
        Cmd::Infer {
            model,
            data,
            config,
            stream: _,
            batch,
        } => {
            let net = read_model(&model)?;
            let pipeline = load_config(config.as_deref())?.pipeline()?;
            let events = read_events(&data)?;
            let d = if batch {
                batch_infer(&net, &pipeline, &events)?
            } else {
                stream_infer(&net, &pipeline, &events)?
            };
            println!("{}", decision_fields(&d));
        }
        Cmd::Eval {
            model,
            data,
            config,
            ref_acc,
            ref_name,
            out_dir,
        } => {
            let net = read_model(&model)?;
            let pipeline = load_config(config.as_deref())?.pipeline()?;
            let samples = read_dataset(&data)?;
            let report = evaluate(&net, &pipeline, &samples, Some((&ref_name, ref_acc)))?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let labels: Vec<usize> = samples.iter().map(|s| s.1).collect();
            write(&out_dir.join("report.csv"), &report.to_csv())?;
            write(&out_dir.join("r_event_hist.csv"), &report.r_event_hist.to_csv())?;
            write(&out_dir.join("ideal_delay_hist.csv"), &report.ideal_delay_hist.to_csv())?;
            write(&out_dir.join("decisions.csv"), &report.decisions_csv(&labels))?;
            print!("{}", report.to_csv());
        }
        Cmd::OracleCheck {
            n,
            dt,
            tol,
            nets,
            seed,
        } => {
            let o = neuron_oracle(n, dt, tol, seed)?;
            println!(
                "oracle: {} neurons, {} both silent, {} failures, max |dt| {:.3e}",
                o.neurons, o.both_silent, o.failures, o.max_abs_dt
            );
            for (t, w, a, b) in &o.examples {
                println!("  times {t:?} weights {w:?}: closed form {a:?}, ode {b:?}");
            }
            let g = gradient_fidelity(nets, 1e-6, seed)?;
            println!(
                "gradients: {} nets, {} parameters checked, {} skipped, max rel error {:.3e}",
                g.nets, g.checked, g.skipped, g.max_rel_error
            );
            if o.failures > 0 || g.max_rel_error > 1e-4 {
                println!("FAILED");
                return Ok(ExitCode::FAILURE);
            }
            println!("ok");
        }
        Cmd::SynthDigits {
            out,
            events_per_unit,
            seed,
        } => {
            let digits = bundled();
            let enc = DigitEncoding {
                events_per_unit,
                ..DigitEncoding::default()
            };
            for (name, range) in [("train", TRAIN), ("test", TEST)] {
                write_dataset(&out.join(name), &enc.streams(&digits, range, seed)?)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
