//! Browser bindings for three operations of `tcsnn`: solving a single
//! neuron, turning a drawn digit into DVS events, and streaming those events
//! through a bundled digit classifier until it commits to an answer.

use tcsnn::digits::{Digit, DigitEncoding, SIDE};
use tcsnn::events::EventStream;
use tcsnn::network::{simulate_ode, solve_neuron, Network, OdeSimConfig};
use tcsnn::runtime::stream_infer_with;
use tcsnn::training::load_model;
use tcsnn::EPSILON_DENOM;
use wasm_bindgen::prelude::*;

static MODEL: &[u8] = include_bytes!("../assets/digits.tsnn");

// errors cross into JS as strings; building a `JsValue` here would panic in
// native tests
fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Output of one neuron: closed form and ODE reference.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct NeuronResult {
    closed: Option<f64>,
    ode: Option<f64>,
    causal: Vec<u32>,
}

#[wasm_bindgen]
impl NeuronResult {
    /// Closed-form spike time, `NaN` when silent.
    #[wasm_bindgen(getter)]
    pub fn closed_form(&self) -> f64 {
        self.closed.unwrap_or(f64::NAN)
    }

    /// Time found by the ODE simulator, `NaN` when silent.
    #[wasm_bindgen(getter)]
    pub fn ode(&self) -> f64 {
        self.ode.unwrap_or(f64::NAN)
    }

    /// Indices of the inputs that caused the spike.
    #[wasm_bindgen(getter)]
    pub fn causal_set(&self) -> Vec<u32> {
        self.causal.clone()
    }
}

/// Solves a neuron with inputs at `times` (silent where `NaN`).
#[wasm_bindgen]
pub fn neuron(times: &[f64], weights: &[f64], dt: f64) -> Result<NeuronResult, String> {
    let t: Vec<Option<f64>> = times.iter().map(|&t| (!t.is_nan()).then_some(t)).collect();
    let z: Vec<Option<f64>> = t.iter().map(|t| t.map(f64::exp)).collect();
    let r = solve_neuron(&z, weights, EPSILON_DENOM).map_err(js_err)?;
    let cfg = OdeSimConfig {
        dt,
        ..OdeSimConfig::default()
    };
    let ode = simulate_ode(&t, weights, &cfg).map_err(js_err)?;
    Ok(NeuronResult {
        closed: r.t_out(),
        ode,
        causal: r.causal_set.iter().map(|&i| i as u32).collect(),
    })
}

fn digit(pixels: &[f64]) -> Result<Digit, String> {
    if pixels.len() != SIDE * SIDE {
        return Err(js_err(format!("expected {} pixels, got {}", SIDE * SIDE, pixels.len())));
    }
    Ok(Digit {
        label: 0,
        pixels: pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    })
}

fn stream_of(pixels: &[f64], seed: u32) -> Result<EventStream, String> {
    DigitEncoding::default().stream(&digit(pixels)?, seed as u64).map_err(js_err)
}

/// Events and input spikes of a drawn digit.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Encoded {
    events: Vec<f64>,
    spikes: Vec<f64>,
}

#[wasm_bindgen]
impl Encoded {
    /// Flat `[t, x, y, ...]` triples in time order.
    #[wasm_bindgen(getter)]
    pub fn events(&self) -> Vec<f64> {
        self.events.clone()
    }

    /// Per-pixel spike time in network units, `NaN` when silent.
    #[wasm_bindgen(getter)]
    pub fn spikes(&self) -> Vec<f64> {
        self.spikes.clone()
    }
}

/// Converts a 28x28 drawing (row-major, values in `[0, 1]`) into a DVS
/// stream and encodes it.
#[wasm_bindgen]
pub fn encode(pixels: &[f64], seed: u32) -> Result<Encoded, String> {
    let enc = DigitEncoding::default();
    let stream = stream_of(pixels, seed)?;
    let norm = enc.time_norm().map_err(js_err)?;
    let spikes = enc.pipeline().encode(&stream).map_err(js_err)?.normalized(norm);
    let events = stream
        .as_dvs()
        .map_err(js_err)?
        .events()
        .iter()
        .flat_map(|e| [e.t, e.x as f64, e.y as f64])
        .collect();
    Ok(Encoded {
        events,
        spikes: spikes.times.iter().map(|t| t.unwrap_or(f64::NAN)).collect(),
    })
}

/// Outcome of streaming a drawing through the classifier.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Streamed {
    class: usize,
    t_decision: Option<f64>,
    consumed: usize,
    total: usize,
    trace: Vec<f64>,
}

#[wasm_bindgen]
impl Streamed {
    #[wasm_bindgen(getter)]
    pub fn class(&self) -> u32 {
        self.class as u32
    }

    /// Decision time in seconds, `NaN` when no output fired.
    #[wasm_bindgen(getter)]
    pub fn t_decision(&self) -> f64 {
        self.t_decision.unwrap_or(f64::NAN)
    }

    /// Events with a timestamp at or before the decision.
    #[wasm_bindgen(getter)]
    pub fn consumed(&self) -> u32 {
        self.consumed as u32
    }

    #[wasm_bindgen(getter)]
    pub fn total(&self) -> u32 {
        self.total as u32
    }

    /// Flat `[events consumed, leading class or -1, ...]` pairs, one per
    /// timestamp group.
    #[wasm_bindgen(getter)]
    pub fn trace(&self) -> Vec<f64> {
        self.trace.clone()
    }
}

/// Holds the bundled digit classifier.
#[wasm_bindgen]
pub struct Classifier {
    net: Network,
}

#[wasm_bindgen]
impl Classifier {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<Classifier, String> {
        Ok(Self {
            net: load_model(MODEL).map_err(js_err)?,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn description(&self) -> String {
        format!(
            "{} ({} weights)",
            self.net.architecture(),
            self.net.flat_weights().len()
        )
    }

    /// Streams the drawing event by event and stops at the first output
    /// spike.
    pub fn classify(&self, pixels: &[f64], seed: u32) -> Result<Streamed, String> {
        let stream = stream_of(pixels, seed)?;
        let mut trace = Vec::new();
        let d = stream_infer_with(&self.net, &DigitEncoding::default().pipeline(), &stream, |s| {
            trace.push(s.consumed as f64);
            trace.push(s.leader.map_or(-1.0, |l| l.0 as f64));
        })
        .map_err(js_err)?;
        Ok(Streamed {
            class: d.class,
            t_decision: d.t_decision,
            consumed: d.n_contributing,
            total: d.n_all,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar() -> Vec<f64> {
        let mut p = vec![0.0; SIDE * SIDE];
        for y in 4..24 {
            p[y * SIDE + 14] = 1.0;
        }
        p
    }

    #[test]
    fn neuron_agrees_with_ode() {
        let r = neuron(&[0.0, 0.5, f64::NAN], &[0.8, 0.9, 1.0], 1e-4).unwrap();
        assert!((r.closed_form() - r.ode()).abs() < 1e-3);
        assert_eq!(r.causal_set(), vec![0, 1]);
        assert!(neuron(&[0.0], &[0.5], 1e-4).unwrap().closed_form().is_nan());
        assert!(neuron(&[0.0], &[0.5, 1.0], 1e-4).is_err());
    }

    #[test]
    fn encodes_drawing() {
        let e = encode(&bar(), 1).unwrap();
        assert_eq!(e.spikes().len(), SIDE * SIDE);
        assert_eq!(e.events().len() % 3, 0);
        assert!(!e.events().is_empty());
        assert!(encode(&[0.0; 3], 1).is_err());
    }

    #[test]
    fn bundled_model_streams() {
        let c = Classifier::new().unwrap();
        assert!(c.description().contains("F10"));
        let s = c.classify(&bar(), 3).unwrap();
        assert!(s.class() < 10);
        assert!(s.consumed() <= s.total());
        assert_eq!(s.trace().len() % 2, 0);
    }
}
