//! Randomized self-checks shared by the `oracle-check` command and the
//! acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{simulate_ode, solve_neuron, Architecture, Network, OdeSimConfig, WeightInit};
use crate::training::{grad_check, LossConfig, LossVariant};
use crate::EPSILON_DENOM;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub neurons: usize,
    pub both_silent: usize,
    pub failures: usize,
    pub max_abs_dt: f64,
    /// First few failing cases as `(times, weights, closed form, ode)`.
    pub examples: Vec<(Vec<f64>, Vec<f64>, Option<f64>, Option<f64>)>,
}

/// Closed-form solver against the ODE simulator on `n` random neurons with
/// 1..=8 inputs, weights `U[-1, 2]` and spike times `U[0, 2]`. A neuron
/// passes when both are silent or their times differ by at most `tol`.
pub fn neuron_oracle(n: usize, dt: f64, tol: f64, seed: u64) -> Result<OracleSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ode = OdeSimConfig {
        dt,
        ..OdeSimConfig::default()
    };
    let mut s = OracleSummary {
        neurons: n,
        both_silent: 0,
        failures: 0,
        max_abs_dt: 0.0,
        examples: Vec::new(),
    };
    for _ in 0..n {
        let k = rng.gen_range(1..=8);
        let times: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0)).collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let z: Vec<Option<f64>> = times.iter().map(|t| Some(t.exp())).collect();
        let closed = solve_neuron(&z, &weights, EPSILON_DENOM)?.t_out();
        let sim = simulate_ode(&times.iter().map(|&t| Some(t)).collect::<Vec<_>>(), &weights, &ode)?;
        let ok = match (closed, sim) {
            (None, None) => {
                s.both_silent += 1;
                true
            }
            (Some(a), Some(b)) => {
                s.max_abs_dt = s.max_abs_dt.max((a - b).abs());
                (a - b).abs() <= tol
            }
            _ => false,
        };
        if !ok {
            s.failures += 1;
            if s.examples.len() < 5 {
                s.examples.push((times, weights, closed, sim));
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSummary {
    pub nets: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// A random dense net, input and label: 4..=12 inputs, two hidden layers of
/// 4..=16 neurons, 2..=6 classes, weights `U[-1, 6] / fan_in`, each input
/// present with probability 0.85 at `t ~ U[0, 2]`.
pub fn random_small_net(rng: &mut ChaCha8Rng) -> Result<(Network, Vec<Option<f64>>, usize)> {
    let n_in = rng.gen_range(4..=12);
    let h1 = rng.gen_range(4..=16);
    let h2 = rng.gen_range(4..=16);
    let classes = rng.gen_range(2..=6);
    let arch = Architecture::parse("check", &format!("{n_in}: F{h1}, F{h2}, F{classes}"))?;
    let net = Network::random(&arch, &WeightInit { lo: -1.0, hi: 6.0 }, rng)?;
    let z = (0..n_in)
        .map(|_| rng.gen_bool(0.85).then(|| (rng.gen::<f64>() * 2.0).exp()))
        .collect();
    Ok((net, z, rng.gen_range(0..classes)))
}

/// Analytic gradients against central differences with step `h` on `nets`
/// random nets, for both loss variants.
pub fn gradient_fidelity(nets: usize, h: f64, seed: u64) -> Result<GradientSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GradientSummary {
        nets,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    for _ in 0..nets {
        let (net, z, c) = random_small_net(&mut rng)?;
        for variant in [LossVariant::Exclusive, LossVariant::Softmax] {
            let cfg = LossConfig {
                variant,
                ..LossConfig::default()
            };
            let r = grad_check(&net, &z, c, &cfg, h)?;
            s.checked += r.checked;
            s.skipped += r.skipped_count;
            s.max_rel_error = s.max_rel_error.max(r.max_rel_error);
        }
    }
    Ok(s)
}
