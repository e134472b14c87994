//! Time-stepping reference simulator of the membrane equation
//! `dv/dt = sum_i w_i u(t - t_i) e^{-(t - t_i)/tau}`.
//!
//! Only used to cross-check the closed-form solver. The synaptic current is
//! advanced exactly over each step of a fixed grid (with extra grid points at
//! input spike times so its jumps never fall inside a step), and the
//! threshold crossing is located by linear interpolation inside the step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSimConfig {
    pub tau: f64,
    pub theta: f64,
    pub dt: f64,
    /// Simulation horizon in seconds after the last input spike.
    pub t_max: f64,
}

impl Default for OdeSimConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            theta: 1.0,
            dt: 1e-4,
            t_max: 40.0,
        }
    }
}

impl OdeSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.theta > 0.0 && self.dt > 0.0 && self.t_max > 0.0) {
            return Err(Error::Config(format!("invalid ODE config {self:?}")));
        }
        if !(self.dt < self.tau) {
            return Err(Error::Config("ODE step must be smaller than tau".into()));
        }
        Ok(())
    }
}

/// First time the membrane potential reaches `theta`, or `None` if it does
/// not within the horizon.
pub fn simulate_ode(times: &[Option<f64>], weights: &[f64], config: &OdeSimConfig) -> Result<Option<f64>> {
    config.validate()?;
    if times.len() != weights.len() {
        return Err(Error::Shape(format!("{} inputs, {} weights", times.len(), weights.len())));
    }
    let mut arrivals: Vec<(f64, f64)> = times
        .iter()
        .zip(weights)
        .filter_map(|(t, &w)| t.map(|t| (t, w)))
        .collect();
    if arrivals.is_empty() {
        return Ok(None);
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));

    let OdeSimConfig { tau, theta, dt, .. } = *config;
    let t_end = arrivals.last().unwrap().0 + config.t_max;
    let full_decay = (-dt / tau).exp();
    let mut t = arrivals[0].0.min(0.0);
    let mut v = 0.0;
    let mut current = 0.0;
    let mut next = 0;

    while t < t_end {
        while next < arrivals.len() && arrivals[next].0 <= t {
            current += arrivals[next].1;
            next += 1;
        }
        let mut h = dt;
        let mut decay = full_decay;
        let mut t_next = t + dt;
        if next < arrivals.len() && arrivals[next].0 < t_next {
            t_next = arrivals[next].0;
            h = t_next - t;
            decay = (-h / tau).exp();
        }
        let end_current = current * decay;
        let v_new = v + tau * (current - end_current);
        if v_new >= theta {
            // linear interpolation inside the step
            return Ok(Some(t + h * (theta - v) / (v_new - v)));
        }
        v = v_new;
        current = end_current;
        t = t_next;
        if next == arrivals.len() {
            // no more inputs: potential can rise by at most current * tau
            // (a relative slack keeps exact asymptotes from creeping over)
            if current <= 0.0 || v + current * tau <= theta * (1.0 + 1e-9) {
                return Ok(None);
            }
        }
    }
    Ok(None)
}
