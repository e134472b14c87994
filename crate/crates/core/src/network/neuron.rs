//! Closed-form spike time of a single non-leaky integrate-and-fire neuron.
//!
//! With `tau = 1` and threshold `1`, a neuron whose causal set is `C` fires at
//!
//! ```text
//! z_out = sum_{i in C} w_i z_i / (sum_{i in C} w_i - 1),     z = e^t
//! ```
//!
//! `C` must be exactly the inputs that spike strictly before the output, so
//! the solver grows `C` over inputs sorted by `z` and accepts the first
//! prefix whose candidate lands after its last member and no later than the
//! next input.

use crate::error::{Error, Result};

/// One present input of a neuron: its `z`, the input-vector index (tie
/// breaker) and the offset of its weight inside the neuron's weight row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Entry {
    pub z: f64,
    pub input: u32,
    pub weight: u32,
}

pub(crate) fn sort_entries(entries: &mut [Entry]) {
    entries.sort_unstable_by(|a, b| a.z.total_cmp(&b.z).then(a.input.cmp(&b.input)));
}

/// Outcome of solving one neuron over sorted entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Solved {
    pub z_out: Option<f64>,
    /// Number of leading sorted entries in the causal set (0 when silent).
    pub causal: u32,
    /// `sum_C w - 1` for the accepted set.
    pub denom: f64,
}

pub(crate) const SILENT: Solved = Solved {
    z_out: None,
    causal: 0,
    denom: f64::NAN,
};

#[inline]
pub(crate) fn solve_sorted(entries: &[Entry], row: &[f64], eps: f64) -> Solved {
    let mut w_sum = 0.0;
    let mut wz_sum = 0.0;
    let n = entries.len();
    for m in 0..n {
        let e = entries[m];
        let w = row[e.weight as usize];
        w_sum += w;
        wz_sum += w * e.z;
        let denom = w_sum - 1.0;
        if denom > eps {
            let z_out = wz_sum / denom;
            if z_out > e.z && (m + 1 == n || z_out <= entries[m + 1].z) {
                return Solved {
                    z_out: Some(z_out),
                    causal: (m + 1) as u32,
                    denom,
                };
            }
        }
    }
    SILENT
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSolveResult {
    /// `e^{t_out}`, or `None` if the neuron never fires.
    pub z_out: Option<f64>,
    /// Input indices in the causal set, earliest first.
    pub causal_set: Vec<usize>,
    /// `sum_C w - 1`; `NaN` for a silent neuron.
    pub denominator: f64,
}

impl NeuronSolveResult {
    pub fn causal_set_size(&self) -> usize {
        self.causal_set.len()
    }

    pub fn t_out(&self) -> Option<f64> {
        self.z_out.map(f64::ln)
    }
}

/// Solves one neuron given input `z` values (`None` = never spikes).
pub fn solve_neuron(z: &[Option<f64>], weights: &[f64], epsilon_denom: f64) -> Result<NeuronSolveResult> {
    if z.len() != weights.len() {
        return Err(Error::Shape(format!("{} inputs, {} weights", z.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Domain(format!("weight {w} is not finite")));
    }
    let mut entries = Vec::with_capacity(z.len());
    for (i, zi) in z.iter().enumerate() {
        if let Some(zi) = *zi {
            if !(zi >= 1.0) {
                return Err(Error::Domain(format!("input {i} has z = {zi} < 1")));
            }
            entries.push(Entry {
                z: zi,
                input: i as u32,
                weight: i as u32,
            });
        }
    }
    sort_entries(&mut entries);
    let s = solve_sorted(&entries, weights, epsilon_denom);
    Ok(NeuronSolveResult {
        z_out: s.z_out,
        causal_set: entries[..s.causal as usize]
            .iter()
            .map(|e| e.input as usize)
            .collect(),
        denominator: s.denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EPSILON_DENOM;

    fn solve(t: &[f64], w: &[f64]) -> NeuronSolveResult {
        let z: Vec<Option<f64>> = t.iter().map(|t| Some(t.exp())).collect();
        solve_neuron(&z, w, EPSILON_DENOM).unwrap()
    }

    #[test]
    fn single_input_fires_at_ln2() {
        let r = solve(&[0.0], &[2.0]);
        assert_eq!(r.z_out, Some(2.0));
        assert!((r.t_out().unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.causal_set, vec![0]);
        assert_eq!(r.denominator, 1.0);
    }

    #[test]
    fn unit_weight_never_fires() {
        let r = solve(&[0.0], &[1.0]);
        assert_eq!(r.z_out, None);
        assert_eq!(r.causal_set_size(), 0);
    }

    #[test]
    fn needs_both_inputs() {
        let r = solve(&[0.0, 0.5], &[0.8, 0.9]);
        let expect = (0.8 + 0.9 * 0.5f64.exp()) / 0.7;
        assert!((r.z_out.unwrap() - expect).abs() < 1e-12);
        assert!((expect - 3.2626).abs() < 1e-4);
        assert!((r.t_out().unwrap() - 1.1826).abs() < 1e-4);
        assert_eq!(r.causal_set, vec![0, 1]);
    }

    #[test]
    fn later_input_preempts_single_input_candidate() {
        let r = solve(&[0.0, 0.1], &[1.5, 1.0]);
        // alone, input 0 would fire at ln 3 > 0.1, after input 1 arrives
        let expect = (1.5 + 0.1f64.exp()) / 1.5;
        assert!((r.z_out.unwrap() - expect).abs() < 1e-12);
        assert!((r.t_out().unwrap() - 0.5521).abs() < 1e-4);
        assert_eq!(r.causal_set_size(), 2);
    }

    #[test]
    fn absent_inputs_are_ignored() {
        let r = solve_neuron(&[None, Some(1.0)], &[5.0, 2.0], EPSILON_DENOM).unwrap();
        assert_eq!(r.z_out, Some(2.0));
        assert_eq!(r.causal_set, vec![1]);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            solve_neuron(&[Some(0.5)], &[2.0], EPSILON_DENOM),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_neuron(&[Some(1.0)], &[f64::NAN], EPSILON_DENOM),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn equal_times_enter_together() {
        // candidate from the first of two simultaneous inputs is not valid
        // on its own: the second one arrives at the same instant
        let r = solve(&[0.0, 0.0], &[3.0, -1.5]);
        assert_eq!(r.causal_set_size(), 2);
        assert_eq!(r.z_out, Some(1.5 / 0.5));
    }
}
