//! Double-double forward pass used by the finite-difference oracle.
//!
//! A central difference with `h = 1e-6` in plain `f64` cannot resolve
//! gradients much below `1e-10`: the rounding noise of the two forward passes
//! dominates. Carrying ~106 bits lets the oracle check every parameter at the
//! prescribed step. This is a separate, straightforward re-implementation of
//! the layer semantics, not a wrapper around the production solver.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::network::presets::window_geometry;
use crate::network::{causal_hash, Layer, Network};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// `ln(1 + x)` for small `x`, by series; falls back to `f64` for larger
    /// arguments where the extra bits are not needed.
    pub fn ln_1p(self) -> Dd {
        if self.hi.abs() > 1e-3 {
            return Dd::new(self.to_f64().ln_1p());
        }
        let mut term = self;
        let mut sum = Dd::ZERO;
        for k in 1..40 {
            let t = term / Dd::new(k as f64);
            sum = if k % 2 == 1 { sum + t } else { sum - t };
            if t.hi.abs() < 1e-34 * sum.hi.abs().max(1e-300) {
                break;
            }
            term = term * self;
        }
        sum
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.hi.total_cmp(&o.hi).then(self.lo.total_cmp(&o.lo)))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::norm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        Dd::norm(q1, q2) + Dd::new(q3)
    }
}

fn solve(mut entries: Vec<(Dd, u32, Dd)>, eps: f64) -> (Option<Dd>, u64) {
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let one = Dd::new(1.0);
    let eps = Dd::new(eps);
    let mut ws = Dd::ZERO;
    let mut wz = Dd::ZERO;
    for m in 0..entries.len() {
        let (z, _, w) = entries[m];
        ws = ws + w;
        wz = wz + w * z;
        let d = ws - one;
        if d > eps {
            let out = wz / d;
            if out > z && (m + 1 == entries.len() || out <= entries[m + 1].0) {
                let mut idx: Vec<u32> = entries[..=m].iter().map(|e| e.1).collect();
                return (Some(out), causal_hash(m + 1, &mut idx));
            }
        }
    }
    (None, causal_hash(0, &mut Vec::new()))
}

/// Output values (silent outputs as `z_max`) and the per-layer causal-set
/// signatures, in the same encoding as [`crate::network::LayerTrace::signature`].
pub(crate) fn forward_dd(net: &Network, weights: &[Dd], z_in: &[Option<f64>]) -> (Vec<Option<Dd>>, Vec<Vec<u64>>) {
    let mut z: Vec<Option<Dd>> = z_in.iter().map(|v| v.map(Dd::new)).collect();
    let mut sigs = Vec::with_capacity(net.layers.len());
    let mut off = 0;
    let eps = net.epsilon_denom;
    for layer in &net.layers {
        let n_w = layer.weights().len();
        let w = &weights[off..off + n_w];
        off += n_w;
        let mut out = Vec::with_capacity(layer.output_len());
        let mut sig = Vec::with_capacity(layer.output_len());
        match layer {
            Layer::Dense(d) => {
                for row in w.chunks_exact(d.inputs) {
                    let entries = z
                        .iter()
                        .enumerate()
                        .filter_map(|(i, v)| v.map(|v| (v, i as u32, row[i])))
                        .collect();
                    let (o, s) = solve(entries, eps);
                    out.push(o);
                    sig.push(s);
                }
            }
            Layer::Conv(c) => {
                let [ih, iw, ic] = c.input;
                let k = c.kernel;
                let (oh, pt) = window_geometry(ih, k, c.stride, c.padding).expect("valid conv");
                let (ow, pl) = window_geometry(iw, k, c.stride, c.padding).expect("valid conv");
                let row_len = k * k * ic;
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c.channels {
                            let mut entries = Vec::new();
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * c.stride + ky) as isize - pt as isize;
                                    let ix = (ox * c.stride + kx) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                        continue;
                                    }
                                    for i in 0..ic {
                                        let src = (iy as usize * iw + ix as usize) * ic + i;
                                        if let Some(v) = z[src] {
                                            entries.push((v, src as u32, w[ch * row_len + (ky * k + kx) * ic + i]));
                                        }
                                    }
                                }
                            }
                            let (o, s) = solve(entries, eps);
                            out.push(o);
                            sig.push(s);
                        }
                    }
                }
            }
            Layer::AvgPool(p) | Layer::EarliestPool(p) => {
                let [_, iw, ic] = p.input;
                let [oh, ow, _] = layer.output_shape();
                let avg = matches!(layer, Layer::AvgPool(_));
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..ic {
                            let members: Vec<usize> = (0..p.size * p.size)
                                .map(|t| {
                                    let (y, x) = (oy * p.stride + t / p.size, ox * p.stride + t % p.size);
                                    (y * iw + x) * ic + ch
                                })
                                .collect();
                            if avg {
                                let present = members.iter().any(|&i| z[i].is_some());
                                let mut s = Dd::ZERO;
                                for &i in &members {
                                    s = s + z[i].unwrap_or(Dd::new(net.z_max));
                                }
                                out.push(present.then(|| s / Dd::new(members.len() as f64)));
                                sig.push(present as u64);
                            } else {
                                let best = members
                                    .iter()
                                    .filter_map(|&i| z[i].map(|v| (v, i)))
                                    .fold(None, |b: Option<(Dd, usize)>, c| match b {
                                        Some(b) if b.0 <= c.0 => Some(b),
                                        _ => Some(c),
                                    });
                                out.push(best.map(|b| b.0));
                                sig.push(best.map_or(u64::MAX, |b| b.1 as u64));
                            }
                        }
                    }
                }
            }
        }
        sigs.push(sig);
        z = out;
    }
    (z, sigs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_carries_extra_bits() {
        let third = Dd::new(1.0) / Dd::new(3.0);
        let back = third * Dd::new(3.0) - Dd::new(1.0);
        assert!(back.to_f64().abs() < 1e-31);
        let x = Dd::new(1.0) + Dd::new(1e-20);
        assert_eq!((x - Dd::new(1.0)).to_f64(), 1e-20);
        assert!(x > Dd::new(1.0));
        let l = Dd::new(1e-5).ln_1p().to_f64();
        assert!((l - 1e-5f64.ln_1p()).abs() < 1e-21);
    }
}
