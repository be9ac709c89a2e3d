//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's math; the oracles are plain scalar
//! loops written from the metric definitions.

#![allow(dead_code)]

pub mod grad_suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustmark::network::Network;
use robustmark::params::{Gradients, ParamId, ParameterStore};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum relative error between analytic and numeric derivatives.
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Below this absolute difference two derivatives are considered equal
/// regardless of their magnitude.
pub const GRAD_ABS_FLOOR: f64 = 1e-9;
/// Multiple of the rounding error of a central difference, `eps·|L|/h`,
/// that is still treated as zero. Matters for structurally zero gradients
/// (a key bias under softmax) of losses summed over many outputs.
pub const ROUNDING_SLACK: f64 = 100.0;

/// Absolute floor for a loss whose value at the probe point is `loss`.
pub fn abs_floor(loss: f64) -> f64 {
    GRAD_ABS_FLOOR.max(ROUNDING_SLACK * f64::EPSILON * loss.abs() / FD_STEP)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_with_floor(analytic, numeric, GRAD_ABS_FLOOR)
}

pub fn rel_err_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Outcome of one finite-difference comparison.
#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    pub floor: f64,
    /// Largest raw `|analytic - numeric|` seen, floored or not.
    pub max_abs_diff: f64,
}

impl GradReport {
    pub fn new() -> Self {
        Self {
            checked: 0,
            worst: 0.0,
            worst_at: String::new(),
            floor: GRAD_ABS_FLOOR,
            max_abs_diff: 0.0,
        }
    }

    pub fn with_floor(floor: f64) -> Self {
        Self { floor, ..Self::new() }
    }

    pub fn record(&mut self, what: impl Into<String>, analytic: f64, numeric: f64) {
        let e = rel_err_with_floor(analytic, numeric, self.floor);
        self.checked += 1;
        self.max_abs_diff = self.max_abs_diff.max((analytic - numeric).abs());
        if e > self.worst || self.worst_at.is_empty() {
            self.worst = e;
            self.worst_at = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what.into());
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.max_abs_diff = self.max_abs_diff.max(other.max_abs_diff);
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.worst <= GRAD_REL_TOL
    }

    pub fn assert_ok(&self, name: &str) {
        assert!(self.checked > 0, "{name}: nothing checked");
        assert!(
            self.worst <= GRAD_REL_TOL,
            "{name}: worst relative error {:e} at {}",
            self.worst,
            self.worst_at
        );
    }
}

/// Central difference of `f` with respect to one scalar reached through
/// `slot`.
pub fn central_diff<S>(state: &mut S, slot: impl Fn(&mut S) -> &mut f64, f: impl Fn(&S) -> f64) -> f64 {
    let orig = *slot(state);
    *slot(state) = orig + FD_STEP;
    let up = f(state);
    *slot(state) = orig - FD_STEP;
    let down = f(state);
    *slot(state) = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Element indices to probe in an array of `len` elements: all of them when
/// small, otherwise `max` seeded picks.
pub fn probe_indices(len: usize, max: usize, seed: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..max).map(|_| rng.random_range(0..len)).collect()
}

/// Compare the analytic parameter gradients in `grads` against central
/// differences of `loss` for up to `per_array` elements of every array.
pub fn check_params<N: Network<f64>>(
    net: &mut N,
    grads: &Gradients<f64>,
    loss: impl Fn(&N) -> f64,
    per_array: usize,
) -> GradReport {
    let mut report = GradReport::with_floor(abs_floor(loss(net)));
    let ids: Vec<ParamId> = net.store().ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let name = net.store().param(id).name.clone();
        let grad: Vec<f64> = grads.get(id).iter().copied().collect();
        for i in probe_indices(grad.len(), per_array, k as u64) {
            let numeric = central_diff(net, |n| n.store_mut().value_mut(id).iter_mut().nth(i).unwrap(), &loss);
            report.record(format!("{name}[{i}]"), grad[i], numeric);
        }
    }
    report
}

/// A bare parameter store, for checking individual layers.
pub struct Bare(pub ParameterStore<f64>);

impl Network<f64> for Bare {
    fn store(&self) -> &ParameterStore<f64> {
        &self.0
    }

    fn store_mut(&mut self) -> &mut ParameterStore<f64> {
        &mut self.0
    }
}

/// Compare an analytic input gradient against central differences.
pub fn check_input(
    input: &mut Vec<f64>,
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    per_array: usize,
    label: &str,
) -> GradReport {
    let mut report = GradReport::with_floor(abs_floor(loss(input)));
    assert_eq!(input.len(), analytic.len(), "{label}: gradient size");
    for i in probe_indices(input.len(), per_array, 99) {
        let numeric = central_diff(input, |v| &mut v[i], |v| loss(v));
        report.record(format!("{label}[{i}]"), analytic[i], numeric);
    }
    report
}

pub fn random_vec(len: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

// Scalar-loop metric oracles.

pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s / a.len() as f64
}

/// PSNR with peak 255 after quantizing `round(255·clamp(x))`.
pub fn psnr_oracle(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let q = |x: f32| -> f64 { (x.clamp(0.0, 1.0) as f64 * 255.0).round() };
    let mut sse = 0.0;
    for i in 0..a.len() {
        let d = q(a[i]) - q(b[i]);
        sse += d * d;
    }
    if sse == 0.0 {
        return f64::INFINITY;
    }
    let mse = sse / a.len() as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

pub fn brr_oracle(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut same = 0usize;
    for i in 0..a.len() {
        if a[i] == b[i] {
            same += 1;
        }
    }
    100.0 * same as f64 / a.len() as f64
}

pub fn triplet_oracle(a: &[f64], p: &[f64], n: &[f64], margin: f64) -> f64 {
    let v = mse_oracle(a, p) - mse_oracle(a, n) + margin;
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub fn assert_rel(actual: f64, expected: f64, tol: f64, what: &str) {
    let scale = expected.abs().max(f64::MIN_POSITIVE);
    assert!(
        (actual - expected).abs() <= tol * scale,
        "{what}: {actual:e} vs oracle {expected:e}"
    );
}
