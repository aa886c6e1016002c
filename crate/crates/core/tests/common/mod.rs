#![allow(dead_code)]

use causal_dml::synth::{DgpSpec, EffectSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Constant effect 5.0 with mild selection and a noisy outcome; the
/// calibration and placebo-coverage scenario.
pub fn calibration_spec(seed: u64) -> DgpSpec {
    let mut spec = DgpSpec::constant(20_000, 10, 5.0, 0.5, seed);
    spec.noise_sd = 5.0;
    spec.interaction = 0.25;
    spec
}

/// Two segments with effects 3 and 9, separated along the features that do
/// not drive selection.
pub fn segment_spec(seed: u64) -> DgpSpec {
    let mut spec = DgpSpec::constant(20_000, 10, 0.0, 0.5, seed);
    spec.effect = EffectSpec::Segmented {
        effects: vec![3.0, 9.0],
        separation: 12.0,
    };
    spec.interaction = 0.25;
    spec
}

/// Strong selection with a bounded true propensity: the fitted logistic
/// overshoots toward 0 and 1 and a few controls get enormous ATT weights.
pub fn heavy_tail_spec(seed: u64) -> DgpSpec {
    let mut spec = DgpSpec::constant(20_000, 10, 5.0, 4.0, seed);
    spec.propensity_floor = 0.02;
    spec.interaction = 0.0;
    spec
}

/// Strong selection, many features and a treated majority, so the extreme
/// propensity bins hold few controls.
pub fn strong_selection_spec(seed: u64) -> DgpSpec {
    let mut spec = DgpSpec::constant(20_000, 30, 5.0, 2.0, seed);
    spec.treatment_intercept = 1.5;
    spec.noise_sd = 5.0;
    spec.interaction = 0.0;
    spec
}

pub fn heteroscedastic_spec(seed: u64) -> DgpSpec {
    let mut spec = calibration_spec(seed);
    spec.heteroscedastic = true;
    spec.hetero_slope = 0.5;
    spec
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Relative error with an absolute floor, for quantities that may be near zero.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
