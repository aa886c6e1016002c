//! Synthetic data with known ground truth.
//!
//! Features are standard normal; segmented designs shift them per segment
//! along a fixed direction orthogonal to selection. Selection runs through a fixed direction `a` spanning the
//! first three features: `e(X) = logistic(c0 + kappa * a'X)`. The outcome is
//! `Y = g(X) + D * tau(X) + noise` with
//! `g(X) = 10 + sum_j b_j X_j + 3 kappa a'X + gamma X_0 X_1`, so a linear
//! outcome model is misspecified only through the mild `X_0 X_1` term.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::nuisance::logistic::sigmoid;

/// Seed stream reserved for the placebo redraw.
const PLACEBO_STREAM: u64 = 0x504c_4143_4542_4f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectSpec {
    Constant {
        tau: f64,
    },
    /// Segments drawn uniformly; segment `s` shifts features by
    /// `(s - (S - 1) / 2) * separation` along the segment direction.
    Segmented {
        effects: Vec<f64>,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn default_separation() -> f64 {
    4.0
}

fn default_noise() -> f64 {
    1.0
}

fn default_outcome_confounding() -> f64 {
    3.0
}

fn default_interaction() -> f64 {
    0.5
}

fn default_persistence() -> f64 {
    0.9
}

fn default_hetero_slope() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub m: usize,
    pub effect: EffectSpec,
    #[serde(default)]
    pub confounding_strength: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Noise sd becomes `noise_sd * exp(hetero_slope * a'X)`.
    #[serde(default)]
    pub heteroscedastic: bool,
    #[serde(default = "default_hetero_slope")]
    pub hetero_slope: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub treatment_intercept: f64,
    /// Multiplier of `kappa * a'X` in `g`.
    #[serde(default = "default_outcome_confounding")]
    pub outcome_confounding: f64,
    /// Coefficient of the `X_0 X_1` term in `g`.
    #[serde(default = "default_interaction")]
    pub interaction: f64,
    /// Correlation between original and placebo-period features.
    #[serde(default = "default_persistence")]
    pub placebo_persistence: f64,
    /// Draws the selection features from Student's t with these degrees of
    /// freedom instead of the normal, giving heavy propensity tails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_tail_df: Option<f64>,
    /// Keeps the true propensity inside `[floor, 1 - floor]`; a logistic
    /// model then overshoots toward 0 and 1 in the tails.
    #[serde(default)]
    pub propensity_floor: f64,
}

impl DgpSpec {
    pub fn constant(n: usize, m: usize, tau: f64, confounding_strength: f64, seed: u64) -> Self {
        DgpSpec {
            n,
            m,
            effect: EffectSpec::Constant { tau },
            confounding_strength,
            noise_sd: default_noise(),
            heteroscedastic: false,
            hetero_slope: default_hetero_slope(),
            seed,
            treatment_intercept: 0.0,
            outcome_confounding: default_outcome_confounding(),
            interaction: default_interaction(),
            placebo_persistence: default_persistence(),
            selection_tail_df: None,
            propensity_floor: 0.0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DgpSpec { seed, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        DgpSpec { n, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n < 1 || self.m < 1 {
            return bad(format!("n and m must be at least 1, got n = {}, m = {}", self.n, self.m));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.placebo_persistence) {
            return bad(format!(
                "placebo_persistence must lie in [0, 1], got {}",
                self.placebo_persistence
            ));
        }
        let finite = [
            self.confounding_strength,
            self.hetero_slope,
            self.treatment_intercept,
            self.outcome_confounding,
            self.interaction,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("DGP coefficients must be finite".into());
        }
        if !(0.0..0.5).contains(&self.propensity_floor) {
            return bad(format!("propensity_floor must lie in [0, 0.5), got {}", self.propensity_floor));
        }
        if let Some(df) = self.selection_tail_df {
            if !(df > 0.0 && df.is_finite()) {
                return bad(format!("selection_tail_df must be positive, got {df}"));
            }
        }
        match &self.effect {
            EffectSpec::Constant { tau } if !tau.is_finite() => bad("tau must be finite".into()),
            EffectSpec::Segmented { effects, separation } => {
                if effects.is_empty() || effects.iter().any(|v| !v.is_finite()) {
                    bad("segmented effects must be a non-empty list of finite values".into())
                } else if !separation.is_finite() {
                    bad("separation must be finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn n_segments(&self) -> usize {
        match &self.effect {
            EffectSpec::Constant { .. } => 1,
            EffectSpec::Segmented { effects, .. } => effects.len(),
        }
    }

    fn segment_effect(&self, s: usize) -> f64 {
        match &self.effect {
            EffectSpec::Constant { tau } => *tau,
            EffectSpec::Segmented { effects, .. } => effects[s],
        }
    }

    fn segment_shift(&self, s: usize) -> f64 {
        match &self.effect {
            EffectSpec::Constant { .. } => 0.0,
            EffectSpec::Segmented { effects, separation } => {
                (s as f64 - (effects.len() as f64 - 1.0) / 2.0) * separation
            }
        }
    }

    /// Unit-norm direction of segment shifts: equal weights on the features
    /// outside the selection direction, or the last feature when there are none.
    pub fn segment_direction(&self) -> Vec<f64> {
        if self.m <= 3 {
            return (0..self.m).map(|j| if j + 1 == self.m { 1.0 } else { 0.0 }).collect();
        }
        let v = 1.0 / ((self.m - 3) as f64).sqrt();
        (0..self.m).map(|j| if j >= 3 { v } else { 0.0 }).collect()
    }

    /// Unit-norm selection direction over the first `min(3, m)` features.
    pub fn selection_direction(&self) -> Vec<f64> {
        let k = self.m.min(3);
        let v = 1.0 / (k as f64).sqrt();
        (0..self.m).map(|j| if j < k { v } else { 0.0 }).collect()
    }

    /// Linear coefficients `b_j` of `g`.
    pub fn baseline_coefficients(&self) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign / ((j + 1) as f64).sqrt()
            })
            .collect()
    }

    fn index(&self, x: &[f64]) -> f64 {
        self.selection_direction().iter().zip(x).map(|(a, v)| a * v).sum()
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        let f = self.propensity_floor;
        f + (1.0 - 2.0 * f) * sigmoid(self.treatment_intercept + self.confounding_strength * self.index(x))
    }

    /// Noise-free untreated outcome `g(X)`.
    pub fn baseline_outcome(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.baseline_coefficients().iter().zip(x).map(|(b, v)| b * v).sum();
        let inter = if self.m >= 2 { self.interaction * x[0] * x[1] } else { 0.0 };
        10.0 + lin + self.outcome_confounding * self.confounding_strength * self.index(x) + inter
    }

    pub fn noise_scale(&self, x: &[f64]) -> f64 {
        if self.heteroscedastic {
            self.noise_sd * (self.hetero_slope * self.index(x)).exp()
        } else {
            self.noise_sd
        }
    }
}

/// Oracle quantities recorded while generating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth {
    pub true_att: f64,
    pub true_ate: f64,
    pub per_customer_effect: Vec<f64>,
    pub true_propensity: Vec<f64>,
    pub segment: Vec<usize>,
    pub baseline_outcome: Vec<f64>,
}

fn customer_id(i: usize) -> String {
    format!("c{i:07}")
}

fn feature_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("x{j}")).collect()
}

pub fn generate(spec: &DgpSpec) -> Result<(Dataset, DgpTruth)> {
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_seg = spec.n_segments();

    let mut x = DMatrix::zeros(n, m);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut segment = Vec::with_capacity(n);
    let u = spec.segment_direction();
    let selection = spec.selection_direction();
    let tails = match spec.selection_tail_df {
        Some(df) => Some(StudentT::new(df).map_err(|e| Error::Argument(format!("selection_tail_df: {e}")))?),
        None => None,
    };
    let mut row = vec![0.0; m];
    for i in 0..n {
        let s = if n_seg > 1 { rng.random_range(0..n_seg) } else { 0 };
        let shift = spec.segment_shift(s);
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = match &tails {
                Some(t) if selection[j] != 0.0 => rng.sample(t),
                _ => rng.sample(StandardNormal),
            };
            *v = z + shift * u[j];
        }
        let p = spec.propensity(&row);
        let di = u8::from(rng.random::<f64>() < p);
        let eps: f64 = rng.sample(StandardNormal);
        let gi = spec.baseline_outcome(&row);
        let ti = spec.segment_effect(s);
        y.push(gi + di as f64 * ti + spec.noise_scale(&row) * eps);
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
        d.push(di);
        tau.push(ti);
        e.push(p);
        g.push(gi);
        segment.push(s);
    }

    let treated: Vec<f64> = tau.iter().zip(&d).filter(|(_, &di)| di == 1).map(|(t, _)| *t).collect();
    let true_att = if treated.is_empty() {
        f64::NAN
    } else {
        treated.iter().sum::<f64>() / treated.len() as f64
    };
    let true_ate = tau.iter().sum::<f64>() / n as f64;
    let ds = Dataset::new((0..n).map(customer_id).collect(), feature_names(m), x, d, y)?;
    Ok((
        ds,
        DgpTruth {
            true_att,
            true_ate,
            per_customer_effect: tau,
            true_propensity: e,
            segment,
            baseline_outcome: g,
        },
    ))
}

/// Placebo-period analog: features are redrawn around each customer's own
/// draw (`X' = shift + rho (X - shift) + sqrt(1 - rho^2) xi`), treatment labels
/// are kept and the outcome is regenerated from `g` with zero effect.
pub fn make_placebo(ds: &Dataset, truth: &DgpTruth, spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    if ds.n() != truth.segment.len() || ds.n_features() != spec.m {
        return Err(Error::Argument("dataset does not match the DGP truth or spec".into()));
    }
    let rho = spec.placebo_persistence;
    let fresh = (1.0 - rho * rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, PLACEBO_STREAM));
    let (n, m) = (ds.n(), spec.m);
    let mut x = DMatrix::zeros(n, m);
    let mut y = Vec::with_capacity(n);
    let u = spec.segment_direction();
    let mut row = vec![0.0; m];
    for i in 0..n {
        let shift = spec.segment_shift(truth.segment[i]);
        for (j, v) in row.iter_mut().enumerate() {
            let centre = shift * u[j];
            let xi: f64 = rng.sample(StandardNormal);
            *v = centre + rho * (ds.features()[(i, j)] - centre) + fresh * xi;
        }
        let eps: f64 = rng.sample(StandardNormal);
        y.push(spec.baseline_outcome(&row) + spec.noise_scale(&row) * eps);
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Dataset::new(
        ds.customer_ids().to_vec(),
        ds.feature_names().to_vec(),
        x,
        ds.treatment().to_vec(),
        y,
    )
}
