//! Inverse-propensity weights, propensity rescaling, common support and trimming.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::CrossFitResult;

/// Upper bound applied to rescaled propensities so ATT control weights stay finite.
pub const RESCALE_CEILING: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "ATT")]
    Att,
}

/// Which estimand to target and how to filter the sample before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimandSpec {
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub rescale: bool,
    #[serde(default = "default_true")]
    pub common_support: bool,
}

fn default_estimand() -> Estimand {
    Estimand::Att
}

fn default_alpha() -> f64 {
    0.001
}

fn default_true() -> bool {
    true
}

impl Default for EstimandSpec {
    fn default() -> Self {
        EstimandSpec {
            estimand: Estimand::Att,
            alpha: 0.001,
            rescale: true,
            common_support: true,
        }
    }
}

impl EstimandSpec {
    /// Plain IPW on the raw propensities: no rescaling, support filter or trimming.
    pub fn unfiltered(estimand: Estimand) -> Self {
        EstimandSpec {
            estimand,
            alpha: 0.0,
            rescale: false,
            common_support: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 0.5) {
            return Err(Error::Argument(format!(
                "trimming threshold alpha must lie in [0, 0.5), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Customers removed by each filtering step in one treatment arm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmDrops {
    pub common_support: usize,
    pub trimming: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropLog {
    pub treated: ArmDrops,
    pub control: ArmDrops,
}

impl DropLog {
    fn arm_mut(&mut self, d: u8) -> &mut ArmDrops {
        if d == 1 {
            &mut self.treated
        } else {
            &mut self.control
        }
    }

    pub fn total(&self) -> usize {
        self.treated.common_support
            + self.treated.trimming
            + self.control.common_support
            + self.control.trimming
    }
}

/// Estimation sample after support filtering and trimming, with IPW weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub kept_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub e_scaled: Vec<f64>,
    pub drop_log: DropLog,
    pub spec: EstimandSpec,
}

impl WeightedSample {
    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }
}

/// Scales propensities by `mean(D) / mean(e)` so their mean equals the treated share.
pub fn rescale_propensities(e_hat: &[f64], d: &[u8]) -> Result<Vec<f64>> {
    check_propensities(e_hat)?;
    if e_hat.len() != d.len() || e_hat.is_empty() {
        return Err(Error::Argument("propensity and treatment lengths differ".into()));
    }
    let n = e_hat.len() as f64;
    let d_bar = d.iter().map(|&v| v as f64).sum::<f64>() / n;
    let e_bar = e_hat.iter().sum::<f64>() / n;
    let factor = d_bar / e_bar;
    Ok(e_hat
        .iter()
        .map(|&e| (factor * e).min(RESCALE_CEILING))
        .collect())
}

fn check_propensities(e: &[f64]) -> Result<()> {
    if let Some(bad) = e.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Argument(format!(
            "propensities must lie strictly inside (0, 1), found {bad}"
        )));
    }
    Ok(())
}

/// Horvitz-Thompson style weight of a single customer.
pub fn ipw_weight(e: f64, d: u8, estimand: Estimand) -> f64 {
    let d = d as f64;
    match estimand {
        Estimand::Ate => d / e + (1.0 - d) / (1.0 - e),
        Estimand::Att => d + (1.0 - d) * e / (1.0 - e),
    }
}

pub fn ipw_weights(e: &[f64], d: &[u8], estimand: Estimand) -> Result<Vec<f64>> {
    check_propensities(e)?;
    if e.len() != d.len() {
        return Err(Error::Argument("propensity and treatment lengths differ".into()));
    }
    Ok(e.iter().zip(d).map(|(&e, &d)| ipw_weight(e, d, estimand)).collect())
}

/// Rescale, restrict to common support, trim to `[alpha, 1 - alpha]`, then weight.
pub fn apply_support_and_trim(cf: &CrossFitResult, spec: &EstimandSpec) -> Result<WeightedSample> {
    spec.validate()?;
    let d = &cf.treatment;
    let e = if spec.rescale {
        rescale_propensities(&cf.e_hat, d)?
    } else {
        check_propensities(&cf.e_hat)?;
        cf.e_hat.clone()
    };
    let mut drop_log = DropLog::default();
    let mut alive: Vec<usize> = (0..e.len()).collect();

    if spec.common_support {
        let range = |t: u8| {
            alive
                .iter()
                .filter(|&&i| d[i] == t)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(e[i]), hi.max(e[i]))
                })
        };
        let (lo_t, hi_t) = range(1);
        let (lo_c, hi_c) = range(0);
        let (lo, hi) = (lo_t.max(lo_c), hi_t.min(hi_c));
        alive.retain(|&i| {
            let keep = e[i] >= lo && e[i] <= hi;
            if !keep {
                drop_log.arm_mut(d[i]).common_support += 1;
            }
            keep
        });
    }

    if spec.alpha > 0.0 {
        let (lo, hi) = (spec.alpha, 1.0 - spec.alpha);
        alive.retain(|&i| {
            let keep = e[i] >= lo && e[i] <= hi;
            if !keep {
                drop_log.arm_mut(d[i]).trimming += 1;
            }
            keep
        });
    }

    let treated = alive.iter().filter(|&&i| d[i] == 1).count();
    if treated == 0 || treated == alive.len() {
        return Err(Error::Estimation(format!(
            "no {} customers left after support filtering and trimming (drop log: {:?})",
            if treated == 0 { "treated" } else { "control" },
            drop_log
        )));
    }
    let e_scaled: Vec<f64> = alive.iter().map(|&i| e[i]).collect();
    let weights = alive
        .iter()
        .map(|&i| ipw_weight(e[i], d[i], spec.estimand))
        .collect();
    Ok(WeightedSample {
        kept_indices: alive,
        weights,
        e_scaled,
        drop_log,
        spec: *spec,
    })
}
