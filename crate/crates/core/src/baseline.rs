//! Propensity binning with per-bin regression adjustment, the traditional
//! baseline the DML estimate is compared against.
//!
//! Customers are split into propensity-quantile bins. In each bin a ridge
//! model fitted on controls predicts the treated customers' counterfactual
//! outcome; the bin delta is the mean of actual minus counterfactual over
//! treated customers, and the ATT is the treated-count weighted average of
//! bin deltas. Confidence intervals come from a percentile bootstrap that
//! resamples customers and repeats the whole procedure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::nuisance::fit_ridge;

/// Controls needed to fit a bin's ridge model.
pub const MIN_BIN_CONTROLS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoOptions {
    pub n_bins: usize,
    pub n_bootstrap: usize,
    pub lambda: f64,
    pub standardize: bool,
    pub level: f64,
    pub seed: u64,
}

impl Default for PoOptions {
    fn default() -> Self {
        PoOptions {
            n_bins: 5,
            n_bootstrap: 200,
            lambda: 1.0,
            standardize: true,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub e_lo: f64,
    pub e_hi: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub counterfactual_mean: f64,
    pub actual_mean: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoEstimate {
    pub att: f64,
    pub bin_estimates: Vec<BinEstimate>,
    pub ci_bootstrap: Option<(f64, f64)>,
    pub n_bootstrap: usize,
    /// Replicates whose resample could not be estimated (e.g. an arm vanished).
    pub bootstrap_failures: usize,
    pub merges: Vec<String>,
    pub lambda: f64,
}

struct View<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    d: &'a [u8],
    e: &'a [f64],
    /// Rank of each row's customer id, for order-independent tie-breaking.
    id_rank: &'a [usize],
}

struct PointEstimate {
    att: f64,
    bins: Vec<BinEstimate>,
    merges: Vec<String>,
}

/// Splits `rows` (sorted by propensity) into quantile bins and merges any bin
/// lacking treated customers or enough controls into a neighbour.
fn make_bins(rows: &[usize], d: &[u8], n_bins: usize, merges: &mut Vec<String>) -> Result<Vec<Vec<usize>>> {
    let n = rows.len();
    let mut bins: Vec<Vec<usize>> = (0..n_bins)
        .map(|b| rows[b * n / n_bins..(b + 1) * n / n_bins].to_vec())
        .filter(|b| !b.is_empty())
        .collect();
    let valid = |b: &[usize]| {
        let t = b.iter().filter(|&&i| d[i] == 1).count();
        t >= 1 && b.len() - t >= MIN_BIN_CONTROLS
    };
    while let Some(pos) = bins.iter().position(|b| !valid(b)) {
        if bins.len() == 1 {
            return Err(Error::Estimation(
                "propensity bins cannot be merged into a bin with both arms".into(),
            ));
        }
        let into = if pos + 1 < bins.len() { pos + 1 } else { pos - 1 };
        merges.push(format!("bin {pos} merged into neighbour {into} (missing treated or controls)"));
        let moved = bins.remove(pos);
        let target = if into > pos { into - 1 } else { into };
        let merged = &mut bins[target];
        if into > pos {
            let tail = std::mem::take(merged);
            *merged = moved;
            merged.extend(tail);
        } else {
            merged.extend(moved);
        }
    }
    Ok(bins)
}

fn point_estimate(v: &View, rows: &[usize], opts: &PoOptions) -> Result<PointEstimate> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|&a, &b| {
        v.e[a]
            .total_cmp(&v.e[b])
            .then(v.id_rank[a].cmp(&v.id_rank[b]))
    });
    let mut merges = Vec::new();
    let bins = make_bins(&sorted, v.d, opts.n_bins, &mut merges)?;
    let mut estimates = Vec::with_capacity(bins.len());
    for bin in &bins {
        let (treated, control): (Vec<usize>, Vec<usize>) = bin.iter().partition(|&&i| v.d[i] == 1);
        let xc = v.x.select_rows(control.iter());
        let yc: Vec<f64> = control.iter().map(|&i| v.y[i]).collect();
        let model = fit_ridge(&xc, &yc, opts.lambda, opts.standardize)?;
        let cf = model.predict(&v.x.select_rows(treated.iter()));
        let nt = treated.len() as f64;
        let cf_mean = cf.iter().sum::<f64>() / nt;
        let actual = treated.iter().map(|&i| v.y[i]).sum::<f64>() / nt;
        estimates.push(BinEstimate {
            e_lo: v.e[bin[0]],
            e_hi: v.e[*bin.last().expect("non-empty bin")],
            n_treated: treated.len(),
            n_control: control.len(),
            counterfactual_mean: cf_mean,
            actual_mean: actual,
            delta: actual - cf_mean,
        });
    }
    let total: usize = estimates.iter().map(|b| b.n_treated).sum();
    let att = estimates
        .iter()
        .map(|b| b.n_treated as f64 * b.delta)
        .sum::<f64>()
        / total as f64;
    Ok(PointEstimate {
        att,
        bins: estimates,
        merges,
    })
}

/// Linear-interpolation sample quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn estimate_po(ds: &Dataset, e_hat: &[f64], opts: &PoOptions) -> Result<PoEstimate> {
    if e_hat.len() != ds.n() {
        return Err(Error::Argument("propensity vector does not match dataset".into()));
    }
    if opts.n_bins < 1 {
        return Err(Error::Argument("n_bins must be at least 1".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Argument(format!("level must lie in (0, 1), got {}", opts.level)));
    }
    ds.require_both_arms()?;
    let mut by_id: Vec<usize> = (0..ds.n()).collect();
    by_id.sort_by(|&a, &b| ds.customer_ids()[a].cmp(&ds.customer_ids()[b]));
    let mut id_rank = vec![0; ds.n()];
    for (r, &i) in by_id.iter().enumerate() {
        id_rank[i] = r;
    }
    let view = View {
        x: ds.features(),
        y: ds.outcome(),
        d: ds.treatment(),
        e: e_hat,
        id_rank: &id_rank,
    };
    let all: Vec<usize> = (0..ds.n()).collect();
    let point = point_estimate(&view, &all, opts)?;

    let (ci, failures) = if opts.n_bootstrap == 0 {
        (None, 0)
    } else {
        let n = ds.n();
        let reps: Vec<Option<f64>> = (0..opts.n_bootstrap)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64));
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                point_estimate(&view, &rows, opts).ok().map(|p| p.att)
            })
            .collect();
        let mut ok: Vec<f64> = reps.iter().flatten().copied().collect();
        let failures = reps.len() - ok.len();
        if ok.is_empty() {
            return Err(Error::Estimation("every bootstrap replicate failed".into()));
        }
        ok.sort_by(f64::total_cmp);
        let alpha = 1.0 - opts.level;
        let lo = quantile_sorted(&ok, alpha / 2.0).min(point.att);
        let hi = quantile_sorted(&ok, 1.0 - alpha / 2.0).max(point.att);
        (Some((lo, hi)), failures)
    };

    Ok(PoEstimate {
        att: point.att,
        bin_estimates: point.bins,
        ci_bootstrap: ci,
        n_bootstrap: opts.n_bootstrap,
        bootstrap_failures: failures,
        merges: point.merges,
        lambda: opts.lambda,
    })
}
