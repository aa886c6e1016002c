//! Out-of-sample fit metrics for the nuisance models.

/// Coefficient of determination of `pred` against `y`, relative to the mean of `y`.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mu = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mu).powi(2)).sum();
    let sse: f64 = y.iter().zip(pred).map(|(v, p)| (v - p).powi(2)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - sse / sst
}

/// Rank-based (Mann-Whitney) area under the ROC curve, ties counted as one half.
///
/// Returns `None` when either class is absent.
pub fn auc(labels: &[f64], scores: &[f64]) -> Option<f64> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count() as f64;
    let n_neg = n as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] == 1.0).map(|k| ranks[k]).sum();
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}
