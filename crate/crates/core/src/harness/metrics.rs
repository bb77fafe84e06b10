//! Scalar summaries of a run.

/// `θ = Σ_t Σ_i −r_i(t) / N` from per-stage utility totals `Σ_i r_i(t)`.
pub fn compute_theta(stage_utility: &[f64], sus: usize) -> f64 {
    -stage_utility.iter().sum::<f64>() / sus as f64
}

/// Running θ after each stage.
pub fn theta_series(stage_utility: &[f64], sus: usize) -> Vec<f64> {
    stage_utility
        .iter()
        .scan(0.0, |acc, &u| {
            *acc -= u / sus as f64;
            Some(*acc)
        })
        .collect()
}

/// Running mean of the summed SU utility, `C(t)/t`, divided by the absolute
/// value of its final entry. Converges to −1 (or is identically 0 when no
/// utility was ever lost).
pub fn norm_cum_value(stage_utility: &[f64]) -> Vec<f64> {
    let mut cum = 0.0;
    let means: Vec<f64> = stage_utility
        .iter()
        .enumerate()
        .map(|(t, &u)| {
            cum += u;
            cum / (t + 1) as f64
        })
        .collect();
    let scale = means.last().map_or(0.0, |m| m.abs());
    if scale == 0.0 {
        return vec![0.0; means.len()];
    }
    means.into_iter().map(|m| m / scale).collect()
}

/// Number of stages after which `series` stays within `rel_tol·|final|` of
/// its final value for good. `None` for an empty series.
pub fn stages_to_criterion(series: &[f64], rel_tol: f64) -> Option<usize> {
    let last = *series.last()?;
    let band = rel_tol * last.abs();
    let outside = series.iter().rposition(|v| (v - last).abs() >= band && band > 0.0);
    Some(outside.map_or(1, |t| t + 2).min(series.len()))
}

/// Whether the last `window` fraction of `series` stays within
/// `rel_tol·|final|` of the final value.
pub fn cauchy_criterion(series: &[f64], window: f64, rel_tol: f64) -> bool {
    let Some(&last) = series.last() else {
        return false;
    };
    let start = series.len() - ((series.len() as f64 * window).ceil() as usize).min(series.len());
    series[start..].iter().all(|v| (v - last).abs() <= rel_tol * last.abs())
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
