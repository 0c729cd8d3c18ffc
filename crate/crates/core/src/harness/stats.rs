use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricsTimeline;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    /// Episode index of the k-th evaluation at or above the threshold;
    /// `None` means never attained.
    pub episodes: Option<u64>,
    pub threshold: f64,
    pub k: usize,
}

/// Episode of the `k`-th evaluation point scoring at least `threshold`.
pub fn sample_efficiency(timeline: &MetricsTimeline, threshold: f64, k: usize) -> EfficiencyResult {
    assert!(k >= 1, "k must be at least 1");
    let episodes = timeline
        .points
        .iter()
        .filter(|p| p.score >= threshold)
        .nth(k - 1)
        .map(|p| p.episode);
    EfficiencyResult { episodes, threshold, k }
}

/// Mean with a 95% Student-t interval over the values that are present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    /// `None` when no run attained.
    pub mean: Option<f64>,
    /// `t_{0.975, m−1}·s/√m` over the `m` attained values; `None` when `m < 2`.
    pub half_width: Option<f64>,
    /// Runs contributing a value.
    pub attained: usize,
    /// All runs, attained or not.
    pub n: usize,
}

fn t_interval(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let t = StudentsT::new(0.0, 1.0, m - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, Some(t * var.sqrt() / m.sqrt()))
}

/// Mean and 95% t-interval half-width of `values`; needs `n ≥ 2`.
pub fn aggregate(values: &[f64]) -> Result<AggregateResult> {
    if values.len() < 2 {
        return Err(Error::Usage(format!("aggregate needs at least 2 values, got {}", values.len())));
    }
    let (mean, half_width) = t_interval(values);
    Ok(AggregateResult {
        mean: Some(mean),
        half_width,
        attained: values.len(),
        n: values.len(),
    })
}

/// Like [`aggregate`], but `None` entries (never attained) are counted and
/// left out of the mean and interval.
pub fn aggregate_attainment(values: &[Option<f64>]) -> Result<AggregateResult> {
    if values.len() < 2 {
        return Err(Error::Usage(format!("aggregate needs at least 2 values, got {}", values.len())));
    }
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let (mean, half_width) = if present.is_empty() {
        (None, None)
    } else {
        let (m, h) = t_interval(&present);
        (Some(m), h)
    };
    Ok(AggregateResult {
        mean,
        half_width,
        attained: present.len(),
        n: values.len(),
    })
}

/// Median with absent values ranked as +∞; `None` when the median itself is +∞.
pub fn median_with_never(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}
