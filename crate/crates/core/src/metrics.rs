//! Pixel-wise evaluation, the soft-Dice objective and boxplot summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::percentile;
use crate::types::{BinaryMask, Confusion, MetricsReport, ProbabilityMask, Raster};

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `num / den`, with the empty case `0 / 0` scored as perfect.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(c: Confusion) -> MetricsReport {
    MetricsReport {
        counts: c,
        dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricsReport> {
    confusion(pred, gt).map(compute_metrics)
}

/// Soft-Dice loss `1 - (2 Σpg + eps) / (Σp + Σg + eps)` and its gradient
/// with respect to each prediction, accumulated in double precision.
pub fn soft_dice(pred: &[f64], gt: &[f64], eps: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), gt.len());
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    let num = 2.0 * inter + eps;
    let den = sum_p + sum_g + eps;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = gt.iter().map(|&g| (num - 2.0 * g * den) / den2).collect();
    (loss, grad)
}

pub fn soft_dice_loss(pred: &ProbabilityMask, gt: &BinaryMask, eps: f64) -> Result<(f64, Vec<f64>)> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let p: Vec<f64> = pred.values().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = gt.bits().iter().map(|&b| b as f64).collect();
    Ok(soft_dice(&p, &g, eps))
}

/// Foreground where probability ≥ `t`.
pub fn threshold(pred: &ProbabilityMask, t: f32) -> BinaryMask {
    let bits = pred.values().iter().map(|&v| u8::from(v >= t)).collect();
    BinaryMask::new(pred.width(), pred.height(), bits).expect("same geometry")
}

/// Five-number summary plus mean and Tukey whiskers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to summarize"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = percentile(&v, 25.0);
    let median = percentile(&v, 50.0);
    let q3 = percentile(&v, 75.0);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = v.iter().copied().find(|&x| x >= lo_fence).unwrap_or(q1);
    let whisker_high = v.iter().rev().copied().find(|&x| x <= hi_fence).unwrap_or(q3);
    Ok(SummaryStats {
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median,
        q1,
        q3,
        min: v[0],
        max: v[v.len() - 1],
        whisker_low,
        whisker_high,
    })
}

/// Values outside the whiskers.
pub fn outliers(values: &[f64], s: &SummaryStats) -> Vec<f64> {
    values
        .iter()
        .copied()
        .filter(|&x| x < s.whisker_low || x > s.whisker_high)
        .collect()
}

/// How per-image results are combined into one number per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-image metrics.
    #[default]
    Mean,
    /// Metrics of the summed confusion counts.
    Pooled,
}

pub fn aggregate(reports: &[MetricsReport], mode: Aggregation) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no per-image metrics to aggregate"));
    }
    let counts = reports
        .iter()
        .fold(Confusion::default(), |acc, r| acc + r.counts);
    Ok(match mode {
        Aggregation::Pooled => compute_metrics(counts),
        Aggregation::Mean => {
            let n = reports.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            MetricsReport {
                counts,
                dsc: mean(|r| r.dsc),
                jaccard: mean(|r| r.jaccard),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                specificity: mean(|r| r.specificity),
            }
        }
    })
}
