//! Footprint comparison: Pearson correlation, mean error difference,
//! sampling-precision curves and pairwise matrices.
//!
//! Footprints are aligned over the union of their keys; a key missing from
//! one side counts as 0 there.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::accountant::{gen_footprint_optimized, AccountError, AccountingOptions, Footprint};
use crate::footprint::Summarizer;
use crate::model::{DevicePowerTrace, Duration, EventTrace, ModelError, PowerSample, Qtn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("correlation needs at least 2 keys in the union, got {0}")]
    TooFewKeys(usize),
    #[error("no sampling periods given")]
    NoPeriods,
    #[error("sampling period {period} µs is shorter than the base period {base} µs")]
    PeriodBelowBase { period: u64, base: u64 },
    #[error("no footprints given")]
    NoFootprints,
    #[error("a matrix needs at least 2 footprints, got {0}")]
    TooFewFootprints(usize),
    #[error(transparent)]
    Account(#[from] AccountError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Pcc,
    Med,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Pcc => "pcc",
            Metric::Med => "med",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    pub metric: Metric,
    /// `None` when the comparison is degenerate (zero variance for PCC).
    pub value: Option<f64>,
    /// Size of the key union.
    pub n_keys: usize,
}

impl ComparisonResult {
    pub fn degenerate(&self) -> bool {
        self.value.is_none()
    }
}

fn union_vectors(a: &Footprint, b: &Footprint) -> (Vec<f64>, Vec<f64>) {
    let keys: BTreeSet<&Qtn> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (a.get(k).unwrap_or(0.0), b.get(k).unwrap_or(0.0)))
        .unzip()
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|&e| e == v[0]);
    if constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson correlation of two footprints over their key union.
pub fn pcc(a: &Footprint, b: &Footprint) -> Result<ComparisonResult, SimilarityError> {
    let (x, y) = union_vectors(a, b);
    if x.len() < 2 {
        return Err(SimilarityError::TooFewKeys(x.len()));
    }
    Ok(ComparisonResult {
        metric: Metric::Pcc,
        value: pearson(&x, &y),
        n_keys: x.len(),
    })
}

/// Mean of `a[k] - b[k]` over the key union. An empty union gives 0.
pub fn med(a: &Footprint, b: &Footprint) -> ComparisonResult {
    let (x, y) = union_vectors(a, b);
    let n = x.len();
    let value = if n == 0 {
        0.0
    } else {
        x.iter().zip(&y).map(|(p, q)| p - q).sum::<f64>() / n as f64
    };
    ComparisonResult {
        metric: Metric::Med,
        value: Some(value),
        n_keys: n,
    }
}

/// Keeps the latest sample in each `period`-aligned bin of every device.
pub fn downsample(power: &DevicePowerTrace, period: Duration) -> Result<DevicePowerTrace, ModelError> {
    let mut out = DevicePowerTrace::new();
    for (device, samples) in power.iter() {
        let mut kept: Vec<PowerSample> = Vec::new();
        for s in samples {
            let bin = s.ts.0 / period.micros();
            match kept.last_mut() {
                Some(last) if last.ts.0 / period.micros() == bin => *last = *s,
                _ => kept.push(*s),
            }
        }
        out.insert(*device, kept)?;
    }
    Ok(out)
}

/// Accounting similarity under sparser sampling.
///
/// For each period the power trace is downsampled, re-accounted and
/// summarized, then correlated with the summarized footprint of the
/// original trace. A period equal to `base_period` reuses the original trace.
pub fn asss(
    trace: &EventTrace,
    power: &DevicePowerTrace,
    periods: &[Duration],
    base_period: Duration,
    opts: AccountingOptions,
    summarizer: &Summarizer,
) -> Result<Vec<(Duration, ComparisonResult)>, SimilarityError> {
    if periods.is_empty() {
        return Err(SimilarityError::NoPeriods);
    }
    if let Some(p) = periods.iter().find(|p| **p < base_period) {
        return Err(SimilarityError::PeriodBelowBase {
            period: p.micros(),
            base: base_period.micros(),
        });
    }
    let (base_tef, _) = gen_footprint_optimized(trace, power, opts)?;
    let base = summarizer.summarize(&base_tef);
    periods
        .iter()
        .map(|&period| {
            let stef = if period == base_period {
                base.clone()
            } else {
                let sparse = downsample(power, period)?;
                summarizer.summarize(&gen_footprint_optimized(trace, &sparse, opts)?.0)
            };
            Ok((period, pcc(&base, &stef)?))
        })
        .collect()
}

/// Element-wise mean over the key union.
pub fn mean_footprint(stefs: &[Footprint]) -> Footprint {
    let n = stefs.len() as f64;
    let mut sum = Footprint::new();
    for f in stefs {
        sum.merge(f);
    }
    sum.iter().map(|(k, v)| (k.clone(), v / n)).collect()
}

/// Accounting similarity as more runs are combined.
///
/// Entry `n` correlates the mean of the first `n` footprints with `base`.
pub fn assw(
    stefs: &[Footprint],
    base: &Footprint,
) -> Result<Vec<(usize, ComparisonResult)>, SimilarityError> {
    if stefs.is_empty() {
        return Err(SimilarityError::NoFootprints);
    }
    (1..=stefs.len())
        .map(|n| Ok((n, pcc(&mean_footprint(&stefs[..n]), base)?)))
        .collect()
}

/// Labeled square matrix of comparison results.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub metric: Metric,
    pub labels: Vec<String>,
    /// Row-major; `cells[i][j]` compares row `i` against column `j`.
    pub cells: Vec<Vec<ComparisonResult>>,
}

impl SimilarityMatrix {
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row][col].value
    }
}

/// Pairwise PCC of labeled footprints. Symmetric by construction.
pub fn stability_matrix(
    stefs: &[(String, Footprint)],
) -> Result<SimilarityMatrix, SimilarityError> {
    if stefs.len() < 2 {
        return Err(SimilarityError::TooFewFootprints(stefs.len()));
    }
    let n = stefs.len();
    let mut cells: Vec<Vec<Option<ComparisonResult>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = pcc(&stefs[i].1, &stefs[j].1)?;
            cells[i][j] = Some(r);
            cells[j][i] = Some(r);
        }
    }
    Ok(SimilarityMatrix {
        metric: Metric::Pcc,
        labels: stefs.iter().map(|(l, _)| l.clone()).collect(),
        cells: cells
            .into_iter()
            .map(|row| row.into_iter().map(|c| c.expect("filled")).collect())
            .collect(),
    })
}

/// Pairwise MED; cell `(i, j)` is `med(row_i, col_j)`, so the matrix is antisymmetric.
pub fn med_matrix(stefs: &[(String, Footprint)]) -> Result<SimilarityMatrix, SimilarityError> {
    if stefs.len() < 2 {
        return Err(SimilarityError::TooFewFootprints(stefs.len()));
    }
    let n = stefs.len();
    let mut cells = vec![vec![med(&Footprint::new(), &Footprint::new()); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = med(&stefs[i].1, &stefs[j].1);
            cells[i][j] = r;
            cells[j][i] = ComparisonResult {
                value: r.value.map(|v| -v),
                ..r
            };
        }
        cells[i][i] = med(&stefs[i].1, &stefs[i].1);
    }
    Ok(SimilarityMatrix {
        metric: Metric::Med,
        labels: stefs.iter().map(|(l, _)| l.clone()).collect(),
        cells,
    })
}
