//! Coverage, efficiency and adaptiveness of a batch of prediction sets.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{Error, Result};

/// Prediction sets with the true label of each instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRun {
    pub sets: Vec<PredictionSet>,
    pub labels: Vec<usize>,
    pub alpha: f64,
    pub method_name: String,
}

impl EvaluationRun {
    pub fn new(
        sets: Vec<PredictionSet>,
        labels: Vec<usize>,
        alpha: f64,
        method_name: impl Into<String>,
    ) -> Result<Self> {
        if sets.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} prediction sets for {} labels",
                sets.len(),
                labels.len()
            )));
        }
        if sets.is_empty() {
            return Err(Error::EmptyRun);
        }
        Ok(Self {
            sets,
            labels,
            alpha,
            method_name: method_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    fn covered(&self, i: usize) -> bool {
        self.sets[i].contains(self.labels[i])
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.sets.is_empty() {
            Err(Error::EmptyRun)
        } else {
            Ok(())
        }
    }
}

/// Partition of set sizes into inclusive ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeBins {
    edges: Vec<(usize, usize)>,
}

impl SizeBins {
    /// Ranges must be non-empty, ordered, and tile `0..=classes` exactly.
    pub fn new(edges: Vec<(usize, usize)>, classes: usize) -> Result<Self> {
        let bins = Self { edges };
        bins.validate(classes)?;
        Ok(bins)
    }

    /// `0–1, 2–3, 4–6, 7–10, 11–K`, truncated at `K`.
    pub fn default_for(classes: usize) -> Self {
        let edges = [(0, 1), (2, 3), (4, 6), (7, 10), (11, usize::MAX)]
            .into_iter()
            .filter(|&(lo, _)| lo <= classes)
            .map(|(lo, hi)| (lo, hi.min(classes)))
            .collect();
        Self { edges }
    }

    /// A single bin holding every size.
    pub fn single(classes: usize) -> Self {
        Self {
            edges: vec![(0, classes)],
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let mut next = 0;
        for &(lo, hi) in &self.edges {
            if lo != next || hi < lo {
                return Err(Error::InvalidInput(format!(
                    "size bins must tile 0..={classes} in order; bad range {lo}-{hi}"
                )));
            }
            next = hi + 1;
        }
        if next != classes + 1 {
            return Err(Error::InvalidInput(format!(
                "size bins must cover 0..={classes}, they end at {}",
                next.saturating_sub(1)
            )));
        }
        Ok(())
    }

    fn bin_of(&self, size: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|&(lo, hi)| lo <= size && size <= hi)
    }
}

/// Count and coverage of one size bin; `coverage` is absent for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub lo: usize,
    pub hi: usize,
    pub n: usize,
    pub coverage: Option<f64>,
}

/// All metrics for one `(method, α)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub singleton_ratio: f64,
    pub singleton_coverage: Option<f64>,
    pub stratified: Vec<BinCoverage>,
    pub sscv: Option<f64>,
}

impl MetricsReport {
    pub fn compute(run: &EvaluationRun, bins: &SizeBins) -> Result<Self> {
        let (singleton_ratio, singleton_coverage) = singleton_stats(run)?;
        let stratified = size_stratified_coverage(run, bins)?;
        Ok(Self {
            n: run.len(),
            coverage: empirical_coverage(run)?,
            avg_set_size: avg_set_size(run)?,
            singleton_ratio,
            singleton_coverage,
            sscv: sscv_from_bins(&stratified, run.alpha),
            stratified,
        })
    }
}

/// Fraction of instances whose set contains the true label.
pub fn empirical_coverage(run: &EvaluationRun) -> Result<f64> {
    run.ensure_nonempty()?;
    let hits = (0..run.len()).filter(|&i| run.covered(i)).count();
    Ok(hits as f64 / run.len() as f64)
}

pub fn avg_set_size(run: &EvaluationRun) -> Result<f64> {
    run.ensure_nonempty()?;
    let total: usize = run.sets.iter().map(PredictionSet::size).sum();
    Ok(total as f64 / run.len() as f64)
}

/// Share of singleton sets and the coverage among them (absent when there
/// are none).
pub fn singleton_stats(run: &EvaluationRun) -> Result<(f64, Option<f64>)> {
    run.ensure_nonempty()?;
    let singles: Vec<usize> = (0..run.len())
        .filter(|&i| run.sets[i].size() == 1)
        .collect();
    let ratio = singles.len() as f64 / run.len() as f64;
    let coverage = if singles.is_empty() {
        None
    } else {
        let hits = singles.iter().filter(|&&i| run.covered(i)).count();
        Some(hits as f64 / singles.len() as f64)
    };
    Ok((ratio, coverage))
}

pub fn size_stratified_coverage(run: &EvaluationRun, bins: &SizeBins) -> Result<Vec<BinCoverage>> {
    run.ensure_nonempty()?;
    let mut counts = vec![(0usize, 0usize); bins.edges.len()];
    for i in 0..run.len() {
        let size = run.sets[i].size();
        let b = bins.bin_of(size).ok_or_else(|| {
            Error::InvalidInput(format!("set size {size} falls outside every size bin"))
        })?;
        counts[b].0 += 1;
        if run.covered(i) {
            counts[b].1 += 1;
        }
    }
    Ok(bins
        .edges
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), (n, hits))| BinCoverage {
            lo,
            hi,
            n,
            coverage: (n > 0).then(|| hits as f64 / n as f64),
        })
        .collect())
}

/// Size-stratified coverage violation: the largest `|cov_g − (1−α)|` over
/// non-empty bins.
pub fn sscv(run: &EvaluationRun, bins: &SizeBins) -> Result<f64> {
    let strat = size_stratified_coverage(run, bins)?;
    sscv_from_bins(&strat, run.alpha).ok_or(Error::EmptyRun)
}

fn sscv_from_bins(bins: &[BinCoverage], alpha: f64) -> Option<f64> {
    bins.iter()
        .filter_map(|b| b.coverage)
        .map(|c| (c - (1.0 - alpha)).abs())
        .reduce(f64::max)
}
