//! Seeded data splits and hyperparameter selection by average set size.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, predict_sets, LabeledLogitDataset};
use crate::error::{Error, Result};
use crate::scores::{RapsParams, ScoreKind};

/// γ values searched by opt-entmax.
pub const DEFAULT_GAMMA_GRID: [f64; 9] = [1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9];
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const DEFAULT_K_GRID: [usize; 4] = [1, 5, 10, 50];
/// Calibration / tuning proportions inside a calibration set.
pub const TUNING_FRACTIONS: [f64; 2] = [0.6, 0.4];

/// Proportions of a seeded partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = Self { fractions, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// The 60/40 calibration/tuning split.
    pub fn tuning(seed: u64) -> Self {
        Self {
            fractions: TUNING_FRACTIONS.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::InvalidFractions("no fractions given".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !f.is_finite() || **f <= 0.0) {
            return Err(Error::InvalidFractions(format!(
                "fraction {f} is not positive"
            )));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!("fractions sum to {total}")));
        }
        Ok(())
    }
}

/// Index partition of `0..n`: a seeded Fisher–Yates shuffle cut into
/// consecutive blocks of `⌊f·n⌋` items, the last block taking the remainder.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let parts = spec.fractions.len();
    if n < parts {
        return Err(Error::InsufficientData(format!(
            "{n} instances cannot fill {parts} parts"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);

    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for (i, f) in spec.fractions.iter().enumerate() {
        let len = if i + 1 == parts {
            n - start
        } else {
            ((f * n as f64).floor() as usize).min(n - start)
        };
        if len == 0 {
            return Err(Error::InsufficientData(format!(
                "part {i} of the split is empty for n = {n}"
            )));
        }
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

pub fn split(data: &LabeledLogitDataset, spec: &SplitSpec) -> Result<Vec<LabeledLogitDataset>> {
    split_indices(data.len(), spec)?
        .iter()
        .map(|part| data.select(part))
        .collect()
}

/// A tuned hyperparameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TunedParam {
    Gamma { gamma: f64 },
    Raps { lambda_reg: f64, k_reg: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub param: TunedParam,
    pub objective: f64,
}

/// Grid search outcome: every evaluated point and the minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub chosen: TunedParam,
    pub objective: f64,
    pub table: Vec<TableEntry>,
}

/// Picks the entry with the smallest objective; `table` must already be in
/// tie-break order so the first minimum wins.
fn select(table: Vec<TableEntry>) -> TuningResult {
    let best = table
        .iter()
        .fold(None::<&TableEntry>, |best, e| match best {
            Some(b) if b.objective <= e.objective => Some(b),
            _ => Some(e),
        })
        .expect("non-empty grid");
    TuningResult {
        chosen: best.param,
        objective: best.objective,
        table: table.clone(),
    }
}

fn tuning_parts(
    cal: &LabeledLogitDataset,
    spec: &SplitSpec,
) -> Result<(LabeledLogitDataset, LabeledLogitDataset)> {
    if spec.fractions.len() != 2 {
        return Err(Error::InvalidFractions(format!(
            "tuning needs two parts, got {}",
            spec.fractions.len()
        )));
    }
    let mut parts = split(cal, spec)?.into_iter();
    match (parts.next(), parts.next()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::InsufficientData(
            "tuning split produced an empty part".into(),
        )),
    }
}

/// Calibrate on `fit`, report the mean set size on `held_out`.
fn held_out_size(
    fit: &LabeledLogitDataset,
    held_out: &LabeledLogitDataset,
    kind: ScoreKind,
    alpha: f64,
) -> Result<f64> {
    let pred = calibrate(fit, kind, alpha)?;
    let sets = predict_sets(held_out.logits(), &pred)?;
    let total: usize = sets.iter().map(|s| s.size()).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// opt-entmax: choose γ minimizing the average set size on the tuning part.
/// Ties go to the smallest γ.
pub fn tune_gamma(
    cal: &LabeledLogitDataset,
    alpha: f64,
    grid: &[f64],
    spec: &SplitSpec,
) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("gamma grid is empty".into()));
    }
    for &g in grid {
        ScoreKind::entmax(g)?;
    }
    let (fit, held_out) = tuning_parts(cal, spec)?;
    let mut gammas = grid.to_vec();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let table = gammas
        .into_iter()
        .map(|gamma| {
            Ok(TableEntry {
                param: TunedParam::Gamma { gamma },
                objective: held_out_size(&fit, &held_out, ScoreKind::Entmax(gamma), alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select(table))
}

/// RAPS grid search with the deterministic score (`u = 1`).
pub fn tune_raps(
    cal: &LabeledLogitDataset,
    alpha: f64,
    lambda_grid: &[f64],
    k_grid: &[usize],
    spec: &SplitSpec,
) -> Result<TuningResult> {
    tune_raps_with(cal, alpha, lambda_grid, k_grid, spec, None)
}

/// RAPS grid search; `randomized_seed` switches on the randomized score.
/// Ties go to the lexicographically smallest `(λ_reg, k_reg)`.
pub fn tune_raps_with(
    cal: &LabeledLogitDataset,
    alpha: f64,
    lambda_grid: &[f64],
    k_grid: &[usize],
    spec: &SplitSpec,
    randomized_seed: Option<u64>,
) -> Result<TuningResult> {
    if lambda_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::InvalidInput("RAPS grids must be non-empty".into()));
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut ks = k_grid.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut pairs = Vec::with_capacity(lambdas.len() * ks.len());
    for &lambda_reg in &lambdas {
        for &k_reg in &ks {
            let mut params = RapsParams::new(lambda_reg, k_reg)?;
            if let Some(seed) = randomized_seed {
                params = params.randomized(seed);
            }
            pairs.push(params);
        }
    }

    let (fit, held_out) = tuning_parts(cal, spec)?;
    let table = pairs
        .into_iter()
        .map(|p| {
            Ok(TableEntry {
                param: TunedParam::Raps {
                    lambda_reg: p.lambda_reg,
                    k_reg: p.k_reg,
                },
                objective: held_out_size(&fit, &held_out, ScoreKind::Raps(p), alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(select(table))
}
