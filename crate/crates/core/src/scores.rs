//! Non-conformity scores.
//!
//! The rank-based family scores a label by the δ-norm of the gaps between it
//! and every label ranked above it, with `δ = 1/(γ−1)`:
//!
//! * `Sparsemax` (δ = 1): plain sum of gaps,
//! * `Entmax(γ)` (δ ∈ (1, ∞)): δ-norm of gaps,
//! * `LogMargin` (δ = ∞): the largest gap, `z_(1) − z_y`.
//!
//! Each is zero exactly for the top-ranked label, non-decreasing in rank, and
//! positively homogeneous in `z`, which is what lets the calibrated quantile be
//! read as an entmax temperature. `InvProb` and `Raps` are softmax baselines.
//!
//! All rank-based quantities use one ordering: descending by score, ties to
//! the lower label index.

use serde::{Deserialize, Serialize};

use crate::activations::{softmax, LogitVector};
use crate::error::{Error, Result};

/// Regularization settings for (randomized) adaptive prediction sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RapsParams {
    pub lambda_reg: f64,
    pub k_reg: usize,
    #[serde(default)]
    pub randomized: bool,
    #[serde(default)]
    pub rng_seed: u64,
}

impl RapsParams {
    pub fn new(lambda_reg: f64, k_reg: usize) -> Result<Self> {
        let p = Self {
            lambda_reg,
            k_reg,
            randomized: false,
            rng_seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn randomized(mut self, rng_seed: u64) -> Self {
        self.randomized = true;
        self.rng_seed = rng_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda_reg.is_finite() || self.lambda_reg < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda_reg must be finite and non-negative, got {}",
                self.lambda_reg
            )));
        }
        if self.k_reg == 0 {
            return Err(Error::InvalidInput("k_reg must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which non-conformity score a predictor uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreKind {
    Sparsemax,
    /// γ strictly inside `(1, 2)`.
    Entmax(f64),
    LogMargin,
    InvProb,
    Raps(RapsParams),
}

impl ScoreKind {
    pub fn entmax(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 1.0 && gamma < 2.0 {
            Ok(ScoreKind::Entmax(gamma))
        } else {
            Err(Error::InvalidGamma(gamma))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreKind::Entmax(g) => ScoreKind::entmax(*g).map(|_| ()),
            ScoreKind::Raps(p) => p.validate(),
            _ => Ok(()),
        }
    }

    /// Identifier used in serialized predictors.
    pub fn tag(&self) -> &'static str {
        match self {
            ScoreKind::Sparsemax => "sparsemax",
            ScoreKind::Entmax(_) => "entmax",
            ScoreKind::LogMargin => "log_margin",
            ScoreKind::InvProb => "inv_prob",
            ScoreKind::Raps(_) => "raps",
        }
    }

    /// The γ of the entmax transformation this score is tied to, if any.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            ScoreKind::Sparsemax => Some(2.0),
            ScoreKind::Entmax(g) => Some(*g),
            _ => None,
        }
    }

    /// `δ = 1/(γ−1)` for the entmax-backed kinds.
    pub fn delta(&self) -> Option<f64> {
        self.gamma().map(delta_of)
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self, ScoreKind::Raps(p) if p.randomized)
    }

    /// Score of label `y`. `u` is only read by `Raps`.
    pub fn score(&self, z: &LogitVector, y: usize, u: f64) -> Result<f64> {
        self.validate()?;
        check_u(u)?;
        Ok(RankedLogits::new(z).score(self, check_label(z, y)?, u))
    }
}

fn delta_of(gamma: f64) -> f64 {
    1.0 / (gamma - 1.0)
}

fn check_label(z: &LogitVector, y: usize) -> Result<usize> {
    if y < z.len() {
        Ok(y)
    } else {
        Err(Error::LabelOutOfRange {
            label: y,
            classes: z.len(),
        })
    }
}

fn check_u(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "randomization u must lie in [0, 1], got {u}"
        )))
    }
}

/// 1-based position of a label in the descending order of `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRank(pub usize);

/// `k(y) = 1 + #{j : z_j > z_y} + #{j < y : z_j = z_y}`.
pub fn rank_of_label(z: &LogitVector, y: usize) -> Result<LabelRank> {
    let y = check_label(z, y)?;
    let v = z.values();
    let zy = v[y];
    let above = v
        .iter()
        .enumerate()
        .filter(|&(j, &zj)| zj > zy || (zj == zy && j < y))
        .count();
    Ok(LabelRank(above + 1))
}

/// Sum of gaps to every higher-ranked label, `Σ_{k < k(y)} (z_(k) − z_y)`.
pub fn score_sparsemax(z: &LogitVector, y: usize) -> Result<f64> {
    ScoreKind::Sparsemax.score(z, y, 1.0)
}

/// δ-norm of the gaps above `y`, `δ = 1/(γ−1)`, for γ in `(1, 2]`.
/// At γ = 2 this is [`score_sparsemax`], bit for bit.
pub fn score_entmax(z: &LogitVector, y: usize, gamma: f64) -> Result<f64> {
    let kind = if gamma == 2.0 {
        ScoreKind::Sparsemax
    } else {
        ScoreKind::entmax(gamma)?
    };
    kind.score(z, y, 1.0)
}

/// `z_(1) − z_y`.
pub fn score_log_margin(z: &LogitVector, y: usize) -> Result<f64> {
    ScoreKind::LogMargin.score(z, y, 1.0)
}

/// `1 − softmax(z)_y`.
pub fn score_inv_prob(z: &LogitVector, y: usize) -> Result<f64> {
    ScoreKind::InvProb.score(z, y, 1.0)
}

/// Regularized APS: probability mass ranked strictly above `y`, plus `u`
/// times the mass of `y`, plus `λ·max(0, o(y) − k_reg)`.
pub fn score_raps(z: &LogitVector, y: usize, params: &RapsParams, u: f64) -> Result<f64> {
    ScoreKind::Raps(*params).score(z, y, u)
}

/// One instance's logits sorted once, so that any number of labels can be
/// scored against the same ordering.
#[derive(Debug, Clone)]
pub struct RankedLogits {
    /// Label at each 0-based rank position.
    order: Vec<usize>,
    /// Position of each label in `order`.
    position: Vec<usize>,
    sorted: Vec<f64>,
    /// Softmax probabilities in rank order.
    sorted_probs: Vec<f64>,
    /// `prob_prefix[i]` is the mass of the first `i` ranked labels.
    prob_prefix: Vec<f64>,
}

impl RankedLogits {
    pub fn new(z: &LogitVector) -> Self {
        let order = z.descending_order();
        let mut position = vec![0; order.len()];
        for (pos, &label) in order.iter().enumerate() {
            position[label] = pos;
        }
        let sorted = order.iter().map(|&i| z.values()[i]).collect();
        let probs = softmax(z).probs;
        let sorted_probs: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
        let mut prob_prefix = Vec::with_capacity(sorted_probs.len() + 1);
        let mut acc = 0.0;
        prob_prefix.push(acc);
        for p in &sorted_probs {
            acc += p;
            prob_prefix.push(acc);
        }
        Self {
            order,
            position,
            sorted,
            sorted_probs,
            prob_prefix,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.order.len()
    }

    /// Labels from highest to lowest score.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, label: usize) -> LabelRank {
        LabelRank(self.position[label] + 1)
    }

    /// Score of the label sitting at 0-based rank position `pos`.
    pub fn score_at(&self, kind: &ScoreKind, pos: usize, u: f64) -> f64 {
        match kind {
            ScoreKind::Sparsemax => gap_sum(&self.sorted, pos),
            ScoreKind::Entmax(g) => gap_norm(&self.sorted, pos, delta_of(*g)),
            ScoreKind::LogMargin => self.sorted[0] - self.sorted[pos],
            ScoreKind::InvProb => 1.0 - self.sorted_probs[pos],
            ScoreKind::Raps(p) => {
                let penalty = p.lambda_reg * (pos + 1).saturating_sub(p.k_reg) as f64;
                self.prob_prefix[pos] + u * self.sorted_probs[pos] + penalty
            }
        }
    }

    pub fn score(&self, kind: &ScoreKind, label: usize, u: f64) -> f64 {
        self.score_at(kind, self.position[label], u)
    }
}

fn gap_sum(sorted: &[f64], pos: usize) -> f64 {
    let zy = sorted[pos];
    sorted[..pos].iter().map(|zk| zk - zy).sum()
}

/// `(Σ_{k<pos} (z_(k) − z_(pos))^δ)^(1/δ)`, evaluated relative to the largest
/// gap so that large δ cannot overflow.
fn gap_norm(sorted: &[f64], pos: usize, delta: f64) -> f64 {
    if delta == 1.0 {
        return gap_sum(sorted, pos);
    }
    let zy = sorted[pos];
    let largest = sorted[0] - zy;
    if largest <= 0.0 {
        return 0.0;
    }
    let acc: f64 = sorted[..pos]
        .iter()
        .map(|zk| ((zk - zy) / largest).powf(delta))
        .sum();
    largest * acc.powf(1.0 / delta)
}
