//! Split conformal calibration and prediction sets.
//!
//! Calibration computes one score per held-out `(z, y)` pair and keeps the
//! `⌈(n+1)(1−α)⌉`-th smallest as the threshold `q̂`. A test point's prediction
//! set is every label whose score is at most `q̂`.
//!
//! For the entmax-backed scores the same set is the support of
//! `γ-entmax(β·z)` with inverse temperature `β = δ/q̂`, so `q̂` doubles as a
//! temperature `β⁻¹ = q̂/δ`. [`support_set_via_entmax`] computes that support
//! directly from the activation, independent of the scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::activations::{entmax, EntmaxConfig, LogitVector};
use crate::error::{Error, Result};
use crate::scores::{RankedLogits, RapsParams, ScoreKind};

/// Logit vectors paired with their true labels, all with the same class count.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLogitDataset {
    instances: Vec<(LogitVector, usize)>,
    classes: usize,
}

impl LabeledLogitDataset {
    pub fn new(instances: Vec<(LogitVector, usize)>) -> Result<Self> {
        let classes = match instances.first() {
            Some((z, _)) => z.len(),
            None => return Err(Error::EmptyCalibration),
        };
        for (z, y) in &instances {
            if z.len() != classes {
                return Err(Error::DimensionMismatch {
                    expected: classes,
                    actual: z.len(),
                });
            }
            if *y >= classes {
                return Err(Error::LabelOutOfRange { label: *y, classes });
            }
        }
        Ok(Self { instances, classes })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn instances(&self) -> &[(LogitVector, usize)] {
        &self.instances
    }

    pub fn logits(&self) -> impl Iterator<Item = &LogitVector> {
        self.instances.iter().map(|(z, _)| z)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|(_, y)| *y).collect()
    }

    /// The instances at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.instances[i].clone()).collect())
    }
}

/// Labels output for one test instance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet {
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self { labels }
    }

    pub fn full(classes: usize) -> Self {
        Self {
            labels: (0..classes).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.labels.iter().all(|l| other.contains(*l))
    }
}

/// `⌈(n+1)(1−α)⌉`-th smallest score, or `+∞` when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "calibration score {i} is not finite"
        )));
    }
    let n = scores.len();
    let rank = quantile_rank(n, alpha);
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// `⌈(n+1)(1−α)⌉`, with a little slack so that products such as
/// `10 · 0.9 = 9.000000000000002` do not round up a whole rank.
fn quantile_rank(n: usize, alpha: f64) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha);
    (target - 1e-9).ceil().max(1.0) as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// A score kind with its calibrated threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPredictor {
    pub score_kind: ScoreKind,
    pub alpha: f64,
    pub q_hat: f64,
    /// Entmax temperature `q̂/δ`, present for the entmax-backed kinds.
    pub beta_inv: Option<f64>,
    pub calib_n: usize,
    /// Class count of the calibration data; 0 when unknown.
    pub classes: usize,
}

impl CalibratedPredictor {
    /// Builds a predictor from an already known threshold.
    pub fn from_threshold(
        score_kind: ScoreKind,
        alpha: f64,
        q_hat: f64,
        calib_n: usize,
        classes: usize,
    ) -> Result<Self> {
        score_kind.validate()?;
        check_alpha(alpha)?;
        if q_hat.is_nan() || q_hat < 0.0 {
            return Err(Error::InvalidInput(format!(
                "threshold must be non-negative, got {q_hat}"
            )));
        }
        let beta_inv = score_kind.delta().map(|delta| q_hat / delta);
        Ok(Self {
            score_kind,
            alpha,
            q_hat,
            beta_inv,
            calib_n,
            classes,
        })
    }

    /// Inverse temperature `β = δ/q̂` for the entmax-backed kinds.
    pub fn beta(&self) -> Option<f64> {
        self.beta_inv.map(|t| 1.0 / t)
    }

    /// Randomization draws for scoring a sequence of test instances.
    pub fn test_randomization(&self) -> Randomization {
        Randomization::for_kind(&self.score_kind, 1)
    }
}

/// Source of the `u` term of randomized RAPS; constant 1 otherwise.
#[derive(Debug, Clone)]
pub struct Randomization(Option<ChaCha8Rng>);

impl Randomization {
    fn for_kind(kind: &ScoreKind, stream: u64) -> Self {
        match kind {
            ScoreKind::Raps(p) if p.randomized => {
                let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
                rng.set_stream(stream);
                Self(Some(rng))
            }
            _ => Self(None),
        }
    }

    pub fn next_u(&mut self) -> f64 {
        match &mut self.0 {
            Some(rng) => rng.gen::<f64>(),
            None => 1.0,
        }
    }
}

/// Scores every calibration pair (true label only).
pub fn calibration_scores(cal: &LabeledLogitDataset, kind: &ScoreKind) -> Result<Vec<f64>> {
    kind.validate()?;
    let mut rand = Randomization::for_kind(kind, 0);
    Ok(cal
        .instances()
        .iter()
        .map(|(z, y)| RankedLogits::new(z).score(kind, *y, rand.next_u()))
        .collect())
}

/// Scores the calibration set and fixes `q̂`; for the entmax-backed kinds
/// also records the matching temperature.
pub fn calibrate(
    cal: &LabeledLogitDataset,
    kind: ScoreKind,
    alpha: f64,
) -> Result<CalibratedPredictor> {
    check_alpha(alpha)?;
    let scores = calibration_scores(cal, &kind)?;
    let q_hat = conformal_quantile(&scores, alpha)?;
    CalibratedPredictor::from_threshold(kind, alpha, q_hat, cal.len(), cal.num_classes())
}

/// `{y : s(z, y) ≤ q̂}`. Randomized RAPS needs a `u`; use
/// [`predict_set_with_u`] or [`predict_sets`] for it.
pub fn predict_set(z: &LogitVector, pred: &CalibratedPredictor) -> Result<PredictionSet> {
    if pred.score_kind.is_randomized() {
        return Err(Error::InvalidInput(
            "randomized RAPS needs an explicit randomization draw".into(),
        ));
    }
    predict_set_with_u(z, pred, 1.0)
}

pub fn predict_set_with_u(
    z: &LogitVector,
    pred: &CalibratedPredictor,
    u: f64,
) -> Result<PredictionSet> {
    if pred.classes != 0 && z.len() != pred.classes {
        return Err(Error::DimensionMismatch {
            expected: pred.classes,
            actual: z.len(),
        });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidInput(format!(
            "randomization u must lie in [0, 1], got {u}"
        )));
    }
    if pred.q_hat == f64::INFINITY {
        return Ok(PredictionSet::full(z.len()));
    }
    let ranked = RankedLogits::new(z);
    // Every supported score is non-decreasing in rank, so scanning in rank
    // order can stop at the first label above the threshold.
    let mut labels = Vec::new();
    for (pos, &label) in ranked.order().iter().enumerate() {
        if ranked.score_at(&pred.score_kind, pos, u) <= pred.q_hat {
            labels.push(label);
        } else {
            break;
        }
    }
    Ok(PredictionSet::new(labels))
}

/// Prediction sets for a sequence of test logits. Randomized RAPS draws one
/// `u` per instance from the predictor's seeded stream.
pub fn predict_sets<'a, I>(logits: I, pred: &CalibratedPredictor) -> Result<Vec<PredictionSet>>
where
    I: IntoIterator<Item = &'a LogitVector>,
{
    let mut rand = pred.test_randomization();
    logits
        .into_iter()
        .map(|z| predict_set_with_u(z, pred, rand.next_u()))
        .collect()
}

/// Support of `γ-entmax(β·z)`, computed by the activation itself.
pub fn support_set_via_entmax(z: &LogitVector, beta: f64, gamma: f64) -> Result<PredictionSet> {
    if !(gamma > 1.0 && gamma <= 2.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "inverse temperature must be positive and finite, got {beta}"
        )));
    }
    let dist = entmax(&z.scale(beta)?, &EntmaxConfig::new(gamma)?)?;
    Ok(PredictionSet::new(dist.support))
}

/// `q̂` and `β⁻¹` may be `+∞`; JSON carries that as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ExtendedReal(pub(crate) f64);

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal(v)),
            Raw::Str(s) if s == "inf" || s == "+inf" || s == "infinity" => {
                Ok(ExtendedReal(f64::INFINITY))
            }
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid real: {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PredictorRepr {
    score_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raps_params: Option<RapsParams>,
    alpha: f64,
    q_hat: ExtendedReal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_inv: Option<ExtendedReal>,
    calib_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
}

impl Serialize for CalibratedPredictor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (gamma, raps_params) = match self.score_kind {
            ScoreKind::Entmax(g) => (Some(g), None),
            ScoreKind::Raps(p) => (None, Some(p)),
            _ => (None, None),
        };
        PredictorRepr {
            score_kind: self.score_kind.tag().to_string(),
            gamma,
            raps_params,
            alpha: self.alpha,
            q_hat: ExtendedReal(self.q_hat),
            beta_inv: self.beta_inv.map(ExtendedReal),
            calib_n: self.calib_n,
            num_classes: Some(self.classes),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CalibratedPredictor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = PredictorRepr::deserialize(d)?;
        let kind = match repr.score_kind.as_str() {
            "sparsemax" => ScoreKind::Sparsemax,
            "entmax" => {
                let g = repr
                    .gamma
                    .ok_or_else(|| D::Error::custom("entmax predictor needs gamma"))?;
                ScoreKind::entmax(g).map_err(D::Error::custom)?
            }
            "log_margin" => ScoreKind::LogMargin,
            "inv_prob" => ScoreKind::InvProb,
            "raps" => ScoreKind::Raps(
                repr.raps_params
                    .ok_or_else(|| D::Error::custom("raps predictor needs raps_params"))?,
            ),
            other => return Err(D::Error::custom(format!("unknown score_kind {other:?}"))),
        };
        let pred = CalibratedPredictor::from_threshold(
            kind,
            repr.alpha,
            repr.q_hat.0,
            repr.calib_n,
            repr.num_classes.unwrap_or(0),
        )
        .map_err(D::Error::custom)?;
        if let (Some(stored), Some(derived)) = (repr.beta_inv, pred.beta_inv) {
            let same = stored.0 == derived || (stored.0 - derived).abs() <= 1e-12 * derived.abs();
            if !same {
                return Err(D::Error::custom(format!(
                    "beta_inv {} does not match q_hat/delta = {derived}",
                    stored.0
                )));
            }
        }
        Ok(pred)
    }
}

impl CalibratedPredictor {
    /// Sets the class count for predictors loaded without one.
    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }
}
