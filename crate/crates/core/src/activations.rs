//! The γ-entmax family of simplex-valued activations.
//!
//! `γ-entmax(z) = argmax_{p ∈ Δ} pᵀz + H_γ(p)` where `H_γ` is the Tsallis
//! entropy. The solution has the thresholded form
//!
//! ```text
//! p_j = [(γ−1)·z_j − τ]₊^(1/(γ−1))
//! ```
//!
//! with `τ` the unique normalizing constant. `γ = 1` is softmax (dense) and
//! `γ = 2` is sparsemax, the Euclidean projection onto the simplex, which has
//! an exact sort-based solution. Other γ in `(1, 2)` are solved by bisection
//! on `τ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ramp values at or below zero are outside the support.
const SUPPORT_EPS: f64 = 0.0;

/// Residual above which an exhausted bisection is reported as a failure.
const NONCONVERGENCE_RESIDUAL: f64 = 1e-4;

/// Raw label scores for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse-temperature scaling `β·z`. `β = 0` is allowed and gives the
    /// zero vector.
    pub fn scale(&self, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "scale factor must be finite and non-negative, got {beta}"
            )));
        }
        Ok(Self(self.0.iter().map(|v| v * beta).collect()))
    }

    /// Class indices in descending score order. Ties keep the lower index
    /// first, so this order is the same on every platform.
    pub fn descending_order(&self) -> Vec<usize> {
        descending_order(&self.0)
    }

    pub fn argmax(&self) -> usize {
        self.descending_order()[0]
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(z: LogitVector) -> Self {
        z.0
    }
}

/// Stable descending argsort.
pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // `sort_by` is stable; NaN is excluded by `LogitVector::new`.
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    idx
}

/// A point on the probability simplex together with its support and the
/// normalization threshold that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDistribution {
    pub probs: Vec<f64>,
    /// Sorted indices with strictly positive probability.
    pub support: Vec<usize>,
    /// For γ > 1 the threshold in `[(γ−1)z − τ]₊`; for softmax the
    /// log-partition `log Σ exp(z_i)`.
    pub tau: f64,
    pub gamma: f64,
}

impl SparseDistribution {
    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn is_in_support(&self, label: usize) -> bool {
        self.support.binary_search(&label).is_ok()
    }
}

/// Solver controls for γ-entmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntmaxConfig {
    pub gamma: f64,
    pub bisect_tol: f64,
    pub max_iters: usize,
}

impl EntmaxConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        Self::with_solver(gamma, 1e-9, 100)
    }

    pub fn with_solver(gamma: f64, bisect_tol: f64, max_iters: usize) -> Result<Self> {
        check_gamma(gamma)?;
        if !bisect_tol.is_finite() || bisect_tol <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "bisection tolerance must be positive, got {bisect_tol}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(Self {
            gamma,
            bisect_tol,
            max_iters,
        })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && (1.0..=2.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// `β·z`; see [`LogitVector::scale`].
pub fn scale(z: &LogitVector, beta: f64) -> Result<LogitVector> {
    z.scale(beta)
}

/// Softmax with max-subtraction.
pub fn softmax(z: &LogitVector) -> SparseDistribution {
    let v = z.values();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    SparseDistribution {
        probs: exps.iter().map(|e| e / total).collect(),
        support: (0..v.len()).collect(),
        tau: max + total.ln(),
        gamma: 1.0,
    }
}

/// Sparsemax via sort and threshold.
///
/// The support size is the largest `j` (1-based, descending order) with
/// `1 + j·z_(j) > Σ_{k≤j} z_(k)`, and `τ = (Σ_{k≤k(z)} z_(k) − 1) / k(z)`.
pub fn sparsemax(z: &LogitVector) -> SparseDistribution {
    let v = z.values();
    let order = z.descending_order();

    let mut cumsum = 0.0;
    let mut k = 0usize;
    let mut cumsum_at_k = 0.0;
    for (j, &i) in order.iter().enumerate() {
        let rank = (j + 1) as f64;
        cumsum += v[i];
        if 1.0 + rank * v[i] > cumsum {
            k = j + 1;
            cumsum_at_k = cumsum;
        }
    }
    // j = 1 always satisfies the condition, so k ≥ 1.
    let tau = (cumsum_at_k - 1.0) / k as f64;

    let probs: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    let support = probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > SUPPORT_EPS)
        .map(|(i, _)| i)
        .collect();
    SparseDistribution {
        probs,
        support,
        tau,
        gamma: 2.0,
    }
}

/// γ-entmax for γ in `[1, 2]`.
///
/// `γ = 1` and `γ = 2` use the closed forms. Otherwise `τ` is found by
/// bisection on `Σ_j [(γ−1)z_j − τ]₊^(1/(γ−1)) = 1` over the bracket
/// `[(γ−1)·max(z) − 1, (γ−1)·max(z)]`, stopping once the mass is within
/// `bisect_tol` of one or the bracket can no longer shrink. The remaining
/// residual is divided out over the support.
pub fn entmax(z: &LogitVector, cfg: &EntmaxConfig) -> Result<SparseDistribution> {
    let gamma = cfg.gamma;
    check_gamma(gamma)?;
    if gamma == 1.0 {
        return Ok(softmax(z));
    }
    if gamma == 2.0 {
        return Ok(sparsemax(z));
    }

    let v = z.values();
    let scaled: Vec<f64> = v.iter().map(|x| (gamma - 1.0) * x).collect();
    let exponent = 1.0 / (gamma - 1.0);
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mass = |tau: f64| -> f64 {
        scaled
            .iter()
            .map(|x| {
                let r = x - tau;
                if r > 0.0 {
                    r.powf(exponent)
                } else {
                    0.0
                }
            })
            .sum()
    };

    let mut lo = max - 1.0;
    let mut hi = max;
    let mut tau = lo;
    let mut total = mass(lo);
    let mut iters = 0;
    while iters < cfg.max_iters && (total - 1.0).abs() > cfg.bisect_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iters += 1;
        let m = mass(mid);
        if m >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        tau = mid;
        total = m;
    }
    if (total - 1.0).abs() > cfg.bisect_tol && (total - 1.0).abs() > NONCONVERGENCE_RESIDUAL {
        return Err(Error::NonConvergence {
            residual: (total - 1.0).abs(),
            iters,
        });
    }

    let mut probs = vec![0.0; v.len()];
    let mut support = Vec::new();
    for (i, x) in scaled.iter().enumerate() {
        let r = x - tau;
        if r > SUPPORT_EPS {
            probs[i] = r.powf(exponent);
            support.push(i);
        }
    }
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(SparseDistribution {
        probs,
        support,
        tau,
        gamma,
    })
}

/// Tsallis entropy `H_γ(p)`; Shannon entropy (natural log) at `γ = 1`.
pub fn tsallis_entropy(p: &[f64], gamma: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "entropy index must be positive, got {gamma}"
        )));
    }
    check_simplex(p)?;
    let clamped = p.iter().map(|&x| x.max(0.0));
    if (gamma - 1.0).abs() < 1e-12 {
        Ok(-clamped
            .filter(|&x| x > 0.0)
            .map(|x| x * x.ln())
            .sum::<f64>())
    } else {
        let power_sum: f64 = clamped.map(|x| x.powf(gamma)).sum();
        Ok((1.0 - power_sum) / (gamma * (gamma - 1.0)))
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if let Some((i, x)) = p
        .iter()
        .enumerate()
        .find(|(_, &x)| !x.is_finite() || x < -1e-9)
    {
        return Err(Error::InvalidInput(format!(
            "probability vector has invalid entry {x} at index {i}"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "probability vector sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// The γ-entmax objective `pᵀz + H_γ(p)`.
pub fn entmax_objective(p: &[f64], z: &LogitVector, gamma: f64) -> Result<f64> {
    if p.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            actual: p.len(),
        });
    }
    let linear: f64 = p.iter().zip(z.values()).map(|(a, b)| a * b).sum();
    Ok(linear + tsallis_entropy(p, gamma)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    const FIG_Z: [f64; 5] = [1.0, -1.0, -0.2, 0.4, -0.5];

    #[test]
    fn logit_vector_validation() {
        assert_eq!(LogitVector::new(vec![1.0]), Err(Error::TooFewClasses(1)));
        assert_eq!(
            LogitVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFiniteLogit(1))
        );
        assert_eq!(
            LogitVector::new(vec![f64::INFINITY, 0.0]),
            Err(Error::NonFiniteLogit(0))
        );
    }

    #[test]
    fn scale_examples() {
        assert_eq!(lv(&[1.0, -1.0]).scale(2.0).unwrap().values(), &[2.0, -2.0]);
        assert_eq!(lv(&FIG_Z).scale(1.0).unwrap().values(), &FIG_Z);
        assert_eq!(lv(&[3.0, 7.0]).scale(0.0).unwrap().values(), &[0.0, 0.0]);
        assert!(lv(&[3.0, 7.0]).scale(-1.0).is_err());
        assert!(lv(&[3.0, 7.0]).scale(f64::NAN).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&lv(&[0.0, 0.0, 0.0]));
        for x in &p.probs {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.support, vec![0, 1, 2]);
        assert_eq!(p.gamma, 1.0);

        for c in [-50.0, 0.0, 3.7, 700.0] {
            let p = softmax(&lv(&[c, c + 3f64.ln()]));
            assert!((p.probs[0] - 0.25).abs() < 1e-12, "c={c}");
            assert!((p.probs[1] - 0.75).abs() < 1e-12, "c={c}");
        }
    }

    #[test]
    fn softmax_zero_temperature_limit_is_monotone() {
        let z = lv(&[1.0, 0.0]);
        let mut prev = 0.5;
        for beta in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let p = softmax(&z.scale(beta).unwrap()).probs[0];
            assert!(p > prev);
            prev = p;
        }
        assert!(prev > 1.0 - 1e-12);
    }

    #[test]
    fn sparsemax_running_example() {
        let p = sparsemax(&lv(&FIG_Z));
        let want = [0.8, 0.0, 0.0, 0.2, 0.0];
        for (a, b) in p.probs.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((p.tau - 0.2).abs() < 1e-12);
        assert_eq!(p.support, vec![0, 3]);
        assert_eq!(p.gamma, 2.0);
    }

    #[test]
    fn sparsemax_uniform_and_saturated() {
        let p = sparsemax(&lv(&[2.5; 4]));
        for x in &p.probs {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let p = sparsemax(&lv(&[10.0, 0.0]));
        assert_eq!(p.probs, vec![1.0, 0.0]);
        assert_eq!(p.support, vec![0]);
    }

    #[test]
    fn entmax_delegates_at_endpoints() {
        let z = lv(&FIG_Z);
        assert_eq!(
            entmax(&z, &EntmaxConfig::new(1.0).unwrap()).unwrap(),
            softmax(&z)
        );
        assert_eq!(
            entmax(&z, &EntmaxConfig::new(2.0).unwrap()).unwrap(),
            sparsemax(&z)
        );
    }

    #[test]
    fn entmax_symmetric_pair() {
        let p = entmax(&lv(&[0.0, 0.0]), &EntmaxConfig::new(1.5).unwrap()).unwrap();
        assert!((p.probs[0] - 0.5).abs() < 1e-9);
        assert!((p.probs[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn entmax_rejects_gamma_out_of_range() {
        assert_eq!(EntmaxConfig::new(2.5), Err(Error::InvalidGamma(2.5)));
        assert_eq!(EntmaxConfig::new(0.9), Err(Error::InvalidGamma(0.9)));
        let bad = EntmaxConfig {
            gamma: 3.0,
            bisect_tol: 1e-9,
            max_iters: 100,
        };
        assert_eq!(entmax(&lv(&FIG_Z), &bad), Err(Error::InvalidGamma(3.0)));
        assert!(EntmaxConfig::with_solver(1.5, 0.0, 10).is_err());
        assert!(EntmaxConfig::with_solver(1.5, 1e-9, 0).is_err());
    }

    #[test]
    fn entmax_reports_nonconvergence_when_starved() {
        let cfg = EntmaxConfig::with_solver(1.5, 1e-12, 1).unwrap();
        match entmax(&lv(&FIG_Z), &cfg) {
            Err(Error::NonConvergence { iters, .. }) => assert_eq!(iters, 1),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn entmax_matches_thresholded_form() {
        let z = lv(&FIG_Z);
        let gamma = 1.5;
        let p = entmax(&z, &EntmaxConfig::new(gamma).unwrap()).unwrap();
        let raw: Vec<f64> = z
            .values()
            .iter()
            .map(|x| {
                ((gamma - 1.0) * x - p.tau)
                    .max(0.0)
                    .powf(1.0 / (gamma - 1.0))
            })
            .collect();
        for (a, b) in p.probs.iter().zip(raw) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tsallis_examples() {
        for g in [1.0, 1.3, 1.5, 2.0] {
            assert!(tsallis_entropy(&[1.0, 0.0, 0.0], g).unwrap().abs() < 1e-15);
        }
        assert!((tsallis_entropy(&[0.5, 0.5], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((tsallis_entropy(&[0.5, 0.5], 2.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            tsallis_entropy(&[1.1, -0.1], 1.5),
            Err(Error::InvalidInput(_))
        ));
        // tiny negative noise is tolerated
        assert!(tsallis_entropy(&[1.0 + 1e-10, -1e-10], 1.5).is_ok());
    }

    #[test]
    fn objective_examples() {
        let v = entmax_objective(&[1.0, 0.0], &lv(&[10.0, 0.0]), 2.0).unwrap();
        assert!((v - 10.0).abs() < 1e-15);
        let v = entmax_objective(&[0.5, 0.5], &lv(&[0.0, 0.0]), 1.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            entmax_objective(&[1.0], &lv(&[0.0, 0.0]), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn descending_order_is_stable() {
        assert_eq!(descending_order(&[5.0, 5.0]), vec![0, 1]);
        assert_eq!(descending_order(&FIG_Z), vec![0, 3, 2, 4, 1]);
        assert_eq!(descending_order(&[1.0, 2.0, 2.0, 0.0]), vec![1, 2, 0, 3]);
    }
}
