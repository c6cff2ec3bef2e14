use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, predict_sets, ExtendedReal, LabeledLogitDataset};
use crate::metrics::{EvaluationRun, MetricsReport, SizeBins};
use crate::scores::{RapsParams, ScoreKind};
use crate::tuning::{
    split, tune_gamma, tune_raps_with, SplitSpec, TunedParam, DEFAULT_GAMMA_GRID, DEFAULT_K_GRID,
    DEFAULT_LAMBDA_GRID,
};

use super::io::load_dataset;
use super::{HarnessError, HarnessResult};

/// A conformal procedure to run, with its hyperparameters or search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Sparsemax,
    Entmax {
        gamma: f64,
    },
    LogMargin,
    InvProb,
    Raps {
        lambda_reg: f64,
        k_reg: usize,
        #[serde(default)]
        randomized: bool,
        #[serde(default)]
        rng_seed: u64,
    },
    /// γ chosen per split on a held-out part of the calibration data.
    OptEntmax {
        #[serde(default = "default_gamma_grid")]
        gamma_grid: Vec<f64>,
    },
    /// `(λ_reg, k_reg)` chosen per split on a held-out part of the
    /// calibration data.
    OptRaps {
        #[serde(default = "default_lambda_grid")]
        lambda_grid: Vec<f64>,
        #[serde(default = "default_k_grid")]
        k_grid: Vec<usize>,
        #[serde(default)]
        randomized: bool,
        #[serde(default)]
        rng_seed: u64,
    },
}

fn default_gamma_grid() -> Vec<f64> {
    DEFAULT_GAMMA_GRID.to_vec()
}

fn default_lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}

fn default_k_grid() -> Vec<usize> {
    DEFAULT_K_GRID.to_vec()
}

impl MethodSpec {
    /// Display name used in reports.
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Sparsemax => "sparsemax".into(),
            MethodSpec::Entmax { gamma } => format!("{gamma}-entmax"),
            MethodSpec::LogMargin => "log-margin".into(),
            MethodSpec::InvProb => "InvProb".into(),
            MethodSpec::Raps {
                lambda_reg, k_reg, ..
            } => format!("RAPS(lambda={lambda_reg},k={k_reg})"),
            MethodSpec::OptEntmax { .. } => "opt-entmax".into(),
            MethodSpec::OptRaps { .. } => "RAPS".into(),
        }
    }

    /// Score kind for methods without tuning.
    pub fn fixed_kind(&self) -> Option<ScoreKind> {
        match *self {
            MethodSpec::Sparsemax => Some(ScoreKind::Sparsemax),
            MethodSpec::Entmax { gamma } => Some(ScoreKind::Entmax(gamma)),
            MethodSpec::LogMargin => Some(ScoreKind::LogMargin),
            MethodSpec::InvProb => Some(ScoreKind::InvProb),
            MethodSpec::Raps {
                lambda_reg,
                k_reg,
                randomized,
                rng_seed,
            } => Some(ScoreKind::Raps(RapsParams {
                lambda_reg,
                k_reg,
                randomized,
                rng_seed,
            })),
            MethodSpec::OptEntmax { .. } | MethodSpec::OptRaps { .. } => None,
        }
    }

    fn validate(&self) -> crate::error::Result<()> {
        match self {
            MethodSpec::OptEntmax { gamma_grid } => {
                if gamma_grid.is_empty() {
                    return Err(crate::Error::InvalidInput("gamma_grid is empty".into()));
                }
                gamma_grid
                    .iter()
                    .try_for_each(|&g| ScoreKind::entmax(g).map(|_| ()))
            }
            MethodSpec::OptRaps {
                lambda_grid,
                k_grid,
                ..
            } => {
                if lambda_grid.is_empty() || k_grid.is_empty() {
                    return Err(crate::Error::InvalidInput(
                        "RAPS grids must be non-empty".into(),
                    ));
                }
                for &l in lambda_grid {
                    for &k in k_grid {
                        RapsParams::new(l, k)?;
                    }
                }
                Ok(())
            }
            fixed => fixed.fixed_kind().expect("fixed method").validate(),
        }
    }
}

fn default_n_splits() -> usize {
    5
}

fn default_cal_fraction() -> f64 {
    0.4
}

/// Everything that determines an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input_path: String,
    pub methods: Vec<MethodSpec>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_n_splits")]
    pub n_splits: usize,
    #[serde(default = "default_cal_fraction")]
    pub cal_fraction: f64,
    #[serde(default)]
    pub base_seed: u64,
    /// Size bins for stratified coverage; defaults to `0–1, 2–3, 4–6, 7–10, 11–K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<SizeBins>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return bad("no methods given".into());
        }
        if self.alphas.is_empty() {
            return bad("no alphas given".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} is outside (0, 1)"));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return bad("alphas must be strictly ascending".into());
        }
        if self.n_splits == 0 {
            return bad("n_splits must be at least 1".into());
        }
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            return bad(format!(
                "cal_fraction {} is outside (0, 1)",
                self.cal_fraction
            ));
        }
        for m in &self.methods {
            m.validate()
                .map_err(|e| HarnessError::Config(format!("method {}: {e}", m.name())))?;
        }
        Ok(())
    }

    pub fn split_seed(&self, split: usize) -> u64 {
        self.base_seed.wrapping_add(split as u64)
    }
}

/// Result of one `(method, α, split)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub alpha: f64,
    pub split: usize,
    pub seed: u64,
    pub calib_n: usize,
    pub test_n: usize,
    #[serde(with = "extended")]
    pub q_hat: f64,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "extended_opt"
    )]
    pub beta_inv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned: Option<TunedParam>,
    pub metrics: MetricsReport,
}

/// Mean and sample standard deviation of one metric across splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub alpha: f64,
    pub metric: String,
    /// Splits where the metric was defined.
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub num_instances: usize,
    pub num_classes: usize,
    pub split_seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn cell(&self, method: &str, alpha: f64, split: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.alpha == alpha && c.split == split)
    }

    pub fn aggregate(&self, method: &str, alpha: f64, metric: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.alpha == alpha && a.metric == metric)
    }
}

/// Loads `cfg.input_path` and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> HarnessResult<ExperimentReport> {
    cfg.validate()?;
    let data = load_dataset(&cfg.input_path)?;
    run_experiment_on(&data, cfg)
}

/// Runs every split, method and α on an in-memory dataset.
///
/// Split `s` uses seed `base_seed + s` to cut the data into calibration and
/// test parts. Tuned methods split the calibration part again (60/40, same
/// seed), pick their hyperparameters on the 40%, and calibrate on the 60%.
/// The test part is only used for the final metrics.
pub fn run_experiment_on(
    data: &LabeledLogitDataset,
    cfg: &ExperimentConfig,
) -> HarnessResult<ExperimentReport> {
    cfg.validate()?;
    let classes = data.num_classes();
    let bins = match &cfg.bins {
        Some(b) => {
            b.validate(classes)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            b.clone()
        }
        None => SizeBins::default_for(classes),
    };

    let split_seeds: Vec<u64> = (0..cfg.n_splits).map(|s| cfg.split_seed(s)).collect();
    let mut cells = Vec::new();
    for (s, &seed) in split_seeds.iter().enumerate() {
        let spec = SplitSpec::new(vec![cfg.cal_fraction, 1.0 - cfg.cal_fraction], seed)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut parts = split(data, &spec)
            .map_err(|e| HarnessError::core(format!("split {s}"), e))?
            .into_iter();
        let (cal, test) = (parts.next().unwrap(), parts.next().unwrap());
        for method in &cfg.methods {
            for &alpha in &cfg.alphas {
                let mut cell =
                    run_split(&cal, &test, method, alpha, seed, &bins).map_err(|e| match e {
                        HarnessError::Core { source, .. } => HarnessError::core(
                            format!("method {}, alpha {alpha}, split {s}", method.name()),
                            source,
                        ),
                        other => other,
                    })?;
                cell.split = s;
                cells.push(cell);
            }
        }
    }

    let aggregates = aggregate(cfg, &cells);
    Ok(ExperimentReport {
        config: cfg.clone(),
        num_instances: data.len(),
        num_classes: classes,
        split_seeds,
        cells,
        aggregates,
    })
}

/// One `(method, α)` cell on a given calibration/test pair. `seed` drives
/// the tuning sub-split.
pub fn run_split(
    cal: &LabeledLogitDataset,
    test: &LabeledLogitDataset,
    method: &MethodSpec,
    alpha: f64,
    seed: u64,
    bins: &SizeBins,
) -> HarnessResult<CellReport> {
    let name = method.name();
    let ctx = |e| HarnessError::core(format!("method {name}, alpha {alpha}"), e);

    let (kind, fit, tuned) = match method {
        MethodSpec::OptEntmax { gamma_grid } => {
            let spec = SplitSpec::tuning(seed);
            let result = tune_gamma(cal, alpha, gamma_grid, &spec).map_err(ctx)?;
            let TunedParam::Gamma { gamma } = result.chosen else {
                unreachable!("gamma search returns a gamma");
            };
            let fit = split(cal, &spec).map_err(ctx)?.swap_remove(0);
            (ScoreKind::Entmax(gamma), fit, Some(result.chosen))
        }
        MethodSpec::OptRaps {
            lambda_grid,
            k_grid,
            randomized,
            rng_seed,
        } => {
            let spec = SplitSpec::tuning(seed);
            let rand_seed = randomized.then_some(*rng_seed);
            let result =
                tune_raps_with(cal, alpha, lambda_grid, k_grid, &spec, rand_seed).map_err(ctx)?;
            let TunedParam::Raps { lambda_reg, k_reg } = result.chosen else {
                unreachable!("RAPS search returns a RAPS pair");
            };
            let fit = split(cal, &spec).map_err(ctx)?.swap_remove(0);
            let params = RapsParams {
                lambda_reg,
                k_reg,
                randomized: *randomized,
                rng_seed: *rng_seed,
            };
            (ScoreKind::Raps(params), fit, Some(result.chosen))
        }
        fixed => (fixed.fixed_kind().expect("fixed method"), cal.clone(), None),
    };

    let pred = calibrate(&fit, kind, alpha).map_err(ctx)?;
    let sets = predict_sets(test.logits(), &pred).map_err(ctx)?;
    let run = EvaluationRun::new(sets, test.labels(), alpha, name.clone()).map_err(ctx)?;
    let metrics = MetricsReport::compute(&run, bins).map_err(ctx)?;
    Ok(CellReport {
        method: name,
        alpha,
        split: 0,
        seed,
        calib_n: pred.calib_n,
        test_n: test.len(),
        q_hat: pred.q_hat,
        beta_inv: pred.beta_inv,
        tuned,
        metrics,
    })
}

fn aggregate(cfg: &ExperimentConfig, cells: &[CellReport]) -> Vec<Aggregate> {
    type Getter = fn(&MetricsReport) -> Option<f64>;
    let metrics: [(&str, Getter); 5] = [
        ("coverage", |m| Some(m.coverage)),
        ("avg_set_size", |m| Some(m.avg_set_size)),
        ("singleton_ratio", |m| Some(m.singleton_ratio)),
        ("singleton_coverage", |m| m.singleton_coverage),
        ("sscv", |m| m.sscv),
    ];
    let mut out = Vec::new();
    for method in &cfg.methods {
        let name = method.name();
        for &alpha in &cfg.alphas {
            let group: Vec<&CellReport> = cells
                .iter()
                .filter(|c| c.method == name && c.alpha == alpha)
                .collect();
            for (metric, get) in metrics {
                let values: Vec<f64> = group.iter().filter_map(|c| get(&c.metrics)).collect();
                let (mean, std) = mean_and_sample_std(&values);
                out.push(Aggregate {
                    method: name.clone(),
                    alpha,
                    metric: metric.to_string(),
                    n: values.len(),
                    mean,
                    std,
                });
            }
        }
    }
    out
}

/// Sample standard deviation (`n − 1` denominator); absent below 2 values.
fn mean_and_sample_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (Some(mean), Some((ss / (n - 1.0)).sqrt()))
}

mod extended {
    use super::ExtendedReal;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        ExtendedReal(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(ExtendedReal::deserialize(d)?.0)
    }
}

mod extended_opt {
    use super::ExtendedReal;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(ExtendedReal).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<ExtendedReal>::deserialize(d)?.map(|e| e.0))
    }
}
