//! Monte Carlo bias experiments.
//!
//! A replication draws a `T × N` panel from the population model on its own
//! stream `(base_seed, T, rep)` and re-estimates every metric from that
//! panel alone: the area-yield index is the simulated panel's row mean and
//! the optimal index its own leading principal component. Replications run
//! in parallel; results are collected in replication order and reduced
//! sequentially, so summaries do not depend on the thread count.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{asymptotic_bias, worst_case_bound};
use crate::error::{Error, Result};
use crate::linalg::fix_sign;
use crate::metrics::{
    lambda_share_from_panel, optimal_index_cov, optimal_index_panel, total_r2_regression,
};
use crate::panel::{sample_moments, Divisor, YieldPanel};
use crate::quantreg::{total_quantile_r2, DEFAULT_TAU};
use crate::rng::{replication_rng, stream_rng, StreamDomain};
use crate::sampler::{CovarianceModel, PanelSampler};
use crate::spiked::{constant_spike_from_target, Calibration, SpikeRegime};
use crate::stats::mean_sd;

pub const DEFAULT_N_REPS: usize = 500;
pub const DEFAULT_ORACLE_SIZE: usize = 25_000;

/// Largest share of failed replications tolerated before aborting.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2Area,
    LambdaShare,
    R2Quantile,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::R2Area, Metric::LambdaShare, Metric::R2Quantile];

    pub fn name(self) -> &'static str {
        match self {
            Metric::R2Area => "r2_area",
            Metric::LambdaShare => "lambda_share",
            Metric::R2Quantile => "r2_quantile",
        }
    }
}

/// Index used by the quantile metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileIndex {
    #[default]
    Mean,
    Optimal,
}

fn default_t_grid() -> Vec<usize> {
    vec![4, 10, 20]
}
fn default_n_reps() -> usize {
    DEFAULT_N_REPS
}
fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_oracle_size() -> usize {
    DEFAULT_ORACLE_SIZE
}

/// A replication plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McExperiment {
    pub dgp: CovarianceModel,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_oracle_size")]
    pub population_oracle_size: usize,
    #[serde(default)]
    pub quantile_index: QuantileIndex,
    /// Population mean; zero when absent. No metric depends on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
}

impl McExperiment {
    /// Plan with the default grid, replication count, metrics and `τ`.
    pub fn new(dgp: CovarianceModel) -> Self {
        Self {
            dgp,
            t_grid: default_t_grid(),
            n_reps: DEFAULT_N_REPS,
            base_seed: 0,
            metrics: default_metrics(),
            tau: DEFAULT_TAU,
            population_oracle_size: DEFAULT_ORACLE_SIZE,
            quantile_index: QuantileIndex::Mean,
            mean: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
        }
        if self.t_grid.is_empty() {
            return Err(Error::InvalidArgument("t_grid is empty".into()));
        }
        if let Some(&t) = self.t_grid.iter().find(|&&t| t < 2) {
            return Err(Error::InvalidArgument(format!("t_grid values must be >= 2, got {t}")));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidArgument("no metric requested".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.metrics.contains(&Metric::R2Quantile) && self.population_oracle_size < 2 {
            return Err(Error::InvalidArgument("population_oracle_size must be at least 2".into()));
        }
        if let Some(m) = &self.mean {
            if m.len() != self.dgp.dim() {
                return Err(Error::InvalidArgument(format!(
                    "mean has length {}, N = {}",
                    m.len(),
                    self.dgp.dim()
                )));
            }
        }
        Ok(())
    }

    /// Requested metrics, deduplicated, in canonical order.
    fn metric_list(&self) -> Vec<Metric> {
        let mut m = self.metrics.clone();
        m.sort();
        m.dedup();
        m
    }

    fn sampler(&self) -> Result<PanelSampler> {
        PanelSampler::new(&self.dgp, self.mean.clone().map(DVector::from_vec))
    }
}

/// One `(metric, T)` cell of a bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub metric: Metric,
    pub t: usize,
    pub population_value: f64,
    pub mean_estimate: f64,
    /// `mean_estimate - population_value`.
    pub bias: f64,
    /// Standard deviation of the estimates over `√(successful replications)`;
    /// absent with a single successful replication.
    pub mc_standard_error: Option<f64>,
    pub n_reps: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<McRow>,
}

impl McSummary {
    pub fn row(&self, metric: Metric, t: usize) -> Option<&McRow> {
        self.rows.iter().find(|r| r.metric == metric && r.t == t)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_csv_rows(&self.rows, writer)
    }
}

/// Serializes rows with a header named after the row fields.
pub fn write_csv_rows<T: Serialize, W: std::io::Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Weights of the population index used by the quantile oracle.
fn population_quantile_weights(dgp: &CovarianceModel, index: QuantileIndex) -> Result<DVector<f64>> {
    let n = dgp.dim();
    match index {
        QuantileIndex::Mean => Ok(DVector::from_element(n, 1.0 / n as f64)),
        QuantileIndex::Optimal => match dgp {
            CovarianceModel::Dense(c) => Ok(optimal_index_cov(c)?.weights.weights().clone()),
            CovarianceModel::Spiked(s) => {
                let mut q = s.leading_direction();
                fix_sign(&mut q);
                Ok(q)
            }
        },
    }
}

/// Population values of the requested metrics.
///
/// The linear metrics are exact functions of the covariance. The quantile
/// metric has no closed form; it is evaluated on one panel of `oracle_size`
/// periods drawn from the oracle stream of `seed`, with the population
/// index (equal weights, or the population leading eigenvector).
pub fn population_values(
    dgp: &CovarianceModel,
    metrics: &[Metric],
    tau: f64,
    oracle_size: usize,
    seed: u64,
    quantile_index: QuantileIndex,
) -> Result<BTreeMap<Metric, f64>> {
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::R2Area => dgp.population_r2_area()?,
            Metric::LambdaShare => dgp.population_lambda_share()?,
            Metric::R2Quantile => {
                let sampler = PanelSampler::new(dgp, None)?;
                let mut rng = stream_rng(StreamDomain::Oracle, seed, oracle_size as u64, 0);
                let panel = sampler.sample(oracle_size, &mut rng)?;
                let w = population_quantile_weights(dgp, quantile_index)?;
                let index = panel.weighted_index(&w)?;
                total_quantile_r2(&panel, &index, tau)?
            }
        };
        out.insert(m, v);
    }
    Ok(out)
}

/// Every requested metric re-estimated on one simulated panel.
pub fn estimate_metrics(
    panel: &YieldPanel,
    metrics: &[Metric],
    tau: f64,
    quantile_index: QuantileIndex,
) -> Result<Vec<f64>> {
    metrics
        .iter()
        .map(|m| match m {
            Metric::R2Area => Ok(total_r2_regression(panel, &panel.row_means())?.total),
            Metric::LambdaShare => lambda_share_from_panel(panel),
            Metric::R2Quantile => {
                let index = match quantile_index {
                    QuantileIndex::Mean => panel.row_means(),
                    QuantileIndex::Optimal => {
                        let w = optimal_index_panel(panel)?.weights;
                        panel.weighted_index(w.weights())?
                    }
                };
                total_quantile_r2(panel, &index, tau)
            }
        })
        .collect()
}

/// Estimates of each replication at one `T`, in replication order.
fn replicate<F>(t: usize, n_reps: usize, base_seed: u64, estimate: F) -> Vec<Result<Vec<f64>>>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    (0..n_reps)
        .into_par_iter()
        .map(|rep| estimate(&mut replication_rng(base_seed, t, rep)))
        .collect()
}

/// Splits replication outcomes into per-metric estimate columns, enforcing
/// the failure limit.
fn collect_estimates(t: usize, k: usize, outcomes: Vec<Result<Vec<f64>>>) -> Result<(Vec<Vec<f64>>, usize)> {
    let total = outcomes.len();
    let mut columns = vec![Vec::with_capacity(total); k];
    let mut failed = 0;
    let mut first = None;
    for o in outcomes {
        match o {
            Ok(v) => {
                for (c, x) in columns.iter_mut().zip(v) {
                    c.push(x);
                }
            }
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * total as f64 || failed == total {
        return Err(Error::ReplicationFailures {
            t,
            failed,
            total,
            first: first.unwrap_or_default(),
        });
    }
    Ok((columns, failed))
}

/// Mean, bias and Monte Carlo standard error of one estimate column.
struct CellSummary {
    mean: f64,
    bias: f64,
    se: Option<f64>,
}

fn summarize(estimates: &[f64], population: f64) -> CellSummary {
    let (mean, sd) = mean_sd(estimates);
    CellSummary {
        mean,
        bias: mean - population,
        se: sd.map(|s| s / (estimates.len() as f64).sqrt()),
    }
}

pub fn run_experiment(exp: &McExperiment) -> Result<McSummary> {
    exp.validate()?;
    let metrics = exp.metric_list();
    let population = population_values(
        &exp.dgp,
        &metrics,
        exp.tau,
        exp.population_oracle_size,
        exp.base_seed,
        exp.quantile_index,
    )?;
    let sampler = exp.sampler()?;
    let mut rows = Vec::with_capacity(metrics.len() * exp.t_grid.len());
    for &t in &exp.t_grid {
        let outcomes = replicate(t, exp.n_reps, exp.base_seed, |rng| {
            let panel = sampler.sample(t, rng)?;
            estimate_metrics(&panel, &metrics, exp.tau, exp.quantile_index)
        });
        let (columns, failed) = collect_estimates(t, metrics.len(), outcomes)?;
        for (m, est) in metrics.iter().zip(&columns) {
            let pop = population[m];
            let s = summarize(est, pop);
            rows.push(McRow {
                metric: *m,
                t,
                population_value: pop,
                mean_estimate: s.mean,
                bias: s.bias,
                mc_standard_error: s.se,
                n_reps: exp.n_reps,
                n_failed: failed,
            });
        }
    }
    Ok(McSummary { rows })
}

/// Calibrated experiment: the panel's sample covariance (divisor `T - 1`)
/// is taken as the population covariance.
pub fn run_calibrated(
    panel: &YieldPanel,
    t_grid: &[usize],
    n_reps: usize,
    base_seed: u64,
    tau: f64,
    quantile_index: QuantileIndex,
) -> Result<McSummary> {
    let exp = McExperiment {
        t_grid: t_grid.to_vec(),
        n_reps,
        base_seed,
        tau,
        quantile_index,
        ..calibrated_experiment(panel)
    };
    run_experiment(&exp)
}

/// Default plan whose population covariance is the panel's sample
/// covariance (divisor `T - 1`).
pub fn calibrated_experiment(panel: &YieldPanel) -> McExperiment {
    McExperiment::new(CovarianceModel::Dense(sample_moments(panel, Divisor::TMinusOne).covariance))
}

/// Plan of a factorial constant-spike study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedGrid {
    pub t_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub n_reps: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub calibration: Calibration,
}

impl SpikedGrid {
    /// `T ∈ {4, 20, 100}`, `N ∈ {50, 200, 500, 1000}`, `λ̃ ∈ {0.05, …, 0.95}`.
    pub fn with_defaults(base_seed: u64) -> Self {
        Self {
            t_grid: vec![4, 20, 100],
            n_grid: vec![50, 200, 500, 1000],
            lambda_grid: default_lambda_grid(),
            n_reps: DEFAULT_N_REPS,
            base_seed,
            calibration: Calibration::ExactTarget,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.n_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("grids must be non-empty".into()));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
        }
        if let Some(&t) = self.t_grid.iter().find(|&&t| t < 2) {
            return Err(Error::InvalidArgument(format!("t_grid values must be >= 2, got {t}")));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidArgument(format!("n_grid values must be >= 2, got {n}")));
        }
        if let Some(&l) = self.lambda_grid.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
            return Err(Error::InvalidArgument(format!("lambda_grid values must lie in (0, 1), got {l}")));
        }
        Ok(())
    }
}

/// `0.05, 0.10, …, 0.95`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// One `(T, N, λ̃)` cell of the spiked study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedRow {
    pub t: usize,
    pub n: usize,
    pub lambda_tilde: f64,
    /// Exact share of the model at this `N`.
    pub population_share: f64,
    pub mean_estimate: f64,
    /// `mean_estimate - population_share`.
    pub empirical_bias: f64,
    pub mc_standard_error: Option<f64>,
    /// Limit bias at `r = lambda_tilde`.
    pub theoretical_bias: f64,
    pub worst_bound: f64,
    pub n_reps: usize,
    pub n_failed: usize,
}

/// Runs the full `T × N × λ̃` factorial study of the first-eigenvalue share.
///
/// Each `N` uses one Haar rotation drawn from `base_seed`; replication
/// streams depend on `(base_seed, T, rep)` only, so all cells sharing a `T`
/// use common random numbers.
pub fn spiked_grid(grid: &SpikedGrid) -> Result<Vec<SpikedRow>> {
    grid.validate()?;
    let mut rows = Vec::new();
    for &t in &grid.t_grid {
        let bound = worst_case_bound(t)?;
        for &n in &grid.n_grid {
            for &lt in &grid.lambda_grid {
                let model = constant_spike_from_target(lt, n, grid.calibration, grid.base_seed)?;
                let population_share = model.population_lambda_share();
                let sampler = PanelSampler::new(&CovarianceModel::Spiked(model), None)?;
                let outcomes = replicate(t, grid.n_reps, grid.base_seed, |rng| {
                    let panel = sampler.sample(t, rng)?;
                    Ok(vec![lambda_share_from_panel(&panel)?])
                });
                let (columns, failed) = collect_estimates(t, 1, outcomes)?;
                let s = summarize(&columns[0], population_share);
                rows.push(SpikedRow {
                    t,
                    n,
                    lambda_tilde: lt,
                    population_share,
                    mean_estimate: s.mean,
                    empirical_bias: s.bias,
                    mc_standard_error: s.se,
                    theoretical_bias: asymptotic_bias(SpikeRegime::Constant, t, lt)?,
                    worst_bound: bound,
                    n_reps: grid.n_reps,
                    n_failed: failed,
                });
            }
        }
    }
    Ok(rows)
}
