//! Linear basis-risk metrics.
//!
//! For an index `f = Y w` the total R² pools the per-field regressions of
//! each field's yield on the index:
//!
//! ```text
//! R²(w) = 1 - Σ_i SSR_i / Σ_i SST_i = tr(Σ w (w'Σw)⁻¹ w'Σ) / tr(Σ)
//! ```
//!
//! Both forms are implemented ([`total_r2_regression`] and
//! [`total_r2_matrix`]) and agree to rounding when `Σ` is the panel's sample
//! covariance. `R²(w)` is maximised by the leading eigenvector of `Σ`, where
//! it equals the first-eigenvalue share `λ₁ / Σλ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, compensated_sum, fix_sign, sym_eigen_desc};
use crate::panel::YieldPanel;
use crate::quantreg;

/// Rounding allowance for ratios that must lie in `[0, 1]`.
pub const UNIT_SLACK: f64 = 1e-10;

/// A sum of squares at or below this fraction of the raw sum of squares is
/// treated as exactly zero (a constant series).
const ZERO_VARIANCE_REL: f64 = 1e-24;

const DEGENERATE_INDEX_REL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    AreaYield,
    FirstPc,
    Custom,
}

/// Field weights defining a linear index `f_t = Σ_i w_i y_it`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexWeights {
    w: DVector<f64>,
    kind: IndexKind,
}

impl IndexWeights {
    /// Equal weights `1/N`.
    pub fn area_yield(n: usize) -> Self {
        Self {
            w: DVector::from_element(n, 1.0 / n as f64),
            kind: IndexKind::AreaYield,
        }
    }

    pub fn custom(w: DVector<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("weights must not all be zero".into()));
        }
        Ok(Self {
            w,
            kind: IndexKind::Custom,
        })
    }

    /// Unit-norm leading eigenvector, signed so the weights sum to `>= 0`.
    fn first_pc(mut w: DVector<f64>) -> Self {
        w.normalize_mut();
        fix_sign(&mut w);
        Self {
            w,
            kind: IndexKind::FirstPc,
        }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Maps a ratio into `[0, 1]`, failing if it is outside by more than
/// [`UNIT_SLACK`].
pub(crate) fn unit_interval(name: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() || !(-UNIT_SLACK..=1.0 + UNIT_SLACK).contains(&value) {
        return Err(Error::OutOfRange { name, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// `‖Σw‖² / (w'Σw) / tr Σ` given `Σw`, `w` and `tr Σ`.
pub(crate) fn total_r2_from_projection(sigma_w: &DVector<f64>, w: &DVector<f64>, trace: f64) -> Result<f64> {
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::DegenerateCovariance(format!("trace {trace} is not positive")));
    }
    let wsw = w.dot(sigma_w);
    if wsw.is_nan() || wsw <= DEGENERATE_INDEX_REL * trace * w.norm_squared() {
        return Err(Error::DegenerateIndex(format!("index variance w'Σw = {wsw:e}")));
    }
    unit_interval("total_r2", sigma_w.norm_squared() / wsw / trace)
}

/// Total R² of the index `w` under covariance `cov`.
pub fn total_r2_matrix(cov: &DMatrix<f64>, w: &IndexWeights) -> Result<f64> {
    if !cov.is_square() || cov.nrows() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, weights have length {}",
            cov.nrows(),
            cov.ncols(),
            w.len()
        )));
    }
    let sigma_w = cov * w.weights();
    total_r2_from_projection(&sigma_w, w.weights(), cov.trace())
}

/// Result of the per-field regressions on one index.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionR2 {
    /// `1 - Σ SSR_i / Σ SST_i`.
    pub total: f64,
    /// `1 - SSR_i / SST_i`, `None` for fields with no variance.
    pub per_field: Vec<Option<f64>>,
}

fn sum_of_squares(x: impl Iterator<Item = f64>) -> f64 {
    compensated_sum(x.map(|v| v * v))
}

fn is_zero_variance(centered_ss: f64, raw: impl Iterator<Item = f64>) -> bool {
    centered_ss == 0.0 || centered_ss <= ZERO_VARIANCE_REL * sum_of_squares(raw)
}

/// Total R² from OLS regressions of every field on `(1, index)`.
///
/// Fields with zero variance add nothing to either sum and get an undefined
/// per-field value.
pub fn total_r2_regression(panel: &YieldPanel, index: &DVector<f64>) -> Result<RegressionR2> {
    if index.len() != panel.t() {
        return Err(Error::InvalidArgument(format!(
            "index has length {}, panel has {} periods",
            index.len(),
            panel.t()
        )));
    }
    let f_mean = index.mean();
    let fc: Vec<f64> = index.iter().map(|v| v - f_mean).collect();
    let sxx = sum_of_squares(fc.iter().copied());
    if is_zero_variance(sxx, index.iter().copied()) {
        return Err(Error::DegenerateIndex("index is constant over the periods".into()));
    }

    let sums: Vec<(f64, f64)> = (0..panel.n())
        .into_par_iter()
        .map(|i| {
            let col = panel.values().column(i);
            let mean = col.mean();
            let yc: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let sst = sum_of_squares(yc.iter().copied());
            if is_zero_variance(sst, col.iter().copied()) {
                return (0.0, 0.0);
            }
            let beta = compensated_sum(yc.iter().zip(&fc).map(|(y, f)| y * f)) / sxx;
            let ssr = sum_of_squares(yc.iter().zip(&fc).map(|(y, f)| y - beta * f));
            (ssr, sst)
        })
        .collect();

    let ssr = compensated_sum(sums.iter().map(|s| s.0));
    let sst = compensated_sum(sums.iter().map(|s| s.1));
    if sst == 0.0 {
        return Err(Error::DegenerateCovariance("every field is constant".into()));
    }
    let per_field = sums
        .iter()
        .map(|&(r, s)| (s > 0.0).then(|| 1.0 - r / s))
        .collect();
    Ok(RegressionR2 {
        total: unit_interval("total_r2", 1.0 - ssr / sst)?,
        per_field,
    })
}

/// The R²-maximising index and the share of the first eigenvalue.
#[derive(Debug, Clone)]
pub struct OptimalIndex {
    pub weights: IndexWeights,
    pub lambda_share: f64,
}

fn share(lambda1: f64, trace: f64) -> Result<f64> {
    if trace.is_nan() || trace <= 0.0 || lambda1.is_nan() || lambda1 <= 0.0 {
        return Err(Error::DegenerateCovariance("no positive eigenvalue".into()));
    }
    unit_interval("lambda_share", lambda1 / trace)
}

/// Optimal index of a population (or any) covariance matrix.
pub fn optimal_index_cov(cov: &DMatrix<f64>) -> Result<OptimalIndex> {
    if !cov.is_square() {
        return Err(Error::InvalidArgument("covariance must be square".into()));
    }
    let trace = cov.trace();
    let (vals, vecs) = sym_eigen_desc(cov.clone());
    let lambda_share = share(vals[0], trace)?;
    Ok(OptimalIndex {
        weights: IndexWeights::first_pc(vecs.column(0).into_owned()),
        lambda_share,
    })
}

pub fn lambda_share_cov(cov: &DMatrix<f64>) -> Result<f64> {
    optimal_index_cov(cov).map(|o| o.lambda_share)
}

/// Optimal index of a panel through the `N × N` centred cross-product.
pub fn optimal_index_primal(panel: &YieldPanel) -> Result<OptimalIndex> {
    let x = center_columns(panel.values());
    let mut s = x.tr_mul(&x);
    crate::linalg::symmetrize_upper(&mut s);
    optimal_index_cov(&s)
}

/// Optimal index of a panel through the `T × T` dual matrix `X X'`.
///
/// The dual shares its non-zero eigenvalues with `X'X`; the primal
/// eigenvector is recovered as `X'u` for the dual eigenvector `u`.
pub fn optimal_index_dual(panel: &YieldPanel) -> Result<OptimalIndex> {
    let x = center_columns(panel.values());
    let mut gram = &x * x.transpose();
    crate::linalg::symmetrize_upper(&mut gram);
    let trace = gram.trace();
    let (vals, vecs) = sym_eigen_desc(gram);
    let lambda_share = share(vals[0], trace)?;
    let w = x.tr_mul(&vecs.column(0));
    Ok(OptimalIndex {
        weights: IndexWeights::first_pc(w),
        lambda_share,
    })
}

/// Optimal index of a panel, using the dual matrix whenever `T <= N`.
pub fn optimal_index_panel(panel: &YieldPanel) -> Result<OptimalIndex> {
    if panel.t() <= panel.n() {
        optimal_index_dual(panel)
    } else {
        optimal_index_primal(panel)
    }
}

/// Sample first-eigenvalue share `λ̂₁ / Σλ̂`.
pub fn lambda_share_from_panel(panel: &YieldPanel) -> Result<f64> {
    if panel.t() <= panel.n() {
        dual_share(panel)
    } else {
        optimal_index_primal(panel).map(|o| o.lambda_share)
    }
}

fn dual_share(panel: &YieldPanel) -> Result<f64> {
    let x = center_columns(panel.values());
    let mut gram = &x * x.transpose();
    crate::linalg::symmetrize_upper(&mut gram);
    let trace = gram.trace();
    let (vals, _) = sym_eigen_desc(gram);
    share(vals[0], trace)
}

/// Eigenvalues of the panel's sample covariance (divisor `T-1`) that can be
/// non-zero, in decreasing order. There are at most `min(T-1, N)` of them.
pub fn sample_spectrum(panel: &YieldPanel) -> Vec<f64> {
    let x = center_columns(panel.values());
    let d = (panel.t() - 1) as f64;
    let m = if panel.t() <= panel.n() {
        &x * x.transpose()
    } else {
        x.tr_mul(&x)
    };
    let (vals, _) = sym_eigen_desc(m);
    vals.into_iter().map(|v| v / d).collect()
}

/// Which index a report evaluates besides the area-yield and optimal ones.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexChoice {
    Mean,
    Optimal,
    Weights(IndexWeights),
}

impl IndexChoice {
    pub fn label(&self) -> &'static str {
        match self {
            IndexChoice::Mean => "mean",
            IndexChoice::Optimal => "optimal",
            IndexChoice::Weights(_) => "custom",
        }
    }
}

/// All basis-risk measures of one zone.
///
/// `r2_area` always uses the area-yield index and `r2_optimal` the first
/// principal component. `r2_index`, `per_field_r2` and `r2_quantile` use the
/// index selected by [`IndexChoice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRiskReport {
    pub index: String,
    pub r2_area: f64,
    pub r2_optimal: f64,
    pub lambda_share: f64,
    pub r2_index: f64,
    pub r2_quantile: f64,
    pub tau: f64,
    pub field_ids: Vec<String>,
    pub per_field_r2: Vec<Option<f64>>,
}

pub fn basis_risk_report(panel: &YieldPanel, choice: &IndexChoice, tau: f64) -> Result<BasisRiskReport> {
    let mean_index = panel.row_means();
    let area = total_r2_regression(panel, &mean_index)?;
    let optimal = optimal_index_panel(panel)?;
    let opt_index = panel.weighted_index(optimal.weights.weights())?;
    let r2_optimal = total_r2_regression(panel, &opt_index)?.total;

    let (chosen, chosen_index) = match choice {
        IndexChoice::Mean => (area.clone(), mean_index),
        IndexChoice::Optimal => (total_r2_regression(panel, &opt_index)?, opt_index),
        IndexChoice::Weights(w) => {
            let f = panel.weighted_index(w.weights())?;
            (total_r2_regression(panel, &f)?, f)
        }
    };
    let r2_quantile = quantreg::total_quantile_r2(panel, &chosen_index, tau)?;

    Ok(BasisRiskReport {
        index: choice.label().to_string(),
        r2_area: area.total,
        r2_optimal,
        lambda_share: optimal.lambda_share,
        r2_index: chosen.total,
        r2_quantile,
        tau,
        field_ids: panel.field_ids().to_vec(),
        per_field_r2: chosen.per_field,
    })
}

impl BasisRiskReport {
    /// Long-format CSV: `metric,field,value`, one row per scalar and one
    /// `per_field_r2` row per field (empty value when undefined).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "field", "value"])?;
        w.write_record(["index", "", &self.index])?;
        for (name, v) in [
            ("r2_area", self.r2_area),
            ("r2_optimal", self.r2_optimal),
            ("lambda_share", self.lambda_share),
            ("r2_index", self.r2_index),
            ("r2_quantile", self.r2_quantile),
            ("tau", self.tau),
        ] {
            w.write_record([name, "", &v.to_string()])?;
        }
        for (id, v) in self.field_ids.iter().zip(&self.per_field_r2) {
            let value = v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record(["per_field_r2", id, &value])?;
        }
        w.flush()?;
        Ok(())
    }
}
