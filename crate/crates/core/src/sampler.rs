//! Gaussian panel draws from dense or spiked population covariances.
//!
//! Dense covariances are factored through their eigen-decomposition rather
//! than Cholesky, so rank-deficient inputs (for instance a sample covariance
//! estimated from four periods) are sampled exactly. Spiked models use the
//! rank-one form and cost `O(N)` per period.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::metrics;
use crate::panel::YieldPanel;
use crate::rng::{stream_rng, StreamDomain};
use crate::spiked::SpikedModel;

/// Eigenvalues down to `-PSD_TOLERANCE * λmax` are treated as rounding and
/// clamped to zero; anything lower rejects the matrix.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// A population covariance specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CovarianceRepr", try_from = "CovarianceRepr")]
pub enum CovarianceModel {
    Dense(DMatrix<f64>),
    Spiked(SpikedModel),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CovarianceRepr {
    Dense { covariance: Vec<Vec<f64>> },
    Spiked(SpikedModel),
}

impl From<CovarianceModel> for CovarianceRepr {
    fn from(m: CovarianceModel) -> Self {
        match m {
            CovarianceModel::Dense(c) => CovarianceRepr::Dense {
                covariance: c.row_iter().map(|r| r.iter().copied().collect()).collect(),
            },
            CovarianceModel::Spiked(s) => CovarianceRepr::Spiked(s),
        }
    }
}

impl TryFrom<CovarianceRepr> for CovarianceModel {
    type Error = Error;

    fn try_from(r: CovarianceRepr) -> Result<Self> {
        match r {
            CovarianceRepr::Dense { covariance } => {
                let n = covariance.len();
                if covariance.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidArgument("dense covariance must be square".into()));
                }
                Ok(CovarianceModel::Dense(DMatrix::from_fn(n, n, |i, j| covariance[i][j])))
            }
            CovarianceRepr::Spiked(s) => {
                s.validate()?;
                Ok(CovarianceModel::Spiked(s))
            }
        }
    }
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Dense(c) => c.nrows(),
            CovarianceModel::Spiked(s) => s.n,
        }
    }

    /// Population total R² of the area-yield index.
    pub fn population_r2_area(&self) -> Result<f64> {
        match self {
            CovarianceModel::Dense(c) => metrics::total_r2_matrix(c, &metrics::IndexWeights::area_yield(c.nrows())),
            CovarianceModel::Spiked(s) => s.population_r2_area(),
        }
    }

    /// Population first-eigenvalue share.
    pub fn population_lambda_share(&self) -> Result<f64> {
        match self {
            CovarianceModel::Dense(c) => metrics::lambda_share_cov(c),
            CovarianceModel::Spiked(s) => Ok(s.population_lambda_share()),
        }
    }
}

/// Everything needed to draw one panel.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub t: usize,
    /// Zero when absent.
    pub mean: Option<DVector<f64>>,
    pub source: CovarianceModel,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Factor {
    /// `N × r` matrix `V_r Λ_r^½` over the positive eigenvalues.
    Dense(DMatrix<f64>),
    Spiked {
        q1: DVector<f64>,
        sqrt_b: f64,
        /// `√λ₁ - √b`.
        lift: f64,
    },
}

/// A prepared sampler; reuse it across replications.
#[derive(Debug, Clone)]
pub struct PanelSampler {
    n: usize,
    mean: Option<DVector<f64>>,
    factor: Factor,
}

/// `V_r Λ_r^½` for a symmetric positive semidefinite `cov`.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::InvalidArgument("covariance must be square".into()));
    }
    let n = cov.nrows();
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd("non-finite entry".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::NotPsd(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    let (vals, vecs) = sym_eigen_desc(cov.clone());
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&low) = vals.last() {
        if low < -PSD_TOLERANCE * top || (top == 0.0 && low < 0.0) {
            return Err(Error::NotPsd(format!("eigenvalue {low:e} with largest {top:e}")));
        }
    }
    let rank = vals.iter().take_while(|&&v| v > PSD_TOLERANCE * top).count();
    let mut f = DMatrix::zeros(n, rank);
    for (k, v) in vals.iter().take(rank).enumerate() {
        f.set_column(k, &(vecs.column(k) * v.sqrt()));
    }
    Ok(f)
}

impl PanelSampler {
    pub fn new(source: &CovarianceModel, mean: Option<DVector<f64>>) -> Result<Self> {
        let n = source.dim();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need N >= 2, got {n}")));
        }
        if let Some(m) = &mean {
            if m.len() != n {
                return Err(Error::InvalidArgument(format!("mean has length {}, N = {n}", m.len())));
            }
        }
        let factor = match source {
            CovarianceModel::Dense(c) => Factor::Dense(psd_factor(c)?),
            CovarianceModel::Spiked(s) => {
                s.validate()?;
                Factor::Spiked {
                    q1: s.leading_direction(),
                    sqrt_b: s.b.sqrt(),
                    lift: s.spike().sqrt() - s.b.sqrt(),
                }
            }
        };
        Ok(Self { n, mean, factor })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Rank of the dense factor, `N` for spiked models.
    pub fn rank(&self) -> usize {
        match &self.factor {
            Factor::Dense(f) => f.ncols(),
            Factor::Spiked { .. } => self.n,
        }
    }

    /// `t × N` matrix of i.i.d. rows, drawn period by period.
    pub fn sample_values<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.n;
        let mut y = DMatrix::zeros(t, n);
        match &self.factor {
            Factor::Dense(f) => {
                let mut z = DVector::zeros(f.ncols());
                for r in 0..t {
                    z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                    y.set_row(r, &(f * &z).transpose());
                }
            }
            Factor::Spiked { q1, sqrt_b, lift } => {
                let mut eps = DVector::zeros(n);
                for r in 0..t {
                    eps.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
                    let proj = q1.dot(&eps) * lift;
                    for i in 0..n {
                        y[(r, i)] = sqrt_b * eps[i] + proj * q1[i];
                    }
                }
            }
        }
        if let Some(m) = &self.mean {
            for mut row in y.row_iter_mut() {
                row += m.transpose();
            }
        }
        y
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Result<YieldPanel> {
        YieldPanel::from_matrix(self.sample_values(t, rng))
    }
}

fn spec_rng(spec: &SampleSpec) -> rand_chacha::ChaCha8Rng {
    stream_rng(StreamDomain::Sample, spec.seed, spec.t as u64, 0)
}

/// Draws a panel for any source.
pub fn sample(spec: &SampleSpec) -> Result<YieldPanel> {
    if spec.t < 2 {
        return Err(Error::InvalidArgument(format!("need T >= 2, got {}", spec.t)));
    }
    let sampler = PanelSampler::new(&spec.source, spec.mean.clone())?;
    sampler.sample(spec.t, &mut spec_rng(spec))
}

pub fn sample_dense(spec: &SampleSpec) -> Result<YieldPanel> {
    match spec.source {
        CovarianceModel::Dense(_) => sample(spec),
        CovarianceModel::Spiked(_) => Err(Error::InvalidArgument("expected a dense covariance".into())),
    }
}

pub fn sample_spiked(spec: &SampleSpec) -> Result<YieldPanel> {
    match spec.source {
        CovarianceModel::Spiked(_) => sample(spec),
        CovarianceModel::Dense(_) => Err(Error::InvalidArgument("expected a spiked model".into())),
    }
}
