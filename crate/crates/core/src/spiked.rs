//! Single-spike population covariance models `Σ = Q Λ Q'` with
//! `Λ = diag(a N^α, b, …, b)`.
//!
//! Because the trailing eigenvalues are equal, `Σ = b I + (a N^α - b) q₁q₁'`
//! where `q₁` is the first column of `Q`; the model therefore only needs the
//! rotation seed and `q₁` for sampling and population metrics. The full
//! rotation is rebuilt on demand.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{total_r2_from_projection, unit_interval};
use crate::rng::{stream_rng, StreamDomain};

/// Largest dimension for which a dense covariance is built.
pub const MATERIALIZE_MAX_N: usize = 5000;

/// Behaviour of the population share `λ̃₁` as `N → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeRegime {
    /// `α < 1`, `λ̃₁ → 0`.
    Vanishing,
    /// `α = 1`, `λ̃₁ → a / (a + b)`.
    Constant,
    /// `α > 1`, `λ̃₁ → 1`.
    Expanding,
}

impl SpikeRegime {
    pub fn from_alpha(alpha: f64) -> Self {
        if alpha < 1.0 {
            SpikeRegime::Vanishing
        } else if alpha > 1.0 {
            SpikeRegime::Expanding
        } else {
            SpikeRegime::Constant
        }
    }
}

/// How a constant-spike model is calibrated to a target share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Solve `aN / (aN + (N-1)b) = λ̃` so the share is exact at this `N`.
    #[default]
    ExactTarget,
    /// `a = λ̃ / (1 - λ̃)`, `b = 1`: the share reaches `λ̃` only as `N → ∞`.
    LimitRecipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikedModel {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub n: usize,
    pub rotation_seed: u64,
}

impl SpikedModel {
    pub fn new(a: f64, b: f64, alpha: f64, n: usize, rotation_seed: u64) -> Result<Self> {
        let m = Self {
            a,
            b,
            alpha,
            n,
            rotation_seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("a", self.a)?;
        positive("b", self.b)?;
        positive("alpha", self.alpha)?;
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need N >= 2, got {}", self.n)));
        }
        Ok(())
    }

    /// The spike `λ₁ = a N^α`.
    pub fn spike(&self) -> f64 {
        self.a * (self.n as f64).powf(self.alpha)
    }

    /// `[a N^α, b, …, b]`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = vec![self.b; self.n];
        v[0] = self.spike();
        v
    }

    pub fn trace(&self) -> f64 {
        self.spike() + (self.n - 1) as f64 * self.b
    }

    pub fn regime(&self) -> SpikeRegime {
        SpikeRegime::from_alpha(self.alpha)
    }

    /// `a / (a + b)`, the limiting share in the constant-spike regime.
    pub fn limit_r(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn population_lambda_share(&self) -> f64 {
        let s = self.spike();
        s / (s + (self.n - 1) as f64 * self.b)
    }

    /// First column of the Haar rotation, `O(N)`.
    pub fn leading_direction(&self) -> DVector<f64> {
        let mut rng = rotation_rng(self.n, self.rotation_seed);
        let g = DVector::from_fn(self.n, |_, _| StandardNormal.sample(&mut rng));
        g.normalize()
    }

    /// The full rotation `Q`.
    pub fn rotation(&self) -> DMatrix<f64> {
        haar_orthogonal(self.n, self.rotation_seed)
    }

    /// `Σ w` using the rank-one form, given `q₁`.
    pub fn apply(&self, q1: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        w * self.b + q1 * ((self.spike() - self.b) * q1.dot(w))
    }

    /// Population total R² of the area-yield index, `O(N)`.
    pub fn population_r2_area(&self) -> Result<f64> {
        let q1 = self.leading_direction();
        let w = DVector::from_element(self.n, 1.0 / self.n as f64);
        total_r2_from_projection(&self.apply(&q1, &w), &w, self.trace())
            .and_then(|v| unit_interval("r2_area", v))
    }

    /// `Λ` without the rotation.
    pub fn diagonal_covariance(&self) -> Result<DMatrix<f64>> {
        self.guard()?;
        Ok(DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues())))
    }

    /// `Q Λ Q'`.
    pub fn materialize_covariance(&self) -> Result<DMatrix<f64>> {
        self.guard()?;
        let q = self.rotation();
        let mut scaled = q.clone();
        for (mut col, lambda) in scaled.column_iter_mut().zip(self.eigenvalues()) {
            col *= lambda;
        }
        let mut sigma = scaled * q.transpose();
        crate::linalg::symmetrize_upper(&mut sigma);
        Ok(sigma)
    }

    fn guard(&self) -> Result<()> {
        if self.n > MATERIALIZE_MAX_N {
            return Err(Error::InvalidArgument(format!(
                "N = {} exceeds the dense limit {MATERIALIZE_MAX_N}",
                self.n
            )));
        }
        Ok(())
    }
}

pub fn population_lambda_share(model: &SpikedModel) -> f64 {
    model.population_lambda_share()
}

/// Constant-spike model (`α = 1`, `b = 1`) whose share is `lambda_tilde`.
pub fn constant_spike_from_target(
    lambda_tilde: f64,
    n: usize,
    calibration: Calibration,
    rotation_seed: u64,
) -> Result<SpikedModel> {
    if !(lambda_tilde > 0.0 && lambda_tilde < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target share must lie in (0, 1), got {lambda_tilde}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 2, got {n}")));
    }
    let odds = lambda_tilde / (1.0 - lambda_tilde);
    let a = match calibration {
        Calibration::ExactTarget => odds * (n - 1) as f64 / n as f64,
        Calibration::LimitRecipe => odds,
    };
    SpikedModel::new(a, 1.0, 1.0, n, rotation_seed)
}

fn rotation_rng(n: usize, seed: u64) -> rand_chacha::ChaCha8Rng {
    stream_rng(StreamDomain::Rotation, seed, n as u64, 0)
}

/// Haar-distributed `n × n` orthogonal matrix: QR of a standard Gaussian
/// matrix with every column of `Q` multiplied by the sign of `R`'s diagonal.
pub fn haar_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = rotation_rng(n, seed);
    // column-major fill, so column 0 matches `leading_direction`
    let g = DMatrix::from_iterator(n, n, (0..n * n).map(|_| StandardNormal.sample(&mut rng)));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}
