//! Fixed-`T`, growing-`N` limit of the first-eigenvalue share under a
//! single-spike model.
//!
//! With `d = T - 1` and `C² ~ χ²_d`, the constant-spike limit of the sample
//! share `λ̂̃₁` is `g(C²)` with
//!
//! ```text
//! g(c) = (r c + 1 - r) / (r c + (1 - r) d),     r = a / (a + b),
//! ```
//!
//! and its bias relative to the population share `r` is
//! `E[(1 - r)(r C² + 1 - r d) / (r C² + (1 - r) d)]`. A vanishing spike
//! drives the estimate to `1/d` while the population share tends to 0; an
//! expanding spike drives both to 1. The bias never exceeds `1/d`.
//!
//! For `T ≥ 3`, `g'(c) = r(1-r)(d-1) / (r c + (1-r) d)² > 0`, so `g` maps
//! `(0, ∞)` increasingly onto `(1/d, 1)`. For `T = 2`, `g ≡ 1`.

use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_to_infinity, DEFAULT_MAX_INTERVALS};
use crate::spiked::SpikeRegime;

/// Absolute tolerance of every expectation computed by quadrature.
pub const QUAD_ABS_TOL: f64 = 1e-10;

/// Law of `g(C²)` for `C² ~ χ²_{T-1}`, `T ≥ 3`, `0 < r < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSpikeLaw {
    t: usize,
    r: f64,
}

impl ConstantSpikeLaw {
    pub fn new(t: usize, r: f64) -> Result<Self> {
        if t < 3 {
            return Err(Error::InvalidArgument(format!(
                "the constant-spike law is non-degenerate only for T >= 3, got {t}"
            )));
        }
        check_r(r)?;
        Ok(Self { t, r })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    fn d(&self) -> f64 {
        (self.t - 1) as f64
    }

    fn chi2(&self) -> ChiSquared {
        ChiSquared::new(self.d()).expect("degrees of freedom are positive")
    }

    /// `g(c)`.
    pub fn transform(&self, c: f64) -> f64 {
        let r = self.r;
        (r * c + 1.0 - r) / (r * c + (1.0 - r) * self.d())
    }

    /// `g⁻¹(x)` on `(1/d, 1)`.
    pub fn inverse_transform(&self, x: f64) -> f64 {
        let r = self.r;
        (1.0 - r) * (x * self.d() - 1.0) / (r * (1.0 - x))
    }

    /// Open support `(1/d, 1)`.
    pub fn support(&self) -> (f64, f64) {
        (1.0 / self.d(), 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo || x >= hi {
            return 0.0;
        }
        let r = self.r;
        let jac = (1.0 - r) * (self.d() - 1.0) / (r * (1.0 - x) * (1.0 - x));
        self.chi2().pdf(self.inverse_transform(x)) * jac
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            self.chi2().cdf(self.inverse_transform(x))
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        if p <= 0.0 {
            lo
        } else if p >= 1.0 {
            hi
        } else {
            self.transform(chi2_quantile(self.d(), p))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c: f64 = rand_distr::ChiSquared::new(self.d())
            .expect("degrees of freedom are positive")
            .sample(rng);
        self.transform(c)
    }

    /// `E[h(C²)]` by quadrature, split at the mean of `χ²_d`.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H) -> Result<f64> {
        let d = self.d();
        let chi2 = self.chi2();
        let f = |c: f64| if c > 0.0 { h(c) * chi2.pdf(c) } else { 0.0 };
        let head = integrate(f, 0.0, d, QUAD_ABS_TOL / 2.0, DEFAULT_MAX_INTERVALS)?;
        let tail = integrate_to_infinity(f, d, (2.0 * d).sqrt(), QUAD_ABS_TOL / 2.0, DEFAULT_MAX_INTERVALS)?;
        Ok(head.value + tail.value)
    }

    pub fn mean(&self) -> Result<f64> {
        self.expect(|c| self.transform(c))
    }

    pub fn sd(&self) -> Result<f64> {
        let m = self.mean()?;
        let v = self.expect(|c| {
            let e = self.transform(c) - m;
            e * e
        })?;
        Ok(v.max(0.0).sqrt())
    }

    /// `E[(1 - r)(r C² + 1 - r d) / (r C² + (1 - r) d)]`.
    pub fn bias(&self) -> Result<f64> {
        let (r, d) = (self.r, self.d());
        self.expect(|c| (1.0 - r) * (r * c + 1.0 - r * d) / (r * c + (1.0 - r) * d))
    }
}

/// `χ²_d` quantile, refined by safeguarded Newton steps on the CDF.
fn chi2_quantile(d: f64, p: f64) -> f64 {
    let chi2 = ChiSquared::new(d).expect("degrees of freedom are positive");
    let mut x = chi2.inverse_cdf(p);
    for _ in 0..8 {
        let err = chi2.cdf(x) - p;
        if err.abs() <= 1e-15 {
            break;
        }
        let dens = chi2.pdf(x);
        if dens.is_nan() || dens <= 0.0 {
            break;
        }
        let next = x - err / dens;
        if next.is_nan() || next <= 0.0 || (chi2.cdf(next) - p).abs() >= err.abs() {
            break;
        }
        x = next;
    }
    x
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("r must lie in (0, 1), got {r}")))
    }
}

fn check_t(t: usize) -> Result<()> {
    if t >= 2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("need T >= 2, got {t}")))
    }
}

/// Limit law of `λ̂̃₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitDistribution {
    PointMass(f64),
    ConstantSpike(ConstantSpikeLaw),
}

impl LimitDistribution {
    /// Density; an atom is reported as an infinite density at its location.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            LimitDistribution::PointMass(p) => {
                if x == *p {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            LimitDistribution::ConstantSpike(law) => law.pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            LimitDistribution::PointMass(p) => {
                if x >= *p {
                    1.0
                } else {
                    0.0
                }
            }
            LimitDistribution::ConstantSpike(law) => law.cdf(x),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            LimitDistribution::PointMass(v) => *v,
            LimitDistribution::ConstantSpike(law) => law.quantile(p),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LimitDistribution::PointMass(v) => *v,
            LimitDistribution::ConstantSpike(law) => law.sample(rng),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        match self {
            LimitDistribution::PointMass(v) => Ok(*v),
            LimitDistribution::ConstantSpike(law) => law.mean(),
        }
    }

    pub fn sd(&self) -> Result<f64> {
        match self {
            LimitDistribution::PointMass(_) => Ok(0.0),
            LimitDistribution::ConstantSpike(law) => law.sd(),
        }
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(self, LimitDistribution::PointMass(_))
    }
}

/// Limit law of the sample share. `r` is only read in the constant regime.
pub fn limit_distribution(regime: SpikeRegime, t: usize, r: f64) -> Result<LimitDistribution> {
    check_t(t)?;
    let d = (t - 1) as f64;
    match regime {
        SpikeRegime::Vanishing => Ok(LimitDistribution::PointMass(1.0 / d)),
        SpikeRegime::Expanding => Ok(LimitDistribution::PointMass(1.0)),
        SpikeRegime::Constant => {
            check_r(r)?;
            if t == 2 {
                Ok(LimitDistribution::PointMass(1.0))
            } else {
                Ok(LimitDistribution::ConstantSpike(ConstantSpikeLaw::new(t, r)?))
            }
        }
    }
}

/// Limit of `E[λ̂̃₁] - λ̃₁`. `r` is only read in the constant regime.
pub fn asymptotic_bias(regime: SpikeRegime, t: usize, r: f64) -> Result<f64> {
    check_t(t)?;
    match regime {
        SpikeRegime::Vanishing => Ok(1.0 / (t - 1) as f64),
        SpikeRegime::Expanding => Ok(0.0),
        SpikeRegime::Constant => {
            check_r(r)?;
            if t == 2 {
                Ok(1.0 - r)
            } else {
                ConstantSpikeLaw::new(t, r)?.bias()
            }
        }
    }
}

/// `1 / (T - 1)`, the bias as `r → 0`.
pub fn worst_case_bound(t: usize) -> Result<f64> {
    check_t(t)?;
    Ok(1.0 / (t - 1) as f64)
}

/// `a / (a + b)`, the only combination of `a` and `b` the limit law depends on.
pub fn r_from_spike(a: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "a and b must be positive and finite, got a = {a}, b = {b}"
        )));
    }
    Ok(a / (a + b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticResult {
    pub regime: SpikeRegime,
    pub t: usize,
    /// Limiting population share: `a/(a+b)`, 0 (vanishing) or 1 (expanding).
    pub r: f64,
    /// Where the estimate concentrates when the law is a point mass.
    pub limit_point: Option<f64>,
    pub bias: f64,
    pub worst_bound: f64,
    /// `T = 2`: the estimate is identically 1 and carries no information.
    pub degenerate: bool,
    pub distribution: LimitDistribution,
}

pub fn asymptotic_result(regime: SpikeRegime, t: usize, r: f64) -> Result<AsymptoticResult> {
    let distribution = limit_distribution(regime, t, r)?;
    let r = match regime {
        SpikeRegime::Vanishing => 0.0,
        SpikeRegime::Expanding => 1.0,
        SpikeRegime::Constant => r,
    };
    let limit_point = match distribution {
        LimitDistribution::PointMass(v) => Some(v),
        LimitDistribution::ConstantSpike(_) => None,
    };
    Ok(AsymptoticResult {
        regime,
        t,
        r,
        limit_point,
        bias: asymptotic_bias(regime, t, r)?,
        worst_bound: worst_case_bound(t)?,
        degenerate: t == 2,
        distribution,
    })
}

/// One row of a bias curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub t: usize,
    pub r: f64,
    pub bias: f64,
    pub bound: f64,
}

/// Constant-spike bias at every `r` of the grid.
pub fn bias_curve(t: usize, r_grid: &[f64]) -> Result<Vec<BiasPoint>> {
    let bound = worst_case_bound(t)?;
    r_grid
        .par_iter()
        .map(|&r| {
            Ok(BiasPoint {
                t,
                r,
                bias: asymptotic_bias(SpikeRegime::Constant, t, r)?,
                bound,
            })
        })
        .collect()
}

/// Roots of the constant-spike bias on `(lo, hi)`: sign changes are
/// bracketed on `steps` equal cells and refined by bisection.
pub fn bias_roots(t: usize, lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) || steps == 0 {
        return Err(Error::InvalidArgument(format!("bad bracket ({lo}, {hi}) with {steps} steps")));
    }
    let f = |r: f64| asymptotic_bias(SpikeRegime::Constant, t, r);
    // keep evaluation points strictly inside (0, 1)
    let width = (hi - lo) / steps as f64;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| {
            let x = lo + width * k as f64;
            x.clamp(lo + width * 1e-6, hi - width * 1e-6)
        })
        .collect();
    let values = grid.par_iter().map(|&r| f(r)).collect::<Result<Vec<f64>>>()?;
    let mut roots = Vec::new();
    for k in 0..steps {
        let (mut a, mut b) = (grid[k], grid[k + 1]);
        let (mut fa, fb) = (values[k], values[k + 1]);
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() || fb == 0.0 {
            continue;
        }
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            let fm = f(m)?;
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
        roots.push(0.5 * (a + b));
    }
    if values[steps] == 0.0 {
        roots.push(grid[steps]);
    }
    Ok(roots)
}

/// Mean, standard deviation and selected quantiles of a limit law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub t: usize,
    pub r: f64,
    pub mean: f64,
    pub sd: f64,
    pub q01: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

pub fn distribution_summary(t: usize, r: f64) -> Result<DistributionSummary> {
    let law = limit_distribution(SpikeRegime::Constant, t, r)?;
    Ok(DistributionSummary {
        t,
        r,
        mean: law.mean()?,
        sd: law.sd()?,
        q01: law.quantile(0.01),
        q05: law.quantile(0.05),
        q50: law.quantile(0.5),
        q95: law.quantile(0.95),
        q99: law.quantile(0.99),
    })
}

/// Bias curve row together with the limit-law summary at the same `(T, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: usize,
    pub r: f64,
    pub bias: f64,
    pub bound: f64,
    pub mean: f64,
    pub sd: f64,
    pub q01: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

/// [`bias_curve`] and [`distribution_summary`] for every `T` and `r`.
pub fn curve_table(t_grid: &[usize], r_grid: &[f64]) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::with_capacity(t_grid.len() * r_grid.len());
    for &t in t_grid {
        let curve = bias_curve(t, r_grid)?;
        let summaries = r_grid
            .par_iter()
            .map(|&r| distribution_summary(t, r))
            .collect::<Result<Vec<_>>>()?;
        for (p, s) in curve.into_iter().zip(summaries) {
            rows.push(CurveRow {
                t,
                r: p.r,
                bias: p.bias,
                bound: p.bound,
                mean: s.mean,
                sd: s.sd,
                q01: s.q01,
                q05: s.q05,
                q50: s.q50,
                q95: s.q95,
                q99: s.q99,
            });
        }
    }
    Ok(rows)
}

/// `[0.01, 0.02, …, 0.99]`.
pub fn percent_grid() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}
