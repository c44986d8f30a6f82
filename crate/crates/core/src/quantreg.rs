//! Two-parameter quantile regression and the total quantile pseudo-R².
//!
//! `V(f, τ)` is the smallest achievable sum of pinball losses
//! `ρ_τ(u) = u (τ - 1{u < 0})` for the model `y = c + β f`, and `V(const, τ)`
//! the same for `y = c`. The total pseudo-R² over a panel is
//! `1 - Σ_i V_i(f, τ) / Σ_i V_i(const, τ)`.
//!
//! Some optimal line always interpolates two observations, so small problems
//! are solved by enumerating every such line. Larger ones use an exact
//! vertex-descent: rotate the line around a point it passes through to the
//! best slope (a weighted quantile of pairwise slopes), move to the new
//! contact point, and stop once no rotation around any contact point helps.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::panel::YieldPanel;

pub const DEFAULT_TAU: f64 = 0.3;

/// Problems with at most this many observations are solved by enumeration.
pub const ENUMERATION_MAX_T: usize = 200;

const MAX_DESCENT_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub intercept: f64,
    pub slope: f64,
    /// Sum of pinball losses at the returned coefficients.
    pub v_value: f64,
    pub tau: f64,
}

#[inline]
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// `Σ_t ρ_τ(y_t - c - β f_t)`.
pub fn line_loss(y: &[f64], f: &[f64], intercept: f64, slope: f64, tau: f64) -> f64 {
    y.iter()
        .zip(f)
        .map(|(&yt, &ft)| pinball(yt - intercept - slope * ft, tau))
        .sum()
}

fn const_loss(y: &[f64], c: f64, tau: f64) -> f64 {
    // same arithmetic as `line_loss` with a zero slope
    y.iter().map(|&yt| pinball(yt - c - 0.0, tau)).sum()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")))
    }
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} contains non-finite values")))
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Best constant: the τ-quantile of `y`, taking the smallest order statistic
/// when several are optimal.
pub fn fit_quantile_const(y: &[f64], tau: f64) -> Result<QuantileFit> {
    check_tau(tau)?;
    check_finite("y", y)?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len();
    // 1-based optimal order statistic is ceil(τT); rounding in τT can move
    // the ceiling by one, so the neighbours are candidates too.
    let k = ((tau * t as f64).ceil() as usize).clamp(1, t);
    let mut candidates: Vec<f64> = (k.saturating_sub(1).max(1)..=(k + 1).min(t))
        .map(|i| sorted[i - 1])
        .collect();
    candidates.dedup();
    let losses: Vec<f64> = candidates.iter().map(|&c| const_loss(y, c, tau)).collect();
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = best.abs() * 1e-12;
    let i = losses.iter().position(|&l| l <= best + tol).unwrap_or(0);
    Ok(QuantileFit {
        intercept: candidates[i],
        slope: 0.0,
        v_value: losses[i],
        tau,
    })
}

fn check_line_inputs(y: &[f64], f: &[f64], tau: f64) -> Result<()> {
    check_tau(tau)?;
    if y.len() != f.len() {
        return Err(Error::InvalidArgument(format!(
            "y has length {}, index has length {}",
            y.len(),
            f.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 observations".into()));
    }
    check_finite("y", y)?;
    check_finite("index", f)?;
    if is_constant(f) {
        return Err(Error::DegenerateIndex("index is constant".into()));
    }
    Ok(())
}

/// Globally optimal quantile line `y = c + β f`.
pub fn fit_quantile_line(y: &[f64], f: &[f64], tau: f64) -> Result<QuantileFit> {
    if y.len() <= ENUMERATION_MAX_T {
        fit_quantile_line_enumerate(y, f, tau)
    } else {
        fit_quantile_line_descent(y, f, tau)
    }
}

/// Exhaustive search over every horizontal line through one observation and
/// every line through two observations. `O(T³)`.
pub fn fit_quantile_line_enumerate(y: &[f64], f: &[f64], tau: f64) -> Result<QuantileFit> {
    check_line_inputs(y, f, tau)?;
    let t = y.len();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut consider = |c: f64, beta: f64| {
        let loss = line_loss(y, f, c, beta, tau);
        if loss < best.0 {
            best = (loss, c, beta);
        }
    };
    for &yk in y {
        consider(yk, 0.0);
    }
    for i in 0..t {
        for j in (i + 1)..t {
            let df = f[j] - f[i];
            if df == 0.0 {
                continue;
            }
            let beta = (y[j] - y[i]) / df;
            consider(y[i] - beta * f[i], beta);
        }
    }
    let (v_value, intercept, slope) = best;
    Ok(QuantileFit {
        intercept,
        slope,
        v_value,
        tau,
    })
}

/// Best slope for lines forced through observation `pivot`, and the
/// observation the optimal line then also passes through.
fn best_rotation(y: &[f64], f: &[f64], pivot: usize, tau: f64) -> Option<(f64, usize)> {
    // ρ_τ(d - β e) = |e| ρ_τ'(d/e - β) with τ' = τ for e > 0, 1 - τ for e < 0
    let mut knots: Vec<(f64, f64, f64, usize)> = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let e = f[i] - f[pivot];
        if e == 0.0 {
            continue;
        }
        let s = (y[i] - y[pivot]) / e;
        let ti = if e > 0.0 { tau } else { 1.0 - tau };
        knots.push((s, e.abs(), ti, i));
    }
    if knots.is_empty() {
        return None;
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.3.cmp(&b.3)));
    // left derivative at -∞, then each knot adds its weight
    let mut deriv = -compensated_sum(knots.iter().map(|k| k.1 * k.2));
    for &(s, w, _, i) in &knots {
        deriv += w;
        if deriv >= 0.0 {
            return Some((s, i));
        }
    }
    knots.last().map(|k| (k.0, k.3))
}

/// Exact vertex descent, `O(T log T)` per step.
pub fn fit_quantile_line_descent(y: &[f64], f: &[f64], tau: f64) -> Result<QuantileFit> {
    check_line_inputs(y, f, tau)?;
    let konst = fit_quantile_const(y, tau)?;
    let start = y
        .iter()
        .position(|&v| v == konst.intercept)
        .expect("constant fit is an observed value");

    let line_through = |p: usize| -> Option<(f64, f64, f64)> {
        let (beta, _) = best_rotation(y, f, p, tau)?;
        let c = y[p] - beta * f[p];
        Some((line_loss(y, f, c, beta, tau), c, beta))
    };

    let mut best = line_through(start).expect("index is not constant");
    for _ in 0..MAX_DESCENT_STEPS {
        let (loss, c, beta) = best;
        let tol = loss.abs() * 1e-13;
        let improved = (0..y.len())
            .filter(|&p| {
                let fitted = c + beta * f[p];
                (y[p] - fitted).abs() <= 1e-11 * (1.0 + y[p].abs() + fitted.abs())
            })
            .filter_map(line_through)
            .find(|cand| cand.0 < loss - tol);
        match improved {
            Some(next) => best = next,
            None => break,
        }
    }

    let (mut v_value, mut intercept, mut slope) = best;
    if konst.v_value < v_value {
        (v_value, intercept, slope) = (konst.v_value, konst.intercept, 0.0);
    }
    Ok(QuantileFit {
        intercept,
        slope,
        v_value,
        tau,
    })
}

/// Total quantile pseudo-R² of `index` over all fields of the panel.
///
/// Not bounded below at finite `T` in general, but never negative here since
/// the line fit nests the constant fit.
pub fn total_quantile_r2(panel: &YieldPanel, index: &DVector<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if index.len() != panel.t() {
        return Err(Error::InvalidArgument(format!(
            "index has length {}, panel has {} periods",
            index.len(),
            panel.t()
        )));
    }
    let f = index.as_slice();
    if is_constant(f) {
        return Err(Error::DegenerateIndex("index is constant".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..panel.n())
        .into_par_iter()
        .map(|i| {
            let y: Vec<f64> = panel.values().column(i).iter().copied().collect();
            let line = fit_quantile_line(&y, f, tau)?;
            let konst = fit_quantile_const(&y, tau)?;
            Ok((line.v_value, konst.v_value))
        })
        .collect::<Result<_>>()?;
    let v_line = compensated_sum(pairs.iter().map(|p| p.0));
    let v_const = compensated_sum(pairs.iter().map(|p| p.1));
    if v_const <= 0.0 {
        return Err(Error::DegenerateCovariance("every field is constant".into()));
    }
    Ok(1.0 - v_line / v_const)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Dense grid search over (c, β); an upper bound on the optimum.
    fn grid_min(y: &[f64], f: &[f64], tau: f64, steps: usize) -> f64 {
        let (ylo, yhi) = (y.iter().copied().fold(f64::MAX, f64::min), y.iter().copied().fold(f64::MIN, f64::max));
        let (flo, fhi) = (f.iter().copied().fold(f64::MAX, f64::min), f.iter().copied().fold(f64::MIN, f64::max));
        let smax = 3.0 * (yhi - ylo) / (fhi - flo);
        let (cmid, cspan) = ((ylo + yhi) / 2.0, 3.0 * (yhi - ylo) + 3.0 * smax * flo.abs().max(fhi.abs()));
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            let beta = -smax + 2.0 * smax * a as f64 / steps as f64;
            for b in 0..=steps {
                let c = cmid - cspan + 2.0 * cspan * b as f64 / steps as f64;
                best = best.min(line_loss(y, f, c, beta, tau));
            }
        }
        best
    }

    #[test]
    fn pinball_definition() {
        assert_eq!(pinball(2.0, 0.3), 0.6);
        assert!((pinball(-2.0, 0.3) - 1.4).abs() < 1e-15);
        assert_eq!(pinball(0.0, 0.3), 0.0);
    }

    #[test]
    fn perfect_fit() {
        let f = [0.5, -1.0, 2.0, 3.5, 0.0];
        for tau in [0.1, 0.3, 0.5, 0.9] {
            let fit = fit_quantile_line(&f, &f, tau).unwrap();
            assert_eq!((fit.slope, fit.intercept, fit.v_value), (1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn median_and_tie_rule() {
        let fit = fit_quantile_const(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert_eq!(fit.intercept, 2.0);
        // Σ ρ_0.5 over residuals (-1, 0, 1, 2)
        assert_eq!(fit.v_value, 2.0);
        let fit = fit_quantile_const(&[5.0, 1.0, 3.0], 0.5).unwrap();
        assert_eq!(fit.intercept, 3.0);
        assert_eq!(fit_quantile_const(&[2.5; 6], 0.3).unwrap().v_value, 0.0);
    }

    #[test]
    fn tie_rule_survives_rounding_of_tau_t() {
        // 0.3 * 10 = 3.0000000000000004; optimal set is [y_(3), y_(4)]
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let fit = fit_quantile_const(&y, 0.3).unwrap();
        assert_eq!(fit.intercept, 3.0);
    }

    #[test]
    fn const_fit_beats_every_observed_value() {
        let y = normals(3, 17);
        let fit = fit_quantile_const(&y, 0.3).unwrap();
        for &c in &y {
            assert!(fit.v_value <= const_loss(&y, c, 0.3) + 1e-15);
        }
    }

    #[test]
    fn enumeration_matches_grid_search() {
        let y = normals(11, 10);
        let f = normals(12, 10);
        let fit = fit_quantile_line(&y, &f, 0.3).unwrap();
        let grid = grid_min(&y, &f, 0.3, 400);
        assert!(fit.v_value <= grid + 1e-9);
        // 400 steps leave a grid gap of well under 5% of the loss here
        assert!(grid - fit.v_value < 0.05 * grid, "{} vs {grid}", fit.v_value);
        assert_eq!(fit.v_value, line_loss(&y, &f, fit.intercept, fit.slope, 0.3));
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_quantile_line(&[1.0, 2.0], &[3.0, 3.0], 0.3), Err(Error::DegenerateIndex(_))));
        assert!(fit_quantile_line(&[1.0], &[3.0], 0.3).is_err());
        assert!(fit_quantile_line(&[1.0, 2.0], &[0.0, 1.0], 1.0).is_err());
        assert!(fit_quantile_const(&[], 0.5).is_err());
        assert!(fit_quantile_const(&[1.0], 0.0).is_err());
    }

    #[test]
    fn descent_matches_enumeration_with_ties() {
        // integer data produce collinear triples and repeated index values
        for seed in 0..40u64 {
            let t = 5 + (seed as usize * 7) % 60;
            let y: Vec<f64> = normals(seed, t).iter().map(|v| (v * 2.0).round()).collect();
            let f: Vec<f64> = normals(seed + 1000, t).iter().map(|v| (v * 2.0).round()).collect();
            if is_constant(&f) {
                continue;
            }
            for tau in [0.1, 0.3, 0.5, 0.7] {
                let a = fit_quantile_line_enumerate(&y, &f, tau).unwrap();
                let b = fit_quantile_line_descent(&y, &f, tau).unwrap();
                assert!(
                    (a.v_value - b.v_value).abs() <= 1e-9 * (1.0 + a.v_value),
                    "seed {seed} tau {tau}: {} vs {}",
                    a.v_value,
                    b.v_value
                );
            }
        }
    }

    #[test]
    fn large_t_uses_descent_and_nests_constant() {
        let t = 5000;
        let f = normals(5, t);
        let y: Vec<f64> = normals(6, t).iter().zip(&f).map(|(e, x)| 0.5 * x + e).collect();
        let fit = fit_quantile_line(&y, &f, 0.3).unwrap();
        let k = fit_quantile_const(&y, 0.3).unwrap();
        assert!(fit.v_value < k.v_value);
        assert!((fit.slope - 0.5).abs() < 0.1);
    }

    fn panel(t: usize, n: usize, seed: u64) -> YieldPanel {
        YieldPanel::from_matrix(nalgebra::DMatrix::from_vec(t, n, normals(seed, t * n))).unwrap()
    }

    #[test]
    fn total_pseudo_r2_perfect_and_bounded() {
        let f = DVector::from_vec(vec![1.0, 4.0, 2.0, 8.0]);
        let p = YieldPanel::from_matrix(nalgebra::DMatrix::from_fn(4, 3, |t, _| f[t])).unwrap();
        assert_eq!(total_quantile_r2(&p, &f, 0.3).unwrap(), 1.0);

        let p = panel(4, 50, 21);
        let r = total_quantile_r2(&p, &p.row_means(), 0.3).unwrap();
        assert!((-1e-10..=1.0).contains(&r));
    }

    #[test]
    fn total_pseudo_r2_matches_grid_reimplementation() {
        let p = panel(4, 50, 99);
        let f = p.row_means();
        let got = total_quantile_r2(&p, &f, 0.3).unwrap();
        let mut vf = 0.0;
        let mut vc = 0.0;
        for i in 0..p.n() {
            let y: Vec<f64> = p.values().column(i).iter().copied().collect();
            vf += grid_min(&y, f.as_slice(), 0.3, 300);
            // constant model: brute force over a fine grid of levels
            let (lo, hi) = (y.iter().copied().fold(f64::MAX, f64::min), y.iter().copied().fold(f64::MIN, f64::max));
            vc += (0..=20_000)
                .map(|k| const_loss(&y, lo + (hi - lo) * k as f64 / 20_000.0, 0.3))
                .fold(f64::INFINITY, f64::min);
        }
        let oracle = 1.0 - vf / vc;
        assert!(got >= oracle - 1e-9, "{got} vs {oracle}");
        assert!(got - oracle < 0.02, "{got} vs {oracle}");
    }

    #[test]
    fn no_fields_vary() {
        let p = YieldPanel::from_matrix(nalgebra::DMatrix::from_element(3, 2, 1.0)).unwrap();
        let f = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert!(matches!(total_quantile_r2(&p, &f, 0.3), Err(Error::DegenerateCovariance(_))));
    }

    proptest! {
        #[test]
        fn nested_and_invariant(
            y in prop::collection::vec(-10.0f64..10.0, 3..14),
            seed in 0u64..1000,
            k in -50.0f64..50.0,
            tau in 0.05f64..0.95,
        ) {
            let f = normals(seed, y.len());
            let line = fit_quantile_line(&y, &f, tau).unwrap();
            let konst = fit_quantile_const(&y, tau).unwrap();
            prop_assert!(line.v_value <= konst.v_value);

            let shifted: Vec<f64> = y.iter().map(|v| v + k).collect();
            let l2 = fit_quantile_line(&shifted, &f, tau).unwrap();
            let c2 = fit_quantile_const(&shifted, tau).unwrap();
            let scale = 1e-9 * (1.0 + line.v_value + konst.v_value + k.abs() * y.len() as f64);
            prop_assert!((l2.v_value - line.v_value).abs() <= scale);
            prop_assert!((c2.v_value - konst.v_value).abs() <= scale);

            let ny: Vec<f64> = y.iter().map(|v| -v).collect();
            let nf: Vec<f64> = f.iter().map(|v| -v).collect();
            let flipped = fit_quantile_line(&ny, &nf, 1.0 - tau).unwrap();
            prop_assert!((flipped.v_value - line.v_value).abs() <= 1e-9 * (1.0 + line.v_value));
        }
    }
}
