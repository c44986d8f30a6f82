use basisrisk::asymptotics::asymptotic_bias;
use basisrisk::harness::{run_calibrated, run_experiment, spiked_grid, McExperiment, Metric, QuantileIndex, SpikedGrid};
use basisrisk::nalgebra::DMatrix;
use basisrisk::rng::{stream_rng, StreamDomain};
use basisrisk::sampler::CovarianceModel;
use basisrisk::spiked::{constant_spike_from_target, Calibration, SpikeRegime};
use basisrisk::YieldPanel;
use rand_distr::{Distribution, StandardNormal};

/// `T × N` panel of `common factor × loading + noise_sd × noise`.
fn factor_panel(t: usize, n: usize, noise_sd: f64, seed: u64) -> YieldPanel {
    let mut rng = stream_rng(StreamDomain::Sample, seed, 0, 0);
    let f: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
    let values = DMatrix::from_fn(t, n, |i, _| f[i]);
    let noise = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng)) * noise_sd;
    YieldPanel::from_matrix(values + noise).unwrap()
}

#[test]
fn constant_spike_bias_agrees_with_the_limit_formula() {
    let model = constant_spike_from_target(0.5, 1000, Calibration::ExactTarget, 21).unwrap();
    let exp = McExperiment {
        t_grid: vec![4],
        n_reps: 500,
        base_seed: 21,
        metrics: vec![Metric::LambdaShare],
        ..McExperiment::new(CovarianceModel::Spiked(model))
    };
    let row = run_experiment(&exp).unwrap().rows[0].clone();
    let theory = asymptotic_bias(SpikeRegime::Constant, 4, 0.5).unwrap();
    assert!((row.bias - theory).abs() < 0.02, "empirical {} vs limit {theory}", row.bias);
}

#[test]
fn bias_is_negligible_at_one_hundred_periods() {
    let rows = spiked_grid(&SpikedGrid {
        t_grid: vec![100],
        n_grid: vec![200],
        lambda_grid: vec![0.1, 0.5, 0.9],
        n_reps: 100,
        base_seed: 3,
        calibration: Calibration::ExactTarget,
    })
    .unwrap();
    for r in rows {
        assert!(r.empirical_bias <= 1.0 / 99.0 + 3.0 * r.mc_standard_error.unwrap(), "{r:?}");
    }
}

#[test]
fn limit_recipe_share_approaches_target_with_n() {
    let rows = spiked_grid(&SpikedGrid {
        t_grid: vec![4],
        n_grid: vec![50, 1000],
        lambda_grid: vec![0.5],
        n_reps: 10,
        base_seed: 3,
        calibration: Calibration::LimitRecipe,
    })
    .unwrap();
    assert!((rows[0].population_share - 0.5).abs() > (rows[1].population_share - 0.5).abs());
    assert!((rows[1].population_share - 0.5).abs() < 1e-3);
}

#[test]
fn highly_correlated_panel_has_little_or_negative_bias() {
    let panel = factor_panel(30, 40, 0.05, 1);
    let s = run_calibrated(&panel, &[4, 10, 20], 200, 2, 0.3, QuantileIndex::Mean).unwrap();
    for r in s.rows.iter().filter(|r| r.metric != Metric::R2Quantile) {
        assert!(r.bias < 0.01, "{r:?}");
    }
}

#[test]
fn weakly_correlated_panel_inflates_the_quantile_pseudo_r2() {
    let panel = factor_panel(40, 30, 3.0, 4);
    let mut exp = basisrisk::harness::calibrated_experiment(&panel);
    exp.t_grid = vec![4];
    exp.n_reps = 200;
    exp.population_oracle_size = 5000;
    exp.metrics = vec![Metric::R2Quantile];
    let row = run_experiment(&exp).unwrap().rows[0].clone();
    assert!(row.bias / row.population_value > 1.0, "{row:?}");
}
