use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use basisrisk::asymptotics::curve_table;
use basisrisk::harness::{calibrated_experiment, run_experiment, spiked_grid, write_csv_rows, QuantileIndex, SpikedGrid};
use basisrisk::metrics::{basis_risk_report, IndexChoice, IndexWeights};
use basisrisk::nalgebra::DVector;
use basisrisk::panel::{load_panel, sample_moments, write_panel, Divisor};
use basisrisk::sampler::{sample, CovarianceModel, SampleSpec};
use basisrisk::spiked::constant_spike_from_target;
use basisrisk::{Error, IngestOptions, YieldPanel};
use serde::Serialize;

use crate::args::*;
use crate::CliError;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Metrics(a) => metrics(a),
        Command::SimulateSpiked(a) => simulate_spiked(a),
        Command::SimulateCalibrated(a) => simulate_calibrated(a),
        Command::Asymptotics(a) => asymptotics(a),
        Command::Sample(a) => sample_panel(a),
    }
}

fn open_sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_json<T: Serialize + ?Sized>(value: &T, out: &Option<PathBuf>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    let mut w = open_sink(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn emit_rows<T: Serialize>(rows: &[T], output: &Output) -> Result<(), CliError> {
    match output.format {
        Format::Json => emit_json(rows, &output.out),
        Format::Csv => {
            let mut w = open_sink(&output.out)?;
            write_csv_rows(rows, &mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn read_panel(path: &Path, missing: &Missing) -> Result<YieldPanel, CliError> {
    let (panel, report) = load_panel(path, IngestOptions { missing: missing.policy() }).map_err(|e| match e {
        Error::Io(io) => CliError::Lib(Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        e => CliError::Lib(e),
    })?;
    if !report.dropped_fields.is_empty() {
        eprintln!(
            "note: dropped {} field(s) with missing values: {}",
            report.dropped_fields.len(),
            report.dropped_fields.join(", ")
        );
    }
    if !report.constant_fields.is_empty() {
        eprintln!(
            "note: {} constant field(s) have no defined R²: {}",
            report.constant_fields.len(),
            report.constant_fields.join(", ")
        );
    }
    Ok(panel)
}

/// Weights as a JSON array in field order or an object keyed by field id.
fn read_weights(path: &Path, panel: &YieldPanel) -> Result<IndexWeights, CliError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("weights file {}: {e}", path.display())))?;
    let bad = |m: String| CliError::Lib(Error::InvalidArgument(format!("weights file {}: {m}", path.display())));
    let number = |v: &serde_json::Value| v.as_f64().ok_or_else(|| bad(format!("{v} is not a number")));
    let w: Vec<f64> = match &value {
        serde_json::Value::Array(items) => {
            if items.len() != panel.n() {
                return Err(bad(format!("{} weights for {} fields", items.len(), panel.n())));
            }
            items.iter().map(number).collect::<Result<_, _>>()?
        }
        serde_json::Value::Object(map) => panel
            .field_ids()
            .iter()
            .map(|id| map.get(id).ok_or_else(|| bad(format!("no weight for field {id:?}"))).and_then(number))
            .collect::<Result<_, _>>()?,
        _ => return Err(bad("expected an array or an object".into())),
    };
    Ok(IndexWeights::custom(DVector::from_vec(w))?)
}

fn check_tau(tau: f64) -> Result<(), CliError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--tau must lie in (0, 1), got {tau}")))
    }
}

fn metrics(a: MetricsArgs) -> Result<(), CliError> {
    check_tau(a.tau)?;
    let choice_needs_weights = a.index == MetricsIndex::Weights;
    if choice_needs_weights != a.weights.is_some() {
        return Err(CliError::Usage("--weights is required with, and only with, --index weights".into()));
    }
    let panel = read_panel(&a.panel, &a.missing)?;
    let choice = match a.index {
        MetricsIndex::Mean => IndexChoice::Mean,
        MetricsIndex::Optimal => IndexChoice::Optimal,
        MetricsIndex::Weights => IndexChoice::Weights(read_weights(a.weights.as_deref().expect("checked"), &panel)?),
    };
    let report = basis_risk_report(&panel, &choice, a.tau)?;
    match a.output.format {
        Format::Json => emit_json(&report, &a.output.out),
        Format::Csv => {
            let mut w = open_sink(&a.output.out)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn simulate_spiked(a: SpikedArgs) -> Result<(), CliError> {
    let grid = SpikedGrid {
        t_grid: a.t_grid,
        n_grid: a.n_grid,
        lambda_grid: a.lambda_grid,
        n_reps: a.reps,
        base_seed: a.seed,
        calibration: a.calibration.mode(),
    };
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = spiked_grid(&grid)?;
    emit_rows(&rows, &a.output)
}

fn simulate_calibrated(a: CalibratedArgs) -> Result<(), CliError> {
    check_tau(a.tau)?;
    let panel = read_panel(&a.panel, &a.missing)?;
    let exp = basisrisk::harness::McExperiment {
        t_grid: a.t_grid,
        n_reps: a.reps,
        base_seed: a.seed,
        tau: a.tau,
        population_oracle_size: a.oracle_size,
        quantile_index: match a.index {
            QuantileIndexArg::Mean => QuantileIndex::Mean,
            QuantileIndexArg::Optimal => QuantileIndex::Optimal,
        },
        ..calibrated_experiment(&panel)
    };
    exp.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = run_experiment(&exp)?;
    match a.output.format {
        Format::Json => emit_json(&summary, &a.output.out),
        Format::Csv => emit_rows(&summary.rows, &a.output),
    }
}

fn asymptotics(a: AsymptoticsArgs) -> Result<(), CliError> {
    if a.t_grid.is_empty() || a.lambda_grid.is_empty() {
        return Err(CliError::Usage("grids must be non-empty".into()));
    }
    if let Some(&t) = a.t_grid.iter().find(|&&t| t < 2) {
        return Err(CliError::Usage(format!("--t-grid values must be >= 2, got {t}")));
    }
    if let Some(&r) = a.lambda_grid.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
        return Err(CliError::Usage(format!("--lambda-grid values must lie in (0, 1), got {r}")));
    }
    if a.t_grid.contains(&2) {
        eprintln!("note: with T = 2 the share estimate is identically 1; its limit law carries no information");
    }
    let rows = curve_table(&a.t_grid, &a.lambda_grid)?;
    emit_rows(&rows, &a.output)
}

#[derive(Serialize)]
struct PanelJson<'a> {
    period_ids: &'a [String],
    field_ids: &'a [String],
    values: Vec<Vec<f64>>,
}

fn sample_panel(a: SampleArgs) -> Result<(), CliError> {
    if a.t < 2 {
        return Err(CliError::Usage(format!("--t must be at least 2, got {}", a.t)));
    }
    let source = if let Some(path) = &a.model {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str::<CovarianceModel>(&text)
            .map_err(|e| Error::InvalidArgument(format!("model file {}: {e}", path.display())))?
    } else if let Some(path) = &a.panel {
        let panel = read_panel(path, &a.missing)?;
        CovarianceModel::Dense(sample_moments(&panel, Divisor::TMinusOne).covariance)
    } else {
        let model = constant_spike_from_target(a.lambda, a.n, a.calibration.mode(), a.seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        CovarianceModel::Spiked(model)
    };
    let panel = sample(&SampleSpec {
        t: a.t,
        mean: None,
        source,
        seed: a.seed,
    })?;
    match a.output.format {
        Format::Csv => {
            let mut w = open_sink(&a.output.out)?;
            write_panel(&panel, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => emit_json(
            &PanelJson {
                period_ids: panel.period_ids(),
                field_ids: panel.field_ids(),
                values: panel.values().row_iter().map(|r| r.iter().copied().collect()).collect(),
            },
            &a.output.out,
        ),
    }
}
