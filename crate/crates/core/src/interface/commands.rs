//! Subcommand bodies. Each returns an [`InterfaceError`] whose
//! [`exit_code`](InterfaceError::exit_code) the binary reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::estimators::{SolverOptions, WeightedDesign};
use crate::sampling::{aggregate_weights, compute_wave_weights, WaveColumn};
use crate::simulation::{run_study, synthetic_table, OutcomeForm, Schema, StudyMetrics};

use super::config::{parse_config, EstimateConfig, Parallelism};
use super::persist::{read_trace, read_weights, write_replications, write_summary, EstimationData, TraceRow};
use super::{InterfaceError, MANIFEST_FILE, REPLICATIONS_FILE, SUMMARY_FILE};

/// Minimum size of a generated superpopulation.
pub const MIN_GENERATED_ROWS: usize = 10_000;

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub parallel: Option<Parallelism>,
    pub force: bool,
}

fn write_file(path: &Path, contents: &str) -> Result<(), InterfaceError> {
    std::fs::write(path, contents).map_err(|e| InterfaceError::io(path, e))
}

/// Runs a Monte Carlo study and writes `replications.csv`, `summary.csv`
/// and `manifest.toml` into `opts.out`.
pub fn cmd_simulate(config_path: &Path, opts: &SimulateOptions) -> Result<StudyMetrics, InterfaceError> {
    let mut config = parse_config(config_path)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(reps) = opts.replications {
        config.replications = reps;
    }
    if let Some(parallel) = opts.parallel {
        config.parallel = parallel;
    }
    config.manifest = None;
    config.validate()?;

    let out = &opts.out;
    if out.exists() {
        let occupied = std::fs::read_dir(out).map_err(|e| InterfaceError::io(out, e))?.next().is_some();
        if occupied && !opts.force {
            return Err(InterfaceError::OutputExists(out.clone()));
        }
    } else {
        std::fs::create_dir_all(out).map_err(|e| InterfaceError::io(out, e))?;
    }

    let run = config.resolve()?;
    log::info!("superpopulation of {} rows, estimand {:?}", run.superpop.len(), run.superpop.oracle_theta.as_slice());
    let outcome = run_study(&run.superpop, &run.spec)?;
    let oracle = run.superpop.oracle_theta.as_slice();
    let metrics = outcome.metrics(&run.superpop, run.spec.strategy.target)?;
    write_replications(&out.join(REPLICATIONS_FILE), &outcome, &run.coordinate_names, oracle)?;
    write_summary(&out.join(SUMMARY_FILE), &metrics, &run.coordinate_names, oracle)?;
    write_file(&out.join(MANIFEST_FILE), &config.manifest()?)?;
    Ok(metrics)
}

/// Writes the synthetic superpopulation as CSV.
pub fn cmd_gen_data(
    kind: &str,
    rows: usize,
    seed: u64,
    outcome: OutcomeForm,
    out: &Path,
) -> Result<(), InterfaceError> {
    if kind != "synthetic" {
        return Err(InterfaceError::Config {
            key: "kind".into(),
            message: format!("unknown data kind '{kind}'; only 'synthetic' is available"),
        });
    }
    if rows < MIN_GENERATED_ROWS {
        return Err(InterfaceError::Config {
            key: "rows".into(),
            message: format!("at least {MIN_GENERATED_ROWS} rows are required"),
        });
    }
    synthetic_table(rows, seed, outcome).write_csv(out)?;
    Ok(())
}

/// Inputs of a one-shot estimation: a dataset plus either per-unit weights
/// or the full wave trace.
#[derive(Debug, Clone)]
pub struct EstimateInput {
    pub config: PathBuf,
    pub data: PathBuf,
    pub weights: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

/// Aggregated weights from a trace. Every unit needs exactly one row per
/// wave `1..=K`.
fn trace_weights(
    rows: &[TraceRow],
    data: &EstimationData,
    mix: Option<&[f64]>,
    file: &str,
) -> Result<Vec<f64>, InterfaceError> {
    let err = |row: usize, message: String| InterfaceError::Data { file: file.to_string(), row, message };
    let positions = data.positions();
    let waves = rows.iter().map(|r| r.wave).max().unwrap_or(0);
    if waves == 0 {
        return Err(err(1, "trace has no waves".into()));
    }
    let n = data.len();
    let mut columns =
        vec![WaveColumn { pi: vec![f64::NAN; n], u: vec![f64::NAN; n], indicator: vec![false; n] }; waves];
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let pos = *positions.get(&r.id).ok_or_else(|| err(row, format!("unknown id {}", r.id)))?;
        if r.wave == 0 {
            return Err(err(row, "waves are numbered from 1".into()));
        }
        if seen.insert((pos, r.wave), row).is_some() {
            return Err(err(row, format!("duplicate entry for id {} wave {}", r.id, r.wave)));
        }
        if !(r.pi > 0.0 && r.pi < 1.0) {
            return Err(err(row, format!("probability {} not in (0, 1)", r.pi)));
        }
        let hit = match r.indicator {
            0 => false,
            1 => true,
            other => return Err(err(row, format!("indicator {other} is not 0 or 1"))),
        };
        if let Some(u) = r.u {
            if (u <= r.pi) != hit {
                return Err(err(row, format!("indicator {} disagrees with u = {u} and pi = {}", r.indicator, r.pi)));
            }
        }
        let column = &mut columns[r.wave - 1];
        column.pi[pos] = r.pi;
        column.u[pos] = r.u.unwrap_or(f64::NAN);
        column.indicator[pos] = hit;
    }
    if seen.len() != n * waves {
        let (pos, wave) = (0..n)
            .flat_map(|p| (1..=waves).map(move |k| (p, k)))
            .find(|key| !seen.contains_key(key))
            .expect("some entry is missing");
        return Err(err(rows.len() + 1, format!("no entry for id {} wave {wave}", data.ids[pos])));
    }
    let c = match mix {
        Some(c) => c.to_vec(),
        None => {
            let mut expected = vec![0.0; waves];
            for p in 0..n {
                let mut fresh = true;
                for (k, column) in columns.iter().enumerate() {
                    if fresh {
                        expected[k] += column.pi[p];
                    }
                    fresh &= !column.indicator[p];
                }
            }
            let total: f64 = expected.iter().sum();
            expected.iter().map(|e| e / total).collect()
        }
    };
    let wave_weights = compute_wave_weights(&columns, waves).map_err(|e| err(0, e.to_string()))?;
    aggregate_weights(&wave_weights, &c)
        .map_err(|e| InterfaceError::Config { key: "mix".into(), message: e.to_string() })
}

/// Estimates `θ` from a real dataset and prints
/// `coordinate,name,estimate,variance,std_error,lower,upper` rows.
pub fn cmd_estimate(input: &EstimateInput, out: &mut dyn Write) -> Result<(), InterfaceError> {
    let config = EstimateConfig::load(&input.config)?;
    let schema: Schema = (&config.schema).into();
    let loss = config.loss.build(&schema)?;
    let mode = config.tuning.build(loss.dim())?;
    let data = EstimationData::read(&input.data, &schema)?;
    if data.is_empty() {
        return Err(InterfaceError::Data { file: input.data.display().to_string(), row: 0, message: "no rows".into() });
    }
    let weights = match (&input.weights, &input.trace) {
        (Some(w), None) => read_weights(w, &data)?,
        (None, Some(t)) => trace_weights(&read_trace(t)?, &data, config.mix.as_deref(), &t.display().to_string())?,
        _ => {
            return Err(InterfaceError::Config {
                key: "input".into(),
                message: "give exactly one of a weights file or a trace file".into(),
            })
        }
    };
    let file = input.data.display().to_string();
    let mut design = WeightedDesign {
        n: data.len(),
        labelled_full: Vec::new(),
        labelled_proxy: Vec::new(),
        weights: Vec::new(),
        all_proxy: data.cheap.clone(),
    };
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            design.labelled_full.push(data.full_row(i, &file)?);
            design.labelled_proxy.push(data.cheap[i].clone());
            design.weights.push(w);
        }
    }
    let report = crate::estimate(&loss, &design, &mode, config.tuning.ridge, config.alpha, &SolverOptions::default())
        .map_err(|e| InterfaceError::Estimation(e.to_string()))?;
    let names = config.loss.coordinate_names();
    let io = |e: std::io::Error| InterfaceError::io(Path::new("<stdout>"), e);
    writeln!(out, "coordinate,name,estimate,variance,std_error,lower,upper").map_err(io)?;
    for ci in &report.intervals {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            ci.coordinate,
            names[ci.coordinate],
            ci.estimate,
            ci.variance,
            (ci.variance / design.n as f64).sqrt(),
            ci.lower,
            ci.upper
        )
        .map_err(io)?;
    }
    for j in &report.clamped {
        log::warn!("variance of coordinate {j} was negative and clamped to 0");
    }
    Ok(())
}

/// Prints a summary table from a run directory or a `summary.csv` path.
pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<(), InterfaceError> {
    let file = if path.is_dir() { path.join(SUMMARY_FILE) } else { path.to_path_buf() };
    let mut reader = csv::Reader::from_path(&file).map_err(|e| InterfaceError::io(&file, e))?;
    let headers = reader.headers().map_err(|e| InterfaceError::io(&file, e))?.clone();
    let shown = [
        "arm",
        "name",
        "replications",
        "failed",
        "rmse",
        "bias",
        "coverage",
        "mean_width",
        "variance_ratio",
        "ess_ratio",
    ];
    let index: Vec<usize> = shown
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| InterfaceError::Data {
                file: file.display().to_string(),
                row: 0,
                message: format!("column '{name}' missing"),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut table: Vec<Vec<String>> = vec![shown.iter().map(|s| s.to_string()).collect()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| InterfaceError::Data {
            file: file.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?;
        table.push(
            index
                .iter()
                .map(|&c| {
                    let cell = record.get(c).unwrap_or("");
                    match cell.parse::<f64>() {
                        Ok(v) if cell.contains('.') || cell.contains('e') => format!("{v:.4}"),
                        _ => cell.to_string(),
                    }
                })
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..shown.len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let io = |e: std::io::Error| InterfaceError::io(Path::new("<stdout>"), e);
    for row in &table {
        let line: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        writeln!(out, "{}", line.join("  ").trim_end()).map_err(io)?;
    }
    Ok(())
}
