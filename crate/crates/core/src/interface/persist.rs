//! CSV schemas for simulation output and estimation input.
//!
//! `replications.csv` has one row per replication, arm and coordinate with
//! columns [`REPLICATION_COLUMNS`]. `summary.csv` has one row per arm for
//! the target coordinate with columns [`SUMMARY_COLUMNS`]; the ESS columns
//! are filled on the adaptive row only. Floats use shortest round-trip
//! formatting, so every value reads back bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crate::simulation::{ArmMetrics, ReplicationResult, ReplicationStatus, Schema, StudyMetrics, StudyOutcome};

use super::InterfaceError;

pub const REPLICATION_COLUMNS: [&str; 20] = [
    "replication",
    "arm",
    "coordinate",
    "name",
    "status",
    "n",
    "n_labelled",
    "fallback_waves",
    "estimate",
    "variance",
    "lower",
    "upper",
    "covered",
    "oracle",
    "variance_optimal",
    "variance_identity",
    "variance_zero",
    "clamped",
    "not_psd",
    "reason",
];

pub const SUMMARY_COLUMNS: [&str; 21] = [
    "arm",
    "coordinate",
    "name",
    "oracle",
    "replications",
    "failed",
    "fallbacks",
    "rmse",
    "bias",
    "coverage",
    "mean_width",
    "mean_labelled",
    "mean_estimated_variance",
    "empirical_variance",
    "variance_ratio",
    "skewness",
    "excess_kurtosis",
    "ess_ratio",
    "ess_ratio_literal",
    "ess_ratio_unadjusted",
    "pairs",
];

fn writer(path: &Path) -> Result<csv::Writer<File>, InterfaceError> {
    csv::Writer::from_path(path).map_err(|e| InterfaceError::io(path, e))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn joined<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

fn result_rows(r: &ReplicationResult, names: &[String], oracle: &[f64]) -> Vec<Vec<String>> {
    let head = |j: usize| vec![r.replication.to_string(), r.arm.label().to_string(), j.to_string(), names[j].clone()];
    let common = [r.n.to_string(), r.n_labelled.to_string(), joined(&r.fallback_waves)];
    match &r.status {
        ReplicationStatus::Failed(reason) => (0..names.len())
            .map(|j| {
                let mut row = head(j);
                row.push("failed".into());
                row.extend(common.iter().cloned());
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(oracle[j].to_string());
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(reason.clone());
                row
            })
            .collect(),
        ReplicationStatus::Ok => (0..names.len())
            .map(|j| {
                let mut row = head(j);
                row.push("ok".into());
                row.extend(common.iter().cloned());
                row.extend([
                    r.theta[j].to_string(),
                    r.variance[j].to_string(),
                    r.lower[j].to_string(),
                    r.upper[j].to_string(),
                    flag(r.covered[j]),
                    oracle[j].to_string(),
                    r.variance_optimal[j].to_string(),
                    r.variance_identity[j].to_string(),
                    r.variance_zero[j].to_string(),
                    flag(r.clamped.contains(&j)),
                    flag(r.not_psd),
                    String::new(),
                ]);
                row
            })
            .collect(),
    }
}

/// Writes every replication of both arms, ordered by replication then arm.
pub fn write_replications(
    path: &Path,
    outcome: &StudyOutcome,
    names: &[String],
    oracle: &[f64],
) -> Result<(), InterfaceError> {
    let mut w = writer(path)?;
    let err = |e: csv::Error| InterfaceError::io(path, e);
    w.write_record(REPLICATION_COLUMNS).map_err(err)?;
    for (i, adaptive) in outcome.adaptive.iter().enumerate() {
        let baseline = outcome.baseline.as_ref().map(|b| &b[i]);
        for r in std::iter::once(adaptive).chain(baseline) {
            for row in result_rows(r, names, oracle) {
                w.write_record(&row).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| InterfaceError::io(path, e))
}

fn arm_row(arm: &str, m: &ArmMetrics, metrics: &StudyMetrics, name: &str, oracle: f64, ess: bool) -> Vec<String> {
    let opt = |v: Option<f64>| if ess { v.map(|x| x.to_string()).unwrap_or_default() } else { String::new() };
    vec![
        arm.to_string(),
        metrics.target.to_string(),
        name.to_string(),
        oracle.to_string(),
        m.replications.to_string(),
        m.failed.to_string(),
        m.fallbacks.to_string(),
        m.rmse.to_string(),
        m.bias.to_string(),
        m.coverage.to_string(),
        m.mean_width.to_string(),
        m.mean_labelled.to_string(),
        m.mean_estimated_variance.to_string(),
        m.empirical_variance.to_string(),
        m.variance_ratio.to_string(),
        m.skewness.to_string(),
        m.excess_kurtosis.to_string(),
        opt(metrics.ess_ratio),
        opt(metrics.ess_ratio_literal),
        opt(metrics.ess_ratio_unadjusted),
        if ess && metrics.baseline.is_some() { metrics.pairs.to_string() } else { String::new() },
    ]
}

pub fn write_summary(
    path: &Path,
    metrics: &StudyMetrics,
    names: &[String],
    oracle: &[f64],
) -> Result<(), InterfaceError> {
    let mut w = writer(path)?;
    let err = |e: csv::Error| InterfaceError::io(path, e);
    let j = metrics.target;
    w.write_record(SUMMARY_COLUMNS).map_err(err)?;
    w.write_record(arm_row("adaptive", &metrics.adaptive, metrics, &names[j], oracle[j], true)).map_err(err)?;
    if let Some(base) = &metrics.baseline {
        w.write_record(arm_row("baseline", base, metrics, &names[j], oracle[j], false)).map_err(err)?;
    }
    w.flush().map_err(|e| InterfaceError::io(path, e))
}

/// Rows of an estimation dataset. Expensive values may be missing on
/// unlabelled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationData {
    /// Unit ids: the `id` column when present, else the 0-based row index.
    pub ids: Vec<u64>,
    pub cheap: Vec<Vec<f64>>,
    pub expensive: Vec<Option<Vec<f64>>>,
    pub n_common: usize,
}

impl EstimationData {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Position of each id.
    pub fn positions(&self) -> BTreeMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Full feature vector of row `i`, or a data error naming the 1-based
    /// row when an expensive value is missing.
    pub fn full_row(&self, i: usize, file: &str) -> Result<Vec<f64>, InterfaceError> {
        let expensive = self.expensive[i].as_ref().ok_or_else(|| InterfaceError::Data {
            file: file.to_string(),
            row: i + 1,
            message: "labelled row is missing an expensive value".into(),
        })?;
        let mut x = self.cheap[i][..self.n_common].to_vec();
        x.extend_from_slice(expensive);
        Ok(x)
    }

    pub fn read(path: &Path, schema: &Schema) -> Result<Self, InterfaceError> {
        let file = path.display().to_string();
        let data_err = |row: usize, message: String| InterfaceError::Data { file: file.clone(), row, message };
        let mut reader =
            csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| InterfaceError::io(path, e))?;
        let headers: Vec<String> =
            reader.headers().map_err(|e| InterfaceError::io(path, e))?.iter().map(str::to_string).collect();
        let column = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| InterfaceError::Config {
                key: "schema".into(),
                message: format!("column '{name}' missing from {file}"),
            })
        };
        let id_col = headers.iter().position(|h| h == "id");
        let cheap_cols = schema.cheap_names().iter().map(|n| column(n)).collect::<Result<Vec<_>, _>>()?;
        let exp_cols = schema.expensive.iter().map(|n| column(n)).collect::<Result<Vec<_>, _>>()?;
        let mut data =
            EstimationData { ids: Vec::new(), cheap: Vec::new(), expensive: Vec::new(), n_common: schema.common.len() };
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| data_err(row, e.to_string()))?;
            let cell = |c: usize| -> Result<Option<f64>, InterfaceError> {
                let text = record.get(c).unwrap_or("");
                if text.is_empty() || text.eq_ignore_ascii_case("na") || text.eq_ignore_ascii_case("nan") {
                    return Ok(None);
                }
                match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(data_err(row, format!("bad value '{text}' in column '{}'", headers[c]))),
                }
            };
            let id = match id_col {
                Some(c) => record
                    .get(c)
                    .and_then(|s| s.parse::<u64>().ok())
                    .ok_or_else(|| data_err(row, "id must be a non-negative integer".into()))?,
                None => i as u64,
            };
            let mut cheap = Vec::with_capacity(cheap_cols.len());
            for &c in &cheap_cols {
                cheap.push(cell(c)?.ok_or_else(|| data_err(row, format!("missing value in column '{}'", headers[c])))?);
            }
            let expensive: Option<Vec<f64>> = exp_cols.iter().map(|&c| cell(c)).collect::<Result<_, _>>()?;
            data.ids.push(id);
            data.cheap.push(cheap);
            data.expensive.push(expensive);
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(pos) = data.ids.iter().position(|id| !seen.insert(*id)) {
            return Err(data_err(pos + 1, format!("duplicate id {}", data.ids[pos])));
        }
        Ok(data)
    }
}

/// Reads `id,weight` rows. Units absent from the file get weight 0.
pub fn read_weights(path: &Path, data: &EstimationData) -> Result<Vec<f64>, InterfaceError> {
    let file = path.display().to_string();
    let positions = data.positions();
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| InterfaceError::io(path, e))?;
    let mut weights = vec![0.0; data.len()];
    let mut seen = vec![false; data.len()];
    for (i, record) in reader.deserialize::<(u64, f64)>().enumerate() {
        let row = i + 1;
        let err = |message: String| InterfaceError::Data { file: file.clone(), row, message };
        let (id, w) = record.map_err(|e| err(e.to_string()))?;
        let pos = *positions.get(&id).ok_or_else(|| err(format!("unknown id {id}")))?;
        if seen[pos] {
            return Err(err(format!("duplicate id {id}")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(err(format!("weight {w} must be finite and non-negative")));
        }
        seen[pos] = true;
        weights[pos] = w;
    }
    Ok(weights)
}

/// One line of a wave trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
pub struct TraceRow {
    pub id: u64,
    pub wave: usize,
    pub pi: f64,
    #[serde(default)]
    pub u: Option<f64>,
    pub indicator: u8,
}

/// Reads `id,wave,pi,u,indicator` rows (`u` may be absent or empty).
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, InterfaceError> {
    let file = path.display().to_string();
    let mut reader =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| InterfaceError::io(path, e))?;
    reader
        .deserialize::<TraceRow>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| InterfaceError::Data { file: file.clone(), row: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn estimation_data_allows_missing_expensive() {
        let f = write("y,z_cov,z_trt,z_trt_proxy\n1.5,0.2,1,1\n0.3,-1,,0\n");
        let data = EstimationData::read(f.path(), &Schema::synthetic()).unwrap();
        assert_eq!(data.ids, vec![0, 1]);
        assert_eq!(data.cheap[0], vec![1.5, 0.2, 1.0]);
        assert_eq!(data.full_row(0, "d").unwrap(), vec![1.5, 0.2, 1.0]);
        match data.full_row(1, "d") {
            Err(InterfaceError::Data { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cheap_value_is_an_error() {
        let f = write("y,z_cov,z_trt,z_trt_proxy\n1.5,,1,1\n");
        assert!(matches!(
            EstimationData::read(f.path(), &Schema::synthetic()),
            Err(InterfaceError::Data { row: 1, .. })
        ));
    }

    #[test]
    fn weights_by_id() {
        let d = write("id,y,z_cov,z_trt,z_trt_proxy\n10,1,0,1,1\n20,2,0,,0\n");
        let data = EstimationData::read(d.path(), &Schema::synthetic()).unwrap();
        let w = write("id,weight\n10,2.5\n");
        assert_eq!(read_weights(w.path(), &data).unwrap(), vec![2.5, 0.0]);
        let bad = write("id,weight\n30,1\n");
        assert!(read_weights(bad.path(), &data).is_err());
    }

    #[test]
    fn trace_rows_parse() {
        let t = write("id,wave,pi,u,indicator\n0,1,0.5,0.25,1\n1,1,0.5,,0\n");
        let rows = read_trace(t.path()).unwrap();
        assert_eq!(rows[0].u, Some(0.25));
        assert_eq!(rows[1].u, None);
        assert_eq!(rows[1].indicator, 0);
    }
}
