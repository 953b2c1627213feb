//! Fully observed tables that play the role of the superpopulation.

use std::path::Path;

use nalgebra::DVector;

use crate::estimators::{solve_weighted_m, SolverOptions};
use crate::losses::LossModel;

use super::SimulationError;

/// A named numeric table, one `Vec` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl PopulationTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, SimulationError> {
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(SimulationError::Table {
                row: i + 1,
                message: format!("{} values for {} columns", row.len(), columns.len()),
            });
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, SimulationError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| SimulationError::MissingColumn(name.to_string()))
    }

    /// Reads a headed CSV of numbers. Empty or non-numeric cells are
    /// rejected with their 1-based data row number.
    pub fn read_csv(path: &Path) -> Result<Self, SimulationError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| SimulationError::Io(format!("{}: {e}", path.display())))?;
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| SimulationError::Io(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| SimulationError::Table { row, message: e.to_string() })?;
            let values = record
                .iter()
                .zip(&columns)
                .map(|(cell, name)| parse_cell(cell, name, row))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(values);
        }
        Self::new(columns, rows)
    }

    /// Writes a headed CSV with shortest round-trip float formatting.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimulationError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| SimulationError::Io(e.to_string()))?;
        let io = |e: csv::Error| SimulationError::Io(e.to_string());
        writer.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
        }
        writer.flush().map_err(|e| SimulationError::Io(e.to_string()))
    }
}

fn parse_cell(cell: &str, column: &str, row: usize) -> Result<f64, SimulationError> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Err(SimulationError::Table { row, message: format!("missing value in column '{column}'") });
    }
    let value: f64 = cell.parse().map_err(|_| SimulationError::Table {
        row,
        message: format!("non-numeric value '{cell}' in column '{column}'"),
    })?;
    if !value.is_finite() {
        return Err(SimulationError::Table { row, message: format!("non-finite value in column '{column}'") });
    }
    Ok(value)
}

/// Column roles. The full feature layout is `common ++ expensive`; the
/// cheap layout is `common ++ proxies`, with `proxies[i]` standing in for
/// `expensive[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub common: Vec<String>,
    pub expensive: Vec<String>,
    pub proxies: Vec<String>,
}

impl Schema {
    pub fn synthetic() -> Self {
        Self {
            common: vec!["y".into(), "z_cov".into()],
            expensive: vec!["z_trt".into()],
            proxies: vec!["z_trt_proxy".into()],
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.expensive.is_empty() {
            return Err(SimulationError::Schema("at least one expensive column is required".into()));
        }
        if self.expensive.len() != self.proxies.len() {
            return Err(SimulationError::Schema(format!(
                "{} expensive columns but {} proxies",
                self.expensive.len(),
                self.proxies.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self.common.iter().chain(&self.expensive).chain(&self.proxies) {
            if !seen.insert(name) {
                return Err(SimulationError::Schema(format!("column '{name}' has more than one role")));
            }
        }
        Ok(())
    }

    /// Names of the full feature layout.
    pub fn feature_names(&self) -> Vec<String> {
        self.common.iter().chain(&self.expensive).cloned().collect()
    }

    /// Names of the cheap layout.
    pub fn cheap_names(&self) -> Vec<String> {
        self.common.iter().chain(&self.proxies).cloned().collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, SimulationError> {
        self.feature_names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SimulationError::Schema(format!("'{name}' is neither a common nor an expensive column")))
    }

    pub fn cheap_index(&self, name: &str) -> Result<usize, SimulationError> {
        self.cheap_names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SimulationError::Schema(format!("'{name}' is neither a common nor a proxy column")))
    }
}

/// A complete table split into cheap and expensive parts, with the
/// full-data M-estimate as ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Superpopulation {
    pub schema: Schema,
    pub cheap: Vec<Vec<f64>>,
    pub expensive: Vec<Vec<f64>>,
    pub loss: LossModel,
    pub oracle_theta: DVector<f64>,
}

impl Superpopulation {
    pub fn new(table: &PopulationTable, schema: Schema, loss: LossModel) -> Result<Self, SimulationError> {
        schema.validate()?;
        let index = |names: &[String]| -> Result<Vec<usize>, SimulationError> {
            names.iter().map(|n| table.column_index(n)).collect()
        };
        let common = index(&schema.common)?;
        let expensive = index(&schema.expensive)?;
        let proxies = index(&schema.proxies)?;
        if loss.feature_dim() != common.len() + expensive.len() {
            return Err(SimulationError::Schema(format!(
                "loss expects {} features, schema provides {}",
                loss.feature_dim(),
                common.len() + expensive.len()
            )));
        }
        if table.is_empty() {
            return Err(SimulationError::Schema("superpopulation table is empty".into()));
        }
        let pick = |row: &[f64], cols: &[usize]| -> Vec<f64> { cols.iter().map(|&c| row[c]).collect() };
        let cheap: Vec<Vec<f64>> = table
            .rows()
            .iter()
            .map(|r| {
                let mut v = pick(r, &common);
                v.extend(pick(r, &proxies));
                v
            })
            .collect();
        let expensive: Vec<Vec<f64>> = table.rows().iter().map(|r| pick(r, &expensive)).collect();
        let full: Vec<Vec<f64>> =
            cheap.iter().zip(&expensive).map(|(c, e)| c[..common.len()].iter().chain(e).copied().collect()).collect();
        let oracle_theta = oracle_estimand(&full, &loss)?;
        Ok(Self { schema, cheap, expensive, loss, oracle_theta })
    }

    pub fn len(&self) -> usize {
        self.cheap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cheap.is_empty()
    }

    pub fn n_common(&self) -> usize {
        self.schema.common.len()
    }

    /// Full feature vector of row `r`.
    pub fn full_row(&self, r: usize) -> Vec<f64> {
        let mut v = self.cheap[r][..self.n_common()].to_vec();
        v.extend_from_slice(&self.expensive[r]);
        v
    }
}

/// Reads a CSV superpopulation with the given schema and loss.
pub fn load_superpopulation(path: &Path, schema: Schema, loss: LossModel) -> Result<Superpopulation, SimulationError> {
    let table = PopulationTable::read_csv(path)?;
    Superpopulation::new(&table, schema, loss)
}

/// Unweighted M-estimate over all rows.
pub fn oracle_estimand(rows: &[Vec<f64>], loss: &LossModel) -> Result<DVector<f64>, SimulationError> {
    let ones = vec![1.0; rows.len()];
    let fit = solve_weighted_m(loss, rows, &ones, None, &SolverOptions::default())?;
    Ok(fit.theta)
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
    fn csv_round_trip_is_exact() {
        let values = vec![
            vec![0.1, 1.0 / 3.0, -2.5e-300],
            vec![std::f64::consts::PI, 1e17 + 3.0, 0.0],
            vec![-7.25, 6.02214076e23, 1e-7],
        ];
        let table = PopulationTable::new(vec!["a".into(), "b".into(), "c".into()], values.clone()).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        table.write_csv(file.path()).unwrap();
        let back = PopulationTable::read_csv(file.path()).unwrap();
        for (r, row) in values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(back.rows()[r][c].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn missing_value_names_row() {
        let f = write("y,x\n1,2\n3,\n");
        match PopulationTable::read_csv(f.path()) {
            Err(SimulationError::Table { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("'x'"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let g = write("y,x\n1,abc\n");
        assert!(matches!(PopulationTable::read_csv(g.path()), Err(SimulationError::Table { row: 1, .. })));
    }

    #[test]
    fn missing_schema_column_is_named() {
        let f = write("y,x,x_hat\n1,2,2\n2,3,3\n");
        let table = PopulationTable::read_csv(f.path()).unwrap();
        let schema = Schema { common: vec!["y".into()], expensive: vec!["w".into()], proxies: vec!["x_hat".into()] };
        let loss = LossModel::linear(0, vec![1], true, 2).unwrap();
        match Superpopulation::new(&table, schema, loss) {
            Err(SimulationError::MissingColumn(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oracle_examples() {
        let line: Vec<Vec<f64>> = (0..20).map(|i| vec![3.0 * i as f64, i as f64]).collect();
        let loss = LossModel::linear(0, vec![1], false, 2).unwrap();
        assert!((oracle_estimand(&line, &loss).unwrap()[0] - 3.0).abs() < 1e-12);
        let values: Vec<Vec<f64>> = (1..=100).map(|v| vec![v as f64]).collect();
        let q = LossModel::quantile(0.75, 0, 1).unwrap();
        assert_eq!(oracle_estimand(&values, &q).unwrap()[0], 75.0);
        let m = LossModel::mean(0, 1).unwrap();
        assert!((oracle_estimand(&values, &m).unwrap()[0] - 50.5).abs() < 1e-12);
    }

    #[test]
    fn superpopulation_layouts() {
        let table = PopulationTable::new(
            vec!["z_cov".into(), "z_trt".into(), "z_trt_proxy".into(), "y".into()],
            vec![
                vec![0.5, 1.0, 0.0, 2.0],
                vec![-1.0, 0.0, 1.0, -1.5],
                vec![0.2, 1.0, 1.0, 0.3],
                vec![1.1, 0.0, 0.0, 2.9],
                vec![-0.4, 1.0, 1.0, 0.1],
            ],
        )
        .unwrap();
        let loss = LossModel::linear(0, vec![1, 2], true, 3).unwrap();
        let sp = Superpopulation::new(&table, Schema::synthetic(), loss).unwrap();
        assert_eq!(sp.cheap[0], vec![2.0, 0.5, 0.0]);
        assert_eq!(sp.expensive[0], vec![1.0]);
        assert_eq!(sp.full_row(1), vec![-1.5, -1.0, 0.0]);
    }
}
