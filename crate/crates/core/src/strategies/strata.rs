//! Piecewise-constant estimates of the conditional influence variance over a
//! partition of the proxy space.

use std::collections::BTreeMap;

use super::{RhoModel, StrategyError};

/// How cheap vectors are assigned to strata.
#[derive(Debug, Clone, PartialEq)]
pub enum StrataSpec {
    /// Per-feature breakpoints; strata are the Cartesian product of the
    /// resulting bins. A value lands in bin `#{breakpoints < value}`.
    Breakpoints(Vec<(usize, Vec<f64>)>),
    /// The stratum label is read from a cheap column holding integers.
    Column(usize),
}

impl StrataSpec {
    /// Stratum label of `cheap`.
    pub fn stratum(&self, cheap: &[f64]) -> Result<i64, StrategyError> {
        match self {
            StrataSpec::Breakpoints(features) => {
                let mut index = 0i64;
                for (column, breaks) in features {
                    let value = cheap[*column];
                    let bin = breaks.partition_point(|b| *b < value);
                    index = index * (breaks.len() as i64 + 1) + bin as i64;
                }
                Ok(index)
            }
            StrataSpec::Column(column) => {
                let value = cheap[*column];
                if value.fract() != 0.0 || !value.is_finite() {
                    return Err(StrategyError::Configuration(format!(
                        "stratum column {column} holds non-integer value {value}"
                    )));
                }
                Ok(value as i64)
            }
        }
    }

    /// Number of strata for breakpoint specs.
    pub fn grid_size(&self) -> Option<usize> {
        match self {
            StrataSpec::Breakpoints(features) => Some(features.iter().map(|(_, b)| b.len() + 1).product()),
            StrataSpec::Column(_) => None,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<(), StrategyError> {
        match self {
            StrataSpec::Breakpoints(features) => {
                if features.is_empty() {
                    return Err(StrategyError::Configuration("strata need at least one feature".into()));
                }
                for (column, breaks) in features {
                    if *column >= feature_dim {
                        return Err(StrategyError::Configuration(format!("strata column {column} out of range")));
                    }
                    if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
                        return Err(StrategyError::Configuration(format!(
                            "breakpoints for column {column} must be finite and strictly increasing"
                        )));
                    }
                }
                Ok(())
            }
            StrataSpec::Column(column) if *column >= feature_dim => {
                Err(StrategyError::Configuration(format!("strata column {column} out of range")))
            }
            StrataSpec::Column(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedRho {
    spec: StrataSpec,
    values: BTreeMap<i64, f64>,
}

impl StratifiedRho {
    pub fn value(&self, stratum: i64) -> Option<f64> {
        self.values.get(&stratum).copied()
    }

    pub fn strata(&self) -> &BTreeMap<i64, f64> {
        &self.values
    }
}

impl RhoModel for StratifiedRho {
    fn rho(&self, cheap: &[f64]) -> f64 {
        self.spec.stratum(cheap).ok().and_then(|s| self.value(s)).unwrap_or(0.0)
    }
}

/// `ϱ̂_r = Σ_{i∈S_r} w_i 𝒴_i / (|S_r| · mass)` where `w_i = Σ_{k<k*} c_k W_i^(k)`
/// and `mass = Σ_{k<k*} c_k`.
///
/// `cheap` covers all Phase-I units; `psi` holds `(position, 𝒴_i)` pairs
/// of labelled units.
pub fn stratified_rho(
    spec: &StrataSpec,
    cheap: &[&[f64]],
    partial_weights: &[f64],
    mass: f64,
    psi: &[(usize, f64)],
) -> Result<StratifiedRho, StrategyError> {
    if let Some(first) = cheap.first() {
        spec.validate(first.len())?;
    }
    let labels: Vec<i64> = cheap.iter().map(|x| spec.stratum(x)).collect::<Result<_, _>>()?;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in &labels {
        *counts.entry(s).or_default() += 1;
    }
    if let Some(size) = spec.grid_size() {
        if let Some(empty) = (0..size as i64).find(|s| !counts.contains_key(s)) {
            return Err(StrategyError::StratumDegenerate(format!("stratum {empty} has no Phase-I units")));
        }
    }
    let mut numerators: BTreeMap<i64, f64> = counts.keys().map(|&s| (s, 0.0)).collect();
    for &(i, value) in psi {
        *numerators.get_mut(&labels[i]).expect("label counted") += partial_weights[i] * value;
    }
    let values = numerators.into_iter().map(|(s, num)| (s, num / (counts[&s] as f64 * mass))).collect();
    Ok(StratifiedRho { spec: spec.clone(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakpoint_bins() {
        let spec = StrataSpec::Breakpoints(vec![(0, vec![0.0, 1.0]), (1, vec![0.5])]);
        assert_eq!(spec.stratum(&[-1.0, 0.0]).unwrap(), 0);
        assert_eq!(spec.stratum(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(spec.stratum(&[0.5, 0.7]).unwrap(), 3);
        assert_eq!(spec.stratum(&[2.0, 0.7]).unwrap(), 5);
        assert_eq!(spec.grid_size(), Some(6));
    }

    #[test]
    fn single_stratum_matches_direct_sum() {
        let cheap: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let refs: Vec<&[f64]> = cheap.iter().map(|v| v.as_slice()).collect();
        let weights = [2.0, 0.0, 4.0, 0.0, 0.0, 1.0];
        let psi = [(0, 0.5), (2, 1.5), (5, 3.0)];
        let spec = StrataSpec::Breakpoints(vec![(0, vec![])]);
        let rho = stratified_rho(&spec, &refs, &weights, 0.25, &psi).unwrap();
        let expected = (2.0 * 0.5 + 4.0 * 1.5 + 3.0) / (6.0 * 0.25);
        assert!((rho.value(0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn unlabelled_stratum_is_zero_and_empty_errors() {
        let cheap: Vec<Vec<f64>> = vec![vec![-1.0], vec![1.0], vec![2.0]];
        let refs: Vec<&[f64]> = cheap.iter().map(|v| v.as_slice()).collect();
        let spec = StrataSpec::Breakpoints(vec![(0, vec![0.0])]);
        let rho = stratified_rho(&spec, &refs, &[0.0, 2.0, 0.0], 1.0, &[(1, 1.0)]).unwrap();
        assert_eq!(rho.value(0), Some(0.0));
        assert_eq!(rho.rho(&[-5.0]), 0.0);
        let gap = StrataSpec::Breakpoints(vec![(0, vec![-3.0, -2.0])]);
        assert!(matches!(stratified_rho(&gap, &refs, &[0.0; 3], 1.0, &[]), Err(StrategyError::StratumDegenerate(_))));
    }

    #[test]
    fn column_strata() {
        let spec = StrataSpec::Column(1);
        assert_eq!(spec.stratum(&[0.3, 4.0]).unwrap(), 4);
        assert!(spec.stratum(&[0.3, 4.5]).is_err());
    }
}
