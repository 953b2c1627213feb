//! Brute-force k-nearest-neighbour regression on z-scored features.

use super::{RhoModel, StrategyError};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnRegressor {
    k: usize,
    columns: Option<Vec<usize>>,
    center: Vec<f64>,
    scale: Vec<f64>,
    /// Standardised training points, row-major.
    points: Vec<f64>,
    ids: Vec<usize>,
    targets: Vec<f64>,
}

impl KnnRegressor {
    /// Fits on `features[i]` (restricted to `columns` when given) with
    /// response `targets[i]`. `ids` break distance ties, smallest first.
    pub fn fit(
        features: &[Vec<f64>],
        ids: &[usize],
        targets: &[f64],
        k: usize,
        columns: Option<Vec<usize>>,
    ) -> Result<Self, StrategyError> {
        if k == 0 {
            return Err(StrategyError::Configuration("k_neighbors must be at least 1".into()));
        }
        if features.is_empty() {
            return Err(StrategyError::EmptyTraining);
        }
        if features.len() != targets.len() || features.len() != ids.len() {
            return Err(StrategyError::Configuration("training features, ids and targets differ in length".into()));
        }
        let project = |x: &[f64]| -> Vec<f64> {
            match &columns {
                Some(cols) => cols.iter().map(|&c| x[c]).collect(),
                None => x.to_vec(),
            }
        };
        let projected: Vec<Vec<f64>> = features.iter().map(|x| project(x)).collect();
        let dim = projected[0].len();
        if let Some(cols) = &columns {
            if let Some(&bad) = cols.iter().find(|&&c| c >= features[0].len()) {
                return Err(StrategyError::Configuration(format!("kNN feature column {bad} out of range")));
            }
        }
        let m = projected.len() as f64;
        let mut center = vec![0.0; dim];
        for row in &projected {
            for (c, v) in center.iter_mut().zip(row) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= m);
        let mut scale = vec![0.0; dim];
        for row in &projected {
            for ((s, v), c) in scale.iter_mut().zip(row).zip(&center) {
                *s += (v - c).powi(2);
            }
        }
        for s in &mut scale {
            let sd = (*s / m).sqrt();
            *s = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        let mut points = Vec::with_capacity(projected.len() * dim);
        for row in &projected {
            points.extend(row.iter().zip(&center).zip(&scale).map(|((v, c), s)| (v - c) / s));
        }
        Ok(Self { k, columns, center, scale, points, ids: ids.to_vec(), targets: targets.to_vec() })
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    /// Mean response of the `k` nearest training points (all of them when
    /// fewer than `k` exist).
    pub fn predict(&self, query: &[f64]) -> f64 {
        let dim = self.dim();
        let q: Vec<f64> = match &self.columns {
            Some(cols) => cols.iter().map(|&c| query[c]).collect(),
            None => query.to_vec(),
        };
        let q: Vec<f64> = q.iter().zip(&self.center).zip(&self.scale).map(|((v, c), s)| (v - c) / s).collect();
        let mut scored: Vec<(f64, usize, f64)> = self
            .points
            .chunks_exact(dim)
            .zip(&self.ids)
            .zip(&self.targets)
            .map(|((p, &id), &t)| {
                let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, id, t)
            })
            .collect();
        let k = self.k.min(scored.len());
        let order = |a: &(f64, usize, f64), b: &(f64, usize, f64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored.iter().map(|s| s.2).sum::<f64>() / k as f64
    }
}

impl RhoModel for KnnRegressor {
    fn rho(&self, cheap: &[f64]) -> f64 {
        self.predict(cheap)
    }
}
