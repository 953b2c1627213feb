//! Heteroskedastic synthetic superpopulation with a differential proxy for a
//! binary treatment.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::losses::sigmoid;
use crate::rng::{Domain, StreamKey};

use super::PopulationTable;

/// Column names of the generated table, in order.
pub const SYNTHETIC_COLUMNS: [&str; 4] = ["z_cov", "z_trt", "z_trt_proxy", "y"];

/// Mean structure of the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutcomeForm {
    /// `Y = Z_cov + Z_cov + ε_Y`.
    #[default]
    Literal,
    /// `Y = Z_cov + Z_trt + ε_Y`.
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticRow {
    pub z_cov: f64,
    pub z_trt: f64,
    pub z_trt_proxy: f64,
    pub y: f64,
    /// Outcome noise `ε_Y`.
    pub eps_y: f64,
    /// Proxy logit score `ξ`.
    pub xi: f64,
}

/// Draws `n` rows. All randomness comes from the synthetic stream of `seed`.
pub fn generate_rows(n: usize, seed: u64, outcome: OutcomeForm) -> Vec<SyntheticRow> {
    let mut rng = StreamKey::new(seed, 0).rng(Domain::Synthetic, 0);
    let mut rows = Vec::with_capacity(n);
    let mut uniforms = Vec::with_capacity(n);
    for _ in 0..n {
        let z_cov: f64 = rng.sample(StandardNormal);
        let z_trt = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let e: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let u: f64 = rng.random();
        let eps_y = e[0] + 10.0 * z_trt * e[1] + z_cov.abs() * e[2] + 3.0 * z_trt * z_cov.abs() * e[3];
        let y = match outcome {
            OutcomeForm::Literal => z_cov + z_cov + eps_y,
            OutcomeForm::Treatment => z_cov + z_trt + eps_y,
        };
        rows.push(SyntheticRow { z_cov, z_trt, z_trt_proxy: 0.0, y, eps_y, xi: 0.0 });
        uniforms.push(u);
    }
    let count = n as f64;
    let mean_y = rows.iter().map(|r| r.y).sum::<f64>() / count;
    let var_y = rows.iter().map(|r| (r.y - mean_y).powi(2)).sum::<f64>() / (count - 1.0);
    let sd_y = var_y.sqrt();
    let raw = |r: &SyntheticRow| 4.0 * r.z_trt + r.z_cov + r.y / sd_y;
    let mu = rows.iter().map(raw).sum::<f64>() / count;
    for (row, u) in rows.iter_mut().zip(uniforms) {
        row.xi = raw(row) - mu;
        row.z_trt_proxy = if u <= sigmoid(row.xi) { 1.0 } else { 0.0 };
    }
    rows
}

/// The generated rows as a table with [`SYNTHETIC_COLUMNS`].
pub fn synthetic_table(n: usize, seed: u64, outcome: OutcomeForm) -> PopulationTable {
    let rows =
        generate_rows(n, seed, outcome).into_iter().map(|r| vec![r.z_cov, r.z_trt, r.z_trt_proxy, r.y]).collect();
    PopulationTable::new(SYNTHETIC_COLUMNS.iter().map(|s| s.to_string()).collect(), rows)
        .expect("synthetic rows match the header")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = generate_rows(500, 4, OutcomeForm::Literal);
        let b = generate_rows(500, 4, OutcomeForm::Literal);
        let c = generate_rows(500, 5, OutcomeForm::Literal);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn treatment_variant_changes_mean_only() {
        let lit = generate_rows(100, 1, OutcomeForm::Literal);
        let trt = generate_rows(100, 1, OutcomeForm::Treatment);
        for (l, t) in lit.iter().zip(&trt) {
            assert_eq!(l.eps_y, t.eps_y);
            assert!((t.y - t.eps_y - (t.z_cov + t.z_trt)).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_is_centered() {
        let rows = generate_rows(20000, 8, OutcomeForm::Literal);
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.xi).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!(rows.iter().all(|r| r.z_trt_proxy == 0.0 || r.z_trt_proxy == 1.0));
        let agree = rows.iter().filter(|r| r.z_trt == r.z_trt_proxy).count() as f64 / n;
        assert!(agree > 0.7, "proxy agreement {agree}");
    }
}
