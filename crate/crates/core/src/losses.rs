//! M-estimation losses with gradient and Hessian contracts.
//!
//! A loss acts on a feature vector laid out as `(X^c, X^e)` for labelled
//! units or `(X^c, X̃^e)` for proxies; both share one layout so the same
//! [`FeatureMap`] reads either. Non-differentiable points use the upper
//! right-hand Dini derivative.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("quantile Hessian requires a weighted sample for density estimation")]
    MissingContext,
    #[error("density estimate is undefined: {0}")]
    DegenerateDensity(String),
    #[error("invalid loss configuration: {0}")]
    Configuration(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mean,
    Quantile { tau: f64 },
    LinearRegression,
    LogisticRegression,
}

/// Which columns of a feature vector are the response and the covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub response: usize,
    pub covariates: Vec<usize>,
    /// Prepend a constant column to the covariates (regressions only).
    pub intercept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    kind: LossKind,
    map: FeatureMap,
    feature_dim: usize,
}

impl LossModel {
    pub fn new(kind: LossKind, map: FeatureMap, feature_dim: usize) -> Result<Self, LossError> {
        let out_of_range = |c: usize| c >= feature_dim;
        if out_of_range(map.response) || map.covariates.iter().any(|&c| out_of_range(c)) {
            return Err(LossError::Configuration(format!("feature map references a column outside 0..{feature_dim}")));
        }
        if let LossKind::Quantile { tau } = kind {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(LossError::Configuration(format!("quantile level {tau} not in (0, 1)")));
            }
        }
        if matches!(kind, LossKind::LinearRegression | LossKind::LogisticRegression)
            && map.covariates.is_empty()
            && !map.intercept
        {
            return Err(LossError::Configuration("regression needs at least one column".into()));
        }
        Ok(Self { kind, map, feature_dim })
    }

    pub fn mean(response: usize, feature_dim: usize) -> Result<Self, LossError> {
        Self::new(LossKind::Mean, FeatureMap { response, covariates: vec![], intercept: false }, feature_dim)
    }

    pub fn quantile(tau: f64, response: usize, feature_dim: usize) -> Result<Self, LossError> {
        Self::new(
            LossKind::Quantile { tau },
            FeatureMap { response, covariates: vec![], intercept: false },
            feature_dim,
        )
    }

    pub fn linear(
        response: usize,
        covariates: Vec<usize>,
        intercept: bool,
        feature_dim: usize,
    ) -> Result<Self, LossError> {
        Self::new(LossKind::LinearRegression, FeatureMap { response, covariates, intercept }, feature_dim)
    }

    pub fn logistic(
        response: usize,
        covariates: Vec<usize>,
        intercept: bool,
        feature_dim: usize,
    ) -> Result<Self, LossError> {
        Self::new(LossKind::LogisticRegression, FeatureMap { response, covariates, intercept }, feature_dim)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        match self.kind {
            LossKind::Mean | LossKind::Quantile { .. } => 1,
            LossKind::LinearRegression | LossKind::LogisticRegression => {
                self.map.covariates.len() + usize::from(self.map.intercept)
            }
        }
    }

    /// True when the loss has a continuous gradient everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, LossKind::Quantile { .. })
    }

    pub fn response(&self, x: &[f64]) -> f64 {
        x[self.map.response]
    }

    /// Regression design row `z` (with the intercept first when configured).
    pub fn design_row(&self, x: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        if self.map.intercept {
            z.push(1.0);
        }
        z.extend(self.map.covariates.iter().map(|&c| x[c]));
        z
    }

    fn check(&self, theta: &[f64], x: &[f64]) -> Result<(), LossError> {
        if theta.len() != self.dim() {
            return Err(LossError::DimensionMismatch { what: "parameter", expected: self.dim(), got: theta.len() });
        }
        if x.len() != self.feature_dim {
            return Err(LossError::DimensionMismatch {
                what: "feature vector",
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, theta: &[f64], x: &[f64]) -> Result<f64, LossError> {
        self.check(theta, x)?;
        Ok(self.value_unchecked(theta, x))
    }

    pub(crate) fn value_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        let y = self.response(x);
        match self.kind {
            LossKind::Mean => 0.5 * (y - theta[0]).powi(2),
            LossKind::Quantile { tau } => {
                let below = if y <= theta[0] { 1.0 } else { 0.0 };
                (y - theta[0]) * (tau - below)
            }
            LossKind::LinearRegression => {
                let eta = self.linear_predictor(theta, x);
                0.5 * (y - eta).powi(2)
            }
            LossKind::LogisticRegression => {
                let eta = self.linear_predictor(theta, x);
                softplus(eta) - y * eta
            }
        }
    }

    pub fn gradient(&self, theta: &[f64], x: &[f64]) -> Result<DVector<f64>, LossError> {
        self.check(theta, x)?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(theta, x, &mut out);
        Ok(DVector::from_vec(out))
    }

    /// Writes the gradient (right-hand Dini at kinks) into `out`.
    pub(crate) fn gradient_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let y = self.response(x);
        match self.kind {
            LossKind::Mean => out[0] = theta[0] - y,
            LossKind::Quantile { tau } => {
                let below = if y <= theta[0] { 1.0 } else { 0.0 };
                out[0] = below - tau;
            }
            LossKind::LinearRegression | LossKind::LogisticRegression => {
                let eta = self.linear_predictor(theta, x);
                let residual = match self.kind {
                    LossKind::LinearRegression => eta - y,
                    _ => sigmoid(eta) - y,
                };
                let mut slot = 0;
                if self.map.intercept {
                    out[0] = residual;
                    slot = 1;
                }
                for (o, &c) in out[slot..].iter_mut().zip(&self.map.covariates) {
                    *o = residual * x[c];
                }
            }
        }
    }

    /// Per-unit Hessian. The quantile loss has no classical Hessian; it
    /// returns the weighted kernel density of `context` at `theta`, so that
    /// averaging per-unit Hessians reproduces the density plug-in.
    pub fn hessian(
        &self,
        theta: &[f64],
        x: &[f64],
        context: Option<&WeightedSample>,
    ) -> Result<DMatrix<f64>, LossError> {
        self.check(theta, x)?;
        match self.kind {
            LossKind::Mean => Ok(DMatrix::from_element(1, 1, 1.0)),
            LossKind::Quantile { .. } => {
                let sample = context.ok_or(LossError::MissingContext)?;
                let density = sample.density_at(theta[0])?;
                Ok(DMatrix::from_element(1, 1, density.value))
            }
            LossKind::LinearRegression | LossKind::LogisticRegression => {
                let z = DVector::from_vec(self.design_row(x));
                let scale = match self.kind {
                    LossKind::LogisticRegression => {
                        let s = sigmoid(z.dot(&DVector::from_column_slice(theta)));
                        s * (1.0 - s)
                    }
                    _ => 1.0,
                };
                Ok(&z * z.transpose() * scale)
            }
        }
    }

    /// `Σ_i w_i l̈_θ(x_i)`, unnormalised. Quantile losses estimate the
    /// density once from `(response, weight)` pairs of the same rows.
    pub(crate) fn weighted_hessian_sum(
        &self,
        theta: &[f64],
        rows: &[Vec<f64>],
        weights: &[f64],
    ) -> Result<DMatrix<f64>, LossError> {
        let d = self.dim();
        match self.kind {
            LossKind::Mean => Ok(DMatrix::from_element(1, 1, weights.iter().sum())),
            LossKind::Quantile { .. } => {
                let sample = WeightedSample::new(rows.iter().map(|x| self.response(x)).collect(), weights.to_vec())?;
                let density = sample.density_at(theta[0])?;
                Ok(DMatrix::from_element(1, 1, density.value * weights.iter().sum::<f64>()))
            }
            LossKind::LinearRegression | LossKind::LogisticRegression => {
                let mut h = DMatrix::zeros(d, d);
                for (x, &w) in rows.iter().zip(weights) {
                    if w == 0.0 {
                        continue;
                    }
                    let z = self.design_row(x);
                    let scale = match self.kind {
                        LossKind::LogisticRegression => {
                            let s = sigmoid(dot(&z, theta));
                            w * s * (1.0 - s)
                        }
                        _ => w,
                    };
                    for a in 0..d {
                        for b in 0..=a {
                            h[(a, b)] += scale * z[a] * z[b];
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..a {
                        h[(b, a)] = h[(a, b)];
                    }
                }
                Ok(h)
            }
        }
    }

    fn linear_predictor(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut eta = 0.0;
        let mut slot = 0;
        if self.map.intercept {
            eta += theta[0];
            slot = 1;
        }
        for (t, &c) in theta[slot..].iter().zip(&self.map.covariates) {
            eta += t * x[c];
        }
        eta
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Kernel density value at a point together with the bandwidth used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub theta: f64,
    pub bandwidth: f64,
    pub value: f64,
}

/// Values with non-negative weights; zero-weight entries are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, LossError> {
        if values.len() != weights.len() {
            return Err(LossError::DimensionMismatch { what: "weights", expected: values.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LossError::DegenerateDensity("weights must be finite and non-negative".into()));
        }
        let (values, weights): (Vec<f64>, Vec<f64>) = values.into_iter().zip(weights).filter(|(_, w)| *w > 0.0).unzip();
        if values.is_empty() {
            return Err(LossError::DegenerateDensity("no positive weights".into()));
        }
        Ok(Self { values, weights })
    }

    pub fn unweighted(values: Vec<f64>) -> Result<Self, LossError> {
        let n = values.len();
        Self::new(values, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn effective_size(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        s * s / s2
    }

    pub fn mean(&self) -> f64 {
        dot(&self.values, &self.weights) / self.total_weight()
    }

    /// Weighted standard deviation with normalised weights (no small-sample
    /// correction).
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.values.iter().zip(&self.weights).map(|(v, w)| w * (v - m).powi(2)).sum();
        (ss / self.total_weight()).sqrt()
    }

    /// Smallest value `q` with `Σ w_i 1{x_i ≤ q} / Σ w_i ≥ tau`.
    pub fn quantile(&self, tau: f64) -> f64 {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        let total = self.total_weight();
        let mut cumulative = 0.0;
        for &i in &order {
            cumulative += self.weights[i];
            if cumulative / total >= tau {
                return self.values[i];
            }
        }
        self.values[order[order.len() - 1]]
    }

    /// `0.9 · min(σ̂_w, IQR_w / 1.34) · n_eff^(-1/5)`, falling back to the
    /// non-zero spread when the other is zero.
    pub fn silverman_bandwidth(&self) -> Result<f64, LossError> {
        let sd = self.std_dev();
        let iqr = (self.quantile(0.75) - self.quantile(0.25)) / 1.34;
        let spread = match (sd > 0.0, iqr > 0.0) {
            (true, true) => sd.min(iqr),
            (true, false) => sd,
            (false, true) => iqr,
            (false, false) => {
                return Err(LossError::DegenerateDensity("sample has zero spread".into()));
            }
        };
        Ok(0.9 * spread * self.effective_size().powf(-0.2))
    }

    /// Gaussian-kernel density at `theta` with the weighted Silverman bandwidth.
    pub fn density_at(&self, theta: f64) -> Result<DensityEstimate, LossError> {
        let h = self.silverman_bandwidth()?;
        Ok(DensityEstimate { theta, bandwidth: h, value: self.density_with_bandwidth(theta, h) })
    }

    pub fn density_with_bandwidth(&self, theta: f64, bandwidth: f64) -> f64 {
        let norm = 1.0 / ((2.0 * PI).sqrt() * bandwidth);
        let sum: f64 = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| {
                let u = (theta - v) / bandwidth;
                w * (-0.5 * u * u).exp()
            })
            .sum();
        norm * sum / self.total_weight()
    }
}
