//! Gaussian linear treatment-assignment model.
//!
//! Fitting T on the covariates yields the propensity-function summary
//! `theta_i = x_i' beta` and the generalized propensity score
//! `r(t, x_i) = phi((t - theta_i) / sigma) / sigma`, the model density
//! evaluated at a treatment value.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{self, normal_density, normalize_weights, quantile_sorted};

/// Covariate transformations applied before fitting: squared terms for the
/// named columns are appended to the design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub square_cols: Vec<String>,
}

impl DesignSpec {
    pub fn with_squares(cols: &[&str]) -> Self {
        DesignSpec {
            square_cols: cols.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Design matrix with an intercept column first, then the covariates,
    /// then the squared terms.
    pub fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let n = data.n();
        let p = data.p();
        let sq_idx: Vec<usize> = self
            .square_cols
            .iter()
            .map(|c| {
                data.covariate_index(c)
                    .ok_or_else(|| Error::MissingColumn(c.clone()))
            })
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(n, 1 + p + sq_idx.len());
        let x = data.covariates();
        for i in 0..n {
            m[(i, 0)] = 1.0;
            for j in 0..p {
                m[(i, 1 + j)] = x[(i, j)];
            }
            for (k, &j) in sq_idx.iter().enumerate() {
                m[(i, 1 + p + k)] = x[(i, j)] * x[(i, j)];
            }
        }
        Ok(m)
    }
}

/// Fitted Gaussian linear model for T given X.
#[derive(Debug, Clone)]
pub struct GaussianTreatmentModel {
    /// Coefficients, intercept first.
    pub beta: DVector<f64>,
    /// Residual variance, strictly positive.
    pub sigma2: f64,
    pub design_spec: DesignSpec,
}

/// Per-unit propensity summaries from a fitted treatment model.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    /// theta_i = x_i' beta, the scalar that indexes the propensity function.
    pub theta: Vec<f64>,
    /// GPS at each unit's own treatment: r(T_i, x_i).
    pub gps: Vec<f64>,
}

/// Weighted least squares fit of T on the design implied by `design_spec`.
/// The residual variance uses weights normalized to sum to n and an
/// (n - p - 1) denominator, so it reduces to the unbiased OLS estimator
/// under unit weights.
pub fn fit_treatment_model(data: &Dataset, design_spec: DesignSpec) -> Result<GaussianTreatmentModel> {
    let design = design_spec.design_matrix(data)?;
    let n = design.nrows();
    let p1 = design.ncols();
    if n <= p1 {
        return Err(Error::InvalidArgument(format!(
            "n = {} must exceed the design dimension {}",
            n, p1
        )));
    }
    let wn = normalize_weights(data.weights());
    let t = DVector::from_column_slice(data.treatment());
    let fit = numeric::wls(&design, &t, &wn)?;
    let sigma2 = fit.rss / (n - p1) as f64;
    let t_scale = numeric::weighted_variance(data.treatment(), &wn).max(f64::MIN_POSITIVE);
    if !(sigma2 > 1e-12 * t_scale) {
        return Err(Error::DegenerateFit);
    }
    Ok(GaussianTreatmentModel {
        beta: fit.beta,
        sigma2,
        design_spec,
    })
}

impl GaussianTreatmentModel {
    /// Linear predictor theta_i for every unit.
    pub fn theta(&self, data: &Dataset) -> Result<Vec<f64>> {
        let design = self.design_spec.design_matrix(data)?;
        if design.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, model has {} coefficients",
                design.ncols(),
                self.beta.len()
            )));
        }
        Ok((design * &self.beta).iter().copied().collect())
    }

    /// GPS of each unit evaluated at its own observed treatment.
    pub fn score(&self, data: &Dataset) -> Result<ScoreSet> {
        let theta = self.theta(data)?;
        let gps = theta
            .iter()
            .zip(data.treatment())
            .map(|(&th, &t)| normal_density(t, th, self.sigma2))
            .collect();
        Ok(ScoreSet { theta, gps })
    }

    /// GPS of each unit evaluated at a common treatment value t.
    pub fn gps_at(&self, t: f64, data: &Dataset) -> Result<Vec<f64>> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "treatment value must be finite, got {}",
                t
            )));
        }
        let theta = self.theta(data)?;
        Ok(gps_from_theta(&theta, self.sigma2, t))
    }
}

/// GPS values r(t, x_i) computed from a precomputed theta vector.
pub fn gps_from_theta(theta: &[f64], sigma2: f64, t: f64) -> Vec<f64> {
    theta
        .iter()
        .map(|&th| normal_density(t, th, sigma2))
        .collect()
}

/// Monte Carlo theoretical quantiles of T under the fitted model, with the
/// covariates resampled from their observed (weighted) distribution.
#[derive(Debug, Clone)]
pub struct TheoreticalGrid {
    /// Quantile cutpoints at the requested probabilities.
    pub cutpoints: Vec<f64>,
    /// Median of the Monte Carlo draws within each cutpoint interval; one
    /// more entry than `cutpoints`.
    pub subclass_medians: Vec<f64>,
}

pub fn default_mc_size(n: usize) -> usize {
    100_000usize.max(50 * n)
}

/// Draws `mc_size` pairs (X resampled with the sampling weights, T from the
/// fitted conditional) and returns empirical quantiles at `probs` along
/// with within-interval medians. Deterministic given the seed.
pub fn theoretical_quantiles(
    model: &GaussianTreatmentModel,
    data: &Dataset,
    probs: &[f64],
    mc_size: usize,
    seed: u64,
) -> Result<TheoreticalGrid> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("probs must be non-empty".into()));
    }
    if probs.windows(2).any(|w| w[0] >= w[1]) || probs.iter().any(|&p| p <= 0.0 || p >= 1.0) {
        return Err(Error::InvalidArgument(
            "probs must be strictly increasing within (0, 1)".into(),
        ));
    }
    if mc_size < 10 * data.n() {
        return Err(Error::InvalidArgument(format!(
            "mc_size {} is below 10 * n = {}",
            mc_size,
            10 * data.n()
        )));
    }
    let theta = model.theta(data)?;
    let sigma = model.sigma2.sqrt();
    let mut rng = numeric::stream_rng(seed, 0);
    let index = WeightedIndex::new(data.weights())
        .map_err(|e| Error::InvalidArgument(format!("bad sampling weights: {}", e)))?;
    let mut draws = Vec::with_capacity(mc_size);
    for _ in 0..mc_size {
        let i = index.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        draws.push(theta[i] + sigma * z);
    }
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cutpoints: Vec<f64> = probs.iter().map(|&p| quantile_sorted(&draws, p)).collect();

    let mut medians = Vec::with_capacity(cutpoints.len() + 1);
    let mut lo = 0usize;
    for (s, &cut) in cutpoints.iter().enumerate() {
        let hi = draws.partition_point(|&v| v <= cut);
        if hi <= lo {
            return Err(Error::EmptySubclass { index: s, count: 0 });
        }
        medians.push(quantile_sorted(&draws[lo..hi], 0.5));
        lo = hi;
    }
    if lo >= draws.len() {
        return Err(Error::EmptySubclass {
            index: cutpoints.len(),
            count: 0,
        });
    }
    medians.push(quantile_sorted(&draws[lo..], 0.5));
    Ok(TheoreticalGrid {
        cutpoints,
        subclass_medians: medians,
    })
}
