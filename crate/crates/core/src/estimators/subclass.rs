//! Subclassification on theta with a parametric response model per
//! subclass; the averaged coefficients give both the average causal effect
//! and a piecewise-parametric DRF.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric;
use crate::treatment::GaussianTreatmentModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WithinModel {
    Linear,
    Quadratic,
}

impl WithinModel {
    fn order(&self) -> usize {
        match self {
            WithinModel::Linear => 1,
            WithinModel::Quadratic => 2,
        }
    }
}

pub(crate) struct IvdFit {
    /// Weight-averaged polynomial coefficients (intercept, t, t^2).
    avg_coefs: [f64; 3],
    average_effect: f64,
    pub class_counts: Vec<usize>,
}

impl IvdFit {
    pub fn new(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        subclasses: usize,
        within: WithinModel,
        adjust_theta: bool,
    ) -> Result<Self> {
        if subclasses == 0 {
            return Err(Error::InvalidArgument("need at least one subclass".into()));
        }
        let theta = model.theta(data)?;
        let probs: Vec<f64> = (1..subclasses).map(|j| j as f64 / subclasses as f64).collect();
        let cutpoints = numeric::quantiles(&theta, &probs);
        let n = data.n();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); subclasses];
        for i in 0..n {
            let class = cutpoints.partition_point(|&c| c < theta[i]);
            members[class].push(i);
        }

        let order = within.order();
        let n_params = order + 1 + usize::from(adjust_theta);
        let t = data.treatment();
        let w = data.weights();
        let mut avg = [0.0f64; 3];
        let mut effect = 0.0;
        let mut total_weight = 0.0;
        let mut class_counts = Vec::with_capacity(subclasses);
        for (s, idx) in members.iter().enumerate() {
            if idx.len() <= n_params + 1 {
                return Err(Error::EmptySubclass {
                    index: s,
                    count: idx.len(),
                });
            }
            class_counts.push(idx.len());
            let theta_bar = numeric::mean(&idx.iter().map(|&i| theta[i]).collect::<Vec<_>>());
            let mut design = DMatrix::zeros(idx.len(), n_params);
            let mut ys = DVector::zeros(idx.len());
            let mut ws = Vec::with_capacity(idx.len());
            for (r, &i) in idx.iter().enumerate() {
                design[(r, 0)] = 1.0;
                design[(r, 1)] = t[i];
                if order == 2 {
                    design[(r, 2)] = t[i] * t[i];
                }
                if adjust_theta {
                    // Recentred within the subclass so the fitted curve can
                    // ignore the term at the class mean.
                    design[(r, order + 1)] = theta[i] - theta_bar;
                }
                ys[r] = y[i];
                ws.push(w[i]);
            }
            let fit = numeric::wls(&design, &ys, &ws).map_err(|e| match e {
                Error::RankDeficient => Error::Estimation(format!(
                    "singular within-subclass fit in subclass {}",
                    s
                )),
                other => other,
            })?;
            let class_weight: f64 = ws.iter().sum();
            total_weight += class_weight;
            avg[0] += class_weight * fit.beta[0];
            avg[1] += class_weight * fit.beta[1];
            if order == 2 {
                avg[2] += class_weight * fit.beta[2];
            }
            effect += class_weight * fit.beta[1];
        }
        for a in &mut avg {
            *a /= total_weight;
        }
        Ok(IvdFit {
            avg_coefs: avg,
            average_effect: effect / total_weight,
            class_counts,
        })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.avg_coefs[0] + self.avg_coefs[1] * t + self.avg_coefs[2] * t * t
    }

    /// Derivative of the averaged polynomial (the weighted average of the
    /// within-subclass treatment coefficients).
    pub fn derivative_at(&self, t: f64) -> f64 {
        self.avg_coefs[1] + 2.0 * self.avg_coefs[2] * t
    }

    pub fn average_effect(&self) -> f64 {
        self.average_effect
    }
}
