//! Inverse-weighted kernel regression of the DRF: Gaussian kernel weights
//! divided by the GPS at the evaluation dose, local linear by default with
//! a Nadaraya-Watson variant behind a flag.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{PointFlags, PointValue};
use crate::numeric;
use crate::treatment::GaussianTreatmentModel;

/// Relative singularity threshold for the local-linear denominator.
const SINGULARITY_EPS: f64 = 1e-8;
/// Rule-of-thumb constant for a Gaussian kernel, local linear:
/// (integral of K^2)^(1/5) with unit second moment.
const ROT_CONSTANT: f64 = 0.776;

pub(crate) struct IwFit {
    bandwidth: f64,
    nadaraya_watson: bool,
    t_obs: Vec<f64>,
    y: Vec<f64>,
    log_w: Vec<f64>,
    theta: Vec<f64>,
    sigma2: f64,
    y_min: f64,
    y_max: f64,
}

/// Global plug-in bandwidth: pilot quartic fit for the curvature, residual
/// variance from the pilot, weight function supported on the central 90%
/// of the observed treatments.
pub(crate) fn rule_of_thumb_bandwidth(t: &[f64], y: &[f64], weights: &[f64]) -> Result<f64> {
    let n = t.len();
    let range = t.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - t.iter().copied().fold(f64::INFINITY, f64::min);
    if n < 7 {
        return Ok(range.max(1.0));
    }
    let wn = numeric::normalize_weights(weights);
    let mut design = DMatrix::zeros(n, 5);
    for i in 0..n {
        let mut v = 1.0;
        for j in 0..5 {
            design[(i, j)] = v;
            v *= t[i];
        }
    }
    let pilot = numeric::wls(&design, &DVector::from_column_slice(y), &wn)?;
    let sigma2 = pilot.rss / (n - 5) as f64;
    let (lo, hi) = (numeric::quantile(t, 0.05), numeric::quantile(t, 0.95));
    let curvature_ss: f64 = (0..n)
        .filter(|&i| t[i] >= lo && t[i] <= hi)
        .map(|i| {
            let m2 = 2.0 * pilot.beta[2] + 6.0 * pilot.beta[3] * t[i]
                + 12.0 * pilot.beta[4] * t[i] * t[i];
            wn[i] * m2 * m2
        })
        .sum();
    let scale = sigma2 * (hi - lo);
    if !(curvature_ss > 1e-12 * (1.0 + scale)) || !(scale > 0.0) {
        // Flat pilot curvature (or an exact pilot fit): any wide bandwidth
        // averages correctly.
        return Ok(range.max(f64::MIN_POSITIVE));
    }
    let h = ROT_CONSTANT * (scale / curvature_ss).powf(0.2);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Ok(range.max(f64::MIN_POSITIVE))
    }
}

impl IwFit {
    pub fn new(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        bandwidth: Option<f64>,
        nadaraya_watson: bool,
    ) -> Result<Self> {
        if let Some(h) = bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive, got {}",
                    h
                )));
            }
        }
        let theta = model.theta(data)?;
        let h = match bandwidth {
            Some(h) => h,
            None => rule_of_thumb_bandwidth(data.treatment(), y, data.weights())?,
        };
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(IwFit {
            bandwidth: h,
            nadaraya_watson,
            t_obs: data.treatment().to_vec(),
            y: y.to_vec(),
            log_w: data.weights().iter().map(|w| w.ln()).collect(),
            theta,
            sigma2: model.sigma2,
            y_min,
            y_max,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn value_at(&self, t: f64) -> PointValue {
        let n = self.t_obs.len();
        let h = self.bandwidth;
        // log K~_i = log w_i + log K_h(T_i - t) - log r(t, X_i); shift by the
        // maximum so the huge GPS ratios stay in range. The estimator is
        // invariant to the common factor.
        let mut logk = Vec::with_capacity(n);
        let mut max_log = f64::NEG_INFINITY;
        for i in 0..n {
            let z = (self.t_obs[i] - t) / h;
            let zr = (t - self.theta[i]) / self.sigma2.sqrt();
            let l = self.log_w[i] - 0.5 * z * z + 0.5 * zr * zr;
            logk.push(l);
            max_log = max_log.max(l);
        }
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let k = (logk[i] - max_log).exp();
            let dt = self.t_obs[i] - t;
            s0 += k;
            s1 += k * dt;
            s2 += k * dt * dt;
            d0 += k * self.y[i];
            d1 += k * dt * self.y[i];
        }
        if self.nadaraya_watson {
            let value = d0 / s0;
            return PointValue {
                value: value.clamp(self.y_min, self.y_max),
                flags: PointFlags::default(),
            };
        }
        let det = s0 * s2 - s1 * s1;
        if !(det.abs() >= SINGULARITY_EPS * s0 * s2) || !det.is_finite() {
            return PointValue {
                value: f64::NAN,
                flags: PointFlags {
                    singular: true,
                    extrapolation: false,
                },
            };
        }
        PointValue {
            value: (d0 * s2 - d1 * s1) / det,
            flags: PointFlags::default(),
        }
    }
}
