//! Shared numeric building blocks: quantiles, weighted moments, weighted
//! least squares via QR, logistic regression, and seed-stream derivation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

pub const SQRT_2PI: f64 = 2.5066282746310002;

/// Gaussian density with the given mean and variance.
pub fn normal_density(x: f64, mean: f64, variance: f64) -> f64 {
    let sd = variance.sqrt();
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (SQRT_2PI * sd)
}

/// Type-7 (linear interpolation) quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted slice (sorts a copy).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / sw
}

/// Weighted sample variance with weights normalized to sum to n and the
/// usual n-1 denominator.
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let sw: f64 = weights.iter().sum();
    let scale = n as f64 / sw;
    let mean = weighted_mean(values, weights);
    let ss: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * scale * (v - mean) * (v - mean))
        .sum();
    ss / (n as f64 - 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)
}

/// Rescale weights so they sum to the number of observations.
pub fn normalize_weights(weights: &[f64]) -> Vec<f64> {
    let n = weights.len() as f64;
    let sw: f64 = weights.iter().sum();
    weights.iter().map(|w| w * n / sw).collect()
}

/// A weighted least squares fit solved through column-pivoted QR.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Weighted residual sum of squares, with weights as supplied.
    pub rss: f64,
    /// (X'WX)^-1, for coefficient standard errors.
    pub xtwx_inv: DMatrix<f64>,
}

/// Solves min_b sum_i w_i (y_i - x_i'b)^2. Weights must be positive.
/// Fails with `RankDeficient` when the weighted design loses full column
/// rank.
pub fn wls(design: &DMatrix<f64>, y: &DVector<f64>, weights: &[f64]) -> Result<WlsFit> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, response {}, weights {}",
            n,
            p,
            y.len(),
            weights.len()
        )));
    }
    if n < p {
        return Err(Error::InvalidArgument(format!(
            "need at least {} observations for {} coefficients, got {}",
            p, p, n
        )));
    }
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut xw = design.clone();
    for i in 0..n {
        for j in 0..p {
            xw[(i, j)] *= sqrt_w[i];
        }
    }
    let yw = DVector::from_iterator(n, (0..n).map(|i| y[i] * sqrt_w[i]));

    let qr = xw.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    let tol = r00 * (n.max(p) as f64) * f64::EPSILON;
    let rank = (0..p).filter(|&j| r[(j, j)].abs() > tol).count();
    if rank < p || r00 == 0.0 {
        return Err(Error::RankDeficient);
    }
    // Least squares through the thin QR: beta = P R^-1 Q' y.
    let mut beta = yw.clone();
    qr.q_tr_mul(&mut beta);
    let mut beta = beta.rows(0, p).into_owned();
    if !r.solve_upper_triangular_mut(&mut beta) {
        return Err(Error::RankDeficient);
    }
    qr.p().inv_permute_rows(&mut beta);

    let fitted = design * &beta;
    let residuals = y - &fitted;
    let rss = (0..n).map(|i| weights[i] * residuals[i] * residuals[i]).sum();

    let xtwx = xw.transpose() * &xw;
    let xtwx_inv = xtwx
        .try_inverse()
        .ok_or(Error::RankDeficient)?;

    Ok(WlsFit {
        beta,
        fitted,
        residuals,
        rss,
        xtwx_inv,
    })
}

/// A fitted binomial logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    /// (X'WX)^-1 at convergence, W the IRLS weights.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
}

/// Logistic regression of a 0/1 response by iteratively reweighted least
/// squares with prior observation weights. Errors with `Separation` when
/// the iterations diverge or fail to converge.
pub fn logistic_irls(design: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Result<LogisticFit> {
    let n = design.nrows();
    let p = design.ncols();
    if y.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, response {}, weights {}",
            n,
            p,
            y.len(),
            weights.len()
        )));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidArgument(
            "logistic response must be 0/1".into(),
        ));
    }

    let mut beta = DVector::zeros(p);
    let max_iter = 100;
    for iter in 0..max_iter {
        let eta = design * &beta;
        let mut irls_w = vec![0.0; n];
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let e = eta[i].clamp(-30.0, 30.0);
            let mu = 1.0 / (1.0 + (-e).exp());
            let v = (mu * (1.0 - mu)).max(1e-10);
            irls_w[i] = weights[i] * v;
            z[i] = e + (y[i] - mu) / v;
        }
        let fit = wls(design, &z, &irls_w)?;
        let delta = (&fit.beta - &beta).amax();
        beta = fit.beta.clone();
        if beta.amax() > 1e6 {
            return Err(Error::Separation);
        }
        if delta < 1e-10 * (1.0 + beta.amax()) {
            return Ok(LogisticFit {
                beta,
                cov: fit.xtwx_inv,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::Separation)
}

/// One standard normal draw.
pub fn std_normal(rng: &mut ChaCha12Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

/// Deterministic per-task RNG: stream `stream` of a ChaCha generator seeded
/// with `master`. Streams are independent, so parallel schedules cannot
/// change results.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}
