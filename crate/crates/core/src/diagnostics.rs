//! Balance checks for the fitted treatment model and the overlap
//! diagnostic for p-function-based DRF estimation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{self, quantile, quantile_sorted};
use crate::treatment::GaussianTreatmentModel;

/// Balance statistics for one covariate: the t- (or z-) statistic of the
/// treatment coefficient when the covariate is regressed on T with and
/// without the propensity summary.
#[derive(Debug, Clone, Serialize)]
pub struct CovariateBalance {
    pub covariate: String,
    pub binary: bool,
    pub adjusted_t: Option<f64>,
    pub unadjusted_t: Option<f64>,
    /// Set when the covariate had to be skipped (constant column,
    /// logistic separation).
    pub flag: Option<String>,
}

/// Balance report in the regression style: one row per covariate.
#[derive(Debug, Clone, Serialize)]
pub struct IvdBalanceReport {
    pub rows: Vec<CovariateBalance>,
}

impl IvdBalanceReport {
    /// Sorted (statistic, standard normal quantile) pairs for a normal
    /// quantile plot of the adjusted statistics.
    pub fn qq_pairs(&self) -> Vec<(f64, f64)> {
        let mut stats: Vec<f64> = self.rows.iter().filter_map(|r| r.adjusted_t).collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        let m = stats.len();
        stats
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let p = (i as f64 + 0.5) / m as f64;
                (
                    s,
                    statrs::distribution::ContinuousCDF::inverse_cdf(&normal, p),
                )
            })
            .collect()
    }
}

fn is_binary(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// t-statistic of the T coefficient from a weighted regression of the
/// covariate on (1, T) or (1, T, theta).
fn gaussian_t_stat(
    covariate: &[f64],
    t: &[f64],
    theta: Option<&[f64]>,
    weights: &[f64],
) -> Result<f64> {
    let n = covariate.len();
    let p = 2 + usize::from(theta.is_some());
    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = t[i];
        if let Some(th) = theta {
            design[(i, 2)] = th[i];
        }
    }
    let wn = numeric::normalize_weights(weights);
    let fit = numeric::wls(&design, &DVector::from_column_slice(covariate), &wn)?;
    // A numerically exact fit leaves the statistic 0/0 undefined; this
    // happens when theta is an affine function of the covariate itself.
    let scale: f64 = numeric::weighted_variance(covariate, &wn) * (n as f64 - 1.0);
    if fit.rss <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidData(
            "covariate is perfectly explained by (T, theta)".into(),
        ));
    }
    let sigma2 = fit.rss / (n - p) as f64;
    let se = (sigma2 * fit.xtwx_inv[(1, 1)]).sqrt();
    Ok(fit.beta[1] / se)
}

/// z-statistic of the T coefficient from a weighted logistic regression of
/// a binary covariate on (1, T) or (1, T, theta).
fn logistic_z_stat(
    covariate: &[f64],
    t: &[f64],
    theta: Option<&[f64]>,
    weights: &[f64],
) -> Result<f64> {
    let n = covariate.len();
    let p = 2 + usize::from(theta.is_some());
    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = t[i];
        if let Some(th) = theta {
            design[(i, 2)] = th[i];
        }
    }
    let fit = numeric::logistic_irls(&design, covariate, weights)?;
    let se = fit.cov[(1, 1)].sqrt();
    Ok(fit.beta[1] / se)
}

/// Regression-based balance: each covariate is regressed on T and theta
/// (Gaussian for continuous columns, logistic for binary indicators) and
/// the treatment coefficient's statistic is recorded, plus the unadjusted
/// variant without theta. Statistics near N(0, 1) indicate balance.
pub fn balance_ivd(data: &Dataset, theta: &[f64]) -> Result<IvdBalanceReport> {
    if theta.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries for {} rows",
            theta.len(),
            data.n()
        )));
    }
    let t = data.treatment();
    let w = data.weights();
    let mut rows = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let col = data.covariate_column(j);
        let name = data.covariate_names()[j].clone();
        if numeric::weighted_variance(&col, w) < 1e-24 {
            rows.push(CovariateBalance {
                covariate: name,
                binary: false,
                adjusted_t: None,
                unadjusted_t: None,
                flag: Some("constant covariate".into()),
            });
            continue;
        }
        let binary = is_binary(&col);
        let (adj, unadj) = if binary {
            (
                logistic_z_stat(&col, t, Some(theta), w),
                logistic_z_stat(&col, t, None, w),
            )
        } else {
            (
                gaussian_t_stat(&col, t, Some(theta), w),
                gaussian_t_stat(&col, t, None, w),
            )
        };
        let mut notes = Vec::new();
        if let Err(e) = &adj {
            notes.push(format!("adjusted: {}", e));
        }
        if let Err(e) = &unadj {
            notes.push(format!("unadjusted: {}", e));
        }
        rows.push(CovariateBalance {
            covariate: name,
            binary,
            adjusted_t: adj.ok(),
            unadjusted_t: unadj.ok(),
            flag: if notes.is_empty() {
                None
            } else {
                Some(notes.join("; "))
            },
        });
    }
    Ok(IvdBalanceReport { rows })
}

/// Block-level difference in covariate means within one GPS subclass.
#[derive(Debug, Clone, Serialize)]
pub struct BlockDifference {
    pub block: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub mean_difference: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HiIntervalBalance {
    pub lo: f64,
    pub hi: f64,
    /// Median treatment among units inside the interval.
    pub t_ref: f64,
    pub stats: Vec<HiCovariateStat>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HiCovariateStat {
    pub covariate: String,
    /// Combined t-statistic over blocks, block-size weighted.
    pub t: Option<f64>,
    pub dropped_blocks: usize,
    pub blocks: Vec<BlockDifference>,
}

/// Balance report in the coarsened-treatment style: per interval and
/// covariate, a single t-statistic combining within-block two-sample
/// comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct HiBalanceReport {
    pub cutpoints: Vec<f64>,
    pub n_subclass: usize,
    /// Block-size weighting of the combined statistic (the combination
    /// rule is not standardized; recorded for the reader).
    pub combination: String,
    pub intervals: Vec<HiIntervalBalance>,
}

/// Coarsened-treatment balance: for each interval (t_j, t_{j+1}], units are
/// blocked on the GPS evaluated at the interval's median treatment, the
/// in/out covariate mean difference is computed per block, and the
/// differences combine into one t-statistic with block-size weights.
/// Blocks with fewer than 2 units on either side are dropped and counted.
pub fn balance_hi(
    data: &Dataset,
    model: &GaussianTreatmentModel,
    cutpoints: &[f64],
    n_subclass: usize,
) -> Result<HiBalanceReport> {
    if cutpoints.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two cutpoints to form an interval".into(),
        ));
    }
    if cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "cutpoints must be strictly increasing".into(),
        ));
    }
    if n_subclass == 0 {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    let t = data.treatment();
    let n = data.n();
    let mut intervals = Vec::with_capacity(cutpoints.len() - 1);
    for w in cutpoints.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let inside: Vec<bool> = t.iter().map(|&v| v > lo && v <= hi).collect();
        let inside_t: Vec<f64> = t
            .iter()
            .zip(&inside)
            .filter(|(_, &b)| b)
            .map(|(&v, _)| v)
            .collect();
        if inside_t.is_empty() {
            intervals.push(HiIntervalBalance {
                lo,
                hi,
                t_ref: f64::NAN,
                stats: data
                    .covariate_names()
                    .iter()
                    .map(|c| HiCovariateStat {
                        covariate: c.clone(),
                        t: None,
                        dropped_blocks: 0,
                        blocks: Vec::new(),
                    })
                    .collect(),
            });
            continue;
        }
        let t_ref = quantile(&inside_t, 0.5);
        let r_ref = model.gps_at(t_ref, data)?;
        let block_cuts = if n_subclass > 1 {
            let probs: Vec<f64> = (1..n_subclass)
                .map(|j| j as f64 / n_subclass as f64)
                .collect();
            numeric::quantiles(&r_ref, &probs)
        } else {
            Vec::new()
        };
        let block_of: Vec<usize> = r_ref
            .iter()
            .map(|&r| block_cuts.partition_point(|&c| c < r))
            .collect();

        let mut stats = Vec::with_capacity(data.p());
        for j in 0..data.p() {
            let col = data.covariate_column(j);
            let mut blocks = Vec::new();
            let mut dropped = 0usize;
            for b in 0..n_subclass {
                let members: Vec<usize> = (0..n).filter(|&i| block_of[i] == b).collect();
                let xs_in: Vec<f64> = members
                    .iter()
                    .filter(|&&i| inside[i])
                    .map(|&i| col[i])
                    .collect();
                let xs_out: Vec<f64> = members
                    .iter()
                    .filter(|&&i| !inside[i])
                    .map(|&i| col[i])
                    .collect();
                if xs_in.len() < 2 || xs_out.len() < 2 {
                    dropped += 1;
                    continue;
                }
                let diff = numeric::mean(&xs_in) - numeric::mean(&xs_out);
                let var = numeric::sample_variance(&xs_in) / xs_in.len() as f64
                    + numeric::sample_variance(&xs_out) / xs_out.len() as f64;
                blocks.push(BlockDifference {
                    block: b,
                    n_in: xs_in.len(),
                    n_out: xs_out.len(),
                    mean_difference: diff,
                    variance: var,
                });
            }
            let t_stat = if blocks.is_empty() {
                None
            } else {
                let total: f64 = blocks.iter().map(|b| (b.n_in + b.n_out) as f64).sum();
                let mut diff = 0.0;
                let mut var = 0.0;
                for b in &blocks {
                    let wgt = (b.n_in + b.n_out) as f64 / total;
                    diff += wgt * b.mean_difference;
                    var += wgt * wgt * b.variance;
                }
                if var > 0.0 {
                    Some(diff / var.sqrt())
                } else {
                    None
                }
            };
            stats.push(HiCovariateStat {
                covariate: data.covariate_names()[j].clone(),
                t: t_stat,
                dropped_blocks: dropped,
                blocks,
            });
        }
        intervals.push(HiIntervalBalance {
            lo,
            hi,
            t_ref,
            stats,
        });
    }
    Ok(HiBalanceReport {
        cutpoints: cutpoints.to_vec(),
        n_subclass,
        combination: "block-size weighted mean difference over pooled block-size weighted variance"
            .into(),
        intervals,
    })
}

/// Default interval cutpoints for [`balance_hi`]: treatment quintiles.
pub fn default_hi_cutpoints(t: &[f64]) -> Vec<f64> {
    let probs: Vec<f64> = (0..=5).map(|j| j as f64 / 5.0).collect();
    let mut cuts = numeric::quantiles(t, &probs);
    // Nudge the lowest edge down so the first half-open interval catches
    // the minimum.
    let span = cuts[5] - cuts[0];
    cuts[0] -= 1e-9 * span.max(1.0);
    cuts
}

/// Coverage of the central theta range near one evaluation dose.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapPoint {
    pub t: f64,
    /// Width of the neighborhood's theta range relative to the central 90%
    /// theta range; values below one signal extrapolation risk.
    pub coverage: f64,
    pub n_neighborhood: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapReport {
    pub window: f64,
    pub theta_q05: f64,
    pub theta_q95: f64,
    pub points: Vec<OverlapPoint>,
    /// Raw (T_i, theta_i) pairs for the scatter diagnostic.
    pub pairs: Vec<(f64, f64)>,
}

/// Overlap diagnostic for SCM(p-function): for each grid dose, the theta
/// range among units whose treatment falls in the +/- `window` quantile
/// band of the dose, relative to the central 90% theta range.
pub fn overlap_scatter(
    data: &Dataset,
    theta: &[f64],
    grid: &[f64],
    window: f64,
) -> Result<OverlapReport> {
    if theta.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries for {} rows",
            theta.len(),
            data.n()
        )));
    }
    if !(window > 0.0 && window < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "window must be in (0, 0.5), got {}",
            window
        )));
    }
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.treatment()[a]
            .partial_cmp(&data.treatment()[b])
            .unwrap()
    });
    let sorted_t: Vec<f64> = order.iter().map(|&i| data.treatment()[i]).collect();
    let theta_by_t: Vec<f64> = order.iter().map(|&i| theta[i]).collect();
    let q05 = quantile(theta, 0.05);
    let q95 = quantile(theta, 0.95);
    let denom = q95 - q05;
    if !(denom > 0.0) {
        return Err(Error::InvalidData(
            "theta has no spread; overlap coverage undefined".into(),
        ));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let pos = sorted_t.partition_point(|&v| v <= t) as f64 / n as f64;
        let lo = quantile_sorted(&sorted_t, (pos - window).max(0.0));
        let hi = quantile_sorted(&sorted_t, (pos + window).min(1.0));
        let a = sorted_t.partition_point(|&v| v < lo);
        let b = sorted_t.partition_point(|&v| v <= hi);
        if b <= a {
            return Err(Error::InvalidData(format!(
                "empty neighborhood at t = {}",
                t
            )));
        }
        let mut th_min = f64::INFINITY;
        let mut th_max = f64::NEG_INFINITY;
        for i in a..b {
            th_min = th_min.min(theta_by_t[i]);
            th_max = th_max.max(theta_by_t[i]);
        }
        points.push(OverlapPoint {
            t,
            coverage: (th_max - th_min) / denom,
            n_neighborhood: b - a,
        });
    }
    Ok(OverlapReport {
        window,
        theta_q05: q05,
        theta_q95: q95,
        points,
        pairs: data
            .treatment()
            .iter()
            .copied()
            .zip(theta.iter().copied())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treatment::{fit_treatment_model, DesignSpec};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset_with(
        cols: Vec<(&str, Vec<f64>)>,
        t: Vec<f64>,
    ) -> Dataset {
        let n = t.len();
        let p = cols.len();
        let mut m = DMatrix::zeros(n, p);
        for (j, (_, col)) in cols.iter().enumerate() {
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        Dataset::new(
            cols.iter().map(|(name, _)| name.to_string()).collect(),
            m,
            t,
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_covariate_is_flagged() {
        let n = 50;
        let mut rng = crate::numeric::stream_rng(70, 0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let data = dataset_with(vec![("c", vec![1.0; n])], t);
        let theta = vec![0.5; n];
        let report = balance_ivd(&data, &theta).unwrap();
        assert!(report.rows[0].flag.as_deref() == Some("constant covariate"));
        assert!(report.rows[0].adjusted_t.is_none());
    }

    #[test]
    fn covariate_equal_to_treatment_is_wildly_imbalanced() {
        let n = 100;
        let mut rng = crate::numeric::stream_rng(71, 0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        // covariate tracks T up to a sliver of noise, so the statistic is
        // finite but enormous; an exactly duplicated column would be
        // flagged as perfectly explained instead.
        let x: Vec<f64> = t
            .iter()
            .map(|&v| v + 1e-4 * crate::numeric::std_normal(&mut rng))
            .collect();
        let data = dataset_with(vec![("x", x)], t);
        let theta = vec![0.0; n];
        let report = balance_ivd(&data, &theta).unwrap();
        let t_stat = report.rows[0].unadjusted_t.unwrap();
        assert!(t_stat.abs() > 10.0, "t = {}", t_stat);

        let exact = dataset_with(vec![("x", data.treatment().to_vec())], data.treatment().to_vec());
        let report = balance_ivd(&exact, &theta).unwrap();
        assert!(report.rows[0].unadjusted_t.is_none());
        assert!(report.rows[0].flag.is_some());
    }

    #[test]
    fn affine_rescaling_leaves_t_statistic_unchanged() {
        let n = 120;
        let mut rng = crate::numeric::stream_rng(72, 0);
        let x: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        // theta depends on both covariates, so the adjusted regression of
        // x on (T, theta) is well posed.
        let theta: Vec<f64> = x
            .iter()
            .zip(&x2)
            .map(|(&a, &b)| 0.4 * a + 0.7 * b)
            .collect();
        let t: Vec<f64> = theta
            .iter()
            .map(|&th| th + crate::numeric::std_normal(&mut rng))
            .collect();
        let scaled: Vec<f64> = x.iter().map(|&v| 5.0 * v + 11.0).collect();
        let d1 = dataset_with(vec![("x", x), ("x2", x2.clone())], t.clone());
        let d2 = dataset_with(vec![("x", scaled), ("x2", x2)], t);
        let r1 = balance_ivd(&d1, &theta).unwrap();
        let r2 = balance_ivd(&d2, &theta).unwrap();
        let (a1, a2) = (
            r1.rows[0].adjusted_t.unwrap(),
            r2.rows[0].adjusted_t.unwrap(),
        );
        assert!((a1.abs() - a2.abs()).abs() < 1e-10);
        let (u1, u2) = (
            r1.rows[0].unadjusted_t.unwrap(),
            r2.rows[0].unadjusted_t.unwrap(),
        );
        assert!((u1.abs() - u2.abs()).abs() < 1e-10);
    }

    #[test]
    fn hi_single_block_equals_welch_t() {
        let n = 80;
        let mut rng = crate::numeric::stream_rng(73, 0);
        let x: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        let t: Vec<f64> = (0..n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect::<Vec<f64>>()
            .iter()
            .zip(&x)
            .map(|(&e, &xv)| 0.5 * xv + e)
            .collect();
        let data = dataset_with(vec![("x", x.clone())], t.clone());
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let med = crate::numeric::quantile(&t, 0.5);
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let report = balance_hi(&data, &model, &[lo, med, hi], 1).unwrap();

        // Welch two-sample t for the first interval (T <= median).
        let inside: Vec<f64> = x
            .iter()
            .zip(&t)
            .filter(|(_, &tv)| tv > lo && tv <= med)
            .map(|(&v, _)| v)
            .collect();
        let outside: Vec<f64> = x
            .iter()
            .zip(&t)
            .filter(|(_, &tv)| !(tv > lo && tv <= med))
            .map(|(&v, _)| v)
            .collect();
        let welch = (crate::numeric::mean(&inside) - crate::numeric::mean(&outside))
            / (crate::numeric::sample_variance(&inside) / inside.len() as f64
                + crate::numeric::sample_variance(&outside) / outside.len() as f64)
                .sqrt();
        let got = report.intervals[0].stats[0].t.unwrap();
        assert!((got - welch).abs() < 1e-10, "{} vs {}", got, welch);
    }

    #[test]
    fn hi_detects_interval_determined_covariate() {
        let n = 500;
        let mut rng = crate::numeric::stream_rng(74, 0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let med = crate::numeric::quantile(&t, 0.5);
        // Covariate is exactly the interval indicator, plus a hair of noise
        // so variances are positive.
        let x: Vec<f64> = t
            .iter()
            .map(|&tv| f64::from(u8::from(tv <= med)) + 1e-6 * crate::numeric::std_normal(&mut rng))
            .collect();
        let x2: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        let data = dataset_with(vec![("ind", x), ("noise", x2)], t.clone());
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let lo = -0.01;
        let report = balance_hi(&data, &model, &[lo, med, 1.01], 5).unwrap();
        let t_ind = report.intervals[0].stats[0].t.unwrap();
        assert!(t_ind.abs() > 5.0, "expected huge imbalance, got {}", t_ind);
    }

    #[test]
    fn overlap_degenerate_dependence_matches_window() {
        let n = 2000;
        let mut rng = crate::numeric::stream_rng(75, 0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = t.clone();
        let data = dataset_with(vec![("x", x.clone())], t.clone());
        let theta = x;
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let report = overlap_scatter(&data, &theta, &grid, 0.05).unwrap();
        for pt in &report.points {
            // theta == T uniform: the neighborhood spans about 10% of the
            // distribution against a 90% central range.
            assert!(
                pt.coverage > 0.05 && pt.coverage < 0.2,
                "coverage {} at t {}",
                pt.coverage,
                pt.t
            );
        }
    }

    #[test]
    fn overlap_independent_theta_is_covered() {
        let n = 3000;
        let mut rng = crate::numeric::stream_rng(76, 0);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let data = dataset_with(vec![("x", x.clone())], t);
        let report = overlap_scatter(&data, &x, &[0.3, 0.5, 0.7], 0.05).unwrap();
        for pt in &report.points {
            assert!(pt.coverage > 0.8, "coverage {} at t {}", pt.coverage, pt.t);
        }
        assert_eq!(report.pairs.len(), n);
    }
}
