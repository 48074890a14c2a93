//! Covariance-adjustment GPS estimators: per-level regressions on the GPS
//! for categorical treatments, and subclassification on the treatment at
//! theoretical quantiles for continuous ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{DrfEstimate, Grid, GridKind, PointFlags};
use crate::numeric;
use crate::smooth::{fit_univariate, SmoothFit, SmoothOptions};
use crate::treatment::{
    default_mc_size, gps_from_theta, theoretical_quantiles, GaussianTreatmentModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovWithinModel {
    Linear,
    Quadratic,
    Scm,
}

enum ClassModel {
    /// Polynomial in the GPS: coefficients for 1, r, (r^2).
    Poly(DVector<f64>),
    Smooth(SmoothFit),
}

impl ClassModel {
    fn eval(&self, r: f64) -> f64 {
        match self {
            ClassModel::Poly(beta) => {
                let mut acc = beta[0] + beta[1] * r;
                if beta.len() > 2 {
                    acc += beta[2] * r * r;
                }
                acc
            }
            ClassModel::Smooth(fit) => fit.value_at(&[r]).expect("univariate fit"),
        }
    }
}

/// Covariance adjustment for a continuous treatment: subclassify on T at
/// Monte Carlo theoretical quantiles, regress Y on each unit's own GPS
/// within a subclass, then average the class model over the whole sample at
/// the GPS profile of the class's theoretical median treatment.
pub(crate) struct CovAdjContFit {
    cutpoints: Vec<f64>,
    medians: Vec<f64>,
    class_models: Vec<ClassModel>,
    pub class_counts: Vec<usize>,
    theta: Vec<f64>,
    sigma2: f64,
    wfrac: Vec<f64>,
}

impl CovAdjContFit {
    pub fn new(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        subclasses: usize,
        within: CovWithinModel,
        mc_size: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if subclasses < 2 {
            return Err(Error::InvalidArgument(
                "covariance adjustment needs at least two subclasses".into(),
            ));
        }
        let probs: Vec<f64> = (1..subclasses)
            .map(|j| j as f64 / subclasses as f64)
            .collect();
        let mc = mc_size.unwrap_or_else(|| default_mc_size(data.n()));
        let grid = theoretical_quantiles(model, data, &probs, mc, seed)?;
        Self::with_cutpoints(data, model, y, &grid.cutpoints, &grid.subclass_medians, within)
    }

    /// Same estimator with externally supplied cutpoints and medians;
    /// exposed for oracle tests with fixed subclass boundaries.
    pub fn with_cutpoints(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        cutpoints: &[f64],
        medians: &[f64],
        within: CovWithinModel,
    ) -> Result<Self> {
        if medians.len() != cutpoints.len() + 1 {
            return Err(Error::InvalidArgument(
                "need one median per subclass".into(),
            ));
        }
        let scores = model.score(data)?;
        let n = data.n();
        let subclasses = medians.len();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); subclasses];
        for i in 0..n {
            let class = cutpoints.partition_point(|&c| c < data.treatment()[i]);
            members[class].push(i);
        }
        let w = data.weights();
        let mut class_models = Vec::with_capacity(subclasses);
        let mut class_counts = Vec::with_capacity(subclasses);
        for (s, idx) in members.iter().enumerate() {
            let min_units = match within {
                CovWithinModel::Linear => 3,
                CovWithinModel::Quadratic => 4,
                CovWithinModel::Scm => 6,
            };
            if idx.len() < min_units {
                return Err(Error::EmptySubclass {
                    index: s,
                    count: idx.len(),
                });
            }
            class_counts.push(idx.len());
            let r_own: Vec<f64> = idx.iter().map(|&i| scores.gps[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let ws: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            let model = match within {
                CovWithinModel::Linear | CovWithinModel::Quadratic => {
                    let p = if within == CovWithinModel::Quadratic { 3 } else { 2 };
                    let mut design = DMatrix::zeros(idx.len(), p);
                    for (row, &r) in r_own.iter().enumerate() {
                        design[(row, 0)] = 1.0;
                        design[(row, 1)] = r;
                        if p == 3 {
                            design[(row, 2)] = r * r;
                        }
                    }
                    let fit = numeric::wls(&design, &DVector::from_column_slice(&ys), &ws)
                        .map_err(|e| match e {
                            Error::RankDeficient => Error::Estimation(format!(
                                "singular within-subclass fit in subclass {}",
                                s
                            )),
                            other => other,
                        })?;
                    ClassModel::Poly(fit.beta)
                }
                CovWithinModel::Scm => {
                    let fit = fit_univariate(&r_own, &ys, &ws, &SmoothOptions::default())
                        .map_err(|e| {
                            Error::Estimation(format!(
                                "within-subclass smooth failed in subclass {}: {}",
                                s, e
                            ))
                        })?;
                    ClassModel::Smooth(fit)
                }
            };
            class_models.push(model);
        }
        let sw: f64 = w.iter().sum();
        Ok(CovAdjContFit {
            cutpoints: cutpoints.to_vec(),
            medians: medians.to_vec(),
            class_models,
            class_counts,
            theta: scores.theta,
            sigma2: model.sigma2,
            wfrac: w.iter().map(|v| v / sw).collect(),
        })
    }

    /// The estimator's own evaluation grid: theoretical subclass medians.
    pub fn median_grid(&self) -> Result<Grid> {
        Grid::from_points(self.medians.clone(), GridKind::TheoreticalSubclassMedians)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let class = self.cutpoints.partition_point(|&c| c < t);
        let model = &self.class_models[class];
        let r_at = gps_from_theta(&self.theta, self.sigma2, t);
        r_at.iter()
            .zip(&self.wfrac)
            .map(|(&r, &wf)| wf * model.eval(r))
            .sum()
    }
}

/// Per-level GPS for a categorical treatment: column j holds
/// r(level_j, X_i) for every unit.
#[derive(Debug, Clone)]
pub struct CategoricalGps {
    pub levels: Vec<f64>,
    pub gps: DMatrix<f64>,
}

/// One-vs-rest logistic regressions of level membership on the covariates,
/// giving a per-level GPS. For a binary treatment this is the propensity
/// score and its complement.
pub fn one_vs_rest_logistic_gps(data: &Dataset) -> Result<CategoricalGps> {
    let mut levels: Vec<f64> = data.treatment().to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::InvalidData(
            "categorical treatment needs at least two levels".into(),
        ));
    }
    if levels.len() > data.n() / 3 {
        return Err(Error::InvalidData(format!(
            "{} levels in {} rows does not look categorical",
            levels.len(),
            data.n()
        )));
    }
    let n = data.n();
    let p = data.p();
    let mut design = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..p {
            design[(i, j + 1)] = data.covariates()[(i, j)];
        }
    }
    let mut gps = DMatrix::zeros(n, levels.len());
    for (j, &level) in levels.iter().enumerate() {
        let y01: Vec<f64> = data
            .treatment()
            .iter()
            .map(|&t| if t == level { 1.0 } else { 0.0 })
            .collect();
        let fit = numeric::logistic_irls(&design, &y01, data.weights())?;
        let eta = &design * &fit.beta;
        for i in 0..n {
            gps[(i, j)] = 1.0 / (1.0 + (-eta[i].clamp(-30.0, 30.0)).exp());
        }
    }
    Ok(CategoricalGps { levels, gps })
}

/// Covariance-adjustment GPS for a categorical treatment: regress Y on
/// r(level, X) among the units at each level, then average the fitted line
/// over the whole sample. The baseline records the reference level's value,
/// so relative effects are value minus baseline.
pub fn estimate_cov_adj_categorical(
    data: &Dataset,
    gps: &CategoricalGps,
    reference: usize,
) -> Result<DrfEstimate> {
    let y = data.response_required()?;
    let levels = &gps.levels;
    if reference >= levels.len() {
        return Err(Error::InvalidArgument(format!(
            "reference level index {} out of range ({} levels)",
            reference,
            levels.len()
        )));
    }
    if gps.gps.nrows() != data.n() || gps.gps.ncols() != levels.len() {
        return Err(Error::DimensionMismatch(
            "categorical GPS shape does not match the data".into(),
        ));
    }
    let n = data.n();
    let w = data.weights();
    let sw: f64 = w.iter().sum();
    let level_members: Vec<Vec<usize>> = levels
        .iter()
        .map(|&level| (0..n).filter(|&i| data.treatment()[i] == level).collect())
        .collect();
    for (j, idx) in level_members.iter().enumerate() {
        if idx.len() < 3 {
            return Err(Error::EmptySubclass {
                index: j,
                count: idx.len(),
            });
        }
    }
    let mut values = Vec::with_capacity(levels.len());
    for (j, idx) in level_members.iter().enumerate() {
        let mut design = DMatrix::zeros(idx.len(), 2);
        let mut ys = DVector::zeros(idx.len());
        let mut ws = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            design[(row, 0)] = 1.0;
            design[(row, 1)] = gps.gps[(i, j)];
            ys[row] = y[i];
            ws.push(w[i]);
        }
        let fit = numeric::wls(&design, &ys, &ws)?;
        let value: f64 = (0..n)
            .map(|i| w[i] / sw * (fit.beta[0] + fit.beta[1] * gps.gps[(i, j)]))
            .sum();
        values.push(value);
    }
    let grid = Grid::from_points(levels.clone(), GridKind::Levels)?;
    let baseline = Some((levels[reference], values[reference]));
    let flags = vec![PointFlags::default(); values.len()];
    Ok(DrfEstimate {
        grid,
        values,
        derivative: None,
        baseline,
        se: None,
        lower: None,
        upper: None,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treatment::{fit_treatment_model, DesignSpec};
    use nalgebra::DMatrix;
    use rand::Rng;

    fn dataset(x: &[f64], t: &[f64], y: &[f64]) -> Dataset {
        Dataset::new(
            vec!["x".into()],
            DMatrix::from_column_slice(x.len(), 1, x),
            t.to_vec(),
            Some(y.to_vec()),
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_response_all_levels() {
        let mut rng = crate::numeric::stream_rng(60, 0);
        let n = 60;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| {
                let p = 1.0 / (1.0 + (-v).exp());
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let y = vec![4.0; n];
        let data = dataset(&x, &t, &y);
        let gps = one_vs_rest_logistic_gps(&data).unwrap();
        let est = estimate_cov_adj_categorical(&data, &gps, 0).unwrap();
        for v in est.values {
            assert!((v - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn binary_reduction_matches_direct_covariance_adjustment() {
        // The GPS route must reproduce the two-group regression estimate
        // (alpha1 - alpha0) + (beta1 - beta0) * mean(e) exactly.
        let mut rng = crate::numeric::stream_rng(61, 0);
        let n = 300;
        let x: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| {
                let p = 1.0 / (1.0 + (-(0.3 + 0.8 * v)).exp());
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&t)
            .map(|(&xv, &tv)| 1.0 + 2.0 * xv + 1.5 * tv + 0.3 * crate::numeric::std_normal(&mut rng))
            .collect();
        let data = dataset(&x, &t, &y);
        let gps = one_vs_rest_logistic_gps(&data).unwrap();
        let est = estimate_cov_adj_categorical(&data, &gps, 0).unwrap();
        let effect_gps = est.values[1] - est.values[0];

        // Direct oracle: regress y on e-hat within each group.
        let e: Vec<f64> = (0..n).map(|i| gps.gps[(i, 1)]).collect();
        let fit_group = |level: f64| {
            let idx: Vec<usize> = (0..n).filter(|&i| t[i] == level).collect();
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            let m = idx.len() as f64;
            for &i in &idx {
                sx += e[i];
                sy += y[i];
                sxx += e[i] * e[i];
                sxy += e[i] * y[i];
            }
            let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            let intercept = (sy - slope * sx) / m;
            (intercept, slope)
        };
        let (a0, b0) = fit_group(0.0);
        let (a1, b1) = fit_group(1.0);
        let ebar = crate::numeric::mean(&e);
        let oracle = (a1 - a0) + (b1 - b0) * ebar;
        assert!(
            (effect_gps - oracle).abs() < 1e-10,
            "{} vs {}",
            effect_gps,
            oracle
        );
    }

    #[test]
    fn three_level_per_level_oracle() {
        let mut rng = crate::numeric::stream_rng(62, 0);
        let n = 120;
        let x: Vec<f64> = (0..n).map(|_| crate::numeric::std_normal(&mut rng)).collect();
        let t: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&t)
            .map(|(&xv, &tv)| xv + tv * tv + 0.2 * crate::numeric::std_normal(&mut rng))
            .collect();
        let data = dataset(&x, &t, &y);
        let gps = one_vs_rest_logistic_gps(&data).unwrap();
        assert_eq!(gps.levels, vec![0.0, 1.0, 2.0]);
        let est = estimate_cov_adj_categorical(&data, &gps, 0).unwrap();

        for (j, &level) in gps.levels.iter().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| t[i] == level).collect();
            let m = idx.len() as f64;
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &i in &idx {
                let r = gps.gps[(i, j)];
                sx += r;
                sy += y[i];
                sxx += r * r;
                sxy += r * y[i];
            }
            let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            let intercept = (sy - slope * sx) / m;
            let oracle: f64 = (0..n)
                .map(|i| (intercept + slope * gps.gps[(i, j)]) / n as f64)
                .sum();
            assert!((est.values[j] - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn small_level_is_an_error() {
        let x = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let t = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let y = [1.0; 8];
        let data = dataset(&x, &t, &y);
        let gps = CategoricalGps {
            levels: vec![0.0, 1.0],
            gps: DMatrix::from_fn(8, 2, |i, j| 0.2 + 0.05 * i as f64 + 0.1 * j as f64),
        };
        assert!(matches!(
            estimate_cov_adj_categorical(&data, &gps, 0),
            Err(Error::EmptySubclass { .. })
        ));
    }

    #[test]
    fn continuous_two_class_hand_oracle() {
        // Fixed cutpoint at t = 1.0, medians (0.5, 1.5); the oracle fits
        // Y ~ R within each class directly and averages by hand.
        let x = [0.0, 0.2, 0.4, 0.6, 1.0, 1.2, 1.4, 1.6];
        let t = [0.1, 0.5, 0.3, 0.9, 1.1, 1.5, 1.3, 1.9];
        let y = [0.4, 1.1, 0.6, 1.8, 2.3, 3.0, 2.6, 3.8];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let fit = CovAdjContFit::with_cutpoints(
            &data,
            &model,
            &y,
            &[1.0],
            &[0.5, 1.5],
            CovWithinModel::Linear,
        )
        .unwrap();

        let scores = model.score(&data).unwrap();
        let class: Vec<usize> = t.iter().map(|&tv| usize::from(tv > 1.0)).collect();
        for (s, &median) in [0.5f64, 1.5f64].iter().enumerate() {
            let idx: Vec<usize> = (0..8).filter(|&i| class[i] == s).collect();
            let m = idx.len() as f64;
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for &i in &idx {
                let r = scores.gps[i];
                sx += r;
                sy += y[i];
                sxx += r * r;
                sxy += r * y[i];
            }
            let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
            let intercept = (sy - slope * sx) / m;
            let r_at: Vec<f64> = scores
                .theta
                .iter()
                .map(|&th| crate::numeric::normal_density(median, th, model.sigma2))
                .collect();
            let oracle: f64 = r_at.iter().map(|&r| (intercept + slope * r) / 8.0).sum();
            assert!(
                (fit.value_at(median) - oracle).abs() < 1e-8,
                "class {}: {} vs {}",
                s,
                fit.value_at(median),
                oracle
            );
        }
    }

    #[test]
    fn continuous_constant_response() {
        let mut rng = crate::numeric::stream_rng(63, 0);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| v + 0.5 * crate::numeric::std_normal(&mut rng))
            .collect();
        let y = vec![2.0; n];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let fit = CovAdjContFit::new(
            &data,
            &model,
            &y,
            4,
            CovWithinModel::Linear,
            Some(10 * n),
            5,
        )
        .unwrap();
        for &tv in &fit.medians.clone() {
            assert!((fit.value_at(tv) - 2.0).abs() < 1e-8);
        }
    }
}
