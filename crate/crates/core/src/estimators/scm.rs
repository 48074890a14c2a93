//! Smooth-coefficient-model estimators: tensor smooths in (T, GPS) and in
//! (theta, T).

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::Result;
use crate::estimators::{PointFlags, PointValue};
use crate::numeric::{quantile, quantile_sorted};
use crate::smooth::{fit_tensor_scm, SmoothFit, SmoothOptions};
use crate::treatment::{gps_from_theta, GaussianTreatmentModel};

/// Tensor smooth of Y on (T, R); the DRF averages the surface along the
/// GPS profile r(t, X_i).
pub(crate) struct ScmGpsFit {
    fit: SmoothFit,
    theta: Vec<f64>,
    sigma2: f64,
    wfrac: Vec<f64>,
}

impl ScmGpsFit {
    pub fn new(data: &Dataset, model: &GaussianTreatmentModel, y: &[f64]) -> Result<Self> {
        let scores = model.score(data)?;
        let fit = fit_tensor_scm(
            data.treatment(),
            &scores.gps,
            y,
            data.weights(),
            &SmoothOptions::default(),
        )?;
        let sw: f64 = data.weights().iter().sum();
        Ok(ScmGpsFit {
            fit,
            theta: scores.theta,
            sigma2: model.sigma2,
            wfrac: data.weights().iter().map(|w| w / sw).collect(),
        })
    }

    pub fn value_at(&self, t: f64) -> PointValue {
        let r_at = gps_from_theta(&self.theta, self.sigma2, t);
        let (lo, hi) = self.fit.bases()[0].range();
        let ru = self.fit.bases()[0].row(t);
        let m = self.fit.coef_matrix().expect("tensor fit");
        let mt = ru.transpose() * m;
        let mut acc = 0.0;
        for (i, &r) in r_at.iter().enumerate() {
            let rv = self.fit.bases()[1].row(r);
            acc += self.wfrac[i] * mt.transpose().dot(&rv);
        }
        PointValue {
            value: acc,
            flags: PointFlags {
                singular: false,
                extrapolation: t < lo || t > hi,
            },
        }
    }
}

/// Tensor smooth of Y on (theta, T); the DRF averages the surface over the
/// empirical distribution of theta.
pub(crate) struct ScmPfFit {
    fit: SmoothFit,
    /// Rows of B_theta * coefficient-matrix, so a grid evaluation is one
    /// basis row in t and an n-vector dot product.
    profile: DMatrix<f64>,
    wfrac: Vec<f64>,
    sorted_t: Vec<f64>,
    theta_sorted_by_t: Vec<f64>,
    theta_q05: f64,
    theta_q95: f64,
    window: f64,
}

impl ScmPfFit {
    pub fn new(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        window: f64,
    ) -> Result<Self> {
        let theta = model.theta(data)?;
        let fit = fit_tensor_scm(&theta, data.treatment(), y, data.weights(), &SmoothOptions::default())?;
        let m = fit.coef_matrix()?;
        let n = data.n();
        let bu = fit.bases()[0].matrix(&theta);
        let profile = bu * m;
        let sw: f64 = data.weights().iter().sum();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data.treatment()[a].partial_cmp(&data.treatment()[b]).unwrap());
        let sorted_t: Vec<f64> = order.iter().map(|&i| data.treatment()[i]).collect();
        let theta_sorted_by_t: Vec<f64> = order.iter().map(|&i| theta[i]).collect();

        Ok(ScmPfFit {
            fit,
            profile,
            wfrac: data.weights().iter().map(|w| w / sw).collect(),
            sorted_t,
            theta_sorted_by_t,
            theta_q05: quantile(&theta, 0.05),
            theta_q95: quantile(&theta, 0.95),
            window,
        })
    }

    /// Extrapolation flag: the theta range among units with T in the
    /// window-quantile neighborhood of t must cover the central 90% of all
    /// theta.
    fn extrapolates_at(&self, t: f64) -> bool {
        let n = self.sorted_t.len();
        let pos = self.sorted_t.partition_point(|&v| v <= t) as f64 / n as f64;
        let lo = quantile_sorted(&self.sorted_t, (pos - self.window).max(0.0));
        let hi = quantile_sorted(&self.sorted_t, (pos + self.window).min(1.0));
        let a = self.sorted_t.partition_point(|&v| v < lo);
        let b = self.sorted_t.partition_point(|&v| v <= hi);
        if b <= a {
            return true;
        }
        let mut th_min = f64::INFINITY;
        let mut th_max = f64::NEG_INFINITY;
        for i in a..b {
            th_min = th_min.min(self.theta_sorted_by_t[i]);
            th_max = th_max.max(self.theta_sorted_by_t[i]);
        }
        th_min > self.theta_q05 || th_max < self.theta_q95
    }

    pub fn value_at(&self, t: f64) -> PointValue {
        let rv = self.fit.bases()[1].row(t);
        let mut acc = 0.0;
        for i in 0..self.profile.nrows() {
            let mut inner = 0.0;
            for l in 0..rv.len() {
                inner += self.profile[(i, l)] * rv[l];
            }
            acc += self.wfrac[i] * inner;
        }
        PointValue {
            value: acc,
            flags: PointFlags {
                singular: false,
                extrapolation: self.extrapolates_at(t),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::data::Dataset;
    use crate::estimators::{fit_estimator, EstimatorConfig, Grid};
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

    fn sim_regime(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        // Simulation-I style treatment assignment.
        let mut rng = crate::numeric::stream_rng(seed, 0);
        let x: Vec<f64> = (0..n)
            .map(|_| 0.5 + 0.5 * crate::numeric::std_normal(&mut rng))
            .collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&xi| xi + 0.5 * crate::numeric::std_normal(&mut rng))
            .collect();
        (x, t)
    }

    #[test]
    fn scm_gps_constant_response() {
        let (x, t) = sim_regime(120, 31);
        let y = vec![3.25; 120];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(-0.5, 1.5, 6).unwrap();
        let est = fit_estimator(&data, &model, &EstimatorConfig::ScmGps, &grid, 0)
            .unwrap()
            .estimate();
        for v in est.values {
            assert!((v - 3.25).abs() < 1e-6);
        }
    }

    #[test]
    fn scm_gps_identity_response_tracks_t() {
        // Y = T exactly: affine in the tensor null space, and averaging
        // preserves it, so values track the grid.
        let (x, t) = sim_regime(300, 32);
        let data = dataset(&x, &t, &t);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(-0.25, 1.25, 7).unwrap();
        let est = fit_estimator(&data, &model, &EstimatorConfig::ScmGps, &grid, 0)
            .unwrap()
            .estimate();
        for (d, &tg) in grid.points().iter().enumerate() {
            assert!(
                (est.values[d] - tg).abs() < 1e-3,
                "at {} got {}",
                tg,
                est.values[d]
            );
        }
    }

    #[test]
    fn scm_pf_affine_in_theta_and_t() {
        // Y = a + b*theta + c*T exactly: fitted values must equal
        // a + b*mean(theta) + c*t.
        let (x, t) = sim_regime(250, 33);
        let data0 = dataset(&x, &t, &t);
        let model = fit_treatment_model(&data0, DesignSpec::default()).unwrap();
        let theta = model.theta(&data0).unwrap();
        let (a, b, c) = (0.7, 10.0, 2.0);
        let y: Vec<f64> = theta.iter().zip(&t).map(|(&th, &tt)| a + b * th + c * tt).collect();
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let theta = model.theta(&data).unwrap();
        let theta_mean = crate::numeric::mean(&theta);
        let grid = Grid::equally_spaced(-0.5, 1.5, 10).unwrap();
        let est = fit_estimator(
            &data,
            &model,
            &EstimatorConfig::ScmPfunction { overlap_window: 0.05 },
            &grid,
            0,
        )
        .unwrap()
        .estimate();
        for (d, &tg) in grid.points().iter().enumerate() {
            let want = a + b * theta_mean + c * tg;
            assert!(
                (est.values[d] - want).abs() < 1e-6,
                "at {} got {} want {}",
                tg,
                est.values[d],
                want
            );
        }
    }

    #[test]
    fn scm_pf_null_effect_stays_near_zero() {
        // Simulation-I regime: Y depends on theta only, so the relative
        // DRF is truly zero.
        let n = 2000;
        let mut rng = crate::numeric::stream_rng(34, 0);
        let (x, t) = sim_regime(n, 35);
        let data0 = dataset(&x, &t, &t);
        let model0 = fit_treatment_model(&data0, DesignSpec::default()).unwrap();
        let theta = model0.theta(&data0).unwrap();
        let y: Vec<f64> = theta
            .iter()
            .map(|&th| 10.0 * th + crate::numeric::std_normal(&mut rng))
            .collect();
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(-0.5, 1.5, 10).unwrap();
        let fitted = fit_estimator(
            &data,
            &model,
            &EstimatorConfig::ScmPfunction { overlap_window: 0.05 },
            &grid,
            0,
        )
        .unwrap();
        let est = fitted.estimate();
        let v0 = fitted.value_at(0.0).unwrap();
        for &v in &est.values {
            assert!((v - v0).abs() < 0.25, "relative value {}", v - v0);
        }
    }

    #[test]
    fn scm_pf_extrapolation_flag_degenerate_dependence() {
        // theta == T: any neighborhood of t only sees theta near t, so the
        // central-90% coverage fails nearly everywhere.
        let n = 400;
        let mut rng = crate::numeric::stream_rng(36, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| v + 1e-3 * crate::numeric::std_normal(&mut rng))
            .collect();
        let y: Vec<f64> = t.iter().map(|&v| v * 2.0).collect();
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(0.1, 0.9, 5).unwrap();
        let est = fit_estimator(
            &data,
            &model,
            &EstimatorConfig::ScmPfunction { overlap_window: 0.05 },
            &grid,
            0,
        )
        .unwrap()
        .estimate();
        assert!(est.flags.iter().all(|f| f.extrapolation));
    }

    #[test]
    fn scm_pf_no_flag_when_theta_independent_of_t() {
        let n = 600;
        let mut rng = crate::numeric::stream_rng(37, 0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().zip(&t).map(|(&a, &b)| a + b).collect();
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(0.3, 0.7, 5).unwrap();
        let est = fit_estimator(
            &data,
            &model,
            &EstimatorConfig::ScmPfunction { overlap_window: 0.05 },
            &grid,
            0,
        )
        .unwrap()
        .estimate();
        // Interior points see the full theta distribution.
        assert!(est.flags.iter().all(|f| !f.extrapolation));
    }
}
