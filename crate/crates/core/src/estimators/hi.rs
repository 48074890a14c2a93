//! Quadratic GPS response surface: regress Y on a quadratic in (T, R) and
//! average the fitted surface at (t, r(t, X_i)) over the sample.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numeric;
use crate::treatment::{gps_from_theta, GaussianTreatmentModel};

pub(crate) struct HiFit {
    coefs: DVector<f64>,
    linear_in_t: bool,
    theta: Vec<f64>,
    sigma2: f64,
    /// Sampling weights normalized to sum to one; the outer average over
    /// units is weighted.
    wfrac: Vec<f64>,
}

fn design_row(t: f64, r: f64, linear_in_t: bool) -> Vec<f64> {
    if linear_in_t {
        vec![1.0, t, r, r * r, t * r]
    } else {
        vec![1.0, t, t * t, r, r * r, t * r]
    }
}

impl HiFit {
    pub fn new(
        data: &Dataset,
        model: &GaussianTreatmentModel,
        y: &[f64],
        linear_in_t: bool,
    ) -> Result<Self> {
        let scores = model.score(data)?;
        let n = data.n();
        let p = if linear_in_t { 5 } else { 6 };
        let mut design = DMatrix::zeros(n, p);
        for i in 0..n {
            let row = design_row(data.treatment()[i], scores.gps[i], linear_in_t);
            for (j, v) in row.into_iter().enumerate() {
                design[(i, j)] = v;
            }
        }
        let wn = numeric::normalize_weights(data.weights());
        let fit = numeric::wls(&design, &DVector::from_column_slice(y), &wn).map_err(|e| {
            match e {
                Error::RankDeficient => Error::Estimation(
                    "collinear response design (constant GPS?)".into(),
                ),
                other => other,
            }
        })?;
        let sw: f64 = data.weights().iter().sum();
        Ok(HiFit {
            coefs: fit.beta,
            linear_in_t,
            theta: scores.theta,
            sigma2: model.sigma2,
            wfrac: data.weights().iter().map(|w| w / sw).collect(),
        })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let r_at = gps_from_theta(&self.theta, self.sigma2, t);
        let mut acc = 0.0;
        for (i, &r) in r_at.iter().enumerate() {
            let row = design_row(t, r, self.linear_in_t);
            let m: f64 = row
                .iter()
                .zip(self.coefs.iter())
                .map(|(x, b)| x * b)
                .sum();
            acc += self.wfrac[i] * m;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_estimator, EstimatorConfig, Grid};
    use crate::treatment::{fit_treatment_model, DesignSpec};
    use nalgebra::DMatrix;

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
    fn constant_response_gives_constant_drf() {
        let x = [0.1, 0.9, 0.4, 0.7, 0.2, 0.65, 0.35, 0.85];
        let t = [0.3, 1.4, 0.2, 0.9, 0.5, 1.1, 0.1, 1.3];
        let y = [7.0; 8];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(0.0, 1.0, 5).unwrap();
        let fitted = fit_estimator(&data, &model, &EstimatorConfig::Hi { linear_in_t: false }, &grid, 0).unwrap();
        for &v in &fitted.estimate().values {
            assert!((v - 7.0).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_explicit_normal_equations_oracle() {
        // Seven units; oracle solves the 6x6 normal equations by Gaussian
        // elimination, independently of the QR path.
        let x = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        let t = [0.2, 0.9, 0.8, 2.1, 1.7, 3.0, 2.6];
        let y = [1.0, 0.5, 2.0, 1.5, 3.0, 2.0, 4.0];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let scores = model.score(&data).unwrap();

        // Build X'X and X'y by hand.
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| design_row(t[i], scores.gps[i], false))
            .collect();
        let mut xtx = [[0.0f64; 6]; 6];
        let mut xty = [0.0f64; 6];
        for i in 0..7 {
            for a in 0..6 {
                xty[a] += rows[i][a] * y[i];
                for b in 0..6 {
                    xtx[a][b] += rows[i][a] * rows[i][b];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        let mut aug = [[0.0f64; 7]; 6];
        for a in 0..6 {
            aug[a][..6].copy_from_slice(&xtx[a]);
            aug[a][6] = xty[a];
        }
        for col in 0..6 {
            let piv = (col..6)
                .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                .unwrap();
            aug.swap(col, piv);
            for r in col + 1..6 {
                let f = aug[r][col] / aug[col][col];
                for c in col..7 {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
        let mut beta = [0.0f64; 6];
        for r in (0..6).rev() {
            let mut s = aug[r][6];
            for c in r + 1..6 {
                s -= aug[r][c] * beta[c];
            }
            beta[r] = s / aug[r][r];
        }

        let grid = Grid::equally_spaced(0.0, 3.0, 4).unwrap();
        let fitted = fit_estimator(&data, &model, &EstimatorConfig::Hi { linear_in_t: false }, &grid, 0).unwrap();
        let est = fitted.estimate();
        for (d, &tg) in grid.points().iter().enumerate() {
            let r_at: Vec<f64> = scores
                .theta
                .iter()
                .map(|&th| crate::numeric::normal_density(tg, th, model.sigma2))
                .collect();
            let oracle: f64 = (0..7)
                .map(|i| {
                    let row = design_row(tg, r_at[i], false);
                    row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum::<f64>()
                / 7.0;
            assert!(
                (est.values[d] - oracle).abs() < 1e-8,
                "grid point {}: {} vs oracle {}",
                d,
                est.values[d],
                oracle
            );
        }
    }

    #[test]
    fn linear_in_t_variant_drops_the_square() {
        let x = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
        let t = [0.2, 0.9, 0.8, 2.1, 1.7, 3.0, 2.6, 3.9];
        let y = [1.0, 0.5, 2.0, 1.5, 3.0, 2.0, 4.0, 3.5];
        let data = dataset(&x, &t, &y);
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let fit = HiFit::new(&data, &model, &y, true).unwrap();
        assert_eq!(fit.coefs.len(), 5);
    }
}
