//! Simulation-scale checks of the per-module behaviors: treatment-model
//! recovery, Monte Carlo quantiles against a larger oracle, subclass bias
//! decay, covariance-adjustment interior bias, the cyclic artifact, null
//! calibration of the balance diagnostics, overlap coverage on the
//! smoking-style data, and bootstrap band coverage.

use nalgebra::DMatrix;
use statrs::distribution::ContinuousCDF;

use drf_core::diagnostics::{balance_hi, balance_ivd, overlap_scatter};
use drf_core::estimators::{fit_estimator, CovWithinModel, WithinModel};
use drf_core::numeric;
use drf_core::simulation::{generate, replicate_seed, Study, StudySpec};
use drf_core::uncertainty::bootstrap_drf;
use drf_core::{
    fit_treatment_model, theoretical_quantiles, Dataset, DesignSpec, EstimatorConfig, Grid,
    Pipeline,
};

#[test]
fn sim1_treatment_model_recovers_generative_parameters() {
    let spec = StudySpec::new(Study::Sim1, 2000, 1);
    let g = generate(&spec).unwrap();
    let model = fit_treatment_model(&g.dataset, DesignSpec::default()).unwrap();
    assert!(model.beta[0].abs() < 0.05, "intercept {}", model.beta[0]);
    assert!((model.beta[1] - 1.0).abs() < 0.05, "slope {}", model.beta[1]);
    assert!((model.sigma2 - 0.25).abs() < 0.05, "sigma2 {}", model.sigma2);
}

#[test]
fn theoretical_quantiles_match_larger_oracle() {
    let spec = StudySpec::new(Study::Sim1, 2000, 2);
    let g = generate(&spec).unwrap();
    let model = fit_treatment_model(&g.dataset, DesignSpec::default()).unwrap();
    let probs: Vec<f64> = (1..10).map(|j| j as f64 / 10.0).collect();
    let grid = theoretical_quantiles(&model, &g.dataset, &probs, 100_000, 3).unwrap();

    // Oracle: an independent million-draw pass over the same fitted model.
    let theta = model.theta(&g.dataset).unwrap();
    let mut rng = numeric::stream_rng(991, 0);
    let sigma = model.sigma2.sqrt();
    let n = theta.len();
    let mut draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let i = (rand::Rng::gen_range(&mut rng, 0..n)) as usize;
            theta[i] + sigma * numeric::std_normal(&mut rng)
        })
        .collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let oracle_cuts: Vec<f64> = probs
        .iter()
        .map(|&p| numeric::quantile_sorted(&draws, p))
        .collect();
    let mut oracle_medians = Vec::new();
    let mut lo = 0usize;
    for &cut in &oracle_cuts {
        let hi = draws.partition_point(|&v| v <= cut);
        oracle_medians.push(numeric::quantile_sorted(&draws[lo..hi], 0.5));
        lo = hi;
    }
    oracle_medians.push(numeric::quantile_sorted(&draws[lo..], 0.5));

    for (a, b) in grid.cutpoints.iter().zip(&oracle_cuts) {
        assert!((a - b).abs() < 0.02, "cutpoint {} vs oracle {}", a, b);
    }
    for (a, b) in grid.subclass_medians.iter().zip(&oracle_medians) {
        assert!((a - b).abs() < 0.02, "median {} vs oracle {}", a, b);
    }
}

#[test]
fn ivd_bias_shrinks_with_more_subclasses() {
    // Null effect in Simulation I: the average-effect estimate's bias
    // falls as the subclass count grows.
    let reps = 20;
    let mut bias5 = 0.0;
    let mut bias50 = 0.0;
    for r in 0..reps {
        let spec = StudySpec::new(Study::Sim1, 2000, replicate_seed(40, r));
        let g = generate(&spec).unwrap();
        let model = fit_treatment_model(&g.dataset, DesignSpec::default()).unwrap();
        let grid = Grid::equally_spaced(-0.5, 1.5, 10).unwrap();
        for (s, acc) in [(5usize, &mut bias5), (50usize, &mut bias50)] {
            let config = EstimatorConfig::IvdSubclass {
                subclasses: s,
                within: WithinModel::Linear,
                adjust_theta: false,
            };
            let fitted = fit_estimator(&g.dataset, &model, &config, &grid, 0).unwrap();
            *acc += fitted.average_effect().unwrap() / reps as f64;
        }
    }
    assert!(
        bias50.abs() < bias5.abs(),
        "bias at S=50 ({}) should be below S=5 ({})",
        bias50,
        bias5
    );
}

#[test]
fn cov_adj_continuous_interior_bias_small_in_sim1() {
    // Mean relative DRF over replications: interior subclasses (3..=8 of
    // 10) stay within 0.5 of the zero truth; bias concentrates in the
    // extreme, more heterogeneous subclasses.
    let reps = 10;
    let config = EstimatorConfig::CovAdjContinuous {
        subclasses: 10,
        within: CovWithinModel::Quadratic,
        mc_size: Some(100_000),
    };
    let dummy = Grid::equally_spaced(0.0, 1.0, 2).unwrap();
    // Common evaluation grid from the first replicate's fit.
    let first = {
        let spec = StudySpec::new(Study::Sim1, 2000, replicate_seed(42, 0));
        let g = generate(&spec).unwrap();
        let model = fit_treatment_model(&g.dataset, DesignSpec::default()).unwrap();
        fit_estimator(&g.dataset, &model, &config, &dummy, 6).unwrap()
    };
    let grid = first.grid().points().to_vec();
    let mut mean_rel = vec![0.0; grid.len()];
    for r in 0..reps {
        let spec = StudySpec::new(Study::Sim1, 2000, replicate_seed(42, r));
        let g = generate(&spec).unwrap();
        let model = fit_treatment_model(&g.dataset, DesignSpec::default()).unwrap();
        let fitted = fit_estimator(&g.dataset, &model, &config, &dummy, 6).unwrap();
        let v0 = fitted.value_at(0.0).unwrap();
        for (acc, &t) in mean_rel.iter_mut().zip(&grid) {
            *acc += (fitted.value_at(t).unwrap() - v0) / reps as f64;
        }
    }
    for d in 2..8 {
        assert!(
            mean_rel[d].abs() < 0.5,
            "interior subclass {} has mean relative value {}",
            d + 1,
            mean_rel[d]
        );
    }
}

#[test]
fn scm_gps_cyclic_artifact_in_sim4() {
    // Mean bias across a few replications changes sign at least twice.
    let reps = 10;
    let spec0 = StudySpec::new(Study::Sim4, 2000, 0);
    let grid = spec0.default_grid(&generate(&spec0).unwrap().dataset).unwrap();
    let pipeline = Pipeline::new(EstimatorConfig::ScmGps).with_baseline(0.0);
    let mut sums = vec![0.0; grid.len()];
    for r in 0..reps {
        let spec = StudySpec::new(Study::Sim4, 2000, replicate_seed(41, r));
        let g = generate(&spec).unwrap();
        let vals = pipeline
            .run_at_points(&g.dataset, grid.points(), 0)
            .unwrap();
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v / reps as f64;
        }
    }
    // Truth is constant, so the relative truth is zero and the mean values
    // are the biases.
    let signs: Vec<f64> = sums.iter().filter(|v| v.abs() > 1e-9).map(|v| v.signum()).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    assert!(changes >= 2, "bias {:?} changed sign {} times", sums, changes);
}

#[test]
fn balance_ivd_null_calibration() {
    // One modeled confounder drives T; twenty further covariates are
    // independent of everything. For a covariate inside the fitted OLS
    // design the adjusted statistic is identically zero (the residual
    // T - theta-hat is orthogonal to the design in sample), so the null
    // calibration is checked on covariates outside the treatment model:
    // their adjusted t-statistics should look standard normal, measured by
    // the Kolmogorov distance staying under the 5% critical value in at
    // least 90% of replications.
    let reps = 100;
    let n = 2000;
    let p_noise = 20;
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    // Exact 5% one-sample KS critical value at m = 20.
    let crit = 0.294;
    let mut passes = 0;
    for rep in 0..reps {
        let mut rng = numeric::stream_rng(600 + rep, 0);
        let x0: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
        let t: Vec<f64> = x0
            .iter()
            .map(|&v| 0.5 * v + numeric::std_normal(&mut rng))
            .collect();
        let model_data = Dataset::new(
            vec!["x0".into()],
            DMatrix::from_column_slice(n, 1, &x0),
            t.clone(),
            None,
            None,
        )
        .unwrap();
        let model = fit_treatment_model(&model_data, DesignSpec::default()).unwrap();
        let theta = model.theta(&model_data).unwrap();

        let mut cov = DMatrix::zeros(n, p_noise);
        for i in 0..n {
            for j in 0..p_noise {
                cov[(i, j)] = numeric::std_normal(&mut rng);
            }
        }
        let check_data = Dataset::new(
            (0..p_noise).map(|j| format!("noise{}", j)).collect(),
            cov,
            t.clone(),
            None,
            None,
        )
        .unwrap();
        let report = balance_ivd(&check_data, &theta).unwrap();
        let mut stats: Vec<f64> = report.rows.iter().filter_map(|r| r.adjusted_t).collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = stats.len() as f64;
        let ks = stats
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let f = normal.cdf(s);
                let lo = i as f64 / m;
                let hi = (i as f64 + 1.0) / m;
                (f - lo).abs().max((hi - f).abs())
            })
            .fold(0.0f64, f64::max);
        if ks < crit {
            passes += 1;
        }
    }
    assert!(passes >= 90, "KS pass rate {}/100", passes);
}

#[test]
fn balance_ivd_fully_modeled_covariate_has_zero_adjusted_statistic() {
    // The flip side of the calibration above: when theta-hat is the OLS
    // projection onto the covariates being checked, the residual T minus
    // theta-hat is orthogonal to them in sample, so each adjusted
    // statistic collapses to zero while the unadjusted ones show the raw
    // imbalance.
    let n = 1000;
    let mut rng = numeric::stream_rng(64, 0);
    let x: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
    let x2: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
    let t: Vec<f64> = x
        .iter()
        .zip(&x2)
        .map(|(&a, &b)| a + 0.5 * b + 0.7 * numeric::std_normal(&mut rng))
        .collect();
    let mut cov = DMatrix::zeros(n, 2);
    for i in 0..n {
        cov[(i, 0)] = x[i];
        cov[(i, 1)] = x2[i];
    }
    let data = Dataset::new(vec!["x".into(), "x2".into()], cov, t, None, None).unwrap();
    let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
    let theta = model.theta(&data).unwrap();
    let report = balance_ivd(&data, &theta).unwrap();
    let adj = report.rows[0].adjusted_t.unwrap();
    let unadj = report.rows[0].unadjusted_t.unwrap();
    assert!(adj.abs() < 1e-6, "adjusted statistic {}", adj);
    assert!(unadj.abs() > 10.0, "unadjusted statistic {}", unadj);
}

#[test]
fn balance_ivd_flags_perfectly_explained_covariate() {
    // With a single modeled covariate, theta-hat is affine in it and the
    // adjusted regression has zero residuals; the statistic is undefined
    // and must be flagged rather than reported as numerical noise.
    let n = 500;
    let mut rng = numeric::stream_rng(65, 0);
    let x: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
    let t: Vec<f64> = x
        .iter()
        .map(|&v| v + 0.7 * numeric::std_normal(&mut rng))
        .collect();
    let data = Dataset::new(
        vec!["x".into()],
        DMatrix::from_column_slice(n, 1, &x),
        t,
        None,
        None,
    )
    .unwrap();
    let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
    let theta = model.theta(&data).unwrap();
    let report = balance_ivd(&data, &theta).unwrap();
    assert!(report.rows[0].adjusted_t.is_none());
    assert!(report.rows[0].flag.is_some());
    assert!(report.rows[0].unadjusted_t.unwrap().abs() > 10.0);
}

#[test]
fn balance_hi_null_calibration() {
    // One covariate independent of treatment and covariates: the combined
    // statistic stays under 1.96 in at least 90% of replications.
    let reps = 100;
    let n = 500;
    let mut passes = 0;
    for rep in 0..reps {
        let mut rng = numeric::stream_rng(700 + rep, 0);
        let free: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| numeric::std_normal(&mut rng)).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| 0.5 * v + numeric::std_normal(&mut rng))
            .collect();
        let mut cov = DMatrix::zeros(n, 2);
        for i in 0..n {
            cov[(i, 0)] = free[i];
            cov[(i, 1)] = x[i];
        }
        let data = Dataset::new(vec!["free".into(), "x".into()], cov, t.clone(), None, None)
            .unwrap();
        let model = fit_treatment_model(&data, DesignSpec::default()).unwrap();
        let cuts = drf_core::diagnostics::default_hi_cutpoints(&t);
        let report = balance_hi(&data, &model, &cuts, 5).unwrap();
        // One fixed interval's combined statistic per replication; under
        // the null it is approximately standard normal.
        let stat = report.intervals[2].stats[0].t.map(f64::abs).unwrap_or(0.0);
        if stat < 1.96 {
            passes += 1;
        }
    }
    assert!(passes >= 90, "balance_hi pass rate {}/100", passes);
}

#[test]
fn smoking_overlap_coverage_drops_in_the_upper_tail() {
    let spec = StudySpec::new(Study::SmokingQuadratic, 1000, 8);
    let g = generate(&spec).unwrap();
    let model = fit_treatment_model(&g.dataset, spec.study.design_spec()).unwrap();
    let theta = model.theta(&g.dataset).unwrap();
    let grid = spec.default_grid(&g.dataset).unwrap();
    let report = overlap_scatter(&g.dataset, &theta, grid.points(), 0.05).unwrap();
    let coverages: Vec<f64> = report.points.iter().map(|p| p.coverage).collect();
    let interior: f64 = coverages[3..6].iter().sum::<f64>() / 3.0;
    let upper: Vec<f64> = report
        .points
        .iter()
        .filter(|p| p.t > 3.0)
        .map(|p| p.coverage)
        .collect();
    assert!(!upper.is_empty(), "grid should extend past 3");
    let upper_mean: f64 = upper.iter().sum::<f64>() / upper.len() as f64;
    assert!(
        upper_mean < interior - 0.05,
        "coverage above t=3 ({:.3}) should sit below the interior ({:.3})",
        upper_mean,
        interior
    );
}

#[test]
fn bootstrap_band_covers_null_truth_in_sim1() {
    let spec = StudySpec::new(Study::Sim1, 2000, 12);
    let g = generate(&spec).unwrap();
    let grid = Grid::equally_spaced(-0.5, 1.5, 10).unwrap();
    let pipeline = Pipeline::new(EstimatorConfig::ScmPfunction {
        overlap_window: 0.05,
    })
    .with_baseline(0.0);
    let boot = bootstrap_drf(&g.dataset, &pipeline, &grid, 200, 13).unwrap();
    let covered = boot
        .lower
        .iter()
        .zip(&boot.upper)
        .filter(|(lo, hi)| **lo <= 0.0 && 0.0 <= **hi)
        .count();
    assert!(covered >= 8, "band covers 0 at only {}/10 points", covered);
    assert_eq!(boot.failures + boot.successes(), 200);
}
