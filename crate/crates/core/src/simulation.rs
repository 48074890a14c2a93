//! Generators for the simulation studies and the replication harness that
//! produces per-estimator summary tables.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{Grid, GridKind, Pipeline};
use crate::numeric::{self, stream_rng};
use crate::treatment::DesignSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    /// Null effect: X ~ N(0.5, 0.25), T|X ~ N(X, 0.25), Y ~ N(10X, 1).
    Sim1,
    /// X ~ N(0, 1), T|X ~ N(X + X^2, 1), Y(t) ~ N(X + t, 9).
    Sim2Linear,
    /// As above with Y(t) ~ N((X + t)^2, 9).
    Sim2Quadratic,
    /// Four-covariate design with unit treatment coefficient.
    Sim3,
    /// Two-cluster design that induces the cyclic GPS artifact; constant
    /// truth.
    Sim4,
    SmokingQuadratic,
    SmokingPiecewise,
    SmokingHockey,
}

impl Study {
    pub fn parse(s: &str) -> Result<Study> {
        Ok(match s {
            "sim1" => Study::Sim1,
            "sim2-linear" | "sim2_linear" => Study::Sim2Linear,
            "sim2-quadratic" | "sim2_quadratic" => Study::Sim2Quadratic,
            "sim3" => Study::Sim3,
            "sim4" => Study::Sim4,
            "smoking-quadratic" | "smoking_quadratic" => Study::SmokingQuadratic,
            "smoking-piecewise" | "smoking_piecewise" => Study::SmokingPiecewise,
            "smoking-hockey" | "smoking_hockey" => Study::SmokingHockey,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown study '{}'",
                    other
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Study::Sim1 => "sim1",
            Study::Sim2Linear => "sim2-linear",
            Study::Sim2Quadratic => "sim2-quadratic",
            Study::Sim3 => "sim3",
            Study::Sim4 => "sim4",
            Study::SmokingQuadratic => "smoking-quadratic",
            Study::SmokingPiecewise => "smoking-piecewise",
            Study::SmokingHockey => "smoking-hockey",
        }
    }

    /// Treatment model that is correctly specified for the study.
    pub fn design_spec(&self) -> DesignSpec {
        match self {
            Study::Sim2Linear | Study::Sim2Quadratic => DesignSpec::with_squares(&["x"]),
            Study::SmokingQuadratic | Study::SmokingPiecewise | Study::SmokingHockey => {
                DesignSpec::with_squares(&["log_age"])
            }
            _ => DesignSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmokingForm {
    Quadratic,
    Piecewise,
    Hockey,
}

impl SmokingForm {
    pub fn dose_effect(&self, t: f64) -> f64 {
        match self {
            SmokingForm::Quadratic => 4.0 / 25.0 * t * t,
            SmokingForm::Piecewise => {
                if t <= 2.0 {
                    -4.0 - 0.5 * t
                } else {
                    -5.0 - 2.3 * (t - 2.0)
                }
            }
            SmokingForm::Hockey => {
                if t <= 3.0 {
                    -8.1
                } else {
                    -8.1 + 1.5 * (t - 3.0) * (t - 3.0)
                }
            }
        }
    }
}

/// Closed-form true dose-response function recorded alongside a generated
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TruthCurve {
    Constant(f64),
    /// intercept + t
    LinearInT { intercept: f64 },
    /// offset + t^2
    QuadraticInT { offset: f64 },
    /// dose effect plus the sample's weighted covariate mean.
    Smoking { form: SmokingForm, offset: f64 },
}

impl TruthCurve {
    pub fn mean_at(&self, t: f64) -> f64 {
        match self {
            TruthCurve::Constant(c) => *c,
            TruthCurve::LinearInT { intercept } => intercept + t,
            TruthCurve::QuadraticInT { offset } => offset + t * t,
            TruthCurve::Smoking { form, offset } => form.dose_effect(t) + offset,
        }
    }

    pub fn relative(&self, t: f64, baseline: f64) -> f64 {
        self.mean_at(t) - self.mean_at(baseline)
    }
}

/// Study configuration: which study, the sample size, a seed, and how to
/// read the Normal scale parameters (variance by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study: Study,
    pub n: usize,
    pub seed: u64,
    /// Read N(m, s) second parameters as standard deviations instead of
    /// variances, for sensitivity checks.
    #[serde(default)]
    pub scale_is_sd: bool,
}

impl StudySpec {
    pub fn new(study: Study, n: usize, seed: u64) -> Self {
        StudySpec {
            study,
            n,
            seed,
            scale_is_sd: false,
        }
    }

    fn sd(&self, scale: f64) -> f64 {
        if self.scale_is_sd {
            scale
        } else {
            scale.sqrt()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedStudy {
    pub dataset: Dataset,
    pub truth: TruthCurve,
}

fn draw_z(rng: &mut rand_chacha::ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one dataset from the study's generative model.
pub fn generate(spec: &StudySpec) -> Result<GeneratedStudy> {
    if spec.n < 10 {
        return Err(Error::InvalidArgument(format!(
            "study needs n >= 10, got {}",
            spec.n
        )));
    }
    let n = spec.n;
    let mut rng = stream_rng(spec.seed, 0);
    let z = draw_z;
    match spec.study {
        Study::Sim1 => {
            let sx = spec.sd(0.25);
            let st = spec.sd(0.25);
            let sy = spec.sd(1.0);
            let mut x = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let xi = 0.5 + sx * z(&mut rng);
                x.push(xi);
                t.push(xi + st * z(&mut rng));
                y.push(10.0 * xi + sy * z(&mut rng));
            }
            Ok(GeneratedStudy {
                dataset: single_covariate("x", x, t, y)?,
                truth: TruthCurve::Constant(5.0),
            })
        }
        Study::Sim2Linear | Study::Sim2Quadratic => {
            let sx = spec.sd(1.0);
            let st = spec.sd(1.0);
            let sy = spec.sd(9.0);
            let quadratic = spec.study == Study::Sim2Quadratic;
            let mut x = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let xi = sx * z(&mut rng);
                let ti = xi + xi * xi + st * z(&mut rng);
                let mean = if quadratic {
                    (xi + ti) * (xi + ti)
                } else {
                    xi + ti
                };
                x.push(xi);
                t.push(ti);
                y.push(mean + sy * z(&mut rng));
            }
            let truth = if quadratic {
                // E[(X + t)^2] = Var(X) + t^2 at E[X] = 0.
                TruthCurve::QuadraticInT { offset: sx * sx }
            } else {
                TruthCurve::LinearInT { intercept: 0.0 }
            };
            Ok(GeneratedStudy {
                dataset: single_covariate("x", x, t, y)?,
                truth,
            })
        }
        Study::Sim3 => {
            let mut cov = DMatrix::zeros(n, 4);
            let mut t = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let zs: Vec<f64> = (0..4).map(|_| z(&mut rng)).collect();
                for j in 0..4 {
                    cov[(i, j)] = zs[j];
                }
                let ti = -zs[0] + 0.5 * zs[1] - 0.25 * zs[2] - 0.1 * zs[3] + z(&mut rng);
                t.push(ti);
                y.push(
                    210.0 + 27.4 * zs[0] + 13.7 * zs[1] + 13.7 * zs[2] + 13.7 * zs[3] + ti
                        + z(&mut rng),
                );
            }
            let dataset = Dataset::new(
                vec!["z1".into(), "z2".into(), "z3".into(), "z4".into()],
                cov,
                t,
                Some(y),
                None,
            )?;
            Ok(GeneratedStudy {
                dataset,
                truth: TruthCurve::LinearInT { intercept: 210.0 },
            })
        }
        Study::Sim4 => {
            let sx = spec.sd(0.01);
            let st = spec.sd(1.0);
            let sy = spec.sd(1.0);
            let mut x = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let zi = f64::from(rng.gen::<bool>());
                let xi = zi + sx * z(&mut rng);
                x.push(xi);
                t.push(xi + st * z(&mut rng));
                y.push(4.0 * zi + sy * z(&mut rng));
            }
            Ok(GeneratedStudy {
                dataset: single_covariate("x", x, t, y)?,
                truth: TruthCurve::Constant(2.0),
            })
        }
        Study::SmokingQuadratic | Study::SmokingPiecewise | Study::SmokingHockey => {
            generate_smoking(spec, &mut rng)
        }
    }
}

fn single_covariate(name: &str, x: Vec<f64>, t: Vec<f64>, y: Vec<f64>) -> Result<Dataset> {
    let n = x.len();
    Dataset::new(
        vec![name.into()],
        DMatrix::from_column_slice(n, 1, &x),
        t,
        Some(y),
        None,
    )
}

/// Smoking-style synthetic study. Age is lognormal (median 40, log-sd 0.3)
/// and cumulative exposure tracks squared log-age with an age-dependent
/// ceiling, log(3 * (age - 16)): heavy exposures are only reachable at
/// higher ages, which reproduces the triangular (T, theta) overlap pattern
/// the diagnostic is meant to catch. The slope on squared log-age is
/// calibrated by bisection so the sample correlation with the exposure is
/// 0.5.
fn generate_smoking(
    spec: &StudySpec,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<GeneratedStudy> {
    let n = spec.n;
    let form = match spec.study {
        Study::SmokingQuadratic => SmokingForm::Quadratic,
        Study::SmokingPiecewise => SmokingForm::Piecewise,
        Study::SmokingHockey => SmokingForm::Hockey,
        _ => unreachable!(),
    };
    let log40 = 40f64.ln();
    let log_sd = 0.3;
    let t_loc = 3.0;
    let mu_a = log40 * log40 + log_sd * log_sd;

    let mut log_age: Vec<f64> = Vec::with_capacity(n);
    let mut a: Vec<f64> = Vec::with_capacity(n);
    let mut cap: Vec<f64> = Vec::with_capacity(n);
    let mut eps: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let la = log40 + log_sd * draw_z(rng);
        let age = la.exp();
        log_age.push(la);
        a.push(la * la);
        cap.push((3.0 * (age - 16.0).max(1.0)).ln());
        eps.push(draw_z(rng));
        weights.push((0.25 * draw_z(rng)).exp());
    }
    let treatment_for = |c: f64| -> Vec<f64> {
        (0..n)
            .map(|i| (t_loc + c * (a[i] - mu_a) + eps[i]).min(cap[i]))
            .collect()
    };
    let corr = |t: &[f64]| -> f64 {
        let mt = numeric::mean(t);
        let ma = numeric::mean(&a);
        let mut num = 0.0;
        let mut vt = 0.0;
        let mut va = 0.0;
        for i in 0..n {
            num += (t[i] - mt) * (a[i] - ma);
            vt += (t[i] - mt) * (t[i] - mt);
            va += (a[i] - ma) * (a[i] - ma);
        }
        num / (vt * va).sqrt()
    };
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    let target = 0.5;
    let mut c = 0.26;
    if corr(&treatment_for(lo)) < target && corr(&treatment_for(hi)) > target {
        for _ in 0..50 {
            c = 0.5 * (lo + hi);
            if corr(&treatment_for(c)) < target {
                lo = c;
            } else {
                hi = c;
            }
        }
        c = 0.5 * (lo + hi);
    }
    let t = treatment_for(c);
    let y: Vec<f64> = (0..n)
        .map(|i| form.dose_effect(t[i]) + a[i] + 0.5 * draw_z(rng))
        .collect();
    let offset = numeric::weighted_mean(&a, &weights);
    let mut cov = DMatrix::zeros(n, 2);
    for i in 0..n {
        cov[(i, 0)] = log_age[i].exp();
        cov[(i, 1)] = log_age[i];
    }
    let dataset = Dataset::new(
        vec!["age".into(), "log_age".into()],
        cov,
        t,
        Some(y),
        Some(weights),
    )?;
    Ok(GeneratedStudy {
        dataset,
        truth: TruthCurve::Smoking { form, offset },
    })
}

fn normal_quantile(p: f64, mean: f64, sd: f64) -> f64 {
    let n = statrs::distribution::Normal::new(mean, sd).unwrap();
    n.inverse_cdf(p)
}

fn sim4_mixture_quantile(p: f64, sd: f64) -> f64 {
    let n0 = statrs::distribution::Normal::new(0.0, sd).unwrap();
    let n1 = statrs::distribution::Normal::new(1.0, sd).unwrap();
    let cdf = |t: f64| 0.5 * n0.cdf(t) + 0.5 * n1.cdf(t);
    let (mut lo, mut hi) = (-12.0, 13.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl StudySpec {
    /// The study's canonical ten-point evaluation grid. Fixed ranges for
    /// the first two studies, theoretical percentiles for the third and
    /// fourth, and sample 5%-95% quantiles for the smoking studies.
    pub fn default_grid(&self, data: &Dataset) -> Result<Grid> {
        match self.study {
            Study::Sim1 => Grid::equally_spaced(-0.5, 1.5, 10),
            Study::Sim2Linear | Study::Sim2Quadratic => Grid::equally_spaced(-1.5, 5.5, 10),
            Study::Sim3 => {
                let var_t: f64 = 1.0 + 0.25 + 0.0625 + 0.01 + 1.0;
                let points = (0..10)
                    .map(|i| normal_quantile(0.05 + 0.1 * i as f64, 0.0, var_t.sqrt()))
                    .collect();
                Grid::from_points(points, GridKind::TheoreticalSubclassMedians)
            }
            Study::Sim4 => {
                let sd = (self.sd(0.01).powi(2) + self.sd(1.0).powi(2)).sqrt();
                let points = (0..10)
                    .map(|i| sim4_mixture_quantile(0.05 + 0.1 * i as f64, sd))
                    .collect();
                Grid::from_points(points, GridKind::TheoreticalSubclassMedians)
            }
            Study::SmokingQuadratic | Study::SmokingPiecewise | Study::SmokingHockey => {
                let lo = numeric::quantile(data.treatment(), 0.05);
                let hi = numeric::quantile(data.treatment(), 0.95);
                Grid::equally_spaced(lo, hi, 10)
            }
        }
    }

    /// Baseline dose for relative DRFs: zero for every simulation study.
    pub fn default_baseline(&self) -> Option<f64> {
        match self.study {
            Study::SmokingQuadratic | Study::SmokingPiecewise | Study::SmokingHockey => None,
            _ => Some(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryPoint {
    pub t: f64,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub p025: f64,
    pub p975: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub failures: usize,
    /// Set when every replicate failed; `points` is then empty.
    pub aborted: bool,
    pub points: Vec<SummaryPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub study: Study,
    pub reps: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
}

/// Repeats the full pipeline on `reps` independently generated datasets and
/// summarizes each estimator pointwise: mean fitted (relative) DRF and the
/// 2.5/97.5 percentiles across replicates. Replicates where an estimator
/// fails are excluded from that estimator's summary; an estimator failing
/// on every replicate is reported as aborted without disturbing the others.
pub fn run_replications(
    spec: &StudySpec,
    pipelines: &[(String, Pipeline)],
    grid: Option<&Grid>,
    reps: usize,
    seed: u64,
) -> Result<ReplicationSummary> {
    if reps == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let grid = match grid {
        Some(g) => g.clone(),
        None => {
            let reference = generate(&StudySpec {
                seed: replicate_seed(seed, 0),
                ..spec.clone()
            })?;
            spec.default_grid(&reference.dataset)?
        }
    };
    let points = grid.points().to_vec();

    let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_spec = StudySpec {
                seed: replicate_seed(seed, r as u64),
                ..spec.clone()
            };
            let generated = match generate(&rep_spec) {
                Ok(g) => g,
                Err(_) => return vec![None; pipelines.len()],
            };
            pipelines
                .iter()
                .map(|(_, pipeline)| {
                    pipeline
                        .run_at_points(&generated.dataset, &points, rep_spec.seed ^ 0xd1f)
                        .ok()
                        .filter(|vals| vals.iter().all(|v| v.is_finite()))
                })
                .collect()
        })
        .collect();

    // Truth is evaluated per estimator because baselines may differ.
    let truth_of = |pipeline: &Pipeline, t: f64| -> f64 {
        let truth = match spec.study {
            Study::Sim1 => TruthCurve::Constant(5.0),
            Study::Sim2Linear => TruthCurve::LinearInT { intercept: 0.0 },
            Study::Sim2Quadratic => TruthCurve::QuadraticInT {
                offset: spec.sd(1.0).powi(2),
            },
            Study::Sim3 => TruthCurve::LinearInT { intercept: 210.0 },
            Study::Sim4 => TruthCurve::Constant(2.0),
            Study::SmokingQuadratic | Study::SmokingPiecewise | Study::SmokingHockey => {
                // Population offset: E[(log age)^2].
                let log40 = 40f64.ln();
                TruthCurve::Smoking {
                    form: match spec.study {
                        Study::SmokingQuadratic => SmokingForm::Quadratic,
                        Study::SmokingPiecewise => SmokingForm::Piecewise,
                        _ => SmokingForm::Hockey,
                    },
                    offset: log40 * log40 + 0.09,
                }
            }
        };
        match pipeline.baseline {
            Some(t0) => truth.relative(t, t0),
            None => truth.mean_at(t),
        }
    };

    let mut estimators = Vec::with_capacity(pipelines.len());
    for (j, (name, pipeline)) in pipelines.iter().enumerate() {
        let successes: Vec<&Vec<f64>> = per_rep.iter().filter_map(|row| row[j].as_ref()).collect();
        let failures = reps - successes.len();
        if successes.is_empty() {
            estimators.push(EstimatorSummary {
                name: name.clone(),
                failures,
                aborted: true,
                points: Vec::new(),
            });
            continue;
        }
        let summary_points = points
            .iter()
            .enumerate()
            .map(|(d, &t)| {
                let col: Vec<f64> = successes.iter().map(|v| v[d]).collect();
                SummaryPoint {
                    t,
                    truth: truth_of(pipeline, t),
                    mean: numeric::mean(&col),
                    sd: numeric::sample_variance(&col).sqrt(),
                    p025: numeric::quantile(&col, 0.025),
                    p975: numeric::quantile(&col, 0.975),
                }
            })
            .collect();
        estimators.push(EstimatorSummary {
            name: name.clone(),
            failures,
            aborted: false,
            points: summary_points,
        });
    }
    Ok(ReplicationSummary {
        study: spec.study,
        reps,
        seed,
        grid: points,
        estimators,
    })
}

/// Seed for replicate r, derived through an independent RNG stream so the
/// replicate set is deterministic and schedule-free.
pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    stream_rng(master, replicate).gen()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorConfig;

    #[test]
    fn sim1_moments_match_closed_form() {
        let spec = StudySpec::new(Study::Sim1, 2000, 42);
        let g = generate(&spec).unwrap();
        let y = g.dataset.response().unwrap();
        let ybar = numeric::mean(y);
        assert!((ybar - 5.0).abs() < 0.15, "mean(Y) = {}", ybar);
        // corr(T, X) = sd(X) / sqrt(var(X) + 0.25) = 0.7071.
        let t = g.dataset.treatment();
        let x = g.dataset.covariate_column(0);
        let mt = numeric::mean(t);
        let mx = numeric::mean(&x);
        let mut num = 0.0;
        let mut vt = 0.0;
        let mut vx = 0.0;
        for i in 0..t.len() {
            num += (t[i] - mt) * (x[i] - mx);
            vt += (t[i] - mt) * (t[i] - mt);
            vx += (x[i] - mx) * (x[i] - mx);
        }
        let corr = num / (vt * vx).sqrt();
        assert!((corr - 0.7071).abs() < 0.05, "corr = {}", corr);
    }

    #[test]
    fn sim3_regression_recovers_generative_coefficients() {
        let spec = StudySpec::new(Study::Sim3, 2000, 7);
        let g = generate(&spec).unwrap();
        let n = g.dataset.n();
        let mut design = DMatrix::zeros(n, 6);
        for i in 0..n {
            design[(i, 0)] = 1.0;
            for j in 0..4 {
                design[(i, 1 + j)] = g.dataset.covariates()[(i, j)];
            }
            design[(i, 5)] = g.dataset.treatment()[i];
        }
        let fit = crate::numeric::wls(
            &design,
            &nalgebra::DVector::from_column_slice(g.dataset.response().unwrap()),
            g.dataset.weights(),
        )
        .unwrap();
        let want = [210.0, 27.4, 13.7, 13.7, 13.7, 1.0];
        for (j, &target) in want.iter().enumerate() {
            assert!(
                (fit.beta[j] - target).abs() < 0.1,
                "coef {}: {} vs {}",
                j,
                fit.beta[j],
                target
            );
        }
    }

    #[test]
    fn sim4_pooled_mean_is_two() {
        let spec = StudySpec::new(Study::Sim4, 4000, 3);
        let g = generate(&spec).unwrap();
        let ybar = numeric::mean(g.dataset.response().unwrap());
        assert!((ybar - 2.0).abs() < 0.15, "mean(Y) = {}", ybar);
        assert!(matches!(g.truth, TruthCurve::Constant(c) if c == 2.0));
    }

    #[test]
    fn smoking_correlation_calibrated() {
        let spec = StudySpec::new(Study::SmokingQuadratic, 1000, 11);
        let g = generate(&spec).unwrap();
        let la = g.dataset.covariate_column(1);
        let a: Vec<f64> = la.iter().map(|v| v * v).collect();
        let t = g.dataset.treatment();
        let ma = numeric::mean(&a);
        let mt = numeric::mean(t);
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vt = 0.0;
        for i in 0..t.len() {
            num += (a[i] - ma) * (t[i] - mt);
            va += (a[i] - ma) * (a[i] - ma);
            vt += (t[i] - mt) * (t[i] - mt);
        }
        let corr = num / (va * vt).sqrt();
        assert!((corr - 0.5).abs() < 0.01, "corr = {}", corr);
        // Weights attached and positive.
        assert!(g.dataset.weights().iter().all(|&w| w > 0.0));
        assert!(g.dataset.weights().iter().any(|&w| (w - 1.0).abs() > 1e-3));
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let spec = StudySpec::new(Study::Sim2Linear, 500, 9);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn single_replicate_summary_equals_single_fit() {
        let spec = StudySpec::new(Study::Sim1, 400, 4);
        let pipeline = Pipeline::new(EstimatorConfig::Hi { linear_in_t: false })
            .with_baseline(0.0);
        let grid = Grid::equally_spaced(-0.5, 1.5, 5).unwrap();
        let summary = run_replications(
            &spec,
            &[("hi".into(), pipeline.clone())],
            Some(&grid),
            1,
            77,
        )
        .unwrap();
        let data = generate(&StudySpec {
            seed: replicate_seed(77, 0),
            ..spec
        })
        .unwrap();
        let direct = pipeline
            .run_at_points(&data.dataset, grid.points(), replicate_seed(77, 0) ^ 0xd1f)
            .unwrap();
        for (p, v) in summary.estimators[0].points.iter().zip(direct) {
            assert_eq!(p.mean, v);
            assert_eq!(p.p025, p.p975);
        }
    }

    #[test]
    fn truth_curves_evaluate() {
        assert_eq!(TruthCurve::Constant(5.0).relative(1.0, 0.0), 0.0);
        assert_eq!(
            TruthCurve::LinearInT { intercept: 0.0 }.relative(2.0, -1.5),
            3.5
        );
        let q = TruthCurve::QuadraticInT { offset: 1.0 };
        assert_eq!(q.relative(5.5, 0.0), 5.5 * 5.5);
        let pw = SmokingForm::Piecewise;
        assert!((pw.dose_effect(2.0) - (-5.0)).abs() < 1e-12);
        assert!((pw.dose_effect(2.0 + 1e-12) - (-5.0)).abs() < 1e-9);
    }

    #[test]
    fn unknown_study_is_an_error() {
        assert!(Study::parse("nope").is_err());
    }
}
