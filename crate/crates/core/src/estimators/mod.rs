//! Dose-response function estimators.
//!
//! Every estimator fits once and can then be evaluated at arbitrary
//! treatment values, which is what the relative-DRF baseline, bootstrap
//! replication on a fixed grid, and the covariance-adjustment grids need.

mod covadj;
mod hi;
mod iw;
mod scm;
mod subclass;

pub use covadj::{
    estimate_cov_adj_categorical, one_vs_rest_logistic_gps, CategoricalGps, CovWithinModel,
};
pub use subclass::WithinModel;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::treatment::{fit_treatment_model, DesignSpec, GaussianTreatmentModel};

/// Evaluation grid for a dose-response function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    kind: GridKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    EquallySpacedRange,
    QuantileBased,
    TheoreticalSubclassMedians,
    /// Observed levels of a categorical treatment.
    Levels,
}

impl Grid {
    pub fn from_points(points: Vec<f64>, kind: GridKind) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("grid points must be finite".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(Grid { points, kind })
    }

    /// D equally spaced points including both endpoints.
    pub fn equally_spaced(lo: f64, hi: f64, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("grid size must be at least 2".into()));
        }
        let points = (0..d)
            .map(|i| lo + (hi - lo) * i as f64 / (d - 1) as f64)
            .collect();
        Grid::from_points(points, GridKind::EquallySpacedRange)
    }

    /// D empirical quantiles of the observed treatments at evenly spaced
    /// probabilities including 0 and 1.
    pub fn from_quantiles(t: &[f64], d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("grid size must be at least 2".into()));
        }
        let probs: Vec<f64> = (0..d).map(|i| i as f64 / (d - 1) as f64).collect();
        let points = crate::numeric::quantiles(t, &probs);
        Grid::from_points(points, GridKind::QuantileBased)
    }

    /// Ten equally spaced points over the observed treatment range.
    pub fn default_for(t: &[f64]) -> Result<Self> {
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Grid::equally_spaced(lo, hi, 10)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-point quality flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFlags {
    /// Local-linear system numerically singular at this point; the value
    /// is NaN rather than silently wrong.
    pub singular: bool,
    /// Evaluation involved extrapolation beyond the supported region.
    pub extrapolation: bool,
}

/// A dose-response function estimate on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrfEstimate {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub derivative: Option<Vec<f64>>,
    /// Baseline treatment and the estimate there, when the estimate is
    /// relative.
    pub baseline: Option<(f64, f64)>,
    pub se: Option<Vec<f64>>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub flags: Vec<PointFlags>,
}

/// Estimator selection plus its options; serializable so run manifests can
/// echo the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum EstimatorConfig {
    /// Quadratic GPS response surface averaged over the sample.
    Hi {
        #[serde(default)]
        linear_in_t: bool,
    },
    /// Tensor smooth in (T, GPS).
    ScmGps,
    /// Tensor smooth in (theta, T).
    ScmPfunction {
        #[serde(default = "default_overlap_window")]
        overlap_window: f64,
    },
    /// Inverse-weighted kernel regression; local linear by default.
    Iw {
        #[serde(default)]
        bandwidth: Option<f64>,
        #[serde(default)]
        nadaraya_watson: bool,
    },
    /// Subclassification on theta with a parametric model per subclass.
    IvdSubclass {
        subclasses: usize,
        within: WithinModel,
        #[serde(default)]
        adjust_theta: bool,
    },
    /// Covariance adjustment with subclassification on T at theoretical
    /// quantiles; the grid is always the theoretical subclass medians.
    CovAdjContinuous {
        subclasses: usize,
        within: CovWithinModel,
        #[serde(default)]
        mc_size: Option<usize>,
    },
}

pub(crate) fn default_overlap_window() -> f64 {
    0.05
}

impl EstimatorConfig {
    /// Short identifier used in file names and summary tables.
    pub fn name(&self) -> String {
        match self {
            EstimatorConfig::Hi { linear_in_t: false } => "hi".into(),
            EstimatorConfig::Hi { linear_in_t: true } => "hi-linear".into(),
            EstimatorConfig::ScmGps => "scm-gps".into(),
            EstimatorConfig::ScmPfunction { .. } => "scm-pf".into(),
            EstimatorConfig::Iw {
                nadaraya_watson: false,
                ..
            } => "iw".into(),
            EstimatorConfig::Iw {
                nadaraya_watson: true,
                ..
            } => "iw-nw".into(),
            EstimatorConfig::IvdSubclass { within, .. } => match within {
                WithinModel::Linear => "ivd".into(),
                WithinModel::Quadratic => "ivd-quadratic".into(),
            },
            EstimatorConfig::CovAdjContinuous { .. } => "cov-adj".into(),
        }
    }
}

/// A point evaluation of a fitted estimator.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PointValue {
    pub value: f64,
    pub flags: PointFlags,
}

impl PointValue {
    fn ok(value: f64) -> Self {
        PointValue {
            value,
            flags: PointFlags::default(),
        }
    }
}

pub(crate) enum FittedInner {
    Hi(hi::HiFit),
    ScmGps(scm::ScmGpsFit),
    ScmPf(scm::ScmPfFit),
    Iw(iw::IwFit),
    Ivd(subclass::IvdFit),
    CovAdjCont(covadj::CovAdjContFit),
}

/// A fitted estimator bound to its evaluation grid.
pub struct FittedDrf {
    inner: FittedInner,
    grid: Grid,
}

/// Fits the configured estimator. `seed` feeds stochastic steps (only the
/// covariance-adjustment Monte Carlo subclassification); everything else is
/// deterministic. The covariance-adjustment estimator replaces `grid` with
/// the theoretical subclass medians.
pub fn fit_estimator(
    data: &Dataset,
    model: &GaussianTreatmentModel,
    config: &EstimatorConfig,
    grid: &Grid,
    seed: u64,
) -> Result<FittedDrf> {
    let y = data.response_required()?;
    if data.n() <= 6 {
        return Err(Error::InvalidArgument(format!(
            "need more than 6 observations, got {}",
            data.n()
        )));
    }
    let (inner, grid) = match config {
        EstimatorConfig::Hi { linear_in_t } => (
            FittedInner::Hi(hi::HiFit::new(data, model, y, *linear_in_t)?),
            grid.clone(),
        ),
        EstimatorConfig::ScmGps => (
            FittedInner::ScmGps(scm::ScmGpsFit::new(data, model, y)?),
            grid.clone(),
        ),
        EstimatorConfig::ScmPfunction { overlap_window } => (
            FittedInner::ScmPf(scm::ScmPfFit::new(data, model, y, *overlap_window)?),
            grid.clone(),
        ),
        EstimatorConfig::Iw {
            bandwidth,
            nadaraya_watson,
        } => (
            FittedInner::Iw(iw::IwFit::new(data, model, y, *bandwidth, *nadaraya_watson)?),
            grid.clone(),
        ),
        EstimatorConfig::IvdSubclass {
            subclasses,
            within,
            adjust_theta,
        } => (
            FittedInner::Ivd(subclass::IvdFit::new(
                data,
                model,
                y,
                *subclasses,
                *within,
                *adjust_theta,
            )?),
            grid.clone(),
        ),
        EstimatorConfig::CovAdjContinuous {
            subclasses,
            within,
            mc_size,
        } => {
            let fit = covadj::CovAdjContFit::new(data, model, y, *subclasses, *within, *mc_size, seed)?;
            let grid = fit.median_grid()?;
            (FittedInner::CovAdjCont(fit), grid)
        }
    };
    Ok(FittedDrf { inner, grid })
}

impl FittedDrf {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub(crate) fn eval(&self, t: f64) -> PointValue {
        match &self.inner {
            FittedInner::Hi(f) => PointValue::ok(f.value_at(t)),
            FittedInner::ScmGps(f) => f.value_at(t),
            FittedInner::ScmPf(f) => f.value_at(t),
            FittedInner::Iw(f) => f.value_at(t),
            FittedInner::Ivd(f) => PointValue::ok(f.value_at(t)),
            FittedInner::CovAdjCont(f) => PointValue::ok(f.value_at(t)),
        }
    }

    /// Estimate at a single treatment value; errors when the point is
    /// numerically singular.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "treatment value must be finite, got {}",
                t
            )));
        }
        let pv = self.eval(t);
        if pv.flags.singular {
            return Err(Error::Estimation(format!(
                "estimator is numerically singular at t = {}",
                t
            )));
        }
        Ok(pv.value)
    }

    /// Average causal effect, where the estimator defines one
    /// (subclassification's weighted slope average).
    pub fn average_effect(&self) -> Option<f64> {
        match &self.inner {
            FittedInner::Ivd(f) => Some(f.average_effect()),
            _ => None,
        }
    }

    /// Observed unit counts per subclass for the subclassifying estimators.
    pub fn subclass_counts(&self) -> Option<&[usize]> {
        match &self.inner {
            FittedInner::Ivd(f) => Some(&f.class_counts),
            FittedInner::CovAdjCont(f) => Some(&f.class_counts),
            _ => None,
        }
    }

    /// Bandwidth in use, for the kernel estimator.
    pub fn bandwidth(&self) -> Option<f64> {
        match &self.inner {
            FittedInner::Iw(f) => Some(f.bandwidth()),
            _ => None,
        }
    }

    /// Evaluates the fit over its grid, attaching per-point flags and the
    /// derivative.
    pub fn estimate(&self) -> DrfEstimate {
        let points = self.grid.points();
        let mut values = Vec::with_capacity(points.len());
        let mut flags = Vec::with_capacity(points.len());
        for &t in points {
            let pv = self.eval(t);
            values.push(pv.value);
            flags.push(pv.flags);
        }
        let derivative = match &self.inner {
            // Subclassification differentiates its averaged polynomial.
            FittedInner::Ivd(f) => Some(points.iter().map(|&t| f.derivative_at(t)).collect()),
            _ => drf_derivative(points, &values).ok(),
        };
        DrfEstimate {
            grid: self.grid.clone(),
            values,
            derivative,
            baseline: None,
            se: None,
            lower: None,
            upper: None,
            flags,
        }
    }
}

/// Central average-difference derivative on a grid: the mean of the forward
/// and backward difference quotients at interior points, one-sided at the
/// ends.
pub fn drf_derivative(points: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let d = points.len();
    if d < 2 || values.len() != d {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 grid points with matching values, got {} and {}",
            d,
            values.len()
        )));
    }
    let forward = |i: usize| (values[i + 1] - values[i]) / (points[i + 1] - points[i]);
    let backward = |i: usize| (values[i] - values[i - 1]) / (points[i] - points[i - 1]);
    let mut out = Vec::with_capacity(d);
    out.push(forward(0));
    for i in 1..d - 1 {
        out.push(0.5 * (forward(i) + backward(i)));
    }
    out.push(backward(d - 1));
    Ok(out)
}

/// Re-evaluates the fitted estimator at `baseline_t` and subtracts it from
/// every grid value; the derivative is unchanged.
pub fn relative_drf(fitted: &FittedDrf, estimate: &DrfEstimate, baseline_t: f64) -> Result<DrfEstimate> {
    let v0 = fitted.value_at(baseline_t)?;
    let mut out = estimate.clone();
    for v in &mut out.values {
        *v -= v0;
    }
    out.baseline = Some((baseline_t, v0));
    Ok(out)
}

/// One full estimation pipeline: treatment model fit, scoring, estimation,
/// optional relative baseline. Bootstrap and the replication harness rerun
/// this object on resampled or regenerated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub design_spec: DesignSpec,
    #[serde(flatten)]
    pub estimator: EstimatorConfig,
    pub baseline: Option<f64>,
}

impl Pipeline {
    pub fn new(estimator: EstimatorConfig) -> Self {
        Pipeline {
            design_spec: DesignSpec::default(),
            estimator,
            baseline: None,
        }
    }

    pub fn with_design(mut self, design_spec: DesignSpec) -> Self {
        self.design_spec = design_spec;
        self
    }

    pub fn with_baseline(mut self, t0: f64) -> Self {
        self.baseline = Some(t0);
        self
    }

    pub fn fit(&self, data: &Dataset, grid: &Grid, seed: u64) -> Result<FittedDrf> {
        let model = fit_treatment_model(data, self.design_spec.clone())?;
        fit_estimator(data, &model, &self.estimator, grid, seed)
    }

    /// Fits and evaluates on the grid, subtracting the baseline when one is
    /// configured.
    pub fn run(&self, data: &Dataset, grid: &Grid, seed: u64) -> Result<DrfEstimate> {
        let fitted = self.fit(data, grid, seed)?;
        let estimate = fitted.estimate();
        match self.baseline {
            Some(t0) => relative_drf(&fitted, &estimate, t0),
            None => Ok(estimate),
        }
    }

    /// Fits once and evaluates at the given points (the bootstrap path,
    /// which must reuse the original grid regardless of the estimator's own
    /// grid preference). Singular points surface as errors.
    pub fn run_at_points(&self, data: &Dataset, points: &[f64], seed: u64) -> Result<Vec<f64>> {
        let grid = Grid::from_points(points.to_vec(), GridKind::EquallySpacedRange)
            .unwrap_or_else(|_| Grid {
                points: points.to_vec(),
                kind: GridKind::EquallySpacedRange,
            });
        let fitted = self.fit(data, &grid, seed)?;
        let v0 = match self.baseline {
            Some(t0) => Some(fitted.value_at(t0)?),
            None => None,
        };
        points
            .iter()
            .map(|&t| Ok(fitted.value_at(t)? - v0.unwrap_or(0.0)))
            .collect()
    }
}
