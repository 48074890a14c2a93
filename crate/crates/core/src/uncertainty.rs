//! Bootstrap standard errors and pointwise percentile bands for any
//! estimator pipeline. Each replicate resamples rows with probability
//! proportional to the sampling weights, refits the treatment model, and
//! reruns the estimator on the original grid.

use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{DrfEstimate, Grid, Pipeline};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub b: usize,
    pub seed: u64,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub failures: usize,
}

impl BootstrapResult {
    pub fn successes(&self) -> usize {
        self.b - self.failures
    }
}

/// Runs `b` weighted-resampling bootstrap replicates of an arbitrary
/// statistic. The closure receives the resampled dataset (unit weights)
/// and a replicate-specific seed; replicates that error or produce a
/// non-finite value are counted as failures and excluded. Replicate r
/// draws from stream r of the seed, so results do not depend on the
/// parallel schedule.
pub fn bootstrap_with<F>(data: &Dataset, b: usize, seed: u64, d: usize, refit: F) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 replicates, got {}",
            b
        )));
    }
    let n = data.n();
    let index = WeightedIndex::new(data.weights())
        .map_err(|e| Error::InvalidArgument(format!("bad sampling weights: {}", e)))?;

    let replicates: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = numeric::stream_rng(seed, r as u64 + 1);
            let idx: Vec<usize> = (0..n).map(|_| index.sample(&mut rng)).collect();
            let resampled = data.select_rows_unit_weights(&idx);
            refit(
                &resampled,
                seed ^ (r as u64).wrapping_mul(0x9e3779b97f4a7c15),
            )
            .ok()
            .filter(|vals| vals.len() == d && vals.iter().all(|v| v.is_finite()))
        })
        .collect();

    let successes: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let failures = b - successes.len();
    if failures * 2 > b {
        return Err(Error::Bootstrap(format!(
            "{} of {} replicates failed",
            failures, b
        )));
    }
    let mut se = Vec::with_capacity(d);
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = successes.iter().map(|v| v[j]).collect();
        se.push(numeric::sample_variance(&col).sqrt());
        lower.push(numeric::quantile(&col, 0.025));
        upper.push(numeric::quantile(&col, 0.975));
    }
    Ok(BootstrapResult {
        b,
        seed,
        se,
        lower,
        upper,
        failures,
    })
}

/// Bootstrap of a DRF pipeline on a fixed grid: each replicate refits the
/// treatment model and the estimator on the resampled rows and evaluates
/// at the original grid points.
pub fn bootstrap_drf(
    data: &Dataset,
    pipeline: &Pipeline,
    grid: &Grid,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let points = grid.points();
    bootstrap_with(data, b, seed, points.len(), |resampled, rep_seed| {
        pipeline.run_at_points(resampled, points, rep_seed)
    })
}

/// Attaches bootstrap summaries to an estimate.
pub fn with_bands(mut estimate: DrfEstimate, boot: &BootstrapResult) -> DrfEstimate {
    estimate.se = Some(boot.se.clone());
    estimate.lower = Some(boot.lower.clone());
    estimate.upper = Some(boot.upper.clone());
    estimate
}
