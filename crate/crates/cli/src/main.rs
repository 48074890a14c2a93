//! `drf`: dose-response estimation from the command line.
//!
//! Subcommands: `simulate` (draw a study dataset), `fit` (estimate DRFs on
//! a CSV), `diagnose` (balance and overlap reports), `study` (replication
//! summaries), and `rerun` (reproduce a previous run from its manifest).
//! Every run writes a manifest echoing the resolved configuration; rerunning
//! from the manifest reproduces all artifacts byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use drf_core::diagnostics::{balance_hi, balance_ivd, default_hi_cutpoints, overlap_scatter};
use drf_core::estimators::{
    estimate_cov_adj_categorical, one_vs_rest_logistic_gps, relative_drf, CovWithinModel,
    WithinModel,
};
use drf_core::simulation::{generate, run_replications, Study, StudySpec};
use drf_core::uncertainty::{bootstrap_drf, bootstrap_with, with_bands};
use drf_core::{
    fit_treatment_model, load_dataset, ColumnSpec, Dataset, DesignSpec, DrfEstimate, Error,
    EstimatorConfig, Grid, Pipeline,
};

#[derive(Parser)]
#[command(name = "drf", version, about = "Dose-response function estimation toolkit")]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulation-study dataset and its true DRF.
    Simulate(SimulateArgs),
    /// Estimate dose-response functions from a CSV file.
    Fit(FitArgs),
    /// Balance and overlap diagnostics for the treatment model.
    Diagnose(DiagnoseArgs),
    /// Run replicated simulation studies and summarize estimators.
    Study(StudyArgs),
    /// Re-execute a previous run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// sim1 | sim2-linear | sim2-quadratic | sim3 | sim4 | smoking-quadratic
    /// | smoking-piecewise | smoking-hockey
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Read Normal scale parameters as standard deviations.
    #[arg(long, default_value_t = false)]
    scale_is_sd: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    weights: Option<String>,
    /// Comma-separated covariate column names.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Covariates to expand into level indicators.
    #[arg(long, value_delimiter = ',')]
    factors: Vec<String>,
    /// Covariates whose squares enter the treatment model.
    #[arg(long, value_delimiter = ',')]
    squares: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated estimators: hi, hi-linear, scm-gps, scm-pf, iw,
    /// iw-nw, ivd, ivd-quadratic, cov-adj, cov-adj-cat.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    /// Evaluation grid lo:hi:D with inclusive endpoints.
    #[arg(long)]
    grid: Option<String>,
    /// D-point grid at evenly spaced treatment quantiles.
    #[arg(long)]
    grid_quantiles: Option<usize>,
    /// Evaluate at theoretical subclass medians (covariance adjustment).
    #[arg(long, default_value_t = false)]
    grid_theoretical: bool,
    /// Baseline dose for the relative DRF.
    #[arg(long)]
    baseline: Option<f64>,
    /// Bootstrap replicates for standard errors and bands.
    #[arg(long)]
    boot: Option<usize>,
    #[arg(long, default_value_t = 10)]
    subclasses: usize,
    /// Within-subclass model: linear | quadratic | scm.
    #[arg(long, default_value = "linear")]
    within: String,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    mc_size: Option<usize>,
    /// Overlap window (quantile half-width) for diagnostics and flags.
    #[arg(long, default_value_t = 0.05)]
    window: f64,
    /// Adjust for recentred theta within subclasses.
    #[arg(long, default_value_t = false)]
    adjust_theta: bool,
    /// Reference level index for the categorical estimator.
    #[arg(long, default_value_t = 0)]
    reference_level: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// GPS blocks per coarsened-treatment interval.
    #[arg(long, default_value_t = 5)]
    blocks: usize,
    /// Overlap window (quantile half-width).
    #[arg(long, default_value_t = 0.05)]
    window: f64,
    /// Interval cutpoints for the coarsened balance check, comma separated
    /// (default: treatment quintiles).
    #[arg(long, value_delimiter = ',')]
    cutpoints: Vec<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long)]
    reps: usize,
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
    #[arg(long)]
    grid: Option<String>,
    /// Baseline override (default: 0 for the numbered studies, absolute
    /// DRF for the smoking studies).
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long, default_value_t = 10)]
    subclasses: usize,
    #[arg(long, default_value = "linear")]
    within: String,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    mc_size: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    window: f64,
    #[arg(long, default_value_t = false)]
    adjust_theta: bool,
    #[arg(long, default_value_t = false)]
    scale_is_sd: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest from a previous run.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

/// Per-estimator options, echoed in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EstimatorOptions {
    subclasses: usize,
    within: String,
    bandwidth: Option<f64>,
    mc_size: Option<usize>,
    window: f64,
    adjust_theta: bool,
    reference_level: usize,
}

/// Grid request, resolved against the data at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum GridConfig {
    Range { lo: f64, hi: f64, d: usize },
    Quantiles { d: usize },
    Theoretical,
    Default,
}

/// Fully resolved run configuration; everything needed to reproduce the
/// run except the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum RunConfig {
    Simulate {
        study: String,
        n: usize,
        seed: u64,
        scale_is_sd: bool,
    },
    Fit {
        data: PathBuf,
        columns: ColumnSpec,
        squares: Vec<String>,
        estimators: Vec<String>,
        options: EstimatorOptions,
        grid: GridConfig,
        baseline: Option<f64>,
        boot: Option<usize>,
        seed: u64,
    },
    Diagnose {
        data: PathBuf,
        columns: ColumnSpec,
        squares: Vec<String>,
        blocks: usize,
        window: f64,
        cutpoints: Vec<f64>,
    },
    Study {
        study: String,
        n: usize,
        reps: usize,
        estimators: Vec<String>,
        options: EstimatorOptions,
        grid: Option<GridConfig>,
        baseline: Option<f64>,
        scale_is_sd: bool,
        seed: u64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    config: RunConfig,
    dropped_rows: Option<usize>,
    outputs: Vec<String>,
    errors: BTreeMap<String, String>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{}", v)
    }
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), Error> {
    let mut body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidData(format!("manifest serialization: {}", e)))?;
    body.push('\n');
    write_text(dir, "manifest.json", &body)
}

/// Either a standard pipeline estimator or the categorical covariance
/// adjustment, which has its own flow.
enum EstimatorChoice {
    Pipeline(EstimatorConfig),
    CovAdjCategorical { reference: usize },
}

fn parse_cov_within(s: &str) -> Result<CovWithinModel, Error> {
    match s {
        "linear" => Ok(CovWithinModel::Linear),
        "quadratic" => Ok(CovWithinModel::Quadratic),
        "scm" => Ok(CovWithinModel::Scm),
        other => Err(Error::InvalidArgument(format!(
            "within-subclass model must be linear, quadratic or scm, got '{}'",
            other
        ))),
    }
}

fn resolve_estimator(name: &str, opts: &EstimatorOptions) -> Result<EstimatorChoice, Error> {
    Ok(EstimatorChoice::Pipeline(match name {
        "hi" => EstimatorConfig::Hi { linear_in_t: false },
        "hi-linear" => EstimatorConfig::Hi { linear_in_t: true },
        "scm-gps" => EstimatorConfig::ScmGps,
        "scm-pf" => EstimatorConfig::ScmPfunction {
            overlap_window: opts.window,
        },
        "iw" => EstimatorConfig::Iw {
            bandwidth: opts.bandwidth,
            nadaraya_watson: false,
        },
        "iw-nw" => EstimatorConfig::Iw {
            bandwidth: opts.bandwidth,
            nadaraya_watson: true,
        },
        "ivd" => EstimatorConfig::IvdSubclass {
            subclasses: opts.subclasses,
            within: WithinModel::Linear,
            adjust_theta: opts.adjust_theta,
        },
        "ivd-quadratic" => EstimatorConfig::IvdSubclass {
            subclasses: opts.subclasses,
            within: WithinModel::Quadratic,
            adjust_theta: opts.adjust_theta,
        },
        "cov-adj" => EstimatorConfig::CovAdjContinuous {
            subclasses: opts.subclasses,
            within: parse_cov_within(&opts.within)?,
            mc_size: opts.mc_size,
        },
        "cov-adj-cat" => {
            return Ok(EstimatorChoice::CovAdjCategorical {
                reference: opts.reference_level,
            })
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown estimator '{}'",
                other
            )))
        }
    }))
}

fn parse_grid_flag(s: &str) -> Result<GridConfig, Error> {
    let parts: Vec<&str> = s.trim().split(':').map(|p| p.trim()).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "grid must be lo:hi:D, got '{}'",
            s
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid lower bound '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid upper bound '{}'", parts[1])))?;
    let d: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad grid size '{}'", parts[2])))?;
    Ok(GridConfig::Range { lo, hi, d })
}

fn resolve_grid(config: &GridConfig, treatment: &[f64]) -> Result<Grid, Error> {
    match config {
        GridConfig::Range { lo, hi, d } => Grid::equally_spaced(*lo, *hi, *d),
        GridConfig::Quantiles { d } => Grid::from_quantiles(treatment, *d),
        GridConfig::Theoretical | GridConfig::Default => Grid::default_for(treatment),
    }
}

fn estimate_csv_rows(name: &str, est: &DrfEstimate, rows: &mut String) {
    for (d, &t) in est.grid.points().iter().enumerate() {
        let deriv = est.derivative.as_ref().map(|v| v[d]);
        let se = est.se.as_ref().map(|v| v[d]);
        let lo = est.lower.as_ref().map(|v| v[d]);
        let hi = est.upper.as_ref().map(|v| v[d]);
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            name,
            fmt_num(t),
            fmt_num(est.values[d]),
            deriv.map(fmt_num).unwrap_or_default(),
            se.map(fmt_num).unwrap_or_default(),
            lo.map(fmt_num).unwrap_or_default(),
            hi.map(fmt_num).unwrap_or_default(),
            est.flags[d].singular,
            est.flags[d].extrapolation,
        ));
    }
}

fn run_simulate(
    study: &str,
    n: usize,
    seed: u64,
    scale_is_sd: bool,
    out_dir: &Path,
) -> Result<Manifest, Error> {
    let spec = StudySpec {
        study: Study::parse(study)?,
        n,
        seed,
        scale_is_sd,
    };
    let generated = generate(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    generated.dataset.write_csv(&out_dir.join("dataset.csv"))?;

    let grid = spec.default_grid(&generated.dataset)?;
    let mut truth_csv = String::from("t,truth\n");
    for &t in grid.points() {
        truth_csv.push_str(&format!(
            "{},{}\n",
            fmt_num(t),
            fmt_num(generated.truth.mean_at(t))
        ));
    }
    write_text(out_dir, "truth.csv", &truth_csv)?;

    Ok(Manifest {
        tool: "drf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: RunConfig::Simulate {
            study: study.to_string(),
            n,
            seed,
            scale_is_sd,
        },
        dropped_rows: None,
        outputs: vec!["dataset.csv".into(), "truth.csv".into()],
        errors: BTreeMap::new(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fit(config: &RunConfig, out_dir: &Path) -> Result<Manifest, Error> {
    let RunConfig::Fit {
        data,
        columns,
        squares,
        estimators,
        options,
        grid,
        baseline,
        boot,
        seed,
    } = config
    else {
        unreachable!()
    };
    let loaded = load_dataset(data, columns)?;
    let dataset = loaded.dataset;
    let grid_resolved = resolve_grid(grid, dataset.treatment())?;
    let design_spec = DesignSpec {
        square_cols: squares.clone(),
    };

    let mut outputs = Vec::new();
    let mut errors = BTreeMap::new();
    let mut long_csv =
        String::from("estimator,t,value,derivative,se,lower,upper,singular,extrapolation\n");
    std::fs::create_dir_all(out_dir)?;

    for name in estimators {
        let result = run_one_estimator(
            name,
            options,
            &dataset,
            &design_spec,
            &grid_resolved,
            *baseline,
            *boot,
            *seed,
        );
        match result {
            Ok(est) => {
                let mut body = serde_json::to_string_pretty(&est)
                    .map_err(|e| Error::InvalidData(format!("estimate serialization: {}", e)))?;
                body.push('\n');
                let file = format!("drf_{}.json", name);
                write_text(out_dir, &file, &body)?;
                outputs.push(file);
                estimate_csv_rows(name, &est, &mut long_csv);
            }
            Err(e) => {
                errors.insert(name.clone(), e.to_string());
            }
        }
    }
    write_text(out_dir, "drf_long.csv", &long_csv)?;
    outputs.push("drf_long.csv".into());

    if errors.len() == estimators.len() {
        // Still emit the manifest so the failure is machine readable.
        let manifest = Manifest {
            tool: "drf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            dropped_rows: Some(loaded.dropped_rows),
            outputs,
            errors,
        };
        write_manifest(out_dir, &manifest)?;
        return Err(Error::Estimation(
            "every requested estimator failed; see manifest errors".into(),
        ));
    }
    Ok(Manifest {
        tool: "drf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        dropped_rows: Some(loaded.dropped_rows),
        outputs,
        errors,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one_estimator(
    name: &str,
    options: &EstimatorOptions,
    dataset: &Dataset,
    design_spec: &DesignSpec,
    grid: &Grid,
    baseline: Option<f64>,
    boot: Option<usize>,
    seed: u64,
) -> Result<DrfEstimate, Error> {
    match resolve_estimator(name, options)? {
        EstimatorChoice::Pipeline(config) => {
            let pipeline = Pipeline {
                design_spec: design_spec.clone(),
                estimator: config,
                baseline,
            };
            let fitted = pipeline.fit(dataset, grid, seed)?;
            let mut est = fitted.estimate();
            if let Some(t0) = baseline {
                est = relative_drf(&fitted, &est, t0)?;
            }
            if let Some(b) = boot {
                let boot_res = bootstrap_drf(dataset, &pipeline, fitted.grid(), b, seed)?;
                est = with_bands(est, &boot_res);
            }
            Ok(est)
        }
        EstimatorChoice::CovAdjCategorical { reference } => {
            let gps = one_vs_rest_logistic_gps(dataset)?;
            let mut est = estimate_cov_adj_categorical(dataset, &gps, reference)?;
            if let Some(b) = boot {
                let levels = gps.levels.clone();
                let boot_res = bootstrap_with(dataset, b, seed, levels.len(), |resampled, _| {
                    let g = one_vs_rest_logistic_gps(resampled)?;
                    if g.levels != levels {
                        return Err(Error::Estimation(
                            "treatment level missing in bootstrap replicate".into(),
                        ));
                    }
                    Ok(estimate_cov_adj_categorical(resampled, &g, reference)?.values)
                })?;
                est = with_bands(est, &boot_res);
            }
            Ok(est)
        }
    }
}

fn run_diagnose(config: &RunConfig, out_dir: &Path) -> Result<Manifest, Error> {
    let RunConfig::Diagnose {
        data,
        columns,
        squares,
        blocks,
        window,
        cutpoints,
    } = config
    else {
        unreachable!()
    };
    let loaded = load_dataset(data, columns)?;
    let dataset = loaded.dataset;
    let design_spec = DesignSpec {
        square_cols: squares.clone(),
    };
    let model = fit_treatment_model(&dataset, design_spec)?;
    let theta = model.theta(&dataset)?;
    std::fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();

    let ivd = balance_ivd(&dataset, &theta)?;
    let mut csv = String::from("covariate,binary,adjusted_t,unadjusted_t,flag\n");
    for row in &ivd.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.covariate,
            row.binary,
            row.adjusted_t.map(fmt_num).unwrap_or_default(),
            row.unadjusted_t.map(fmt_num).unwrap_or_default(),
            row.flag.clone().unwrap_or_default(),
        ));
    }
    write_text(out_dir, "balance_ivd.csv", &csv)?;
    outputs.push("balance_ivd.csv".into());

    let mut qq = String::from("statistic,normal_quantile\n");
    for (s, q) in ivd.qq_pairs() {
        qq.push_str(&format!("{},{}\n", fmt_num(s), fmt_num(q)));
    }
    write_text(out_dir, "balance_ivd_qq.csv", &qq)?;
    outputs.push("balance_ivd_qq.csv".into());

    let cuts = if cutpoints.is_empty() {
        default_hi_cutpoints(dataset.treatment())
    } else {
        cutpoints.clone()
    };
    let hi = balance_hi(&dataset, &model, &cuts, *blocks)?;
    let mut hi_csv = String::from("interval_lo,interval_hi,t_ref,covariate,t,dropped_blocks\n");
    let mut blocks_csv =
        String::from("interval_lo,interval_hi,covariate,block,n_in,n_out,mean_difference,variance\n");
    for interval in &hi.intervals {
        for stat in &interval.stats {
            hi_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_num(interval.lo),
                fmt_num(interval.hi),
                fmt_num(interval.t_ref),
                stat.covariate,
                stat.t.map(fmt_num).unwrap_or_default(),
                stat.dropped_blocks,
            ));
            for b in &stat.blocks {
                blocks_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    fmt_num(interval.lo),
                    fmt_num(interval.hi),
                    stat.covariate,
                    b.block,
                    b.n_in,
                    b.n_out,
                    fmt_num(b.mean_difference),
                    fmt_num(b.variance),
                ));
            }
        }
    }
    write_text(out_dir, "balance_hi.csv", &hi_csv)?;
    outputs.push("balance_hi.csv".into());
    write_text(out_dir, "balance_hi_blocks.csv", &blocks_csv)?;
    outputs.push("balance_hi_blocks.csv".into());

    let grid = Grid::default_for(dataset.treatment())?;
    let overlap = overlap_scatter(&dataset, &theta, grid.points(), *window)?;
    let mut ov_csv = String::from("t,coverage,n_neighborhood\n");
    for p in &overlap.points {
        ov_csv.push_str(&format!(
            "{},{},{}\n",
            fmt_num(p.t),
            fmt_num(p.coverage),
            p.n_neighborhood
        ));
    }
    write_text(out_dir, "overlap.csv", &ov_csv)?;
    outputs.push("overlap.csv".into());
    let mut pairs_csv = String::from("t,theta\n");
    for (t, th) in &overlap.pairs {
        pairs_csv.push_str(&format!("{},{}\n", fmt_num(*t), fmt_num(*th)));
    }
    write_text(out_dir, "overlap_pairs.csv", &pairs_csv)?;
    outputs.push("overlap_pairs.csv".into());

    Ok(Manifest {
        tool: "drf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        dropped_rows: Some(loaded.dropped_rows),
        outputs,
        errors: BTreeMap::new(),
    })
}

fn run_study(config: &RunConfig, out_dir: &Path) -> Result<Manifest, Error> {
    let RunConfig::Study {
        study,
        n,
        reps,
        estimators,
        options,
        grid,
        baseline,
        scale_is_sd,
        seed,
    } = config
    else {
        unreachable!()
    };
    let spec = StudySpec {
        study: Study::parse(study)?,
        n: *n,
        seed: *seed,
        scale_is_sd: *scale_is_sd,
    };
    let baseline = baseline.or_else(|| spec.default_baseline());
    let mut pipelines = Vec::new();
    for name in estimators {
        match resolve_estimator(name, options)? {
            EstimatorChoice::Pipeline(estimator) => pipelines.push((
                name.clone(),
                Pipeline {
                    design_spec: spec.study.design_spec(),
                    estimator,
                    baseline,
                },
            )),
            EstimatorChoice::CovAdjCategorical { .. } => {
                return Err(Error::InvalidArgument(
                    "cov-adj-cat applies to categorical treatments, not simulation studies"
                        .into(),
                ))
            }
        }
    }
    let grid_resolved = match grid {
        Some(GridConfig::Range { lo, hi, d }) => Some(Grid::equally_spaced(*lo, *hi, *d)?),
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "study grids must be ranges, got {:?}",
                other
            )))
        }
        None => None,
    };
    let summary = run_replications(&spec, &pipelines, grid_resolved.as_ref(), *reps, *seed)?;

    let mut csv = String::from("estimator,t,truth,mean,sd,p025,p975,failures,reps,aborted\n");
    for est in &summary.estimators {
        if est.aborted {
            csv.push_str(&format!(
                "{},,,,,,,{},{},true\n",
                est.name, est.failures, reps
            ));
            continue;
        }
        for p in &est.points {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},false\n",
                est.name,
                fmt_num(p.t),
                fmt_num(p.truth),
                fmt_num(p.mean),
                fmt_num(p.sd),
                fmt_num(p.p025),
                fmt_num(p.p975),
                est.failures,
                reps,
            ));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    write_text(out_dir, "summary.csv", &csv)?;

    Ok(Manifest {
        tool: "drf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        dropped_rows: None,
        outputs: vec!["summary.csv".into()],
        errors: summary
            .estimators
            .iter()
            .filter(|e| e.aborted)
            .map(|e| (e.name.clone(), "every replicate failed".to_string()))
            .collect(),
    })
}

fn run_config(config: &RunConfig, out_dir: &Path) -> Result<Manifest, Error> {
    match config {
        RunConfig::Simulate {
            study,
            n,
            seed,
            scale_is_sd,
        } => run_simulate(study, *n, *seed, *scale_is_sd, out_dir),
        RunConfig::Fit { .. } => run_fit(config, out_dir),
        RunConfig::Diagnose { .. } => run_diagnose(config, out_dir),
        RunConfig::Study { .. } => run_study(config, out_dir),
    }
}

fn columns_from(args: &DataArgs) -> ColumnSpec {
    ColumnSpec {
        treatment_col: args.treatment.clone(),
        response_col: args.response.clone(),
        weight_col: args.weights.clone(),
        covariate_cols: args.covariates.clone(),
        factor_cols: args.factors.clone(),
    }
}

fn build_config(command: &Command) -> Result<(RunConfig, PathBuf), Error> {
    Ok(match command {
        Command::Simulate(a) => {
            Study::parse(&a.study)?;
            (
                RunConfig::Simulate {
                    study: a.study.clone(),
                    n: a.n,
                    seed: a.seed,
                    scale_is_sd: a.scale_is_sd,
                },
                a.out_dir.clone(),
            )
        }
        Command::Fit(a) => {
            if a.estimators.is_empty() {
                return Err(Error::InvalidArgument("no estimators requested".into()));
            }
            let options = EstimatorOptions {
                subclasses: a.subclasses,
                within: a.within.clone(),
                bandwidth: a.bandwidth,
                mc_size: a.mc_size,
                window: a.window,
                adjust_theta: a.adjust_theta,
                reference_level: a.reference_level,
            };
            for name in &a.estimators {
                resolve_estimator(name, &options)?;
            }
            if name_clash(&a.grid, a.grid_quantiles, a.grid_theoretical) {
                return Err(Error::InvalidArgument(
                    "choose exactly one of --grid, --grid-quantiles, --grid-theoretical".into(),
                ));
            }
            let grid = if let Some(g) = &a.grid {
                parse_grid_flag(g)?
            } else if let Some(d) = a.grid_quantiles {
                GridConfig::Quantiles { d }
            } else if a.grid_theoretical {
                GridConfig::Theoretical
            } else {
                GridConfig::Default
            };
            (
                RunConfig::Fit {
                    data: a.data.data.clone(),
                    columns: columns_from(&a.data),
                    squares: a.data.squares.clone(),
                    estimators: a.estimators.clone(),
                    options,
                    grid,
                    baseline: a.baseline,
                    boot: a.boot,
                    seed: a.seed,
                },
                a.out_dir.clone(),
            )
        }
        Command::Diagnose(a) => (
            RunConfig::Diagnose {
                data: a.data.data.clone(),
                columns: columns_from(&a.data),
                squares: a.data.squares.clone(),
                blocks: a.blocks,
                window: a.window,
                cutpoints: a.cutpoints.clone(),
            },
            a.out_dir.clone(),
        ),
        Command::Study(a) => {
            if a.estimators.is_empty() {
                return Err(Error::InvalidArgument("no estimators requested".into()));
            }
            Study::parse(&a.study)?;
            let options = EstimatorOptions {
                subclasses: a.subclasses,
                within: a.within.clone(),
                bandwidth: a.bandwidth,
                mc_size: a.mc_size,
                window: a.window,
                adjust_theta: a.adjust_theta,
                reference_level: 0,
            };
            for name in &a.estimators {
                resolve_estimator(name, &options)?;
            }
            let grid = a.grid.as_deref().map(parse_grid_flag).transpose()?;
            (
                RunConfig::Study {
                    study: a.study.clone(),
                    n: a.n,
                    reps: a.reps,
                    estimators: a.estimators.clone(),
                    options,
                    grid,
                    baseline: a.baseline,
                    scale_is_sd: a.scale_is_sd,
                    seed: a.seed,
                },
                a.out_dir.clone(),
            )
        }
        Command::Rerun(a) => {
            let body = std::fs::read_to_string(&a.manifest)?;
            let manifest: Manifest = serde_json::from_str(&body)
                .map_err(|e| Error::InvalidArgument(format!("bad manifest: {}", e)))?;
            (manifest.config, a.out_dir.clone())
        }
    })
}

fn name_clash(grid: &Option<String>, quantiles: Option<usize>, theoretical: bool) -> bool {
    let mut count = 0;
    count += usize::from(grid.is_some());
    count += usize::from(quantiles.is_some());
    count += usize::from(theoretical);
    count > 1
}

fn main() -> ExitCode {
    let cli = CliArgs::parse();
    let (config, out_dir) = match build_config(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": e.to_string(), "kind": "config"})
            );
            return ExitCode::from(2);
        }
    };
    match run_config(&config, &out_dir) {
        Ok(manifest) => {
            if let Err(e) = write_manifest(&out_dir, &manifest) {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": e.to_string(), "kind": "io"})
                );
                return ExitCode::from(1);
            }
            for (estimator, message) in &manifest.errors {
                eprintln!(
                    "{}",
                    serde_json::json!({"estimator": estimator, "error": message})
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": e.to_string(), "kind": "runtime"})
            );
            ExitCode::from(1)
        }
    }
}
