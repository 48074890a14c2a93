//! Penalized natural cubic regression spline smoother.
//!
//! Three model shapes are supported: a univariate smooth f(x), the
//! varying-coefficient model f(theta) + g(theta) * t, and a bivariate
//! tensor-product surface beta(u, v). Smoothing parameters are chosen by
//! GCV over a fixed log-spaced grid, so fits are deterministic.
//!
//! The basis is parameterized by the spline's values at the knots, which
//! places every affine function in the penalty null space: data generated
//! by an affine function is reproduced exactly at any lambda.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::normalize_weights;

pub const DEFAULT_BASIS_DIM: usize = 5;
const LAMBDA_GRID_SIZE: usize = 41;
const LOG10_LAMBDA_MIN: f64 = -6.0;
const LOG10_LAMBDA_MAX: f64 = 6.0;

/// The fixed lambda search grid: 41 log-spaced values in [1e-6, 1e6].
pub fn lambda_grid() -> Vec<f64> {
    (0..LAMBDA_GRID_SIZE)
        .map(|i| {
            let frac = i as f64 / (LAMBDA_GRID_SIZE - 1) as f64;
            10f64.powf(LOG10_LAMBDA_MIN + frac * (LOG10_LAMBDA_MAX - LOG10_LAMBDA_MIN))
        })
        .collect()
}

/// Natural cubic regression spline basis in value-at-knot form.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    /// k x k map from knot values to second derivatives at the knots;
    /// first and last rows are zero (natural boundary).
    second_deriv_map: DMatrix<f64>,
    /// Integrated squared second derivative penalty, symmetric PSD with
    /// affine functions in its null space.
    penalty: DMatrix<f64>,
}

impl SplineBasis {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        let k = knots.len();
        if k < 3 {
            return Err(Error::Smoothing(format!(
                "need at least 3 knots, got {}",
                k
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Smoothing("knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut d = DMatrix::zeros(k - 2, k);
        let mut b = DMatrix::zeros(k - 2, k - 2);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < k - 2 {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let b_chol = Cholesky::new(b).ok_or_else(|| {
            Error::Smoothing("spline band matrix is not positive definite".into())
        })?;
        let binv_d = b_chol.solve(&d);
        let mut second_deriv_map = DMatrix::zeros(k, k);
        for i in 0..k - 2 {
            for j in 0..k {
                second_deriv_map[(i + 1, j)] = binv_d[(i, j)];
            }
        }
        let mut penalty = d.transpose() * &binv_d;
        // Symmetrize against roundoff.
        for i in 0..k {
            for j in (i + 1)..k {
                let v = 0.5 * (penalty[(i, j)] + penalty[(j, i)]);
                penalty[(i, j)] = v;
                penalty[(j, i)] = v;
            }
        }
        Ok(SplineBasis {
            knots,
            second_deriv_map,
            penalty,
        })
    }

    /// Knots at `k` evenly spaced quantiles of the unique values of `x`.
    pub fn from_quantiles(x: &[f64], k: usize) -> Result<Self> {
        let mut unique = x.to_vec();
        unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
        unique.dedup();
        if unique.len() < k {
            return Err(Error::Smoothing(format!(
                "fewer distinct values ({}) than basis dimension {}",
                unique.len(),
                k
            )));
        }
        let knots: Vec<f64> = (0..k)
            .map(|j| {
                let p = j as f64 / (k - 1) as f64;
                crate::numeric::quantile_sorted(&unique, p)
            })
            .collect();
        SplineBasis::new(knots)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Evaluates the k basis functions at x. Outside the knot range the
    /// spline extends linearly.
    pub fn row(&self, x: f64) -> DVector<f64> {
        let k = self.dim();
        let knots = &self.knots;
        let f = &self.second_deriv_map;
        let mut row = DVector::zeros(k);
        if x <= knots[0] {
            let h0 = knots[1] - knots[0];
            row[0] = 1.0;
            let dx = x - knots[0];
            row[0] += dx * (-1.0 / h0);
            row[1] += dx * (1.0 / h0);
            for j in 0..k {
                row[j] -= dx * h0 / 6.0 * f[(1, j)];
            }
            return row;
        }
        if x >= knots[k - 1] {
            let h = knots[k - 1] - knots[k - 2];
            row[k - 1] = 1.0;
            let dx = x - knots[k - 1];
            row[k - 2] += dx * (-1.0 / h);
            row[k - 1] += dx * (1.0 / h);
            for j in 0..k {
                row[j] += dx * h / 6.0 * f[(k - 2, j)];
            }
            return row;
        }
        let mut j = match knots.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        j = j.min(k - 2);
        let h = knots[j + 1] - knots[j];
        let left = knots[j + 1] - x;
        let right = x - knots[j];
        row[j] += left / h;
        row[j + 1] += right / h;
        let c_left = (left * left * left / h - h * left) / 6.0;
        let c_right = (right * right * right / h - h * right) / 6.0;
        for col in 0..k {
            row[col] += c_left * f[(j, col)] + c_right * f[(j + 1, col)];
        }
        row
    }

    pub fn matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let k = self.dim();
        let mut m = DMatrix::zeros(xs.len(), k);
        for (i, &x) in xs.iter().enumerate() {
            let r = self.row(x);
            for j in 0..k {
                m[(i, j)] = r[j];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothKind {
    Univariate,
    VaryingCoefficient,
    Tensor,
}

/// Options shared by the smooth fits.
#[derive(Debug, Clone)]
pub struct SmoothOptions {
    pub basis_dim: usize,
    /// Bypass the GCV search with fixed smoothing parameters (one per
    /// penalty). Values must be non-negative.
    pub fixed_lambda: Option<Vec<f64>>,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions {
            basis_dim: DEFAULT_BASIS_DIM,
            fixed_lambda: None,
        }
    }
}

/// A fitted penalized spline model.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub kind: SmoothKind,
    pub coefficients: DVector<f64>,
    bases: Vec<SplineBasis>,
    pub lambda: Vec<f64>,
    pub edf: f64,
    pub gcv: f64,
}

/// Vector prediction with extrapolation flags per point.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

impl SmoothFit {
    pub fn bases(&self) -> &[SplineBasis] {
        &self.bases
    }

    fn arity(&self) -> usize {
        match self.kind {
            SmoothKind::Univariate => 1,
            SmoothKind::VaryingCoefficient | SmoothKind::Tensor => 2,
        }
    }

    /// Fitted value at a single point; coordinate count must match the
    /// model kind (1 for univariate, 2 otherwise).
    pub fn value_at(&self, coords: &[f64]) -> Result<f64> {
        if coords.len() != self.arity() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} fit expects {} coordinates, got {}",
                self.kind,
                self.arity(),
                coords.len()
            )));
        }
        Ok(match self.kind {
            SmoothKind::Univariate => self.bases[0].row(coords[0]).dot(&self.coefficients),
            SmoothKind::VaryingCoefficient => {
                let k = self.bases[0].dim();
                let row = self.bases[0].row(coords[0]);
                let f: f64 = (0..k).map(|j| row[j] * self.coefficients[j]).sum();
                let g: f64 = (0..k).map(|j| row[j] * self.coefficients[k + j]).sum();
                f + g * coords[1]
            }
            SmoothKind::Tensor => {
                let ku = self.bases[0].dim();
                let kv = self.bases[1].dim();
                let ru = self.bases[0].row(coords[0]);
                let rv = self.bases[1].row(coords[1]);
                let mut acc = 0.0;
                for j in 0..ku {
                    if ru[j] == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for l in 0..kv {
                        inner += self.coefficients[j * kv + l] * rv[l];
                    }
                    acc += ru[j] * inner;
                }
                acc
            }
        })
    }

    /// Slope surface g(theta) of a varying-coefficient fit.
    pub fn slope_at(&self, theta: f64) -> Result<f64> {
        if self.kind != SmoothKind::VaryingCoefficient {
            return Err(Error::InvalidArgument(
                "slope_at applies to varying-coefficient fits only".into(),
            ));
        }
        let k = self.bases[0].dim();
        let row = self.bases[0].row(theta);
        Ok((0..k).map(|j| row[j] * self.coefficients[k + j]).sum())
    }

    /// Batch prediction; points outside a smoothed coordinate's knot range
    /// are evaluated by linear extension and flagged.
    pub fn predict(&self, points: &[Vec<f64>]) -> Result<Prediction> {
        let mut values = Vec::with_capacity(points.len());
        let mut extrapolated = Vec::with_capacity(points.len());
        for pt in points {
            if let Some(coord) = pt.iter().find(|c| !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite prediction point coordinate {}",
                    coord
                )));
            }
            values.push(self.value_at(pt)?);
            let mut out = false;
            match self.kind {
                SmoothKind::Univariate | SmoothKind::VaryingCoefficient => {
                    let (lo, hi) = self.bases[0].range();
                    out = pt[0] < lo || pt[0] > hi;
                }
                SmoothKind::Tensor => {
                    for (dim, basis) in self.bases.iter().enumerate() {
                        let (lo, hi) = basis.range();
                        out |= pt[dim] < lo || pt[dim] > hi;
                    }
                }
            }
            extrapolated.push(out);
        }
        Ok(Prediction {
            values,
            extrapolated,
        })
    }

    /// Tensor coefficients reshaped to a (ku x kv) matrix.
    pub fn coef_matrix(&self) -> Result<DMatrix<f64>> {
        if self.kind != SmoothKind::Tensor {
            return Err(Error::InvalidArgument(
                "coef_matrix applies to tensor fits only".into(),
            ));
        }
        let ku = self.bases[0].dim();
        let kv = self.bases[1].dim();
        Ok(DMatrix::from_fn(ku, kv, |j, l| self.coefficients[j * kv + l]))
    }
}

struct PenaltyBlock {
    offset: usize,
    matrix: DMatrix<f64>,
}

/// Penalized weighted least squares with GCV selection over the candidate
/// lambda vectors. Candidates are scanned in order and ties keep the
/// earliest (smallest) lambdas.
fn gcv_fit(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
    blocks: &[PenaltyBlock],
    candidates: &[Vec<f64>],
) -> Result<(DVector<f64>, Vec<f64>, f64, f64)> {
    let n = design.nrows();
    let p = design.ncols();
    let wn = normalize_weights(weights);
    let mut xw = design.clone();
    for i in 0..n {
        let s = wn[i].sqrt();
        for j in 0..p {
            xw[(i, j)] *= s;
        }
    }
    let yw = DVector::from_iterator(n, (0..n).map(|i| y[i] * wn[i].sqrt()));
    let a0 = xw.transpose() * &xw;
    let b0 = xw.transpose() * &yw;
    let yy = yw.dot(&yw);

    let mut best: Option<(DVector<f64>, Vec<f64>, f64, f64)> = None;
    for lambdas in candidates {
        debug_assert_eq!(lambdas.len(), blocks.len());
        let mut a = a0.clone();
        for (block, &lam) in blocks.iter().zip(lambdas) {
            let d = block.matrix.nrows();
            for r in 0..d {
                for c in 0..d {
                    a[(block.offset + r, block.offset + c)] += lam * block.matrix[(r, c)];
                }
            }
        }
        let chol = match Cholesky::new(a) {
            Some(c) => c,
            None => continue,
        };
        let beta = chol.solve(&b0);
        let rss = (yy - 2.0 * beta.dot(&b0) + beta.dot(&(&a0 * &beta))).max(0.0);
        let edf = chol.solve(&a0).trace();
        let denom = n as f64 - edf;
        if denom <= 1e-8 {
            continue;
        }
        let gcv = n as f64 * rss / (denom * denom);
        if !gcv.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| gcv < b.3) {
            best = Some((beta, lambdas.clone(), edf, gcv));
        }
    }
    best.ok_or_else(|| Error::Smoothing("penalized system singular at every lambda".into()))
}

fn candidate_vectors(opts: &SmoothOptions, n_penalties: usize) -> Result<Vec<Vec<f64>>> {
    if let Some(fixed) = &opts.fixed_lambda {
        if fixed.len() != n_penalties {
            return Err(Error::InvalidArgument(format!(
                "expected {} fixed lambdas, got {}",
                n_penalties,
                fixed.len()
            )));
        }
        if fixed.iter().any(|l| *l < 0.0 || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "fixed lambdas must be finite and non-negative".into(),
            ));
        }
        return Ok(vec![fixed.clone()]);
    }
    let grid = lambda_grid();
    Ok(match n_penalties {
        1 => grid.into_iter().map(|l| vec![l]).collect(),
        2 => {
            let mut out = Vec::with_capacity(grid.len() * grid.len());
            for &l1 in &grid {
                for &l2 in &grid {
                    out.push(vec![l1, l2]);
                }
            }
            out
        }
        _ => unreachable!("at most two penalties"),
    })
}

fn check_inputs(lens: &[usize], y: &[f64], weights: &[f64]) -> Result<usize> {
    let n = y.len();
    if lens.iter().any(|&l| l != n) || weights.len() != n {
        return Err(Error::DimensionMismatch(
            "smooth inputs must share one length".into(),
        ));
    }
    Ok(n)
}

/// Univariate penalized smooth of y on x.
pub fn fit_univariate(
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    opts: &SmoothOptions,
) -> Result<SmoothFit> {
    let n = check_inputs(&[x.len()], y, weights)?;
    let k = opts.basis_dim;
    if n <= k {
        return Err(Error::Smoothing(format!(
            "need more than {} observations for a {}-dimensional smooth, got {}",
            k, k, n
        )));
    }
    let basis = SplineBasis::from_quantiles(x, k)?;
    let design = basis.matrix(x);
    let blocks = vec![PenaltyBlock {
        offset: 0,
        matrix: basis.penalty().clone(),
    }];
    let candidates = candidate_vectors(opts, 1)?;
    let (beta, lambda, edf, gcv) = gcv_fit(&design, y, weights, &blocks, &candidates)?;
    Ok(SmoothFit {
        kind: SmoothKind::Univariate,
        coefficients: beta,
        bases: vec![basis],
        lambda,
        edf,
        gcv,
    })
}

/// Varying-coefficient model E(y | theta, t) = f(theta) + g(theta) t with
/// separate smoothing parameters for f and g.
pub fn fit_varying_coefficient(
    theta: &[f64],
    t: &[f64],
    y: &[f64],
    weights: &[f64],
    opts: &SmoothOptions,
) -> Result<SmoothFit> {
    let n = check_inputs(&[theta.len(), t.len()], y, weights)?;
    let k = opts.basis_dim;
    if n <= 2 * k {
        return Err(Error::Smoothing(format!(
            "need more than {} observations for the varying-coefficient model, got {}",
            2 * k,
            n
        )));
    }
    let basis = SplineBasis::from_quantiles(theta, k)?;
    let b = basis.matrix(theta);
    let mut design = DMatrix::zeros(n, 2 * k);
    for i in 0..n {
        for j in 0..k {
            design[(i, j)] = b[(i, j)];
            design[(i, k + j)] = b[(i, j)] * t[i];
        }
    }
    let blocks = vec![
        PenaltyBlock {
            offset: 0,
            matrix: basis.penalty().clone(),
        },
        PenaltyBlock {
            offset: k,
            matrix: basis.penalty().clone(),
        },
    ];
    let candidates = candidate_vectors(opts, 2)?;
    let (beta, lambda, edf, gcv) = gcv_fit(&design, y, weights, &blocks, &candidates)?;
    Ok(SmoothFit {
        kind: SmoothKind::VaryingCoefficient,
        coefficients: beta,
        bases: vec![basis],
        lambda,
        edf,
        gcv,
    })
}

/// Tensor-product surface E(y | u, v) = beta(u, v) with marginal bases of
/// dimension k and additive penalties lambda_1 (S_u x I) + lambda_2 (I x S_v).
pub fn fit_tensor_scm(
    u: &[f64],
    v: &[f64],
    y: &[f64],
    weights: &[f64],
    opts: &SmoothOptions,
) -> Result<SmoothFit> {
    let n = check_inputs(&[u.len(), v.len()], y, weights)?;
    let k = opts.basis_dim;
    if n <= k * k {
        return Err(Error::Smoothing(format!(
            "need more than {} observations for the tensor smooth, got {}",
            k * k,
            n
        )));
    }
    let basis_u = SplineBasis::from_quantiles(u, k)?;
    let basis_v = SplineBasis::from_quantiles(v, k)?;
    let bu = basis_u.matrix(u);
    let bv = basis_v.matrix(v);
    let mut design = DMatrix::zeros(n, k * k);
    for i in 0..n {
        for j in 0..k {
            let buij = bu[(i, j)];
            if buij == 0.0 {
                continue;
            }
            for l in 0..k {
                design[(i, j * k + l)] = buij * bv[(i, l)];
            }
        }
    }
    let su = basis_u.penalty();
    let sv = basis_v.penalty();
    // S_u x I_k and I_k x S_v with u-major coefficient order.
    let mut pen_u = DMatrix::zeros(k * k, k * k);
    let mut pen_v = DMatrix::zeros(k * k, k * k);
    for j in 0..k {
        for jp in 0..k {
            for l in 0..k {
                pen_u[(j * k + l, jp * k + l)] = su[(j, jp)];
                pen_v[(l * k + j, l * k + jp)] = sv[(j, jp)];
            }
        }
    }
    let blocks = vec![
        PenaltyBlock {
            offset: 0,
            matrix: pen_u,
        },
        PenaltyBlock {
            offset: 0,
            matrix: pen_v,
        },
    ];
    let candidates = candidate_vectors(opts, 2)?;
    let (beta, lambda, edf, gcv) = gcv_fit(&design, y, weights, &blocks, &candidates)?;
    Ok(SmoothFit {
        kind: SmoothKind::Tensor,
        coefficients: beta,
        bases: vec![basis_u, basis_v],
        lambda,
        edf,
        gcv,
    })
}
