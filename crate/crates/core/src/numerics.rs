//! Dense least squares, projections and penalized regression.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Designs with a larger 2-norm condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// An `n x m` regression design (polynomial features or selected columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("design matrix has non-finite entries"));
        }
        Ok(Self(matrix))
    }

    pub fn from_row_slice(n: usize, m: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(n, m, data))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Sub-design made of the listed columns, in order.
    pub fn select_columns(&self, columns: &[usize]) -> DesignMatrix {
        DesignMatrix(self.0.select_columns(columns))
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix(self.0.select_rows(rows))
    }

    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(beta)).as_slice().to_vec()
    }
}

/// Vandermonde design `[1, x, x^2, ..., x^q]`.
pub fn polynomial_features(xs: &[f64], order: usize) -> DesignMatrix {
    let n = xs.len();
    let m = order + 1;
    let mut mat = DMatrix::zeros(n, m);
    for (i, &x) in xs.iter().enumerate() {
        let mut p = 1.0;
        for j in 0..m {
            mat[(i, j)] = p;
            p *= x;
        }
    }
    DesignMatrix(mat)
}

/// Thin QR factorization of a full-column-rank design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    condition: f64,
}

impl LeastSquares {
    pub fn new(design: &DesignMatrix) -> Result<Self> {
        let (n, m) = (design.nrows(), design.ncols());
        if m == 0 || m > n {
            return Err(Error::SingularDesign { condition: f64::INFINITY });
        }
        let qr = design.0.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let sv = r.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularDesign { condition });
        }
        Ok(Self { q, r, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let qty = self.q.tr_mul(&DVector::from_column_slice(y));
        self.r.solve_upper_triangular(&qty).expect("R is nonsingular after the condition check").as_slice().to_vec()
    }

    /// Orthogonal projection of `y` onto the column space.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let qty = self.q.tr_mul(&DVector::from_column_slice(y));
        (&self.q * qty).as_slice().to_vec()
    }

    /// `Phi (Phi^T Phi)^{-1} u`, computed as `Q R^{-T} u`.
    pub fn gram_inverse_image(&self, u: &[f64]) -> Vec<f64> {
        let w = self
            .r
            .transpose()
            .solve_lower_triangular(&DVector::from_column_slice(u))
            .expect("R is nonsingular after the condition check");
        (&self.q * w).as_slice().to_vec()
    }
}

/// Least-squares coefficients `argmin ||y - Phi beta||^2`.
pub fn ols_solve(design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_len(design, y)?;
    Ok(LeastSquares::new(design)?.coefficients(y))
}

/// `P y` where `P` projects onto the column space of `design`.
pub fn project_onto_columns(design: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>> {
    check_len(design, y)?;
    Ok(LeastSquares::new(design)?.project(y))
}

fn check_len(design: &DesignMatrix, y: &[f64]) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::LengthMismatch { left: design.nrows(), right: y.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnetOptions {
    /// Scale columns to unit variance before fitting.
    pub standardize: bool,
    /// Center `y` and the columns, and report an intercept.
    pub fit_intercept: bool,
    pub max_sweeps: usize,
    /// Largest admissible KKT residual.
    pub tol: f64,
    /// Record the objective after every sweep.
    pub trace: bool,
}

impl Default for EnetOptions {
    fn default() -> Self {
        Self { standardize: true, fit_intercept: true, max_sweeps: 10_000, tol: 1e-6, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnetFit {
    pub intercept: f64,
    /// Coefficients on the original column scale.
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
    /// Objective value (working scale) after each sweep, if traced.
    pub objective_trace: Vec<f64>,
}

impl EnetFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn support(&self) -> Vec<usize> {
        self.coefficients.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }
}

/// Centered/scaled working copy of a regression problem.
struct EnetProblem {
    n: usize,
    columns: Vec<Vec<f64>>,
    col_sq: Vec<f64>,
    /// `X^T X / n` on the working scale.
    gram: DMatrix<f64>,
    /// `X^T y / n` on the working scale.
    xty: Vec<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    opts: EnetOptions,
}

impl EnetProblem {
    fn new(x: &DesignMatrix, y: &[f64], opts: EnetOptions) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let nf = n as f64;
        let y_mean = if opts.fit_intercept { y.iter().sum::<f64>() / nf } else { 0.0 };
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut columns = Vec::with_capacity(p);
        let mut x_mean = vec![0.0; p];
        let mut x_scale = vec![1.0; p];
        let mut col_sq = vec![0.0; p];
        for j in 0..p {
            let col = x.0.column(j);
            let mean = if opts.fit_intercept { col.sum() / nf } else { 0.0 };
            let mut c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let ms = c.iter().map(|v| v * v).sum::<f64>() / nf;
            if opts.standardize && ms > 0.0 {
                let s = ms.sqrt();
                c.iter_mut().for_each(|v| *v /= s);
                x_scale[j] = s;
            }
            col_sq[j] = c.iter().map(|v| v * v).sum::<f64>() / nf;
            x_mean[j] = mean;
            columns.push(c);
        }
        let gram = DMatrix::from_fn(p, p, |a, b| dot(&columns[a], &columns[b]) / nf);
        let xty = columns.iter().map(|c| dot(c, &yc) / nf).collect();
        Self { n, columns, col_sq, gram, xty, y: yc, x_mean, x_scale, y_mean, opts }
    }

    fn lambda_max(&self) -> f64 {
        self.columns.iter().map(|c| dot(c, &self.y).abs() / self.n as f64).fold(0.0, f64::max)
    }

    fn objective(&self, resid: &[f64], b: &[f64], l1: f64, l2: f64) -> f64 {
        let rss = resid.iter().map(|r| r * r).sum::<f64>();
        rss / (2.0 * self.n as f64)
            + l1 * b.iter().map(|v| v.abs()).sum::<f64>()
            + 0.5 * l2 * b.iter().map(|v| v * v).sum::<f64>()
    }

    fn kkt(&self, resid: &[f64], b: &[f64], l1: f64, l2: f64) -> f64 {
        let nf = self.n as f64;
        let mut worst: f64 = 0.0;
        for (j, col) in self.columns.iter().enumerate() {
            if self.col_sq[j] == 0.0 {
                continue;
            }
            let g = -dot(col, resid) / nf + l2 * b[j];
            let v = if b[j] != 0.0 { (g + l1 * b[j].signum()).abs() } else { (g.abs() - l1).max(0.0) };
            worst = worst.max(v);
        }
        worst
    }

    /// One cyclic pass over `coords`; returns the largest scaled change.
    fn sweep(&self, coords: &[usize], b: &mut [f64], resid: &mut [f64], l1: f64, l2: f64) -> f64 {
        let nf = self.n as f64;
        let mut max_delta: f64 = 0.0;
        for &j in coords {
            let z = self.col_sq[j];
            if z == 0.0 {
                b[j] = 0.0;
                continue;
            }
            let col = &self.columns[j];
            let rho = dot(col, resid) / nf + z * b[j];
            let new = soft_threshold(rho, l1) / (z + l2);
            let delta = new - b[j];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                b[j] = new;
                max_delta = max_delta.max(delta.abs() * z.sqrt());
            }
        }
        max_delta
    }

    /// Smooth part of the objective without the constant `||y||^2 / 2n`,
    /// plus the l1 term.
    fn reduced_objective(&self, b: &[f64], l1: f64, l2: f64) -> f64 {
        let gb = &self.gram * DVector::from_column_slice(b);
        b.iter().enumerate().map(|(j, v)| -self.xty[j] * v + 0.5 * v * (gb[j] + l2 * v) + l1 * v.abs()).sum()
    }

    /// Feature-sign search: exact solves on a signed active set with a line
    /// search over sign changes. Returns `true` once every KKT condition
    /// holds; the objective never increases.
    fn feature_sign(&self, b: &mut [f64], l1: f64, l2: f64) -> bool {
        let p = b.len();
        let tol = 0.1 * self.opts.tol;
        let mut theta: Vec<f64> = b.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
        for _ in 0..(4 * p + 20) {
            let gb = &self.gram * DVector::from_column_slice(b);
            let grad: Vec<f64> = (0..p).map(|j| gb[j] - self.xty[j] + l2 * b[j]).collect();
            let active_ok = (0..p).filter(|&j| theta[j] != 0.0).all(|j| (grad[j] + l1 * theta[j]).abs() <= tol);
            if active_ok {
                let entering = (0..p)
                    .filter(|&j| theta[j] == 0.0 && self.col_sq[j] > 0.0)
                    .map(|j| (j, grad[j].abs() - l1))
                    .filter(|&(_, v)| v > tol)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match entering {
                    None => return true,
                    Some((j, _)) => theta[j] = -grad[j].signum(),
                }
            }
            let active: Vec<usize> = (0..p).filter(|&j| theta[j] != 0.0).collect();
            let m = active.len();
            if m >= self.n {
                return false;
            }
            let g = DMatrix::from_fn(m, m, |a, c| self.gram[(active[a], active[c])] + if a == c { l2 } else { 0.0 });
            let rhs = DVector::from_iterator(m, active.iter().map(|&j| self.xty[j] - l1 * theta[j]));
            let Some(chol) = g.cholesky() else { return false };
            let target = chol.solve(&rhs);
            if target.iter().any(|v| !v.is_finite()) {
                return false;
            }
            // Candidates: the signed minimizer and every zero crossing on the way.
            let start = b.to_vec();
            let mut candidates: Vec<(f64, Option<usize>)> = vec![(1.0, None)];
            for (a, &j) in active.iter().enumerate() {
                let (from, to) = (start[j], target[a]);
                if from != 0.0 && from.signum() != to.signum() {
                    candidates.push((from / (from - to), Some(j)));
                }
            }
            let f0 = self.reduced_objective(&start, l1, l2);
            let mut best = (f0, start.clone());
            for (t, crossing) in candidates {
                let mut v = start.clone();
                for (a, &j) in active.iter().enumerate() {
                    v[j] = start[j] + t * (target[a] - start[j]);
                }
                if let Some(j) = crossing {
                    v[j] = 0.0;
                }
                let f = self.reduced_objective(&v, l1, l2);
                if f < best.0 {
                    best = (f, v);
                }
            }
            if best.0 >= f0 {
                return false;
            }
            b.copy_from_slice(&best.1);
            for j in 0..p {
                if theta[j] != 0.0 && b[j] == 0.0 {
                    theta[j] = 0.0;
                } else if b[j] != 0.0 {
                    theta[j] = b[j].signum();
                }
            }
        }
        false
    }

    fn residual(&self, b: &[f64]) -> Vec<f64> {
        let mut resid = self.y.clone();
        for (j, col) in self.columns.iter().enumerate() {
            if b[j] != 0.0 {
                for (r, x) in resid.iter_mut().zip(col) {
                    *r -= b[j] * x;
                }
            }
        }
        resid
    }

    /// Coordinate descent from the warm start `b` (working scale).
    fn solve(&self, l1: f64, l2: f64, b: &mut [f64], trace: &mut Vec<f64>) -> Result<(usize, f64)> {
        let p = b.len();
        let mut resid = self.residual(b);
        let all: Vec<usize> = (0..p).collect();
        let mut sweeps = 0;
        let mut kkt = f64::INFINITY;
        while sweeps < self.opts.max_sweeps {
            self.sweep(&all, b, &mut resid, l1, l2);
            sweeps += 1;
            if self.opts.trace {
                trace.push(self.objective(&resid, b, l1, l2));
            }
            kkt = self.kkt(&resid, b, l1, l2);
            if kkt <= self.opts.tol {
                return Ok((sweeps, kkt));
            }
            let finished = self.feature_sign(b, l1, l2);
            resid = self.residual(b);
            if self.opts.trace {
                trace.push(self.objective(&resid, b, l1, l2));
            }
            if finished {
                kkt = self.kkt(&resid, b, l1, l2);
                if kkt <= self.opts.tol {
                    return Ok((sweeps, kkt));
                }
            }
            // Converge on the active set before the next full pass.
            let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
            while sweeps < self.opts.max_sweeps {
                let delta = self.sweep(&active, b, &mut resid, l1, l2);
                sweeps += 1;
                if self.opts.trace {
                    trace.push(self.objective(&resid, b, l1, l2));
                }
                if delta <= 0.1 * self.opts.tol {
                    break;
                }
            }
        }
        if kkt <= self.opts.tol {
            Ok((sweeps, kkt))
        } else {
            Err(Error::Convergence { sweeps, kkt_residual: kkt })
        }
    }

    fn to_fit(&self, b: &[f64], sweeps: usize, kkt: f64, trace: Vec<f64>) -> EnetFit {
        let coefficients: Vec<f64> = b.iter().zip(&self.x_scale).map(|(v, s)| v / s).collect();
        let intercept = self.y_mean - coefficients.iter().zip(&self.x_mean).map(|(c, m)| c * m).sum::<f64>();
        EnetFit { intercept, coefficients, sweeps, kkt_residual: kkt, objective_trace: trace }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `(1/2n)||y - X beta||^2 + l1 ||beta||_1 + (l2/2) ||beta||^2` by
/// cyclic coordinate descent. Penalties apply on the working (possibly
/// standardized) scale.
pub fn coordinate_descent_enet(x: &DesignMatrix, y: &[f64], l1: f64, l2: f64, opts: EnetOptions) -> Result<EnetFit> {
    check_len(x, y)?;
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(Error::config("penalties must be non-negative"));
    }
    let problem = EnetProblem::new(x, y, opts);
    let mut b = vec![0.0; x.ncols()];
    let mut trace = Vec::new();
    let (sweeps, kkt) = problem.solve(l1, l2, &mut b, &mut trace)?;
    Ok(problem.to_fit(&b, sweeps, kkt, trace))
}

/// Smallest `l1` (working scale) at which every coefficient is zero.
pub fn lambda_max(x: &DesignMatrix, y: &[f64], opts: EnetOptions) -> f64 {
    EnetProblem::new(x, y, opts).lambda_max()
}

/// `count` log-spaced values from `lambda_max` down to `ratio * lambda_max`.
pub fn default_lambda1_grid(x: &DesignMatrix, y: &[f64], count: usize, ratio: f64, opts: EnetOptions) -> Vec<f64> {
    let top = lambda_max(x, y, opts);
    if top <= 0.0 || count == 0 {
        return vec![0.0];
    }
    if count == 1 {
        return vec![top];
    }
    let step = ratio.ln() / (count - 1) as f64;
    (0..count).map(|i| top * (step * i as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lambda2Grid {
    Absolute(Vec<f64>),
    /// `l2 = r * l1` for each ratio `r`.
    RelativeToLambda1(Vec<f64>),
}

impl Lambda2Grid {
    fn len(&self) -> usize {
        match self {
            Lambda2Grid::Absolute(v) | Lambda2Grid::RelativeToLambda1(v) => v.len(),
        }
    }

    fn value(&self, idx: usize, l1: f64) -> f64 {
        match self {
            Lambda2Grid::Absolute(v) => v[idx],
            Lambda2Grid::RelativeToLambda1(v) => v[idx] * l1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Lambda2Grid,
}

impl PenaltyGrid {
    pub fn lasso(lambda1: Vec<f64>) -> Self {
        Self { lambda1, lambda2: Lambda2Grid::Absolute(vec![0.0]) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean held-out squared error, `None` if some fold failed to converge.
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda1: f64,
    pub lambda2: f64,
    pub fit: EnetFit,
    pub points: Vec<CvPoint>,
}

/// Seeded shuffle followed by round-robin fold assignment.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// K-fold cross-validated elastic net over a penalty grid. The winner is
/// refit on all rows; ties prefer the larger `l1`, then the larger `l2`.
pub fn kfold_cv_enet(
    x: &DesignMatrix,
    y: &[f64],
    grid: &PenaltyGrid,
    folds: usize,
    seed: u64,
    opts: EnetOptions,
) -> Result<CvResult> {
    check_len(x, y)?;
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(Error::config(format!("need 2 <= folds <= n, got folds={folds}, n={n}")));
    }
    if grid.lambda1.is_empty() || grid.lambda2.len() == 0 {
        return Err(Error::config("penalty grid is empty"));
    }
    // Path order: descending l1 so warm starts move from sparse to dense.
    let mut l1_order: Vec<usize> = (0..grid.lambda1.len()).collect();
    l1_order.sort_by(|&a, &b| grid.lambda1[b].total_cmp(&grid.lambda1[a]));

    let n_l2 = grid.lambda2.len();
    let n_l1 = grid.lambda1.len();
    let mut sse = vec![0.0; n_l1 * n_l2];
    let mut failed = vec![false; n_l1 * n_l2];

    let assignment = fold_assignment(n, folds, seed);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
        let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let problem = EnetProblem::new(&xt, &yt, opts);
        for l2_idx in 0..n_l2 {
            let mut b = vec![0.0; x.ncols()];
            let mut trace = Vec::new();
            for &l1_idx in &l1_order {
                let cell = l1_idx * n_l2 + l2_idx;
                let l1 = grid.lambda1[l1_idx];
                let l2 = grid.lambda2.value(l2_idx, l1);
                match problem.solve(l1, l2, &mut b, &mut trace) {
                    Ok((sweeps, kkt)) => {
                        let fit = problem.to_fit(&b, sweeps, kkt, Vec::new());
                        for &i in &held {
                            let e = y[i] - fit.predict_row(x.0.row(i).clone_owned().as_slice());
                            sse[cell] += e * e;
                        }
                    }
                    Err(err) => {
                        warn!("cv fold {f}: skipping l1={l1:.4e}, l2={l2:.4e}: {err}");
                        failed[cell] = true;
                        b.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }

    let mut points = Vec::with_capacity(n_l1 * n_l2);
    let mut best: Option<(usize, usize, f64)> = None;
    for l1_idx in 0..n_l1 {
        for l2_idx in 0..n_l2 {
            let cell = l1_idx * n_l2 + l2_idx;
            let l1 = grid.lambda1[l1_idx];
            let l2 = grid.lambda2.value(l2_idx, l1);
            let mse = (!failed[cell]).then(|| sse[cell] / n as f64);
            points.push(CvPoint { lambda1: l1, lambda2: l2, mse });
            let Some(m) = mse else { continue };
            let better = match best {
                None => true,
                Some((b1, b2, bm)) => {
                    let (bl1, bl2) = (grid.lambda1[b1], grid.lambda2.value(b2, grid.lambda1[b1]));
                    m < bm || (m == bm && (l1 > bl1 || (l1 == bl1 && l2 > bl2)))
                }
            };
            if better {
                best = Some((l1_idx, l2_idx, m));
            }
        }
    }
    let (l1_idx, l2_idx, _) = best.ok_or_else(|| Error::Fit("no penalty grid point converged on every fold".into()))?;

    // Refit on all rows, walking the path down to the winner for a warm start.
    let problem = EnetProblem::new(x, y, opts);
    let target_l1 = grid.lambda1[l1_idx];
    let mut b = vec![0.0; x.ncols()];
    let mut trace = Vec::new();
    for &idx in &l1_order {
        let l1 = grid.lambda1[idx];
        if l1 < target_l1 {
            break;
        }
        if idx != l1_idx && l1 == target_l1 {
            continue;
        }
        let l2 = grid.lambda2.value(l2_idx, l1);
        if idx == l1_idx {
            trace.clear();
            let (sweeps, kkt) = problem.solve(l1, l2, &mut b, &mut trace)?;
            return Ok(CvResult { lambda1: l1, lambda2: l2, fit: problem.to_fit(&b, sweeps, kkt, trace), points });
        }
        if problem.solve(l1, l2, &mut b, &mut trace).is_err() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    unreachable!("winning grid point lies on the path")
}
