//! Penalty-based linear reconstructions used as comparison baselines.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::geometry::Mesh;
use crate::sensitivity::SensitivityMatrix;

pub const DEFAULT_TV_EPSILON: f64 = 1e-4;
pub const DEFAULT_TV_MAX_ITERS: usize = 50;
pub const DEFAULT_TV_CONV_TOL: f64 = 1e-4;
/// Noise level assumed by the discrepancy principle, relative to the data RMS.
pub const DEFAULT_NOISE_LEVEL: f64 = 0.05;
/// Eigenvalues of `SSᵀ` below this fraction of the largest span the data null space.
const RANGE_CUTOFF: f64 = 1e-10;
const BISECTION_STEPS: usize = 80;
const CG_MAX_ITERS: usize = 150;
const CG_TOL: f64 = 1e-6;
/// IRLS iteration cap while bracketing the TV discrepancy λ.
const TV_SEARCH_ITERS: usize = 10;
/// Default bisection steps for the TV discrepancy search.
pub const DEFAULT_TV_SEARCH_STEPS: usize = 8;

/// Element-adjacency difference operator: one row `γ_a − γ_b` per shared edge.
#[derive(Clone, Debug)]
pub struct DiscreteGradient {
    pairs: Vec<[usize; 2]>,
    cols: usize,
}

pub fn discrete_gradient(mesh: &Mesh) -> DiscreteGradient {
    DiscreteGradient {
        pairs: mesh.interior_edges().to_vec(),
        cols: mesh.element_count(),
    }
}

impl DiscreteGradient {
    pub fn rows(&self) -> usize {
        self.pairs.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pairs(&self) -> &[[usize; 2]] {
        &self.pairs
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("element vector", self.cols, x.len())?;
        Ok(self.pairs.iter().map(|&[a, b]| x[a] - x[b]).collect())
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("edge vector", self.pairs.len(), y.len())?;
        let mut out = vec![0.0; self.cols];
        for (&[a, b], &v) in self.pairs.iter().zip(y) {
            out[a] += v;
            out[b] -= v;
        }
        Ok(out)
    }

    /// `Σ |γ_a − γ_b|` over adjacent pairs.
    pub fn total_variation(&self, x: &[f64]) -> Result<f64> {
        Ok(self.apply(x)?.iter().map(|v| v.abs()).sum())
    }
}

/// One-shot Tikhonov solve; build a [`LinearModel`] to reuse the factorization.
pub fn tikhonov(s: &SensitivityMatrix, v: &[f64], cfg: &TikhonovConfig) -> Result<Vec<f64>> {
    LinearModel::new(s).tikhonov(v, cfg)
}

/// One-shot total-variation solve started from zero.
pub fn total_variation(s: &SensitivityMatrix, mesh: &Mesh, v: &[f64], cfg: &TvConfig) -> Result<TvSolution> {
    LinearModel::new(s).total_variation(&discrete_gradient(mesh), v, cfg, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TikhonovConfig {
    pub lambda: f64,
}

impl TikhonovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(invalid("tikhonov lambda", format!("must be positive, got {}", self.lambda)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
}

impl TvConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            epsilon: DEFAULT_TV_EPSILON,
            max_iters: DEFAULT_TV_MAX_ITERS,
            conv_tol: DEFAULT_TV_CONV_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.lambda) || !ok(self.epsilon) || !ok(self.conv_tol) || self.max_iters == 0 {
            return Err(invalid("tv config", format!("all parameters must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of a discrepancy-principle search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaChoice {
    pub lambda: f64,
    pub target: f64,
    pub residual: f64,
    /// The target lay outside the searchable residual range; `lambda` is the nearest end.
    pub clamped: bool,
}

/// Dense sensitivity matrix with its singular value decomposition `S = U Σ Vᵀ`.
///
/// Eigenvalues of `SSᵀ` are `ν = σ²`. Solving through the SVD rather than an
/// eigendecomposition of `SSᵀ` keeps the small singular values accurate to roundoff
/// in `σ`, not in `σ²`.
///
/// The discrepancy residual is measured inside the range of `S`: the component of the
/// data orthogonal to it cannot be fitted by any λ.
#[derive(Clone, Debug)]
pub struct LinearModel {
    rows: usize,
    cols: usize,
    s: Vec<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
    nu: Vec<f64>,
    range_rank: usize,
}

impl LinearModel {
    pub fn new(s: &SensitivityMatrix) -> Self {
        let (rows, cols) = (s.rows(), s.cols());
        let dense = s.to_dmatrix();
        let svd = dense.svd(true, true);
        let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
        let nu: Vec<f64> = sigma.iter().map(|v| v * v).collect();
        let top = nu.iter().copied().fold(0.0, f64::max);
        let range_rank = nu.iter().filter(|&&v| v > RANGE_CUTOFF * top).count();
        Self {
            rows,
            cols,
            s: s.data().to_vec(),
            u: svd.u.expect("requested"),
            sigma,
            v_t: svd.v_t.expect("requested"),
            nu,
            range_rank,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn range_rank(&self) -> usize {
        self.range_rank
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.nu.iter().copied().fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.s
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &w) in self.s.chunks_exact(self.cols).zip(y) {
            if w != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, a)| *o += w * a);
            }
        }
        out
    }

    fn coefficients(&self, v: &[f64]) -> DVector<f64> {
        self.u.tr_mul(&DVector::from_column_slice(v))
    }

    /// Solves `(SᵀS + λI)γ = SᵀV̇` as `γ = V diag(σ/(σ² + λ)) UᵀV̇`.
    pub fn tikhonov(&self, v: &[f64], cfg: &TikhonovConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        check_len("frame", self.rows, v.len())?;
        let mut c = self.coefficients(v);
        for (ci, &sigma) in c.iter_mut().zip(&self.sigma) {
            *ci *= sigma / (sigma * sigma + cfg.lambda);
        }
        Ok(self.v_t.tr_mul(&c).iter().copied().collect())
    }

    /// `‖(SᵀS + λI)γ − SᵀV̇‖ / ‖SᵀV̇‖`, evaluated in the primal form.
    pub fn normal_equation_residual(&self, gamma: &[f64], v: &[f64], lambda: f64) -> Result<f64> {
        check_len("element vector", self.cols, gamma.len())?;
        check_len("frame", self.rows, v.len())?;
        let rhs = self.apply_transpose(v);
        let lhs = self.apply_transpose(&self.apply(gamma));
        let num: f64 = lhs
            .iter()
            .zip(gamma)
            .zip(&rhs)
            .map(|((a, g), b)| (a + lambda * g - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(if den > 0.0 { num / den } else { num })
    }

    /// Projection of `r` onto the range of `S`, as a norm.
    pub fn range_norm(&self, r: &[f64]) -> Result<f64> {
        check_len("frame", self.rows, r.len())?;
        let c = self.coefficients(r);
        Ok(self.in_range(&c).map(|(ci, _)| ci * ci).sum::<f64>().sqrt())
    }

    fn in_range<'a>(&'a self, c: &'a DVector<f64>) -> impl Iterator<Item = (f64, f64)> + 'a {
        let cut = RANGE_CUTOFF * self.largest_eigenvalue();
        c.iter().zip(&self.nu).filter(move |(_, &nu)| nu > cut).map(|(&ci, &nu)| (ci, nu))
    }

    /// In-range Tikhonov residual `‖P(V̇ − Sγ_λ)‖`.
    pub fn tikhonov_residual(&self, v: &[f64], lambda: f64) -> Result<f64> {
        check_len("frame", self.rows, v.len())?;
        let c = self.coefficients(v);
        Ok(self
            .in_range(&c)
            .map(|(ci, nu)| (lambda / (nu + lambda) * ci).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Expected in-range noise norm for white noise of std `noise_level × RMS(V̇)`.
    pub fn discrepancy_target(&self, v: &[f64], noise_level: f64) -> f64 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        noise_level * norm * (self.range_rank as f64 / self.rows as f64).sqrt()
    }

    fn lambda_bracket(&self) -> (f64, f64) {
        let top = self.largest_eigenvalue().max(f64::MIN_POSITIVE);
        (top * 1e-12, top * 1e6)
    }

    /// Tikhonov λ whose in-range residual matches the expected noise norm.
    pub fn tikhonov_discrepancy(&self, v: &[f64], noise_level: f64) -> Result<LambdaChoice> {
        if !(noise_level > 0.0) {
            return Err(invalid("noise level", format!("must be positive, got {noise_level}")));
        }
        let target = self.discrepancy_target(v, noise_level);
        bisect_lambda(self.lambda_bracket(), target, |l| self.tikhonov_residual(v, l))
    }

    /// Smoothed-TV reconstruction by lagged diffusivity, started from `start` or zero.
    pub fn total_variation(&self, d: &DiscreteGradient, v: &[f64], cfg: &TvConfig, start: Option<&[f64]>) -> Result<TvSolution> {
        cfg.validate()?;
        check_len("frame", self.rows, v.len())?;
        check_len("gradient columns", self.cols, d.cols())?;
        let mut gamma = match start {
            Some(s) => {
                check_len("start vector", self.cols, s.len())?;
                s.to_vec()
            }
            None => vec![0.0; self.cols],
        };
        let col_energy: Vec<f64> = (0..self.cols)
            .map(|m| self.s.chunks_exact(self.cols).map(|row| row[m] * row[m]).sum())
            .collect();
        let rhs: Vec<f64> = self.apply_transpose(v).iter().map(|x| 2.0 * x).collect();
        let mut history = vec![self.tv_objective(d, v, &gamma, cfg)?];
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..cfg.max_iters {
            iterations += 1;
            let weights: Vec<f64> = d.apply(&gamma)?.iter().map(|t| 1.0 / t.hypot(cfg.epsilon)).collect();
            let mut diag: Vec<f64> = col_energy.iter().map(|e| 2.0 * e).collect();
            for (&[a, b], w) in d.pairs().iter().zip(&weights) {
                diag[a] += cfg.lambda * w;
                diag[b] += cfg.lambda * w;
            }
            let op = |x: &[f64]| -> Vec<f64> {
                let mut y: Vec<f64> = self.apply_transpose(&self.apply(x)).iter().map(|t| 2.0 * t).collect();
                for (&[a, b], w) in d.pairs().iter().zip(&weights) {
                    let t = cfg.lambda * w * (x[a] - x[b]);
                    y[a] += t;
                    y[b] -= t;
                }
                y
            };
            let next = pcg(op, &rhs, &diag, &gamma);
            let f = self.tv_objective(d, v, &next, cfg)?;
            let last = *history.last().expect("history starts non-empty");
            if f > last {
                break;
            }
            let step = dist(&next, &gamma);
            let scale = norm(&next).max(f64::MIN_POSITIVE);
            gamma = next;
            history.push(f);
            if step <= cfg.conv_tol * scale || f == last {
                converged = true;
                break;
            }
        }
        if !converged {
            warn!("total variation stopped after {iterations} iterations without converging");
        }
        Ok(TvSolution {
            gamma,
            objective: history,
            iterations,
            converged,
        })
    }

    /// `‖V̇ − Sγ‖² + λ Σ √(|Dγ|² + ε²)`.
    pub fn tv_objective(&self, d: &DiscreteGradient, v: &[f64], gamma: &[f64], cfg: &TvConfig) -> Result<f64> {
        let fit: f64 = self.apply(gamma).iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        let pen: f64 = d.apply(gamma)?.iter().map(|t| t.hypot(cfg.epsilon)).sum();
        Ok(fit + cfg.lambda * pen)
    }

    /// TV λ whose in-range residual matches the expected noise norm.
    ///
    /// The search runs `steps` warm-started, iteration-capped solves; the returned
    /// solution is a full solve at the chosen λ.
    pub fn tv_discrepancy(&self, d: &DiscreteGradient, v: &[f64], noise_level: f64, base: &TvConfig, steps: usize) -> Result<(LambdaChoice, TvSolution)> {
        if !(noise_level > 0.0) {
            return Err(invalid("noise level", format!("must be positive, got {noise_level}")));
        }
        let target = self.discrepancy_target(v, noise_level);
        let top = self.largest_eigenvalue().max(f64::MIN_POSITIVE);
        let (mut lo, mut hi) = ((top * 1e-7).ln(), (top * 1e-1).ln());
        let search = TvConfig {
            max_iters: base.max_iters.min(TV_SEARCH_ITERS),
            ..*base
        };
        let mut warm: Option<Vec<f64>> = None;
        for _ in 0..steps {
            let mid = 0.5 * (lo + hi);
            let sol = self.total_variation(d, v, &TvConfig { lambda: mid.exp(), ..search }, warm.as_deref())?;
            if self.tv_residual(v, &sol.gamma)? > target {
                hi = mid;
            } else {
                lo = mid;
            }
            warm = Some(sol.gamma);
        }
        let cfg = TvConfig {
            lambda: (0.5 * (lo + hi)).exp(),
            ..*base
        };
        let sol = self.total_variation(d, v, &cfg, warm.as_deref())?;
        let residual = self.tv_residual(v, &sol.gamma)?;
        let choice = LambdaChoice {
            lambda: cfg.lambda,
            target,
            residual,
            clamped: false,
        };
        Ok((choice, sol))
    }

    fn tv_residual(&self, v: &[f64], gamma: &[f64]) -> Result<f64> {
        let r: Vec<f64> = v.iter().zip(self.apply(gamma)).map(|(a, b)| a - b).collect();
        self.range_norm(&r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvSolution {
    pub gamma: Vec<f64>,
    /// Objective at the start and after each accepted iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Bisection on `ln λ` for an increasing residual curve.
fn bisect_lambda(bracket: (f64, f64), target: f64, residual: impl Fn(f64) -> Result<f64>) -> Result<LambdaChoice> {
    let (lo_l, hi_l) = bracket;
    let r_lo = residual(lo_l)?;
    if target <= r_lo {
        return Ok(LambdaChoice {
            lambda: lo_l,
            target,
            residual: r_lo,
            clamped: true,
        });
    }
    let r_hi = residual(hi_l)?;
    if target >= r_hi {
        return Ok(LambdaChoice {
            lambda: hi_l,
            target,
            residual: r_hi,
            clamped: true,
        });
    }
    let (mut lo, mut hi) = (lo_l.ln(), hi_l.ln());
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if residual(mid.exp())? > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = (0.5 * (lo + hi)).exp();
    Ok(LambdaChoice {
        lambda,
        target,
        residual: residual(lambda)?,
        clamped: false,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate gradients from `x0`; each iterate lowers the quadratic.
fn pcg(op: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], diag: &[f64], x0: &[f64]) -> Vec<f64> {
    let mut x = x0.to_vec();
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let tol = CG_TOL * norm(b);
    if norm(&r) <= tol {
        return x;
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..CG_MAX_ITERS {
        let ap = op(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        if norm(&r) <= tol {
            break;
        }
        z = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    x
}
