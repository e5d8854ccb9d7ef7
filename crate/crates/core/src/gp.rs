//! Stationary Gaussian-process regression on a single region.
//!
//! The model uses a constant mean (`h(x) = 1`, so `q = 1`), the Gaussian
//! correlation `exp(-Σ b_j (x_j - x'_j)²)`, an optional nugget, and the weak
//! prior `p(σ², β) ∝ σ⁻²`. With β and σ² integrated out the predictive
//! distribution at a new input is a Student-t with `n - q` degrees of freedom.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::optim::{self, SimplexOptions};
use crate::rng::Rng;

/// Number of regression functions in the mean (constant basis).
pub const BASIS_DIM: usize = 1;

/// Smallest region size for which `σ̂²` has a positive divisor `n - q - 2`.
pub const MIN_POINTS: usize = BASIS_DIM + 3;

/// Added to the diagonal when the nugget is zero, for factorization only.
pub const NUMERICAL_JITTER: f64 = 1e-10;

/// Floor applied to `σ̂²` when a region's outputs are exactly fit.
pub const SIGMA_SQ_FLOOR: f64 = 1e-12;

/// Paired inputs in `[0,1]^d` and scalar outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        let dim = inputs.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidArgument("training set needs at least one input of positive dimension".into()));
        }
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let mut flat = Vec::with_capacity(inputs.len() * dim);
        for x in &inputs {
            check_dim(dim, x.len())?;
            flat.extend_from_slice(x);
        }
        Self::from_flat(dim, flat, outputs)
    }

    pub fn from_flat(dim: usize, inputs: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * outputs.len() || outputs.is_empty() {
            return Err(Error::InvalidArgument("inconsistent training set shape".into()));
        }
        if let Some(v) = inputs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("input coordinate {v} outside [0, 1]")));
        }
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite output".into()));
        }
        Ok(TrainingSet { dim, inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn output(&self, i: usize) -> f64 {
        self.outputs[i]
    }

    /// The rows listed in `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut outputs = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.point(i));
            outputs.push(self.outputs[i]);
        }
        TrainingSet {
            dim: self.dim,
            inputs,
            outputs,
        }
    }

    /// Appends rows; the new inputs must lie in the unit cube.
    pub fn extend(&mut self, points: &[Vec<f64>], outputs: &[f64]) -> Result<()> {
        if points.len() != outputs.len() {
            return Err(Error::InvalidArgument("points and outputs differ in length".into()));
        }
        for (x, y) in points.iter().zip(outputs) {
            check_dim(self.dim, x.len())?;
            if x.iter().any(|v| !(0.0..=1.0).contains(v)) || !y.is_finite() {
                return Err(Error::InvalidArgument("appended row outside the unit cube or non-finite".into()));
            }
            self.inputs.extend_from_slice(x);
            self.outputs.push(*y);
        }
        Ok(())
    }
}

/// Diagonal roughness matrix `B` and nugget `σ²_ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub roughness: Vec<f64>,
    pub nugget: f64,
}

impl GpHyperparams {
    pub fn new(roughness: Vec<f64>, nugget: f64) -> Result<Self> {
        if roughness.iter().any(|b| !(b.is_finite() && *b >= 0.0)) || nugget.is_nan() || nugget < 0.0 {
            return Err(Error::InvalidArgument("roughness and nugget must be nonnegative".into()));
        }
        Ok(GpHyperparams { roughness, nugget })
    }

    fn diagonal(&self) -> f64 {
        if self.nugget > 0.0 {
            1.0 + self.nugget
        } else {
            1.0 + NUMERICAL_JITTER
        }
    }
}

#[inline]
fn corr_unchecked(x: &[f64], x2: &[f64], roughness: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), r) in x.iter().zip(x2).zip(roughness) {
        let d = a - b;
        s += r * d * d;
    }
    (-s).exp()
}

/// Gaussian correlation `exp(-Σ_j b_j (x_j - x2_j)²)`.
pub fn corr_gaussian(x: &[f64], x2: &[f64], roughness: &[f64]) -> Result<f64> {
    check_dim(roughness.len(), x.len())?;
    check_dim(roughness.len(), x2.len())?;
    Ok(corr_unchecked(x, x2, roughness))
}

/// The `n × n` matrix `A_ij = c(x_i, x_j) + σ²_ε δ_ij`, row-major.
///
/// This is the exact matrix of the model; the factorization jitter used for
/// zero nuggets is not included.
pub fn build_cov(data: &TrainingSet, hyper: &GpHyperparams) -> Result<Vec<f64>> {
    check_dim(data.dim(), hyper.roughness.len())?;
    let mut a = correlation_matrix(data, &hyper.roughness);
    let n = data.len();
    for i in 0..n {
        a[i * n + i] = 1.0 + hyper.nugget;
    }
    Ok(a)
}

fn correlation_matrix(data: &TrainingSet, roughness: &[f64]) -> Vec<f64> {
    let n = data.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
        let xi = data.point(i);
        for j in 0..i {
            let c = corr_unchecked(xi, data.point(j), roughness);
            a[i * n + j] = c;
            a[j * n + i] = c;
        }
    }
    a
}

fn factor_cov(data: &TrainingSet, hyper: &GpHyperparams) -> Result<Cholesky> {
    let n = data.len();
    let mut a = correlation_matrix(data, &hyper.roughness);
    if hyper.nugget == 0.0 {
        if let Some(pair) = coincident_pair(&a, n) {
            return Err(Error::Conditioning { pair: Some(pair) });
        }
    }
    let diag = hyper.diagonal();
    for i in 0..n {
        a[i * n + i] = diag;
    }
    Cholesky::factor(a, n).ok_or_else(|| Error::Conditioning {
        pair: most_correlated_pair(data, &hyper.roughness),
    })
}

/// First pair (in row order) whose correlation is 1 to within rounding.
fn coincident_pair(a: &[f64], n: usize) -> Option<(usize, usize)> {
    for i in 0..n {
        for j in 0..i {
            if a[i * n + j] >= 1.0 - 1e-12 {
                return Some((j, i));
            }
        }
    }
    None
}

fn most_correlated_pair(data: &TrainingSet, roughness: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..data.len() {
        for j in 0..i {
            let c = corr_unchecked(data.point(i), data.point(j), roughness);
            if best.is_none_or(|(_, b)| c > b) {
                best = Some(((j, i), c));
            }
        }
    }
    best.map(|(p, _)| p)
}

/// Generalized-least-squares quantities shared by the likelihood and the fit.
struct Profile {
    chol: Cholesky,
    /// `Hᵀ A⁻¹ H` (a scalar for the constant basis).
    hah: f64,
    beta_hat: f64,
    /// `(y - Hβ̂)ᵀ A⁻¹ (y - Hβ̂)`, i.e. `(n - q - 2) σ̂²`.
    quad: f64,
}

fn profile(data: &TrainingSet, hyper: &GpHyperparams) -> Result<Profile> {
    let chol = factor_cov(data, hyper)?;
    let n = data.len();
    let mut z = vec![1.0; n];
    chol.solve_lower_in_place(&mut z);
    let mut wy = data.outputs().to_vec();
    chol.solve_lower_in_place(&mut wy);
    let hah = dot(&z, &z);
    let beta_hat = dot(&z, &wy) / hah;
    // L⁻¹(y - β̂ 1) = L⁻¹y - β̂ L⁻¹1
    let quad: f64 = wy
        .iter()
        .zip(&z)
        .map(|(w, zz)| {
            let e = w - beta_hat * zz;
            e * e
        })
        .sum();
    Ok(Profile {
        chol,
        hah,
        beta_hat,
        quad,
    })
}

fn require_points(n: usize) -> Result<()> {
    if n < MIN_POINTS {
        Err(Error::InsufficientData { n, required: MIN_POINTS })
    } else {
        Ok(())
    }
}

fn sigma_hat_sq(quad: f64, n: usize) -> f64 {
    quad / (n - BASIS_DIM - 2) as f64
}

/// Log of `|A|^{-1/2} |HᵀA⁻¹H|^{-1/2} (σ̂²)^{(q-n)/2}`.
///
/// Reports [`Error::DegenerateFit`] when the outputs are reproduced exactly by
/// the mean (σ̂² = 0), where the likelihood is unbounded.
pub fn log_marginal_likelihood(data: &TrainingSet, hyper: &GpHyperparams) -> Result<f64> {
    check_dim(data.dim(), hyper.roughness.len())?;
    require_points(data.len())?;
    let p = profile(data, hyper)?;
    let s2 = sigma_hat_sq(p.quad, data.len());
    if s2.is_nan() || s2 <= SIGMA_SQ_FLOOR {
        return Err(Error::DegenerateFit);
    }
    Ok(log_lik_from(&p, data.len(), s2))
}

fn log_lik_from(p: &Profile, n: usize, s2: f64) -> f64 {
    -0.5 * p.chol.log_det() - 0.5 * p.hah.ln() + 0.5 * (BASIS_DIM as f64 - n as f64) * s2.ln()
}

/// Likelihood with `σ̂²` floored instead of rejected; used inside the sampler
/// so that exactly-fit regions still get a comparable score.
pub(crate) fn log_marginal_likelihood_floored(data: &TrainingSet, hyper: &GpHyperparams) -> Result<f64> {
    require_points(data.len())?;
    let p = profile(data, hyper)?;
    let s2 = sigma_hat_sq(p.quad, data.len()).max(SIGMA_SQ_FLOOR);
    Ok(log_lik_from(&p, data.len(), s2))
}

/// Log of one region's factor in the integrated posterior:
/// `|HᵀA⁻¹H|^{-1/2} |A|^{-1/2} Γ((n-q)/2) [2 / ((n-q-2) σ̂²)]^{(n-q)/2}`.
///
/// `σ̂²` is floored at [`SIGMA_SQ_FLOOR`].
pub fn log_integrated_region(data: &TrainingSet, hyper: &GpHyperparams) -> Result<f64> {
    check_dim(data.dim(), hyper.roughness.len())?;
    require_points(data.len())?;
    let p = profile(data, hyper)?;
    let n = data.len();
    let s2 = sigma_hat_sq(p.quad, n).max(SIGMA_SQ_FLOOR);
    let m = (n - BASIS_DIM) as f64;
    let scaled = (n - BASIS_DIM - 2) as f64 * s2;
    Ok(-0.5 * p.hah.ln() - 0.5 * p.chol.log_det() + libm::lgamma(0.5 * m) + 0.5 * m * (2.0 / scaled).ln())
}

/// Settings for the multi-start likelihood maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of local simplex searches, started from the best screened points.
    pub restarts: usize,
    /// Size of the Latin-hypercube screening set in log-parameter space.
    pub screening: usize,
    pub roughness_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            screening: 20,
            roughness_bounds: (1e-3, 1e3),
            nugget_bounds: (1e-8, 1.0),
            max_evals: 400,
        }
    }
}

/// Result of [`fit_hyperparams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperFit {
    pub hyper: GpHyperparams,
    pub log_likelihood: f64,
    /// False when the best local search hit its evaluation budget.
    pub converged: bool,
}

fn unpack(theta: &[f64], dim: usize, deterministic: bool) -> GpHyperparams {
    GpHyperparams {
        roughness: theta[..dim].iter().map(|t| t.exp()).collect(),
        nugget: if deterministic { 0.0 } else { theta[dim].exp() },
    }
}

/// Maximizes the marginal likelihood over log-roughness (and log-nugget unless
/// `deterministic`, in which case the nugget is pinned to exactly zero).
pub fn fit_hyperparams(
    data: &TrainingSet,
    deterministic: bool,
    opts: &FitOptions,
    rng: &mut Rng,
) -> Result<HyperFit> {
    require_points(data.len())?;
    let (lo, hi) = data
        .outputs()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
        return Err(Error::DegenerateFit);
    }
    fit_inner(data, deterministic, opts, rng, &[])
}

/// Like [`fit_hyperparams`] but scores exactly-fit data with a floored `σ̂²`
/// and accepts extra warm-start points.
pub(crate) fn fit_hyperparams_floored(
    data: &TrainingSet,
    deterministic: bool,
    opts: &FitOptions,
    rng: &mut Rng,
    warm: &[GpHyperparams],
) -> Result<HyperFit> {
    require_points(data.len())?;
    fit_inner(data, deterministic, opts, rng, warm)
}

fn fit_inner(
    data: &TrainingSet,
    deterministic: bool,
    opts: &FitOptions,
    rng: &mut Rng,
    warm: &[GpHyperparams],
) -> Result<HyperFit> {
    let d = data.dim();
    let nparams = if deterministic { d } else { d + 1 };
    let mut lower = vec![opts.roughness_bounds.0.ln(); d];
    let mut upper = vec![opts.roughness_bounds.1.ln(); d];
    if !deterministic {
        lower.push(opts.nugget_bounds.0.ln());
        upper.push(opts.nugget_bounds.1.ln());
    }
    let objective = |theta: &[f64]| -> f64 {
        log_marginal_likelihood_floored(data, &unpack(theta, d, deterministic)).unwrap_or(f64::NEG_INFINITY)
    };

    // Latin-hypercube screening set in log space, plus any warm starts.
    let m = opts.screening.max(opts.restarts).max(1);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; nparams]; m];
    for j in 0..nparams {
        let mut strata: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (i, s) in strata.into_iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / m as f64;
            starts[i][j] = lower[j] + u * (upper[j] - lower[j]);
        }
    }
    for h in warm {
        let mut t: Vec<f64> = h.roughness.iter().map(|b| b.max(1e-300).ln()).collect();
        if !deterministic {
            t.push(h.nugget.max(1e-300).ln());
        }
        if t.len() == nparams {
            starts.push(t);
        }
    }
    let mut screened: Vec<(Vec<f64>, f64)> = starts
        .into_iter()
        .map(|t| {
            let v = objective(&t);
            (t, v)
        })
        .collect();
    // stable sort: equal values keep generation order
    screened.sort_by(|a, b| b.1.total_cmp(&a.1));

    let simplex = SimplexOptions {
        max_evals: opts.max_evals,
        ..SimplexOptions::default()
    };
    let mut best: Option<optim::SimplexResult> = None;
    for (start, _) in screened.iter().take(opts.restarts.max(1)) {
        let r = optim::maximize(objective, start, &lower, &upper, &simplex);
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one restart");
    if !best.value.is_finite() {
        return Err(Error::Conditioning {
            pair: most_correlated_pair(data, &unpack(&best.x, d, deterministic).roughness),
        });
    }
    Ok(HyperFit {
        hyper: unpack(&best.x, d, deterministic),
        log_likelihood: best.value,
        converged: best.converged,
    })
}

/// A fitted single-region GP: hyperparameters plus everything needed to
/// predict without refactorizing.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub hyper: GpHyperparams,
    pub beta_hat: f64,
    pub sigma_hat_sq: f64,
    pub chol: Cholesky,
    /// `A⁻¹ (y - Hβ̂)`.
    alpha: Vec<f64>,
    /// `L⁻¹ 1`.
    l_inv_h: Vec<f64>,
    hah: f64,
    n: usize,
}

/// Student-t predictive distribution at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveT {
    pub mean: f64,
    pub scale: f64,
    pub dof: usize,
}

impl GpFit {
    /// Builds the fit for given hyperparameters. `σ̂²` is floored at
    /// [`SIGMA_SQ_FLOOR`] so exactly-fit regions remain usable.
    pub fn new(data: &TrainingSet, hyper: GpHyperparams) -> Result<Self> {
        check_dim(data.dim(), hyper.roughness.len())?;
        require_points(data.len())?;
        let p = profile(data, &hyper)?;
        let n = data.len();
        let resid: Vec<f64> = data.outputs().iter().map(|y| y - p.beta_hat).collect();
        let mut alpha = p.chol.solve(&resid);
        // One step of iterative refinement keeps the interpolation residual
        // at round-off level even when A is badly conditioned.
        let mut a = correlation_matrix(data, &hyper.roughness);
        let diag = hyper.diagonal();
        for i in 0..n {
            a[i * n + i] = diag;
        }
        let correction: Vec<f64> = (0..n)
            .map(|i| resid[i] - dot(&a[i * n..(i + 1) * n], &alpha))
            .collect();
        let delta = p.chol.solve(&correction);
        for (x, dx) in alpha.iter_mut().zip(&delta) {
            *x += dx;
        }
        let mut l_inv_h = vec![1.0; n];
        p.chol.solve_lower_in_place(&mut l_inv_h);
        Ok(GpFit {
            sigma_hat_sq: sigma_hat_sq(p.quad, n).max(SIGMA_SQ_FLOOR),
            beta_hat: p.beta_hat,
            hah: p.hah,
            chol: p.chol,
            alpha,
            l_inv_h,
            n,
            hyper,
        })
    }

    pub fn basis_dim(&self) -> usize {
        BASIS_DIM
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Correlations between `x` and the training inputs, and the index of a
    /// training input equal to `x`, if any.
    fn cross_corr(&self, data: &TrainingSet, x: &[f64]) -> (Vec<f64>, Option<usize>) {
        let hit = data.points().position(|xi| xi == x);
        let v = data.points().map(|xi| corr_unchecked(x, xi, &self.hyper.roughness)).collect();
        (v, hit)
    }

    fn check(&self, data: &TrainingSet, x: &[f64]) -> Result<()> {
        check_dim(data.dim(), x.len())?;
        if data.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "fit was built on {} points, data has {}",
                self.n,
                data.len()
            )));
        }
        Ok(())
    }

    /// Posterior mean `m*(x)` only.
    pub fn predict_mean(&self, data: &TrainingSet, x: &[f64]) -> Result<f64> {
        self.check(data, x)?;
        Ok(self.mean_unchecked(data, x))
    }

    pub(crate) fn mean_unchecked(&self, data: &TrainingSet, x: &[f64]) -> f64 {
        let mut m = self.beta_hat;
        for (i, xi) in data.points().enumerate() {
            if xi == x {
                return self.at_training_point(data, i).0;
            }
            m += corr_unchecked(x, xi, &self.hyper.roughness) * self.alpha[i];
        }
        m
    }

    /// Mean and `c*` at training input `i`. The cross-correlation vector is
    /// column `i` of the factorized matrix, so `A⁻¹v = e_i` and the identities
    /// are evaluated exactly instead of through a cancelling solve.
    fn at_training_point(&self, data: &TrainingSet, i: usize) -> (f64, f64) {
        if self.hyper.nugget > 0.0 {
            let (v, _) = self.cross_corr(data, data.point(i));
            let mut w = v.clone();
            self.chol.solve_lower_in_place(&mut w);
            let h = 1.0 - dot(&w, &self.l_inv_h);
            (self.beta_hat + dot(&v, &self.alpha), 1.0 - dot(&w, &w) + h * h / self.hah)
        } else {
            (data.output(i), 0.0)
        }
    }

    /// Full t-predictive at `x`.
    pub fn predict(&self, data: &TrainingSet, x: &[f64]) -> Result<PredictiveT> {
        self.check(data, x)?;
        let (v, hit) = self.cross_corr(data, x);
        let (mean, mut c_star) = match hit {
            Some(i) => self.at_training_point(data, i),
            None => {
                let mean = self.beta_hat + dot(&v, &self.alpha);
                let mut w = v;
                self.chol.solve_lower_in_place(&mut w);
                let h = 1.0 - dot(&w, &self.l_inv_h);
                (mean, 1.0 - dot(&w, &w) + h * h / self.hah)
            }
        };
        if c_star < 0.0 {
            debug_assert!(c_star > -1e-8, "predictive variance {c_star} is badly negative");
            c_star = 0.0;
        }
        let m = (self.n - BASIS_DIM) as f64;
        let scale = (self.sigma_hat_sq * (m - 2.0) / m * c_star).sqrt();
        Ok(PredictiveT {
            mean,
            scale,
            dof: self.n - BASIS_DIM,
        })
    }
}

/// Posterior t-predictive at `x` for `fit` built from `data`.
pub fn gp_predict(fit: &GpFit, data: &TrainingSet, x: &[f64]) -> Result<PredictiveT> {
    fit.predict(data, x)
}
