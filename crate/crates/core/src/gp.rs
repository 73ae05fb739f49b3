//! Gaussian-process regression with an ARD Matérn-5/2 kernel, and the
//! expected-improvement acquisition.
//!
//! Targets are standardized to zero mean and unit variance before fitting;
//! [`GpModel::predict`] reports in the caller's units. Kernel hyperparameters
//! are fitted by maximizing the exact log marginal likelihood with multi-start
//! projected gradient ascent in log space.

use rand::Rng;
use statrs::function::erf::erfc;
use thiserror::Error;

/// Smallest allowed noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-8;
/// Diagonal jitter tried in order when the Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];
/// Random restarts for hyperparameter fitting.
pub const RESTARTS: usize = 16;

const LOG_LO: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_HI: f64 = 6.907_755_278_982_137; // ln 1e3
const LOG_NOISE_LO: f64 = -18.420_680_743_952_367; // ln 1e-8
const MAX_ASCENT_STEPS: usize = 80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("kernel matrix is not positive definite even with jitter 1e-4")]
    SingularKernel,
    #[error("invalid training data: {0}")]
    InvalidData(&'static str),
}

/// Kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Self {
        Self { signal_variance, lengthscales, noise_variance: noise_variance.max(NOISE_FLOOR) }
    }

    /// `[ln σ_f², ln ℓ_1, …, ln ℓ_d, ln σ_n²]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.lengthscales.len() + 2);
        out.push(self.signal_variance.ln());
        out.extend(self.lengthscales.iter().map(|l| l.ln()));
        out.push(self.noise_variance.ln());
        out
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[d + 1].exp().max(NOISE_FLOOR),
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Matérn-5/2 covariance between two points (no noise term).
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.scaled_distance(a, b);
        let s5r = 5f64.sqrt() * r;
        self.signal_variance * (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
    }

    fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn log_bounds(i: usize, len: usize) -> (f64, f64) {
    if i == len - 1 {
        (LOG_NOISE_LO, LOG_HI)
    } else {
        (LOG_LO, LOG_HI)
    }
}

/// Lower-triangular Cholesky factor, row-major `n × n`.
#[derive(Debug, Clone)]
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn factor(matrix: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = matrix[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Solves `L v = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut v = b.to_vec();
        for i in 0..n {
            let mut sum = v[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * v[k];
            }
            v[i] = sum / self.l[i * n + i];
        }
        v
    }

    /// Solves `Lᵀ x = b`.
    fn backward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }
}

fn kernel_matrix(x: &[Vec<f64>], params: &KernelParams) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = params.kernel(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Factors `K + (σ_n² + jitter) I`, escalating jitter along [`JITTER_LADDER`].
fn factor_with_jitter(kf: &[f64], n: usize, noise: f64) -> Result<(Cholesky, f64), GpError> {
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut m = kf.to_vec();
        for i in 0..n {
            m[i * n + i] += noise + jitter;
        }
        if let Some(chol) = Cholesky::factor(&m, n) {
            return Ok((chol, jitter));
        }
    }
    Err(GpError::SingularKernel)
}

/// Log marginal likelihood of `y` (already standardized) and its gradient with
/// respect to the log hyperparameters `[ln σ_f², ln ℓ…, ln σ_n²]`.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], log_theta: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
    let n = x.len();
    let params = KernelParams::from_log(log_theta);
    let d = params.dim();
    let kf = kernel_matrix(x, &params);
    let (chol, _) = factor_with_jitter(&kf, n, params.noise_variance)?;
    let alpha = chol.solve(y);
    let value = -0.5 * y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
        - 0.5 * chol.log_det()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = α αᵀ − K⁻¹
    let mut w = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = chol.solve(&e);
        for i in 0..n {
            w[i * n + j] = alpha[i] * alpha[j] - col[i];
        }
    }

    let mut grad = vec![0.0; d + 2];
    let s5 = 5f64.sqrt();
    for i in 0..n {
        for j in 0..n {
            let wij = w[i * n + j];
            grad[0] += wij * kf[i * n + j];
            if i == j {
                continue;
            }
            let r = params.scaled_distance(&x[i], &x[j]);
            let common = params.signal_variance * (5.0 / 3.0) * (1.0 + s5 * r) * (-s5 * r).exp();
            for (k, l) in params.lengthscales.iter().enumerate() {
                let delta = (x[i][k] - x[j][k]) / l;
                grad[1 + k] += wij * common * delta * delta;
            }
        }
        grad[d + 1] += w[i * n + i] * params.noise_variance;
    }
    grad.iter_mut().for_each(|g| *g *= 0.5);
    Ok((value, grad))
}

/// Log marginal likelihood before and after local ascent, for one start.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartTrace {
    pub initial: Vec<f64>,
    pub initial_lml: f64,
    pub final_lml: f64,
}

/// Projected gradient ascent with Barzilai–Borwein steps and Armijo backtracking.
fn ascend(x: &[Vec<f64>], y: &[f64], start: Vec<f64>) -> Option<(Vec<f64>, f64, f64)> {
    let len = start.len();
    let project = |theta: &mut Vec<f64>| {
        for (i, t) in theta.iter_mut().enumerate() {
            let (lo, hi) = log_bounds(i, len);
            *t = t.clamp(lo, hi);
        }
    };
    let mut theta = start;
    project(&mut theta);
    let (mut value, mut grad) = log_marginal_likelihood(x, y, &theta).ok()?;
    let initial = value;
    let mut step = 0.1;
    for _ in 0..MAX_ASCENT_STEPS {
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..30 {
            let mut candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + trial_step * g).collect();
            project(&mut candidate);
            let moved: f64 = candidate.iter().zip(&theta).map(|(c, t)| (c - t) * (c - t)).sum();
            if moved < 1e-20 {
                break;
            }
            let expected: f64 = candidate.iter().zip(&theta).zip(&grad).map(|((c, t), g)| (c - t) * g).sum();
            if let Ok((v, g)) = log_marginal_likelihood(x, y, &candidate) {
                if v >= value + 1e-4 * expected {
                    accepted = Some((candidate, v, g));
                    break;
                }
            }
            trial_step *= 0.5;
        }
        let Some((next, v, g)) = accepted else { break };
        // Barzilai–Borwein step for the next iteration
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { (ss / -sy).clamp(1e-4, 10.0) } else { (trial_step * 2.0).min(10.0) };
        let improvement = v - value;
        theta = next;
        value = v;
        grad = g;
        if improvement.abs() < 1e-9 {
            break;
        }
    }
    Some((theta, initial, value))
}

/// A fitted Gaussian process.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    params: KernelParams,
    chol: Cholesky,
    z: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
    restarts: Vec<RestartTrace>,
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, scale, y.iter().map(|v| (v - mean) / scale).collect())
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize, GpError> {
    if x.is_empty() {
        return Err(GpError::InvalidData("at least one observation is required"));
    }
    if x.len() != y.len() {
        return Err(GpError::InvalidData("inputs and targets differ in length"));
    }
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(GpError::InvalidData("inputs differ in width"));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpError::InvalidData("non-finite value"));
    }
    Ok(d)
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `(x, y)`.
    pub fn with_params(x: Vec<Vec<f64>>, y: &[f64], params: KernelParams) -> Result<Self, GpError> {
        let d = check_data(&x, y)?;
        if params.dim() != d {
            return Err(GpError::InvalidData("lengthscale count does not match input width"));
        }
        let (y_mean, y_scale, z) = standardize(y);
        let kf = kernel_matrix(&x, &params);
        let (chol, jitter) = factor_with_jitter(&kf, x.len(), params.noise_variance)?;
        let alpha = chol.solve(&z);
        Ok(Self { x, y_mean, y_scale, params, chol, z, alpha, jitter, restarts: Vec::new() })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood from a
    /// default start plus [`RESTARTS`] random starts, keeping the best.
    pub fn fit<R: Rng + ?Sized>(x: Vec<Vec<f64>>, y: &[f64], rng: &mut R) -> Result<Self, GpError> {
        let d = check_data(&x, y)?;
        let (_, _, z) = standardize(y);
        let len = d + 2;
        let mut starts = Vec::with_capacity(RESTARTS + 1);
        starts.push(KernelParams::new(1.0, vec![0.5; d], 1e-4).to_log());
        for _ in 0..RESTARTS {
            starts.push((0..len).map(|_| rng.gen_range(LOG_LO..=LOG_HI)).collect::<Vec<f64>>());
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut traces = Vec::new();
        for start in starts {
            let Some((theta, initial_lml, final_lml)) = ascend(&x, &z, start.clone()) else { continue };
            traces.push(RestartTrace { initial: start, initial_lml, final_lml });
            if best.as_ref().is_none_or(|(_, b)| final_lml > *b) {
                best = Some((theta, final_lml));
            }
        }
        let (theta, _) = best.ok_or(GpError::SingularKernel)?;
        let mut model = Self::with_params(x, y, KernelParams::from_log(&theta))?;
        model.restarts = traces;
        Ok(model)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Extra diagonal jitter that was needed to factor the kernel matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn restarts(&self) -> &[RestartTrace] {
        &self.restarts
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Log marginal likelihood of the standardized targets under the fitted θ.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let fit: f64 = self.z.iter().zip(&self.alpha).map(|(z, a)| z * a).sum();
        -0.5 * fit - 0.5 * self.chol.log_det() - 0.5 * self.x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and latent variance in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self.x.iter().map(|xi| self.params.kernel(xi, x)).collect();
        let mean = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = self.chol.forward(&k_star);
        let var = self.params.signal_variance - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// Posterior mean and latent variance in the units of the training targets.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(x);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    /// Expected improvement below `best_y` (minimization) at `x`.
    pub fn expected_improvement(&self, x: &[f64], best_y: f64) -> f64 {
        let (mean, var) = self.predict(x);
        expected_improvement(mean, var.sqrt(), best_y)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form EI for minimization under `N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, best_y: f64) -> f64 {
    let gain = best_y - mean;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}
