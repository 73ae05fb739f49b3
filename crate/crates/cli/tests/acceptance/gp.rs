use hpo_core::gp::{self, GpModel, KernelParams};
use hpo_core::StudyRng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use crate::Verdict;

const PROBLEMS: usize = 200;
const POINTS: usize = 10;
const POSTERIOR_TOL: f64 = 1e-8;
const EI_TRIPLES: usize = 100;
const EI_TOL: f64 = 1e-4;
const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn matern52(p: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&p.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    let r = r2.sqrt();
    p.signal_variance * (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp()
}

fn standardized(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    y.iter().map(|v| (v - mean) / sd).collect()
}

/// Posterior by LU solves against the dense covariance, no Cholesky.
struct DirectSolve {
    x: Vec<Vec<f64>>,
    params: KernelParams,
    k: DMatrix<f64>,
    z: DVector<f64>,
}

impl DirectSolve {
    fn new(x: &[Vec<f64>], y: &[f64], params: &KernelParams, jitter: f64) -> Self {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            matern52(params, &x[i], &x[j]) + if i == j { params.noise_variance + jitter } else { 0.0 }
        });
        Self { x: x.to_vec(), params: params.clone(), k, z: DVector::from_vec(standardized(y)) }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.k.clone().lu().solve(b).expect("covariance is non-singular")
    }

    fn predict(&self, point: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(&self.params, xi, point)));
        (ks.dot(&self.solve(&self.z)), self.params.signal_variance - ks.dot(&self.solve(&ks)))
    }

    fn lml(&self) -> f64 {
        let n = self.x.len() as f64;
        let log_det = self.k.clone().lu().determinant().ln();
        -0.5 * self.z.dot(&self.solve(&self.z)) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

fn problem(rng: &mut StudyRng, d: usize) -> (Vec<Vec<f64>>, Vec<f64>, KernelParams) {
    let x: Vec<Vec<f64>> = (0..POINTS).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
    let y = x.iter().map(|p| p.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + rng.gen_range(-0.1..0.1)).collect();
    let params = KernelParams::new(
        rng.gen_range(0.5..2.0),
        (0..d).map(|_| rng.gen_range(0.1..1.0)).collect(),
        10f64.powf(rng.gen_range(-4.0..-1.0)),
    );
    (x, y, params)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-6)
}

/// Composite Simpson's rule for E[max(best - Y, 0)] with Y ~ N(mean, sd^2).
fn ei_by_quadrature(mean: f64, sd: f64, best: f64) -> f64 {
    let lo = mean - 12.0 * sd;
    if best <= lo {
        return 0.0;
    }
    let n = 20_000;
    let h = (best - lo) / n as f64;
    let f = |y: f64| (best - y) * gp::normal_pdf((y - mean) / sd) / sd;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(lo) + f(best) + inner) * h / 3.0
}

pub fn gp_correctness() -> Verdict {
    let mut rng = StudyRng::seed_from_u64(3);
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut worst_grad = 0.0f64;
    for case in 0..PROBLEMS {
        let d = 1 + case % 4;
        let (x, y, params) = problem(&mut rng, d);
        let model = GpModel::with_params(x.clone(), &y, params.clone()).map_err(|e| e.to_string())?;
        let oracle = DirectSolve::new(&x, &y, &params, model.jitter());
        for _ in 0..5 {
            let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.2..1.2)).collect();
            let (m, v) = model.predict_standardized(&point);
            let (om, ov) = oracle.predict(&point);
            // variance is a difference of terms of size sf^2, which sets its scale
            let var_err = (v - ov.max(0.0)).abs() / params.signal_variance;
            worst_mean = worst_mean.max(rel_err(m, om));
            worst_var = worst_var.max(var_err);
            ensure!(rel_err(m, om) < POSTERIOR_TOL, "problem {case}: mean {m} vs oracle {om}");
            ensure!(var_err < POSTERIOR_TOL, "problem {case}: variance {v} vs oracle {ov}");
        }
        let z = standardized(&y);
        let theta = params.to_log();
        let (lml, grad) = gp::log_marginal_likelihood(&x, &z, &theta).map_err(|e| e.to_string())?;
        ensure!(rel_err(lml, oracle.lml()) < POSTERIOR_TOL, "problem {case}: lml {lml} vs oracle {}", oracle.lml());
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            let numeric = (gp::log_marginal_likelihood(&x, &z, &up).map_err(|e| e.to_string())?.0
                - gp::log_marginal_likelihood(&x, &z, &down).map_err(|e| e.to_string())?.0)
                / (2.0 * FD_STEP);
            let err = (grad[i] - numeric).abs() / numeric.abs().max(1e-2);
            worst_grad = worst_grad.max(err);
            ensure!(err <= GRADIENT_TOL, "problem {case} coordinate {i}: gradient {} vs {numeric}", grad[i]);
        }
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        for _ in 0..20 {
            let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..1.5)).collect();
            let ei = model.expected_improvement(&point, best);
            ensure!(ei >= 0.0 && ei.is_finite(), "problem {case}: EI {ei} at {point:?}");
        }
    }

    let mut worst_ei = 0.0f64;
    for _ in 0..EI_TRIPLES {
        let (mean, sd, best) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.01..3.0), rng.gen_range(-3.0..3.0));
        let closed = gp::expected_improvement(mean, sd, best);
        let numeric = ei_by_quadrature(mean, sd, best);
        let err = (closed - numeric).abs() / closed.abs().max(1.0);
        worst_ei = worst_ei.max(err);
        ensure!(closed >= 0.0, "EI({mean}, {sd}, {best}) = {closed}");
        ensure!(err <= EI_TOL, "EI({mean}, {sd}, {best}): closed {closed} vs quadrature {numeric}");
    }
    for _ in 0..10_000 {
        let (mean, sd, best) = (rng.gen_range(-1e3..1e3), rng.gen_range(0.0..1e3), rng.gen_range(-1e3..1e3));
        let ei = gp::expected_improvement(mean, sd, best);
        ensure!(ei >= 0.0, "EI({mean}, {sd}, {best}) = {ei}");
    }
    Ok(format!(
        "max errors: mean {worst_mean:.1e}, variance {worst_var:.1e}, gradient {worst_grad:.1e}, EI {worst_ei:.1e}"
    ))
}
