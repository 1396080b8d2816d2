//! M-estimation engine for stacked estimating equations.
//!
//! A system is a vector-valued estimating function `U(O; theta)` evaluated
//! per record. Each record may carry a sampling weight `w` (inverse
//! probability weight) that multiplies its contribution, and a frequency
//! count `c` for records that stand for several identical participants.
//! The equations solved are `sum_i c_i w_i U(O_i; theta) = 0`.
//!
//! The empirical sandwich is assembled on the sum scale,
//! `cov = A^-1 B A^-T` with `A = sum_i c_i w_i dU_i/dtheta` and
//! `B = sum_i c_i (w_i U_i)(w_i U_i)^T`, which equals the usual
//! `A_n^-1 B_n A_n^-T / n` written with averages.

use nalgebra::{DMatrix, DVector};

use crate::error::{PsemError, Result};

/// Default convergence tolerance on the scaled residual.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Vector-valued per-record estimating function.
pub trait EstimatingFunction<R: ?Sized> {
    fn dim(&self) -> usize;

    /// Writes the contribution of `record` at `theta` into `out` (length `dim`).
    fn contribution(&self, record: &R, theta: &[f64], out: &mut [f64]);
}

/// Adapter turning a closure into an [`EstimatingFunction`].
pub struct FnEstimating<F> {
    dim: usize,
    f: F,
}

impl<F> FnEstimating<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<R: ?Sized, F> EstimatingFunction<R> for FnEstimating<F>
where
    F: Fn(&R, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn contribution(&self, record: &R, theta: &[f64], out: &mut [f64]) {
        (self.f)(record, theta, out)
    }
}

/// An estimating function together with its starting point and record weights.
pub struct EstimatingSystem<F> {
    pub function: F,
    pub initial: Vec<f64>,
    /// Sampling weights multiplying each record's contribution.
    pub weights: Option<Vec<f64>>,
    /// Frequency counts; a record with count `c` stands for `c` identical records.
    pub counts: Option<Vec<f64>>,
}

impl<F> EstimatingSystem<F> {
    pub fn new(function: F, initial: Vec<f64>) -> Self {
        Self {
            function,
            initial,
            weights: None,
            counts: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_counts(mut self, counts: Vec<f64>) -> Self {
        self.counts = Some(counts);
        self
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn count(&self, i: usize) -> f64 {
        self.counts.as_ref().map_or(1.0, |c| c[i])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Vec<f64>,
    /// Sandwich covariance of `theta`.
    pub cov: DMatrix<f64>,
    /// Infinity norm of the summed equations divided by the effective record count.
    pub residual: f64,
    pub iterations: usize,
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_inputs<R, F: EstimatingFunction<R>>(system: &EstimatingSystem<F>, records: &[R]) -> Result<usize> {
    let p = system.function.dim();
    if p == 0 {
        return Err(PsemError::Config("estimating system has dimension 0".into()));
    }
    if records.is_empty() {
        return Err(PsemError::Empty("estimating system has no records".into()));
    }
    if system.initial.len() != p {
        return Err(PsemError::Config(format!(
            "initial value has length {} but the system has dimension {p}",
            system.initial.len()
        )));
    }
    for (name, v) in [("weights", &system.weights), ("counts", &system.counts)] {
        if let Some(v) = v {
            if v.len() != records.len() {
                return Err(PsemError::Config(format!(
                    "{name} length {} does not match {} records",
                    v.len(),
                    records.len()
                )));
            }
        }
    }
    Ok(p)
}

/// Weighted sum `sum_i c_i w_i U(O_i; theta)` with compensated accumulation.
pub fn total<R, F: EstimatingFunction<R>>(system: &EstimatingSystem<F>, records: &[R], theta: &[f64]) -> Vec<f64> {
    let p = system.function.dim();
    let mut acc = vec![CompensatedSum::default(); p];
    let mut buf = vec![0.0; p];
    for (i, r) in records.iter().enumerate() {
        let scale = system.count(i) * system.weight(i);
        if scale == 0.0 {
            continue;
        }
        system.function.contribution(r, theta, &mut buf);
        for (a, u) in acc.iter_mut().zip(&buf) {
            a.add(scale * u);
        }
    }
    acc.iter().map(CompensatedSum::value).collect()
}

fn effective_n<R, F>(system: &EstimatingSystem<F>, records: &[R]) -> f64 {
    system
        .counts
        .as_ref()
        .map_or(records.len() as f64, |c| c.iter().sum())
        .max(1.0)
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference Jacobian of an arbitrary vector map.
pub fn numeric_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, theta: &[f64]) -> DMatrix<f64> {
    let p = theta.len();
    let m = f(theta).len();
    let mut jac = DMatrix::zeros(m, p);
    let mut x = theta.to_vec();
    for j in 0..p {
        let h = fd_step(theta[j]);
        x[j] = theta[j] + h;
        let up = f(&x);
        x[j] = theta[j] - h;
        let down = f(&x);
        x[j] = theta[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverts `m`, reporting a reciprocal condition estimate when it is singular.
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norm = one_norm(m);
    if !norm.is_finite() {
        return Err(PsemError::NonFinite("matrix contains non-finite entries".into()));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(PsemError::SingularJacobian { rcond: 0.0 })?;
    let rcond = 1.0 / (norm * one_norm(&inv));
    if !rcond.is_finite() || rcond < 1e-14 {
        return Err(PsemError::SingularJacobian {
            rcond: if rcond.is_finite() { rcond } else { 0.0 },
        });
    }
    Ok(inv)
}

fn jacobian_of<R, F: EstimatingFunction<R>>(
    system: &EstimatingSystem<F>,
    records: &[R],
    theta: &[f64],
) -> DMatrix<f64> {
    numeric_jacobian(|t| total(system, records, t), theta)
}

/// Solves the stacked equations by damped Newton with a numeric Jacobian,
/// then evaluates the sandwich covariance at the root.
pub fn solve_system<R, F: EstimatingFunction<R>>(
    system: &EstimatingSystem<F>,
    records: &[R],
    options: SolverOptions,
) -> Result<FitResult> {
    let p = check_inputs(system, records)?;
    if options.tol <= 0.0 {
        return Err(PsemError::Config("solver tolerance must be positive".into()));
    }
    let n = effective_n(system, records);
    let scaled = |t: &[f64]| inf_norm(&total(system, records, t)) / n;

    let mut theta = system.initial.clone();
    let mut residual = scaled(&theta);
    let mut iterations = 0;
    while residual > options.tol {
        if iterations >= options.max_iter {
            return Err(PsemError::NonConvergence {
                iterations,
                residual,
                theta,
            });
        }
        iterations += 1;
        let f = DVector::from_vec(total(system, records, &theta));
        let jac = jacobian_of(system, records, &theta);
        let step = match checked_inverse(&jac) {
            Ok(inv) => -(inv * f),
            Err(e) if p == 1 => {
                // flat derivative: fall back to bracketing for scalar problems
                let _ = e;
                theta[0] = scalar_fallback(system, records, theta[0], options)?;
                residual = scaled(&theta);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + lambda * s).collect();
            let r = scaled(&trial);
            if r.is_finite() && r < residual {
                theta = trial;
                residual = r;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            if p == 1 {
                theta[0] = scalar_fallback(system, records, theta[0], options)?;
                residual = scaled(&theta);
                continue;
            }
            return Err(PsemError::NonConvergence {
                iterations,
                residual,
                theta,
            });
        }
    }
    // a couple of undamped steps past the tolerance, kept only if they help
    for _ in 0..2 {
        if residual <= 1e-14 {
            break;
        }
        let f = DVector::from_vec(total(system, records, &theta));
        let Ok(inv) = checked_inverse(&jacobian_of(system, records, &theta)) else {
            break;
        };
        let trial: Vec<f64> = theta.iter().zip((-(inv * f)).iter()).map(|(t, s)| t + s).collect();
        let r = scaled(&trial);
        if !(r < residual) {
            break;
        }
        theta = trial;
        residual = r;
    }
    let cov = sandwich_cov(system, records, &theta)?;
    Ok(FitResult {
        theta,
        cov,
        residual,
        iterations,
    })
}

fn scalar_fallback<R, F: EstimatingFunction<R>>(
    system: &EstimatingSystem<F>,
    records: &[R],
    start: f64,
    options: SolverOptions,
) -> Result<f64> {
    let n = effective_n(system, records);
    let f = |x: f64| total(system, records, &[x])[0] / n;
    let (lo, hi) = expand_bracket(&f, start).ok_or_else(|| PsemError::NonConvergence {
        iterations: options.max_iter,
        residual: f(start).abs(),
        theta: vec![start],
    })?;
    solve_scalar(f, lo, hi, options.tol)
}

fn expand_bracket(f: &impl Fn(f64) -> f64, start: f64) -> Option<(f64, f64)> {
    let f0 = f(start);
    let mut width = fd_step(start) * 1e3;
    for _ in 0..60 {
        for (a, b) in [(start - width, start), (start, start + width)] {
            if f(a).signum() != f(b).signum() || f(a) == 0.0 || f(b) == 0.0 {
                return Some((a, b));
            }
        }
        width *= 2.0;
    }
    if f0 == 0.0 {
        Some((start, start))
    } else {
        None
    }
}

/// Safeguarded Newton iteration for a scalar root inside a sign-changing bracket.
///
/// Each step takes the Newton update when it stays inside the current bracket
/// and otherwise bisects. Terminates when `|f| <= tol` or the bracket width
/// falls below machine resolution.
pub fn solve_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a);
    let fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(PsemError::NonFinite(
            "scalar equation not finite at bracket ends".into(),
        ));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(PsemError::Incompatible(format!(
            "no sign change on [{a}, {b}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..400 {
        let fx = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        let h = fd_step(x);
        let d = (f(x + h) - f(x - h)) / (2.0 * h);
        let newton = x - fx / d;
        x = if d != 0.0 && newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Ok(x)
}

/// Empirical sandwich covariance at `theta_hat`.
pub fn sandwich_cov<R, F: EstimatingFunction<R>>(
    system: &EstimatingSystem<F>,
    records: &[R],
    theta_hat: &[f64],
) -> Result<DMatrix<f64>> {
    let p = check_inputs(system, records)?;
    if theta_hat.len() != p {
        return Err(PsemError::Config("theta_hat has the wrong length".into()));
    }
    let bread = jacobian_of(system, records, theta_hat);
    let bread_inv = checked_inverse(&bread)?;

    let mut meat = vec![CompensatedSum::default(); p * p];
    let mut buf = vec![0.0; p];
    for (i, r) in records.iter().enumerate() {
        let c = system.count(i);
        let w = system.weight(i);
        if c == 0.0 || w == 0.0 {
            continue;
        }
        system.function.contribution(r, theta_hat, &mut buf);
        for a in 0..p {
            let ua = w * buf[a];
            if ua == 0.0 {
                continue;
            }
            for b in a..p {
                meat[a * p + b].add(c * ua * w * buf[b]);
            }
        }
    }
    let mut b_mat = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v = meat[a * p + b].value();
            b_mat[(a, b)] = v;
            b_mat[(b, a)] = v;
        }
    }
    let cov = &bread_inv * b_mat * bread_inv.transpose();
    Ok(symmetrize(cov))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Value and delta-method variance of a smooth scalar map at `theta_hat`.
pub fn delta_method(g: impl Fn(&[f64]) -> f64, theta_hat: &[f64], cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let p = theta_hat.len();
    if cov.nrows() != p || cov.ncols() != p {
        return Err(PsemError::Config(format!(
            "covariance is {}x{} but theta has length {p}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let value = g(theta_hat);
    if !value.is_finite() {
        return Err(PsemError::NonFinite(format!("transform is {value} at the estimate")));
    }
    let grad = gradient(&g, theta_hat)?;
    let grad = DVector::from_vec(grad);
    let variance = (grad.transpose() * cov * &grad)[(0, 0)];
    Ok((value, variance))
}

/// Central-difference gradient of a scalar map.
pub fn gradient(g: &impl Fn(&[f64]) -> f64, theta: &[f64]) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for j in 0..theta.len() {
        let h = fd_step(theta[j]);
        x[j] = theta[j] + h;
        let up = g(&x);
        x[j] = theta[j] - h;
        let down = g(&x);
        x[j] = theta[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(PsemError::NonFinite(format!(
                "transform not finite near the estimate along coordinate {j}"
            )));
        }
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
