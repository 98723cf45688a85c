//! One-dimensional line searches and a small dense BFGS minimizer.

use nalgebra::{DMatrix, DVector};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Index and value of the smallest finite entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// `count` evenly spaced points on `[start, end]` (both ends included).
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    let step = (end - start) / (count - 1) as f64;
    (0..count).map(|i| start + step * i as f64).collect()
}

/// Golden-section minimization of `f` on `[a, b]` with a fixed iteration count.
///
/// Returns the best point seen, including the interval ends.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    iterations: usize,
) -> (f64, f64) {
    let eval = |f: &mut F, x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut best = (lo, eval(&mut f, lo));
    let fhi = eval(&mut f, hi);
    if fhi < best.1 {
        best = (hi, fhi);
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(&mut f, x1);
    let mut f2 = eval(&mut f, x2);
    for _ in 0..iterations {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(&mut f, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(&mut f, x2);
        }
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    best
}

/// Central-difference gradient with steps `1e-6 * max(1, |x_i|)`.
pub fn numerical_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        (plus - minus) / (2.0 * h)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Length of the very first trial step.
    pub initial_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS with central-difference gradients and Armijo backtracking.
///
/// Stops when the gradient norm drops below the tolerance, the iteration
/// budget is exhausted, steps stall at rounding level, or no descent step can
/// be found; `converged` is only set in the first case.
pub fn bfgs_minimize<F: Fn(&DVector<f64>) -> f64>(
    f: F,
    x0: DVector<f64>,
    settings: &BfgsSettings,
) -> BfgsOutcome {
    bfgs_minimize_with_gradient(&f, |x| numerical_gradient(&f, x), x0, settings)
}

/// BFGS with a caller-supplied gradient.
pub fn bfgs_minimize_with_gradient<F, G>(
    f: F,
    gradient: G,
    x0: DVector<f64>,
    settings: &BfgsSettings,
) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    bfgs_minimize_preconditioned(f, gradient, x0, None, settings)
}

/// BFGS starting from a supplied inverse-Hessian estimate.
///
/// Without one, or after a failed line search, the first step is a scaled
/// steepest-descent step of length `initial_step`.
pub fn bfgs_minimize_preconditioned<F, G>(
    f: F,
    gradient: G,
    x0: DVector<f64>,
    initial_inverse_hessian: Option<DMatrix<f64>>,
    settings: &BfgsSettings,
) -> BfgsOutcome
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut value = f(&x);
    let mut grad = gradient(&x);
    let mut inv_hessian =
        initial_inverse_hessian.filter(|h| h.shape() == (n, n) && h.iter().all(|v| v.is_finite()));
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < settings.max_iterations {
        let gnorm = grad.norm();
        if gnorm < settings.gradient_tolerance || !value.is_finite() {
            break;
        }
        let h = inv_hessian
            .clone()
            .unwrap_or_else(|| DMatrix::identity(n, n) * (settings.initial_step / gnorm));
        let mut direction = -(&h * &grad);
        let mut slope = grad.dot(&direction);
        if !(slope < 0.0) {
            inv_hessian = None;
            direction = -&grad * (settings.initial_step / gnorm);
            slope = grad.dot(&direction);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + &direction * step;
            let v = f(&candidate);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, v_new)) = accepted else {
            if inv_hessian.is_some() {
                inv_hessian = None;
                continue;
            }
            break;
        };
        iterations += 1;

        let grad_new = gradient(&x_new);
        let s = &x_new - &x;
        if s.norm() <= 1e-14 * (1.0 + x.norm()) && value - v_new <= 1e-15 * value.abs() {
            stalls += 1;
        } else {
            stalls = 0;
        }
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let base = inv_hessian
                .take()
                .unwrap_or_else(|| DMatrix::identity(n, n) * (sy / y.dot(&y)));
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(n, n);
            let left = &identity - (&s * y.transpose()) * rho;
            let right = &identity - (&y * s.transpose()) * rho;
            inv_hessian = Some(&left * base * &right + (&s * s.transpose()) * rho);
        }
        x = x_new;
        value = v_new;
        grad = grad_new;
        if stalls >= 8 {
            break;
        }
    }

    let gradient_norm = grad.norm();
    BfgsOutcome {
        x,
        value,
        gradient_norm,
        iterations,
        converged: gradient_norm < settings.gradient_tolerance,
    }
}
