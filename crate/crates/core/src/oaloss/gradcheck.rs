/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_error(analytic, numeric, 1e-8)
}

/// `|a - n| / max(floor, |a| + |n|)`.
fn scaled_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Denominator floor for a function of magnitude `value`. Difference
/// quotients carry absolute rounding noise proportional to `|f|`, so
/// components far below it are compared against the floor instead.
fn noise_floor(value: f64) -> f64 {
    1e-6 * value.abs().max(1.0)
}

/// Compares the analytic gradient returned by `f` at `x` with fourth-order
/// central finite differences (five-point stencil) and returns the largest
/// componentwise relative error (see [`noise_floor`]). For smooth `f` only.
///
/// `f` maps a flat parameter vector to `(value, gradient)`.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (f0, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input length");
    let floor = noise_floor(f0);
    let mut probe = x.to_vec();
    let mut eval = |i: usize, step: f64| {
        probe[i] = x[i] + step;
        let v = f(&probe).0;
        probe[i] = x[i];
        v
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = (8.0 * (eval(i, eps) - eval(i, -eps)) - (eval(i, 2.0 * eps) - eval(i, -2.0 * eps))) / (12.0 * eps);
        worst = worst.max(scaled_error(analytic[i], numeric, floor));
    }
    worst
}

/// Result of [`grad_check_piecewise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseCheck {
    pub max_error: f64,
    /// Components skipped because a kink lies within `eps` of `x`.
    pub kinks: usize,
}

/// Like [`grad_check`], for piecewise-smooth functions (ReLU networks).
///
/// A component whose forward and backward one-sided differences disagree by
/// more than `kink_tol` (relative) straddles a kink; central differences say
/// nothing there, so it is counted in `kinks` instead of compared.
pub fn grad_check_piecewise<F>(f: F, x: &[f64], eps: f64, kink_tol: f64) -> PiecewiseCheck
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (f0, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input length");
    let mut probe = x.to_vec();
    let floor = noise_floor(f0);
    let mut out = PiecewiseCheck { max_error: 0.0, kinks: 0 };
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (up, _) = f(&probe);
        probe[i] = x[i] - eps;
        let (down, _) = f(&probe);
        probe[i] = x[i];
        let (forward, backward) = ((up - f0) / eps, (f0 - down) / eps);
        if scaled_error(forward, backward, floor) > kink_tol {
            out.kinks += 1;
            continue;
        }
        out.max_error = out.max_error.max(scaled_error(analytic[i], (up - down) / (2.0 * eps), floor));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_tiny_error() {
        // f(x) = sum c_i x_i^2 + x_0 x_1, exact gradient known.
        let c = [1.5, -0.5, 3.0];
        let f = |x: &[f64]| {
            let v = c.iter().zip(x).map(|(c, x)| c * x * x).sum::<f64>() + x[0] * x[1];
            let g = vec![2.0 * c[0] * x[0] + x[1], 2.0 * c[1] * x[1] + x[0], 2.0 * c[2] * x[2]];
            (v, g)
        };
        let err = grad_check(f, &[0.3, -1.2, 2.5], 1e-5);
        assert!(err <= 1e-7, "err = {err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| (x[0] * x[0], vec![x[0]]);
        assert!(grad_check(f, &[1.0], 1e-5) > 0.1);
    }

    #[test]
    fn kinks_are_skipped_not_compared() {
        // |x0| has a kink at 0; x1^2 is smooth.
        let f = |x: &[f64]| (x[0].abs() + x[1] * x[1], vec![x[0].signum(), 2.0 * x[1]]);
        let r = grad_check_piecewise(f, &[1e-8, 0.7], 1e-6, 1e-3);
        assert_eq!(r.kinks, 1);
        assert!(r.max_error < 1e-8);
        let wrong = |x: &[f64]| (x[1] * x[1], vec![0.0, x[1]]);
        assert!(grad_check_piecewise(wrong, &[0.0, 0.7], 1e-6, 1e-3).max_error > 0.1);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }
}
