//! Tensorized adaptive Simpson quadrature on box domains.

use crate::real::Real;

const MAX_DEPTH: usize = 48;

/// Outcome of an adaptive integration: the estimate plus an error bound.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult<S> {
    pub value: S,
    pub error: S,
    pub converged: bool,
}

fn simpson<S: Real>(fa: S, fm: S, fb: S, h: S) -> S {
    let six = S::of(6.0);
    h * (fa + S::of(4.0) * fm + fb) / six
}

fn adapt<S: Real>(
    f: &dyn Fn(S) -> S,
    a: S,
    b: S,
    fa: S,
    fm: S,
    fb: S,
    whole: S,
    tol: S,
    depth: usize,
) -> (S, S, bool) {
    let two = S::of(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH {
        return (left + right, delta.abs(), false);
    }
    // |delta|/15 is the standard Richardson error estimate for Simpson halving
    if delta.abs() <= S::of(15.0) * tol {
        return (left + right + delta / S::of(15.0), delta.abs() / S::of(15.0), true);
    }
    let half_tol = tol / two;
    let (lv, le, lc) = adapt(f, a, m, fa, flm, fm, left, half_tol, depth + 1);
    let (rv, re, rc) = adapt(f, m, b, fm, frm, fb, right, half_tol, depth + 1);
    (lv + rv, le + re, lc && rc)
}

/// Adaptive Simpson on an interval with an absolute tolerance.
pub fn integrate_interval<S: Real>(f: impl Fn(S) -> S, a: S, b: S, tol: S) -> QuadResult<S> {
    let two = S::of(2.0);
    let m = (a + b) / two;
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    let g: &dyn Fn(S) -> S = &f;
    let (value, error, converged) = adapt(g, a, b, fa, fm, fb, whole, tol, 0);
    QuadResult { value, error, converged }
}

/// Nested adaptive Simpson over a box `[lower, upper]^d`, innermost axis last.
/// `tol` is treated as an absolute tolerance on the full integral.
pub fn integrate_box<S: Real>(
    f: &(dyn Fn(&[S]) -> S + Sync),
    lower: &[S],
    upper: &[S],
    tol: S,
) -> QuadResult<S> {
    let d = lower.len();
    assert_eq!(d, upper.len());
    assert!(d >= 1);
    let mut point = vec![S::zero(); d];
    nested(f, lower, upper, 0, &mut point, tol)
}

fn nested<S: Real>(
    f: &(dyn Fn(&[S]) -> S + Sync),
    lower: &[S],
    upper: &[S],
    axis: usize,
    point: &mut Vec<S>,
    tol: S,
) -> QuadResult<S> {
    let d = lower.len();
    let errors = std::cell::Cell::new(S::zero());
    let ok = std::cell::Cell::new(true);
    let res = {
        let g = |x: S| -> S {
            let mut p = point.clone();
            p[axis] = x;
            if axis + 1 == d {
                f(&p)
            } else {
                // inner tolerance scaled by the remaining volume of outer axes
                let span = upper[axis] - lower[axis];
                let inner = nested(f, lower, upper, axis + 1, &mut p, tol / span);
                errors.set(errors.get() + inner.error);
                ok.set(ok.get() && inner.converged);
                inner.value
            }
        };
        integrate_interval(g, lower[axis], upper[axis], tol)
    };
    QuadResult {
        value: res.value,
        error: res.error + errors.get() * (upper[axis] - lower[axis]),
        converged: res.converged && ok.get(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate_interval(|x: f64| x * x, 0.0, 1.0, 1e-12);
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn gaussian_interval() {
        // int_{-1}^{1} exp(-x^2/2) dx = sqrt(2 pi) (Phi(1) - Phi(-1))
        let r = integrate_interval(|x: f64| (-x * x / 2.0).exp(), -1.0, 1.0, 1e-10);
        assert!((r.value - 1.7112487837842976).abs() < 1e-8);
    }

    #[test]
    fn box_2d_separable() {
        let f = |p: &[f64]| p[0].exp() * p[1];
        let r = integrate_box(&f, &[0.0, 0.0], &[1.0, 2.0], 1e-10);
        let exact = (1f64.exp() - 1.0) * 2.0;
        assert!((r.value - exact).abs() < 1e-8, "got {} want {}", r.value, exact);
    }

    #[test]
    fn f32_kernel_runs() {
        let r = integrate_interval(|x: f32| x.sin(), 0.0f32, 1.0, 1e-4);
        assert!((r.value - (1.0 - 1f32.cos())).abs() < 1e-4);
    }
}
