//! The underlying space: an open box in R^d carrying the intensity measure
//! `sigma = rho * m`, compactly supported vector fields, their flows, and the
//! point-level logarithmic derivatives.

use std::sync::Arc;

use crate::quad::integrate_box;
use crate::real::{dot, mat_vec, trace, Real};
use crate::{Error, Point, Result, Scalar};

type ValueFn = dyn Fn(&[Scalar]) -> Scalar + Send + Sync;
type VecFn = dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync;
type MatFn = dyn Fn(&[Scalar]) -> Vec<Vec<Scalar>> + Send + Sync;
type TensorFn = dyn Fn(&[Scalar]) -> Vec<Vec<Vec<Scalar>>> + Send + Sync;

/// Open box `prod_k (lower_k, upper_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    lower: Point,
    upper: Point,
}

impl Window {
    pub fn new(lower: Point, upper: Point) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(!lower.is_empty(), "dimension must be >= 1");
        for k in 0..lower.len() {
            assert!(lower[k] < upper[k], "degenerate box on axis {k}");
        }
        Window { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[Scalar] {
        &self.lower
    }

    pub fn upper(&self) -> &[Scalar] {
        &self.upper
    }

    pub fn contains(&self, x: &[Scalar]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(k, &c)| self.lower[k] < c && c < self.upper[k])
    }

    pub fn volume(&self) -> Scalar {
        (0..self.dim()).map(|k| self.upper[k] - self.lower[k]).product()
    }

    /// True if `self` lies inside `outer` (boundaries may touch).
    pub fn inside(&self, outer: &Window) -> bool {
        self.dim() == outer.dim()
            && (0..self.dim())
                .all(|k| outer.lower[k] <= self.lower[k] && self.upper[k] <= outer.upper[k])
    }

    /// Smallest box containing both windows.
    pub fn hull(&self, other: &Window) -> Window {
        assert_eq!(self.dim(), other.dim());
        Window::new(
            (0..self.dim()).map(|k| self.lower[k].min(other.lower[k])).collect(),
            (0..self.dim()).map(|k| self.upper[k].max(other.upper[k])).collect(),
        )
    }

    pub fn intersects(&self, other: &Window) -> bool {
        (0..self.dim()).all(|k| self.lower[k] < other.upper[k] && other.lower[k] < self.upper[k])
    }
}

/// Smooth compactly supported product bump
/// `b(x) = a * prod_k exp(1 - 1/(1 - u_k^2))`, `u_k = (x_k - c_k)/r_k`,
/// zero outside `|u_k| < 1`. Closed-form derivatives to second order.
#[derive(Debug, Clone)]
pub struct Bump {
    pub center: Point,
    pub radius: Point,
    pub amplitude: Scalar,
}

impl Bump {
    pub fn new(center: Point, radius: Point, amplitude: Scalar) -> Self {
        assert_eq!(center.len(), radius.len());
        assert!(radius.iter().all(|&r| r > 0.0));
        Bump { center, radius, amplitude }
    }

    pub fn support(&self) -> Window {
        Window::new(
            self.center.iter().zip(&self.radius).map(|(c, r)| c - r).collect(),
            self.center.iter().zip(&self.radius).map(|(c, r)| c + r).collect(),
        )
    }

    // Per-axis factor f(u) = exp(1 - 1/(1-u^2)) and its u-derivatives.
    fn axis(&self, u: Scalar) -> (Scalar, Scalar, Scalar) {
        let w = 1.0 - u * u;
        if w <= 1e-14 {
            return (0.0, 0.0, 0.0);
        }
        let f = (1.0 - 1.0 / w).exp();
        let h1 = -2.0 * u / (w * w);
        let h2 = -2.0 * (1.0 + 3.0 * u * u) / (w * w * w);
        (f, f * h1, f * (h2 + h1 * h1))
    }

    pub fn value(&self, x: &[Scalar]) -> Scalar {
        let mut v = self.amplitude;
        for k in 0..self.center.len() {
            let u = (x[k] - self.center[k]) / self.radius[k];
            v *= self.axis(u).0;
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    pub fn gradient(&self, x: &[Scalar]) -> Vec<Scalar> {
        let d = self.center.len();
        let factors: Vec<_> = (0..d)
            .map(|k| self.axis((x[k] - self.center[k]) / self.radius[k]))
            .collect();
        (0..d)
            .map(|i| {
                let mut g = self.amplitude * factors[i].1 / self.radius[i];
                for (k, f) in factors.iter().enumerate() {
                    if k != i {
                        g *= f.0;
                    }
                }
                g
            })
            .collect()
    }

    pub fn hessian(&self, x: &[Scalar]) -> Vec<Vec<Scalar>> {
        let d = self.center.len();
        let factors: Vec<_> = (0..d)
            .map(|k| self.axis((x[k] - self.center[k]) / self.radius[k]))
            .collect();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let mut h = self.amplitude;
                        for (k, f) in factors.iter().enumerate() {
                            h *= if k == i && k == j {
                                f.2 / (self.radius[k] * self.radius[k])
                            } else if k == i {
                                f.1 / self.radius[k]
                            } else if k == j {
                                f.1 / self.radius[k]
                            } else {
                                f.0
                            };
                        }
                        h
                    })
                    .collect()
            })
            .collect()
    }

    pub fn laplacian(&self, x: &[Scalar]) -> Scalar {
        trace(&self.hessian(x))
    }
}

/// The density `rho > 0` of the intensity measure, with analytic gradient and
/// Hessian access.
#[derive(Clone)]
pub struct IntensityDensity {
    value: Arc<ValueFn>,
    gradient: Arc<VecFn>,
    hessian: Arc<MatFn>,
    domain: Window,
    sup_bound: Scalar,
}

impl IntensityDensity {
    pub fn constant(domain: Window, c: Scalar) -> Self {
        assert!(c > 0.0);
        let d = domain.dim();
        IntensityDensity {
            value: Arc::new(move |_| c),
            gradient: Arc::new(move |_| vec![0.0; d]),
            hessian: Arc::new(move |_| vec![vec![0.0; d]; d]),
            domain,
            sup_bound: c,
        }
    }

    /// `rho(x) = amp * exp(-|x - center|^2 / 2)`.
    pub fn gaussian(domain: Window, amplitude: Scalar, center: Point) -> Self {
        assert!(amplitude > 0.0);
        assert_eq!(center.len(), domain.dim());
        let d = domain.dim();
        // sup over the closed box: attained at the point closest to the center
        let nearest: Point = (0..d)
            .map(|k| center[k].clamp(domain.lower()[k], domain.upper()[k]))
            .collect();
        let dist2: Scalar = (0..d).map(|k| (nearest[k] - center[k]).powi(2)).sum();
        let sup_bound = amplitude * (-dist2 / 2.0).exp();
        let c1 = center.clone();
        let c2 = center.clone();
        let c3 = center;
        let value = move |x: &[Scalar]| -> Scalar {
            let q: Scalar = (0..d).map(|k| (x[k] - c1[k]).powi(2)).sum();
            amplitude * (-q / 2.0).exp()
        };
        let vg = value.clone();
        let vh = value.clone();
        IntensityDensity {
            value: Arc::new(value),
            gradient: Arc::new(move |x| {
                let v = vg(x);
                (0..d).map(|k| -(x[k] - c2[k]) * v).collect()
            }),
            hessian: Arc::new(move |x| {
                let v = vh(x);
                (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let mut h = (x[i] - c3[i]) * (x[j] - c3[j]) * v;
                                if i == j {
                                    h -= v;
                                }
                                h
                            })
                            .collect()
                    })
                    .collect()
            }),
            domain,
            sup_bound,
        }
    }

    /// `rho(x) = c0 + sum_k a_k x_k^2` with `c0 > 0`, `a_k >= 0`.
    pub fn poly_positive(domain: Window, c0: Scalar, coeffs: Point) -> Self {
        assert!(c0 > 0.0);
        assert!(coeffs.iter().all(|&a| a >= 0.0));
        assert_eq!(coeffs.len(), domain.dim());
        let d = domain.dim();
        let sup_bound = c0
            + (0..d)
                .map(|k| coeffs[k] * domain.lower()[k].abs().max(domain.upper()[k].abs()).powi(2))
                .sum::<Scalar>();
        let a1 = coeffs.clone();
        let a2 = coeffs.clone();
        let a3 = coeffs;
        IntensityDensity {
            value: Arc::new(move |x| c0 + (0..d).map(|k| a1[k] * x[k] * x[k]).sum::<Scalar>()),
            gradient: Arc::new(move |x| (0..d).map(|k| 2.0 * a2[k] * x[k]).collect()),
            hessian: Arc::new(move |x| {
                let _ = x;
                (0..d)
                    .map(|i| (0..d).map(|j| if i == j { 2.0 * a3[i] } else { 0.0 }).collect())
                    .collect()
            }),
            domain,
            sup_bound,
        }
    }

    pub fn domain(&self) -> &Window {
        &self.domain
    }

    /// Upper bound for `rho` on the domain window; rejection envelope.
    pub fn sup_bound(&self) -> Scalar {
        self.sup_bound
    }

    pub fn value(&self, x: &[Scalar]) -> Scalar {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[Scalar]) -> Vec<Scalar> {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &[Scalar]) -> Vec<Vec<Scalar>> {
        (self.hessian)(x)
    }

    /// Logarithmic derivative `beta(x) = grad rho(x) / rho(x)`.
    pub fn beta(&self, x: &[Scalar]) -> Vec<Scalar> {
        let v = self.value(x);
        self.gradient(x).into_iter().map(|g| g / v).collect()
    }

    /// `d beta_i / d x_k = H_ik / rho - beta_i beta_k`.
    pub fn beta_jacobian(&self, x: &[Scalar]) -> Vec<Vec<Scalar>> {
        let v = self.value(x);
        let b = self.beta(x);
        let h = self.hessian(x);
        let d = b.len();
        (0..d)
            .map(|i| (0..d).map(|k| h[i][k] / v - b[i] * b[k]).collect())
            .collect()
    }

    /// Total mass of `sigma = rho * m` on `window` by nested adaptive Simpson,
    /// relative tolerance `rel_tol`.
    pub fn sigma_mass(&self, window: &Window, rel_tol: Scalar) -> Result<Scalar> {
        assert!(window.inside(&self.domain), "window escapes the domain");
        let coarse = self.sup_bound * window.volume();
        let f = self.value.clone();
        let g = move |x: &[Scalar]| f(x);
        let res = integrate_box(&g, window.lower(), window.upper(), rel_tol * coarse.max(1e-300));
        if !res.converged {
            return Err(Error::QuadratureTolerance { estimate: res.value, error: res.error });
        }
        Ok(res.value)
    }
}

/// `beta_v(x) = <beta(x), v(x)> + div v(x)`; zero outside the support of `v`.
pub fn beta_v_eval(rho: &IntensityDensity, v: &CompactVectorField, x: &[Scalar]) -> Scalar {
    if !v.support().contains(x) {
        return 0.0;
    }
    dot(&rho.beta(x), &v.value(x)) + v.divergence(x)
}

/// Smooth vector field supported strictly inside the domain window.
#[derive(Clone)]
pub struct CompactVectorField {
    value: Arc<VecFn>,
    jacobian: Arc<MatFn>,
    hessian: Option<Arc<TensorFn>>,
    support: Window,
    exact_jacobian: bool,
}

impl CompactVectorField {
    /// `v_i(x) = a_i * b(x)` for a bump profile `b`.
    pub fn from_bump(bump: Bump, amplitudes: Point) -> Self {
        let d = bump.center.len();
        assert_eq!(amplitudes.len(), d);
        let support = bump.support();
        let b1 = bump.clone();
        let b2 = bump.clone();
        let b3 = bump;
        let a1 = amplitudes.clone();
        let a2 = amplitudes.clone();
        let a3 = amplitudes;
        CompactVectorField {
            value: Arc::new(move |x| {
                let b = b1.value(x);
                a1.iter().map(|&a| a * b).collect()
            }),
            jacobian: Arc::new(move |x| {
                let g = b2.gradient(x);
                a2.iter().map(|&a| g.iter().map(|&gk| a * gk).collect()).collect()
            }),
            hessian: Some(Arc::new(move |x| {
                let h = b3.hessian(x);
                a3.iter()
                    .map(|&a| h.iter().map(|row| row.iter().map(|&v| a * v).collect()).collect())
                    .collect()
            })),
            support,
            exact_jacobian: true,
        }
    }

    pub fn support(&self) -> &Window {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Whether the jacobian is closed-form rather than finite-difference.
    pub fn exact_jacobian(&self) -> bool {
        self.exact_jacobian
    }

    pub fn value(&self, x: &[Scalar]) -> Vec<Scalar> {
        if !self.support.contains(x) {
            return vec![0.0; self.dim()];
        }
        (self.value)(x)
    }

    pub fn jacobian(&self, x: &[Scalar]) -> Vec<Vec<Scalar>> {
        if !self.support.contains(x) {
            return vec![vec![0.0; self.dim()]; self.dim()];
        }
        (self.jacobian)(x)
    }

    pub fn hessian(&self, x: &[Scalar]) -> Option<Vec<Vec<Vec<Scalar>>>> {
        let d = self.dim();
        self.hessian.as_ref().map(|h| {
            if self.support.contains(x) {
                h(x)
            } else {
                vec![vec![vec![0.0; d]; d]; d]
            }
        })
    }

    pub fn divergence(&self, x: &[Scalar]) -> Scalar {
        trace(&self.jacobian(x))
    }

    /// Scale the field by a constant.
    pub fn scaled(&self, c: Scalar) -> Self {
        let v = self.value.clone();
        let j = self.jacobian.clone();
        let h = self.hessian.clone();
        let d = self.dim();
        CompactVectorField {
            value: Arc::new(move |x| v(x).into_iter().map(|t| c * t).collect()),
            jacobian: Arc::new(move |x| {
                j(x).into_iter().map(|r| r.into_iter().map(|t| c * t).collect()).collect()
            }),
            hessian: h.map(|h| {
                let f: Arc<TensorFn> = Arc::new(move |x: &[Scalar]| {
                    let mut t = h(x);
                    for i in 0..d {
                        for j in 0..d {
                            for k in 0..d {
                                t[i][j][k] *= c;
                            }
                        }
                    }
                    t
                });
                f
            }),
            support: self.support.clone(),
            exact_jacobian: self.exact_jacobian,
        }
    }

    /// Integrate the flow `dy/dt = v(y)` together with the log-Jacobian of the
    /// pushforward volume, `d(log J)/dt = -div v` along the trajectory.
    /// Classic 4th-order one-step method with fixed substep `h = t/ceil(|t|/0.01)`.
    pub fn flow(&self, t: Scalar, x: &[Scalar]) -> Result<FlowResult> {
        assert!(t.is_finite());
        if t == 0.0 || !self.support.contains(x) {
            return Ok(FlowResult { endpoint: x.to_vec(), log_jacobian: 0.0 });
        }
        let steps = (t.abs() / 0.01).ceil().max(1.0);
        if steps > 1e9 {
            return Err(Error::StepUnderflow { t });
        }
        let h = t / steps;
        let value = |y: &[Scalar]| (self.value)(y);
        let div = |y: &[Scalar]| trace(&(self.jacobian)(y));
        let (endpoint, log_jacobian) = rk4_flow(&value, &div, x, h, steps as usize);
        Ok(FlowResult { endpoint, log_jacobian })
    }

    /// Radon-Nikodym density of the pushforward of `sigma` under the time-`t`
    /// flow: `p(x) = rho(phi_{-t}(x))/rho(x) * J(x)`; identically 1 outside
    /// the support of the field.
    pub fn density_ratio(
        &self,
        rho: &IntensityDensity,
        t: Scalar,
        x: &[Scalar],
    ) -> Result<Scalar> {
        if !self.support.contains(x) {
            return Ok(1.0);
        }
        let back = self.flow(-t, x)?;
        // log J of the forward map at x equals minus the backward log-Jacobian
        Ok(rho.value(&back.endpoint) / rho.value(x) * (-back.log_jacobian).exp())
    }
}

/// Endpoint of a flow together with the log-Jacobian of the pushforward volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub endpoint: Point,
    pub log_jacobian: Scalar,
}

/// RK4 on the augmented state `(y, log J)`.
fn rk4_flow<S: Real>(
    value: &dyn Fn(&[S]) -> Vec<S>,
    div: &dyn Fn(&[S]) -> S,
    x: &[S],
    h: S,
    steps: usize,
) -> (Vec<S>, S) {
    let two = S::of(2.0);
    let six = S::of(6.0);
    let mut y = x.to_vec();
    let mut logj = S::zero();
    let axpy = |y: &[S], a: S, k: &[S]| -> Vec<S> {
        y.iter().zip(k).map(|(&yi, &ki)| yi + a * ki).collect()
    };
    for _ in 0..steps {
        let k1 = value(&y);
        let l1 = -div(&y);
        let y2 = axpy(&y, h / two, &k1);
        let k2 = value(&y2);
        let l2 = -div(&y2);
        let y3 = axpy(&y, h / two, &k2);
        let k3 = value(&y3);
        let l3 = -div(&y3);
        let y4 = axpy(&y, h, &k3);
        let k4 = value(&y4);
        let l4 = -div(&y4);
        for i in 0..y.len() {
            y[i] = y[i] + h * (k1[i] + two * k2[i] + two * k3[i] + k4[i]) / six;
        }
        logj = logj + h * (l1 + two * l2 + two * l3 + l4) / six;
    }
    (y, logj)
}

/// Lie bracket `[v1, v2] = (grad v2) v1 - (grad v1) v2`. The jacobian of the
/// bracket uses the fields' Hessian data when both carry it, otherwise central
/// finite differences (the result is flagged via `exact_jacobian`).
pub fn lie_bracket(v1: &CompactVectorField, v2: &CompactVectorField) -> CompactVectorField {
    assert_eq!(v1.dim(), v2.dim());
    let d = v1.dim();
    let support = v1.support().hull(v2.support());
    let (a, b) = (v1.clone(), v2.clone());
    let value = move |x: &[Scalar]| -> Vec<Scalar> {
        let va = a.value(x);
        let vb = b.value(x);
        let ja = a.jacobian(x);
        let jb = b.jacobian(x);
        let t1 = mat_vec(&jb, &va);
        let t2 = mat_vec(&ja, &vb);
        (0..d).map(|i| t1[i] - t2[i]).collect()
    };
    let exact = v1.hessian.is_some() && v2.hessian.is_some();
    let jacobian: Arc<MatFn> = if exact {
        let (a, b) = (v1.clone(), v2.clone());
        Arc::new(move |x: &[Scalar]| {
            let va = a.value(x);
            let vb = b.value(x);
            let ja = a.jacobian(x);
            let jb = b.jacobian(x);
            let ha = a.hessian(x).unwrap();
            let hb = b.hessian(x).unwrap();
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|k| {
                            let mut s = 0.0;
                            for j in 0..d {
                                s += hb[i][j][k] * va[j] + jb[i][j] * ja[j][k]
                                    - ha[i][j][k] * vb[j]
                                    - ja[i][j] * jb[j][k];
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        })
    } else {
        let f = value.clone();
        Arc::new(move |x: &[Scalar]| {
            let h = 1e-6;
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|k| {
                            let mut xp = x.to_vec();
                            let mut xm = x.to_vec();
                            xp[k] += h;
                            xm[k] -= h;
                            (f(&xp)[i] - f(&xm)[i]) / (2.0 * h)
                        })
                        .collect()
                })
                .collect()
        })
    };
    CompactVectorField {
        value: Arc::new(value),
        jacobian,
        hessian: None,
        support,
        exact_jacobian: exact,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window1() -> Window {
        Window::new(vec![-1.0], vec![1.0])
    }

    fn bump_field(scale: Scalar) -> CompactVectorField {
        CompactVectorField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0), vec![scale])
    }

    #[test]
    fn beta_gaussian() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let b = rho.beta(&[0.3]);
        assert!((b[0] + 0.3).abs() < 1e-14);
    }

    #[test]
    fn beta_constant_is_zero() {
        let rho = IntensityDensity::constant(window1(), 1.0);
        assert_eq!(rho.beta(&[0.42]), vec![0.0]);
    }

    #[test]
    fn beta_poly() {
        // rho = 1 + x^2 at x = 0.5: beta = 2*0.5/1.25 = 0.8
        let rho = IntensityDensity::poly_positive(window1(), 1.0, vec![1.0]);
        assert!((rho.beta(&[0.5])[0] - 0.8).abs() < 1e-14);
    }

    #[test]
    fn beta_v_outside_support() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let v = bump_field(0.3);
        assert_eq!(beta_v_eval(&rho, &v, &[0.9]), 0.0);
    }

    #[test]
    fn beta_v_constant_density_is_divergence() {
        let rho = IntensityDensity::constant(window1(), 1.0);
        let v = bump_field(0.4);
        let x = [0.2];
        assert!((beta_v_eval(&rho, &v, &x) - v.divergence(&x)).abs() < 1e-14);
    }

    #[test]
    fn beta_v_matches_finite_differences() {
        // d=1, rho Gaussian, v a bump: beta_v(x) = -x v(x) + v'(x)
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let v = bump_field(0.7);
        let h = 1e-5;
        for &x in &[0.1, -0.25, 0.4] {
            let logdrho = ((rho.value(&[x + h])).ln() - (rho.value(&[x - h])).ln()) / (2.0 * h);
            let dv = (v.value(&[x + h])[0] - v.value(&[x - h])[0]) / (2.0 * h);
            let fd = logdrho * v.value(&[x])[0] + dv;
            let analytic = beta_v_eval(&rho, &v, &[x]);
            assert!(
                (fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()),
                "x={x}: fd={fd} analytic={analytic}"
            );
        }
    }

    #[test]
    fn flow_time_zero() {
        let v = bump_field(0.5);
        let r = v.flow(0.0, &[0.2]).unwrap();
        assert_eq!(r.endpoint, vec![0.2]);
        assert_eq!(r.log_jacobian, 0.0);
    }

    #[test]
    fn flow_outside_support_is_static() {
        let v = bump_field(0.5);
        let r = v.flow(0.7, &[0.8]).unwrap();
        assert_eq!(r.endpoint, vec![0.8]);
        assert_eq!(r.log_jacobian, 0.0);
    }

    #[test]
    fn flow_group_law_and_inverse() {
        let v = bump_field(0.6);
        let x = [0.15];
        for &(t, s) in &[(0.3, 0.5), (-0.4, 0.2), (1.0, -0.7)] {
            let a = v.flow(s, &x).unwrap();
            let b = v.flow(t, &a.endpoint).unwrap();
            let c = v.flow(t + s, &x).unwrap();
            assert!((b.endpoint[0] - c.endpoint[0]).abs() < 1e-8);
        }
        let fwd = v.flow(0.9, &x).unwrap();
        let back = v.flow(-0.9, &fwd.endpoint).unwrap();
        assert!((back.endpoint[0] - x[0]).abs() < 1e-8);
    }

    #[test]
    fn flow_jacobian_matches_inverse_map_derivative() {
        let v = bump_field(0.5);
        let t = 0.1;
        let x = 0.2;
        let r = v.flow(t, &[x]).unwrap();
        // d phi_{-t}(y)/dy at y = phi_t(x), by central differences
        let h = 1e-5;
        let y = r.endpoint[0];
        let ym = v.flow(-t, &[y - h]).unwrap().endpoint[0];
        let yp = v.flow(-t, &[y + h]).unwrap().endpoint[0];
        let fd = (yp - ym) / (2.0 * h);
        assert!((r.log_jacobian.exp() - fd).abs() < 1e-5);
    }

    #[test]
    fn jacobian_rate_is_minus_divergence() {
        let v = bump_field(0.5);
        let x = [0.21];
        let h = 1e-4;
        let lp = v.flow(h, &x).unwrap().log_jacobian;
        let lm = v.flow(-h, &x).unwrap().log_jacobian;
        let rate = (lp - lm) / (2.0 * h);
        assert!((rate + v.divergence(&x)).abs() < 1e-5);
    }

    #[test]
    fn density_ratio_identity_cases() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let v = bump_field(0.5);
        assert_eq!(v.density_ratio(&rho, 0.0, &[0.3]).unwrap(), 1.0);
        assert_eq!(v.density_ratio(&rho, 0.4, &[0.9]).unwrap(), 1.0);
    }

    #[test]
    fn density_ratio_flat_density_matches_jacobian() {
        // rho == 1: p(x) = J(x), computed here through the forward flow from
        // the preimage as an independent route
        let rho = IntensityDensity::constant(window1(), 1.0);
        let v = bump_field(0.3);
        let t = 0.2;
        let x = [0.1];
        let p = v.density_ratio(&rho, t, &x).unwrap();
        let pre = v.flow(-t, &x).unwrap();
        let fwd = v.flow(t, &pre.endpoint).unwrap();
        let p2 = fwd.log_jacobian.exp();
        assert!((p - p2).abs() <= 1e-6 * p2, "p={p} p2={p2}");
    }

    #[test]
    fn density_ratio_inverse_cocycle() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let v = bump_field(0.45);
        let x = [0.12];
        for &t in &[0.3, -0.5, 0.8] {
            // p_t(x) * p_{-t}(phi_{-t} x) = 1, from the composition law at s = -t
            let a = v.density_ratio(&rho, t, &x).unwrap();
            let xt = v.flow(-t, &x).unwrap().endpoint;
            let b = v.density_ratio(&rho, -t, &xt).unwrap();
            assert!((a * b - 1.0).abs() < 1e-7, "t={t}: a*b={}", a * b);
        }
    }

    #[test]
    fn density_ratio_composition() {
        // p_{t+s}(x) = p_s(x) * p_t(phi_{-s}(x))
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let v = bump_field(0.45);
        let (t, s) = (0.3, 0.4);
        let x = [0.12];
        let direct = v.density_ratio(&rho, t + s, &x).unwrap();
        let composed = v.density_ratio(&rho, s, &x).unwrap()
            * v.density_ratio(&rho, t, &v.flow(-s, &x).unwrap().endpoint).unwrap();
        assert!((composed - direct).abs() < 1e-7 * direct, "{composed} vs {direct}");
    }

    #[test]
    fn sigma_mass_constant() {
        let rho = IntensityDensity::constant(Window::new(vec![0.0], vec![1.0]), 1.0);
        let m = rho.sigma_mass(&Window::new(vec![0.0], vec![1.0]), 1e-8).unwrap();
        assert!((m - 1.0).abs() < 1e-10);
        let rho2 = IntensityDensity::constant(Window::new(vec![0.0, 0.0], vec![2.0, 3.0]), 2.5);
        let m2 = rho2.sigma_mass(&Window::new(vec![0.0, 0.0], vec![2.0, 3.0]), 1e-8).unwrap();
        assert!((m2 - 15.0).abs() < 1e-8);
    }

    #[test]
    fn sigma_mass_gaussian_against_oracle() {
        // oracle: 20-point Gauss-Legendre on [-1, 1], exact far beyond 1e-10
        // for this entire integrand
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let m = rho.sigma_mass(&window1(), 1e-8).unwrap();
        let oracle = gauss_legendre_20(|x| (-x * x / 2.0).exp(), -1.0, 1.0);
        assert!((m - oracle).abs() < 1e-8 * oracle, "m={m} oracle={oracle}");
        assert!((m - 1.71125).abs() < 1e-4);
    }

    #[test]
    fn lie_bracket_antisymmetry_and_zero() {
        let v = bump_field(0.5);
        let z = lie_bracket(&v, &v);
        assert_eq!(z.value(&[0.2]), vec![0.0]);
        let zero_field = bump_field(0.0);
        let z2 = lie_bracket(&v, &zero_field);
        assert_eq!(z2.value(&[0.1]), vec![0.0]);
    }

    #[test]
    fn lie_bracket_against_flow_commutator() {
        let v1 = bump_field(0.4);
        let v2 = CompactVectorField::from_bump(Bump::new(vec![0.1], vec![0.5], 1.0), vec![0.3]);
        let br = lie_bracket(&v1, &v2);
        let x = [0.05];
        for &hh in &[1e-3, 1e-4] {
            let s = (hh as Scalar).sqrt();
            let y = v1.flow(s, &x).unwrap().endpoint;
            let y = v2.flow(s, &y).unwrap().endpoint;
            let y = v1.flow(-s, &y).unwrap().endpoint;
            let y = v2.flow(-s, &y).unwrap().endpoint;
            let fd = (y[0] - x[0]) / hh;
            let exact = br.value(&x)[0];
            // commutator-of-flows agrees to O(sqrt(h))
            assert!(
                (fd - exact).abs() < 10.0 * s.max(1e-6),
                "h={hh}: fd={fd} exact={exact}"
            );
        }
    }

    // Fixed-node Gauss-Legendre used as an independent quadrature oracle.
    pub(crate) fn gauss_legendre_20(f: impl Fn(Scalar) -> Scalar, a: Scalar, b: Scalar) -> Scalar {
        const NODES: [(f64, f64); 10] = [
            (0.0765265211334973, 0.1527533871307258),
            (0.2277858511416451, 0.1491729864726037),
            (0.3737060887154195, 0.1420961093183820),
            (0.5108670019508271, 0.1316886384491766),
            (0.6360536807265150, 0.1181945319615184),
            (0.7463319064601508, 0.1019301198172404),
            (0.8391169718222188, 0.0832767415767048),
            (0.9122344282513259, 0.0626720483341091),
            (0.9639719272779138, 0.0406014298003869),
            (0.9931285991850949, 0.0176140071391521),
        ];
        let c = (a + b) / 2.0;
        let hw = (b - a) / 2.0;
        let mut s = 0.0;
        for &(x, w) in &NODES {
            s += w * (f(c + hw * x) + f(c - hw * x));
        }
        s * hw
    }
}
