//! Differential calculus on configuration space: cylinder functions and their
//! extended closure, directional derivatives, the intrinsic gradient and
//! tangent metric, logarithmic derivatives, the generator family A(v), the
//! pushforward density, and the associated multiplicative representation.

use std::sync::Arc;

use crate::config::{MarkedConfiguration, ScalarField, Weighting};
use crate::quad::integrate_box;
use crate::real::dot;
use crate::sampler::MarkLaw;
use crate::space::{beta_v_eval, CompactVectorField, IntensityDensity};
use crate::{Error, Result, Scalar};

/// Outer function `g: R^N -> R` with explicit first and second derivatives.
#[derive(Clone)]
pub struct Outer {
    name: String,
    arity: usize,
    value: Arc<dyn Fn(&[Scalar]) -> Scalar + Send + Sync>,
    gradient: Option<Arc<dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync>>,
    hessian: Option<Arc<dyn Fn(&[Scalar]) -> Vec<Vec<Scalar>> + Send + Sync>>,
}

impl Outer {
    pub fn from_parts(
        name: impl Into<String>,
        arity: usize,
        value: Arc<dyn Fn(&[Scalar]) -> Scalar + Send + Sync>,
        gradient: Option<Arc<dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync>>,
        hessian: Option<Arc<dyn Fn(&[Scalar]) -> Vec<Vec<Scalar>> + Send + Sync>>,
    ) -> Self {
        assert!(arity >= 1);
        Outer { name: name.into(), arity, value, gradient, hessian }
    }

    /// `g(u) = u_1` (arity 1).
    pub fn identity() -> Self {
        Outer {
            name: "id".into(),
            arity: 1,
            value: Arc::new(|u| u[0]),
            gradient: Some(Arc::new(|_| vec![1.0])),
            hessian: Some(Arc::new(|_| vec![vec![0.0]])),
        }
    }

    /// `g(u) = c0 + sum_i c_i u_i`.
    pub fn linear(constant: Scalar, coeffs: Vec<Scalar>) -> Self {
        let n = coeffs.len();
        assert!(n >= 1);
        let name = format!("lin{coeffs:?}+{constant}");
        let c1 = coeffs.clone();
        let c2 = coeffs;
        Outer {
            name,
            arity: n,
            value: Arc::new(move |u| constant + dot(&c1, u)),
            gradient: Some(Arc::new(move |_| c2.clone())),
            hessian: Some(Arc::new(move |_| vec![vec![0.0; n]; n])),
        }
    }

    /// Bounded smooth family `g(u) = tanh(sum_i c_i u_i)`.
    pub fn tanh(coeffs: Vec<Scalar>) -> Self {
        let n = coeffs.len();
        assert!(n >= 1);
        let name = format!("tanh{coeffs:?}");
        let (c1, c2, c3) = (coeffs.clone(), coeffs.clone(), coeffs);
        Outer {
            name,
            arity: n,
            value: Arc::new(move |u| dot(&c1, u).tanh()),
            gradient: Some(Arc::new(move |u| {
                let t = dot(&c2, u).tanh();
                let s = 1.0 - t * t;
                c2.iter().map(|&c| c * s).collect()
            })),
            hessian: Some(Arc::new(move |u| {
                let t = dot(&c3, u).tanh();
                let w = -2.0 * t * (1.0 - t * t);
                (0..n).map(|i| (0..n).map(|j| c3[i] * c3[j] * w).collect()).collect()
            })),
        }
    }

    /// Exponential family `g(u) = exp(sum_i c_i u_i)`.
    pub fn exp(coeffs: Vec<Scalar>) -> Self {
        let n = coeffs.len();
        assert!(n >= 1);
        let name = format!("exp{coeffs:?}");
        let (c1, c2, c3) = (coeffs.clone(), coeffs.clone(), coeffs);
        Outer {
            name,
            arity: n,
            value: Arc::new(move |u| dot(&c1, u).exp()),
            gradient: Some(Arc::new(move |u| {
                let e = dot(&c2, u).exp();
                c2.iter().map(|&c| c * e).collect()
            })),
            hessian: Some(Arc::new(move |u| {
                let e = dot(&c3, u).exp();
                (0..n).map(|i| (0..n).map(|j| c3[i] * c3[j] * e).collect()).collect()
            })),
        }
    }

    /// Polynomial family `g(u) = prod_i u_i^{p_i}`.
    pub fn monomial(powers: Vec<u32>) -> Self {
        let n = powers.len();
        assert!(n >= 1);
        let name = format!("mono{powers:?}");
        let (p1, p2, p3) = (powers.clone(), powers.clone(), powers);
        let term = |p: &[u32], u: &[Scalar]| -> Scalar {
            p.iter().zip(u).map(|(&k, &x)| x.powi(k as i32)).product()
        };
        let dterm = |p: &[u32], u: &[Scalar], i: usize| -> Scalar {
            if p[i] == 0 {
                return 0.0;
            }
            let mut v = p[i] as Scalar * u[i].powi(p[i] as i32 - 1);
            for (k, (&pk, &uk)) in p.iter().zip(u).enumerate() {
                if k != i {
                    v *= uk.powi(pk as i32);
                }
            }
            v
        };
        Outer {
            name,
            arity: n,
            value: Arc::new(move |u| term(&p1, u)),
            gradient: Some(Arc::new(move |u| (0..n).map(|i| dterm(&p2, u, i)).collect())),
            hessian: Some(Arc::new(move |u| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let mut q = p3.clone();
                                if q[i] == 0 {
                                    return 0.0;
                                }
                                let ci = q[i] as Scalar;
                                q[i] -= 1;
                                ci * dterm(&q, u, j)
                            })
                            .collect()
                    })
                    .collect()
            })),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn value(&self, u: &[Scalar]) -> Scalar {
        debug_assert_eq!(u.len(), self.arity);
        (self.value)(u)
    }

    pub fn gradient(&self, u: &[Scalar]) -> Result<Vec<Scalar>> {
        let g = self
            .gradient
            .as_ref()
            .ok_or_else(|| Error::DerivativeDepth(format!("gradient of outer `{}`", self.name)))?;
        Ok(g(u))
    }

    pub fn hessian(&self, u: &[Scalar]) -> Result<Vec<Vec<Scalar>>> {
        let h = self
            .hessian
            .as_ref()
            .ok_or_else(|| Error::DerivativeDepth(format!("hessian of outer `{}`", self.name)))?;
        Ok(h(u))
    }

    /// The partial derivative `d_i g` as an outer function: its gradient is
    /// row `i` of the Hessian of `g`, and it carries no second derivatives.
    pub fn partial(&self, i: usize) -> Result<Outer> {
        assert!(i < self.arity);
        let g = self
            .gradient
            .clone()
            .ok_or_else(|| Error::DerivativeDepth(format!("gradient of outer `{}`", self.name)))?;
        let gradient = self.hessian.clone().map(|h| {
            let f: Arc<dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync> =
                Arc::new(move |u: &[Scalar]| h(u)[i].clone());
            f
        });
        Ok(Outer {
            name: format!("D{i}:{}", self.name),
            arity: self.arity,
            value: Arc::new(move |u| g(u)[i]),
            gradient,
            hessian: None,
        })
    }
}

/// Cylinder function `F(omega) = g(<omega, phi_1>, ..., <omega, phi_N>)`
/// with marked pairings.
#[derive(Clone)]
pub struct CylinderFunction {
    pub outer: Outer,
    pub directions: Vec<ScalarField>,
}

impl CylinderFunction {
    pub fn new(outer: Outer, directions: Vec<ScalarField>) -> Self {
        assert_eq!(outer.arity(), directions.len());
        CylinderFunction { outer, directions }
    }

    pub fn pairings(&self, omega: &MarkedConfiguration<Scalar>) -> Vec<Scalar> {
        self.directions.iter().map(|f| omega.pair(f, Weighting::Marked)).collect()
    }

    pub fn eval(&self, omega: &MarkedConfiguration<Scalar>) -> Scalar {
        self.outer.value(&self.pairings(omega))
    }

    pub fn to_expr(&self) -> Expr {
        Expr::Outer {
            g: self.outer.clone(),
            children: self.directions.iter().cloned().map(Expr::MarkedPair).collect(),
        }
    }
}

/// Expression tree closing the cylinder class under directional derivatives
/// and multiplication by logarithmic derivatives.
#[derive(Clone)]
pub enum Expr {
    Constant(Scalar),
    MarkedPair(ScalarField),
    UnmarkedPair(ScalarField),
    Outer { g: Outer, children: Vec<Expr> },
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, omega: &MarkedConfiguration<Scalar>) -> Scalar {
        match self {
            Expr::Constant(c) => *c,
            Expr::MarkedPair(f) => omega.pair(f, Weighting::Marked),
            Expr::UnmarkedPair(f) => omega.pair(f, Weighting::Unmarked),
            Expr::Outer { g, children } => {
                let u: Vec<Scalar> = children.iter().map(|c| c.eval(omega)).collect();
                g.value(&u)
            }
            Expr::Sum(terms) => terms.iter().map(|t| t.eval(omega)).sum(),
            Expr::Product(factors) => factors.iter().map(|t| t.eval(omega)).product(),
        }
    }

    /// Structural directional derivative along `v`: pairings differentiate to
    /// pairings of `<grad psi, v>`, outer compositions by the chain rule,
    /// products by the Leibniz rule. Errors when a field lacks the needed
    /// derivative order.
    pub fn directional(&self, v: &CompactVectorField) -> Result<Expr> {
        Ok(match self {
            Expr::Constant(_) => Expr::Constant(0.0),
            Expr::MarkedPair(f) => Expr::MarkedPair(f.directional(v)?),
            Expr::UnmarkedPair(f) => Expr::UnmarkedPair(f.directional(v)?),
            Expr::Outer { g, children } => {
                let mut terms = Vec::with_capacity(children.len());
                for i in 0..children.len() {
                    terms.push(Expr::Product(vec![
                        Expr::Outer { g: g.partial(i)?, children: children.clone() },
                        children[i].directional(v)?,
                    ]));
                }
                Expr::Sum(terms)
            }
            Expr::Sum(terms) => {
                Expr::Sum(terms.iter().map(|t| t.directional(v)).collect::<Result<_>>()?)
            }
            Expr::Product(factors) => {
                let mut terms = Vec::with_capacity(factors.len());
                for i in 0..factors.len() {
                    let mut fs = factors.clone();
                    fs[i] = factors[i].directional(v)?;
                    terms.push(Expr::Product(fs));
                }
                Expr::Sum(terms)
            }
        })
    }

    /// Canonical s-expression form; fields are shown by their support box.
    pub fn render(&self) -> String {
        fn window_str(f: &ScalarField) -> String {
            let w = f.support();
            let axes: Vec<String> = (0..w.dim())
                .map(|k| format!("({},{})", w.lower()[k], w.upper()[k]))
                .collect();
            axes.join("")
        }
        match self {
            Expr::Constant(c) => format!("(const {c})"),
            Expr::MarkedPair(f) => format!("(pair-m {})", window_str(f)),
            Expr::UnmarkedPair(f) => format!("(pair-u {})", window_str(f)),
            Expr::Outer { g, children } => {
                let inner: Vec<String> = children.iter().map(|c| c.render()).collect();
                format!("({} {})", g.name(), inner.join(" "))
            }
            Expr::Sum(terms) => {
                let inner: Vec<String> = terms.iter().map(|c| c.render()).collect();
                format!("(+ {})", inner.join(" "))
            }
            Expr::Product(factors) => {
                let inner: Vec<String> = factors.iter().map(|c| c.render()).collect();
                format!("(* {})", inner.join(" "))
            }
        }
    }
}

/// How to compute a directional derivative: the structural chain rule or a
/// central difference along the flow of `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivMethod {
    Analytic,
    FlowFd { h: Scalar },
}

pub fn directional_derivative(
    f: &Expr,
    v: &CompactVectorField,
    omega: &MarkedConfiguration<Scalar>,
    method: DerivMethod,
) -> Result<Scalar> {
    match method {
        DerivMethod::Analytic => Ok(f.directional(v)?.eval(omega)),
        DerivMethod::FlowFd { h } => {
            assert!(h > 0.0);
            let plus = f.eval(&omega.pushforward(v, h)?);
            let minus = f.eval(&omega.pushforward(v, -h)?);
            Ok((plus - minus) / (2.0 * h))
        }
    }
}

/// A finitely supported section of the tangent bundle: a vector field over X
/// read off at atom positions.
#[derive(Clone)]
pub enum Section {
    /// `x -> sum_i c_i grad phi_i(x)`.
    GradientCombination { coeffs: Vec<Scalar>, fields: Vec<ScalarField> },
    /// A constant-in-omega lifting of a vector field on X.
    Constant(CompactVectorField),
}

impl Section {
    pub fn value(&self, x: &[Scalar]) -> Result<Vec<Scalar>> {
        match self {
            Section::GradientCombination { coeffs, fields } => {
                let d = fields[0].dim();
                let mut out = vec![0.0; d];
                for (c, f) in coeffs.iter().zip(fields) {
                    for (o, g) in out.iter_mut().zip(f.gradient(x)?) {
                        *o += c * g;
                    }
                }
                Ok(out)
            }
            Section::Constant(v) => Ok(v.value(x)),
        }
    }
}

/// Intrinsic gradient of a cylinder function at `omega`:
/// `x -> sum_i d_i g(pairings) grad phi_i(x)`.
pub fn intrinsic_gradient(
    f: &CylinderFunction,
    omega: &MarkedConfiguration<Scalar>,
) -> Result<Section> {
    let coeffs = f.outer.gradient(&f.pairings(omega))?;
    for phi in &f.directions {
        if !phi.has_gradient() {
            return Err(Error::DerivativeDepth("gradient of a cylinder direction".into()));
        }
    }
    Ok(Section::GradientCombination { coeffs, fields: f.directions.clone() })
}

/// Mark-weighted tangent inner product `sum_atoms s_x <V1(x), V2(x)>`.
pub fn tangent_inner(
    v1: &Section,
    v2: &Section,
    omega: &MarkedConfiguration<Scalar>,
) -> Result<Scalar> {
    let mut total = 0.0;
    for (x, s) in omega.atoms() {
        total += s * dot(&v1.value(x)?, &v2.value(x)?);
    }
    Ok(total)
}

/// Logarithmic derivative `B_v(omega) = sum over atom positions of
/// beta_v(x)`; marks do not enter.
pub fn log_derivative_b(
    rho: &IntensityDensity,
    v: &CompactVectorField,
    omega: &MarkedConfiguration<Scalar>,
) -> Scalar {
    omega.atoms().iter().map(|(x, _)| beta_v_eval(rho, v, x)).sum()
}

/// Finite sum of cylinder-coefficient vector fields
/// `V_omega(x) = sum_j G_j(omega) v_j(x)`.
#[derive(Clone)]
pub struct CylinderVectorField {
    pub terms: Vec<(CylinderFunction, CompactVectorField)>,
}

impl CylinderVectorField {
    pub fn value(&self, omega: &MarkedConfiguration<Scalar>, x: &[Scalar]) -> Vec<Scalar> {
        let d = self.terms[0].1.dim();
        let mut out = vec![0.0; d];
        for (g, v) in &self.terms {
            let c = g.eval(omega);
            for (o, vi) in out.iter_mut().zip(v.value(x)) {
                *o += c * vi;
            }
        }
        out
    }
}

/// Divergence of a cylinder vector field:
/// `sum_j <grad G_j, v_j>_{T_omega} + sum_j B_{v_j}(omega) G_j(omega)`.
pub fn divergence(
    v: &CylinderVectorField,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
) -> Result<Scalar> {
    let mut total = 0.0;
    for (g, vj) in &v.terms {
        let grad = intrinsic_gradient(g, omega)?;
        total += tangent_inner(&grad, &Section::Constant(vj.clone()), omega)?;
        total += log_derivative_b(rho, vj, omega) * g.eval(omega);
    }
    Ok(total)
}

/// The three candidate weightings of the second-order operator; they differ
/// only in which measure each term integrates against and coincide when all
/// marks equal 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletMode {
    /// `-div(grad F)` in the mark-weighted tangent metric: Hessian term
    /// against the compound measure, drift term against the position set.
    OmegaMetric,
    /// Mark-squared Hessian weights, drift against the compound measure.
    GammaMetric,
    /// Every term against the compound measure.
    LiteralWeighting,
}

/// Second-order operator on cylinder functions.
pub fn dirichlet_apply(
    f: &CylinderFunction,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
    mode: DirichletMode,
) -> Result<Scalar> {
    let pairs = f.pairings(omega);
    let dg = f.outer.gradient(&pairs)?;
    let hg = f.outer.hessian(&pairs)?;
    let n = f.directions.len();
    let mut total = 0.0;
    // Hessian block: -sum_ij d2_ij g * weighted sum of <grad phi_i, grad phi_j>
    for i in 0..n {
        for j in 0..n {
            if hg[i][j] == 0.0 {
                continue;
            }
            let mut w = 0.0;
            for (x, s) in omega.atoms() {
                let gi = f.directions[i].gradient(x)?;
                let gj = f.directions[j].gradient(x)?;
                let weight = match mode {
                    DirichletMode::OmegaMetric | DirichletMode::LiteralWeighting => *s,
                    DirichletMode::GammaMetric => s * s,
                };
                w += weight * dot(&gi, &gj);
            }
            total -= hg[i][j] * w;
        }
    }
    // drift block: -sum_i d_i g * pairing of (laplacian phi_i + <beta, grad phi_i>)
    for i in 0..n {
        if dg[i] == 0.0 {
            continue;
        }
        let mut w = 0.0;
        for (x, s) in omega.atoms() {
            let drift = f.directions[i].laplacian(x)?
                + dot(&rho.beta(x), &f.directions[i].gradient(x)?);
            let weight = match mode {
                DirichletMode::OmegaMetric => 1.0,
                DirichletMode::GammaMetric | DirichletMode::LiteralWeighting => *s,
            };
            w += weight * drift;
        }
        total -= dg[i] * w;
    }
    Ok(total)
}

/// Square-field form `Gamma(F, G)(omega) = <grad F, grad G>_{T_omega}`.
pub fn carre(
    f: &CylinderFunction,
    g: &CylinderFunction,
    omega: &MarkedConfiguration<Scalar>,
) -> Result<Scalar> {
    tangent_inner(&intrinsic_gradient(f, omega)?, &intrinsic_gradient(g, omega)?, omega)
}

/// Time-`t` flow diffeomorphism of a compactly supported field.
#[derive(Clone)]
pub struct Diffeo {
    pub generator: CompactVectorField,
    pub time: Scalar,
}

impl Diffeo {
    pub fn new(generator: CompactVectorField, time: Scalar) -> Self {
        Diffeo { generator, time }
    }

    pub fn inverse(&self) -> Diffeo {
        Diffeo { generator: self.generator.clone(), time: -self.time }
    }

    pub fn is_identity(&self) -> bool {
        self.time == 0.0
    }

    pub fn apply(&self, omega: &MarkedConfiguration<Scalar>) -> Result<MarkedConfiguration<Scalar>> {
        omega.pushforward(&self.generator, self.time)
    }
}

/// Pushforward density of the measure under a diffeomorphism, with the
/// configuration-independent exponent precomputed by quadrature:
/// `p(omega) = prod_{x in positions} p_sigma(x) * exp(lambda_tau *
/// int (1 - p_sigma) dsigma)`. Depends on marks only through positions.
#[derive(Clone)]
pub struct RnDensity {
    phi: Diffeo,
    rho: IntensityDensity,
    log_exponent: Scalar,
}

impl RnDensity {
    /// `tol` is the absolute quadrature tolerance for the exponent integral.
    pub fn new(
        phi: &Diffeo,
        rho: &IntensityDensity,
        tau: &MarkLaw,
        tol: Scalar,
    ) -> Result<Self> {
        let support = phi.generator.support().clone();
        let (v, r, t) = (phi.generator.clone(), rho.clone(), phi.time);
        let integrand = move |x: &[Scalar]| -> Scalar {
            let p = v.density_ratio(&r, t, x).expect("flow step underflow");
            (1.0 - p) * r.value(x)
        };
        let res = integrate_box(&integrand, support.lower(), support.upper(), tol);
        if !res.converged {
            return Err(Error::QuadratureTolerance { estimate: res.value, error: res.error });
        }
        Ok(RnDensity {
            phi: phi.clone(),
            rho: rho.clone(),
            log_exponent: tau.total_mass() * res.value,
        })
    }

    pub fn eval(&self, omega: &MarkedConfiguration<Scalar>) -> Result<Scalar> {
        let mut log_p = self.log_exponent;
        for (x, _) in omega.atoms() {
            log_p += self.phi.generator.density_ratio(&self.rho, self.phi.time, x)?.ln();
        }
        Ok(log_p.exp())
    }
}

/// One-shot pushforward density evaluation.
pub fn rn_density(
    phi: &Diffeo,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
    tau: &MarkLaw,
) -> Result<Scalar> {
    RnDensity::new(phi, rho, tau, 1e-10)?.eval(omega)
}

/// Multiplicative-representation operator `(V(phi) F)(omega) =
/// F(phi omega) sqrt(p_{phi^{-1}}(omega))`. The inverse-flow density is the
/// weight that makes `V` a unitary homomorphism under the cocycle identity
/// `p_{t+s}(omega) = p_t(omega) p_s(phi_{-t} omega)`, and whose time
/// derivative at zero is `+(1/2) B_v`.
pub fn rep_apply(
    phi: &Diffeo,
    f: &Expr,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
    tau: &MarkLaw,
) -> Result<Scalar> {
    let moved = phi.apply(omega)?;
    Ok(f.eval(&moved) * rn_density(&phi.inverse(), omega, rho, tau)?.sqrt())
}

/// As [`rep_apply`] with a precomputed density of the *inverse*
/// diffeomorphism: `rep_apply(phi, ..)` equals
/// `rep_apply_with(&RnDensity::new(&phi.inverse(), ..)?, ..)`.
pub fn rep_apply_with(
    inverse_density: &RnDensity,
    f: &Expr,
    omega: &MarkedConfiguration<Scalar>,
) -> Result<Scalar> {
    let moved = inverse_density.phi.inverse().apply(omega)?;
    Ok(f.eval(&moved) * inverse_density.eval(omega)?.sqrt())
}

/// `beta_v` as a scalar field: `<beta, v> + div v`, supported in supp v.
/// Its gradient needs the Hessians of `rho` and `v`; when `v` carries no
/// Hessian the field is value-only.
pub fn beta_v_field(rho: &IntensityDensity, v: &CompactVectorField) -> ScalarField {
    let support = v.support().clone();
    let (r1, v1) = (rho.clone(), v.clone());
    let value: Arc<dyn Fn(&[Scalar]) -> Scalar + Send + Sync> =
        Arc::new(move |x: &[Scalar]| beta_v_eval(&r1, &v1, x));
    let gradient = if v.hessian(support.lower()).is_some() {
        let (r2, v2) = (rho.clone(), v.clone());
        let d = support.dim();
        let f: Arc<dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync> = Arc::new(move |x: &[Scalar]| {
            let b = r2.beta(x);
            let jb = r2.beta_jacobian(x);
            let vv = v2.value(x);
            let jv = v2.jacobian(x);
            let hv = v2.hessian(x).expect("hessian checked at construction");
            (0..d)
                .map(|k| {
                    let mut g = 0.0;
                    for i in 0..d {
                        g += jb[i][k] * vv[i] + b[i] * jv[i][k] + hv[i][i][k];
                    }
                    g
                })
                .collect()
        });
        Some(f)
    } else {
        None
    };
    ScalarField::from_parts(value, gradient, None, support)
}

/// Value of the self-adjoint generator companion
/// `A(v) F = grad_v F + (1/2) B_v F` at `omega`.
pub fn lift_a_apply(
    v: &CompactVectorField,
    f: &Expr,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
) -> Result<Scalar> {
    let deriv = directional_derivative(f, v, omega, DerivMethod::Analytic)?;
    Ok(deriv + 0.5 * log_derivative_b(rho, v, omega) * f.eval(omega))
}

/// Symbolic form of `A(v) F`; supports one further application provided the
/// fields of `F` carry one more derivative order and `v` has a Hessian.
pub fn lift_a_symbolic(
    v: &CompactVectorField,
    f: &Expr,
    rho: &IntensityDensity,
) -> Result<Expr> {
    Ok(Expr::Sum(vec![
        f.directional(v)?,
        Expr::Product(vec![
            Expr::Constant(0.5),
            Expr::UnmarkedPair(beta_v_field(rho, v)),
            f.clone(),
        ]),
    ]))
}
