//! Monte Carlo certification of the closed-form identities: Laplace
//! functionals, moment formulas, integration by parts, operator symmetry,
//! quasi-invariance, the delta-mark reduction, commutation relations, and
//! stationarity of the diffusion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::calculus::{
    carre, dirichlet_apply, directional_derivative, CylinderFunction, DerivMethod, Diffeo,
    DirichletMode, RnDensity,
};
use crate::config::{MarkedConfiguration, ScalarField, SimpleConfiguration, Weighting};
use crate::dynamics::{simulate, DynamicsMode};
use crate::quad::integrate_box;
use crate::real::mean_stderr;
use crate::sampler::{
    sample_compound_with_mass, sample_marked, sample_simple_with_mass, MarkLaw, RandomStream,
};
use crate::space::{CompactVectorField, IntensityDensity, Window};
use crate::{Error, Result, Scalar};

/// One Monte Carlo certification row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MCReport {
    /// Check instance name.
    pub name: String,
    /// Slug of the identity under test.
    pub anchor: String,
    pub estimate: Scalar,
    pub stderr: Scalar,
    pub target: Scalar,
    pub z: Scalar,
    pub pass: bool,
    pub n_samples: u64,
    pub seed: u64,
}

impl MCReport {
    pub fn from_stats(
        name: impl Into<String>,
        anchor: impl Into<String>,
        estimate: Scalar,
        stderr: Scalar,
        target: Scalar,
        n_samples: u64,
        seed: u64,
        z_max: Scalar,
    ) -> Self {
        let z = if stderr > 0.0 {
            (estimate - target) / stderr
        } else if estimate == target {
            0.0
        } else {
            Scalar::INFINITY
        };
        MCReport {
            name: name.into(),
            anchor: anchor.into(),
            estimate,
            stderr,
            target,
            z,
            pass: z.abs() < z_max,
            n_samples,
            seed,
        }
    }

    /// Row for a deterministic max-residual check: `z = residual / tol`,
    /// pass iff the residual stays below the tolerance.
    pub fn from_residual(
        name: impl Into<String>,
        anchor: impl Into<String>,
        residual: Scalar,
        tol: Scalar,
        n_samples: u64,
        seed: u64,
    ) -> Self {
        MCReport {
            name: name.into(),
            anchor: anchor.into(),
            estimate: residual,
            stderr: 0.0,
            target: 0.0,
            z: residual / tol,
            pass: residual < tol,
            n_samples,
            seed,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{} {:<34} {:<26} estimate={:+.6e} target={:+.6e} stderr={:.3e} z={:+.3}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.anchor,
            self.estimate,
            self.target,
            self.stderr,
            self.z
        )
    }
}

/// The measure under test plus the cached window mass.
#[derive(Clone)]
pub struct Fixture {
    pub rho: IntensityDensity,
    pub tau: MarkLaw,
    pub window: Window,
    pub sigma_mass: Scalar,
}

impl Fixture {
    pub fn new(rho: IntensityDensity, tau: MarkLaw) -> Result<Self> {
        let window = rho.domain().clone();
        let sigma_mass = rho.sigma_mass(&window, 1e-10)?;
        Ok(Fixture { rho, tau, window, sigma_mass })
    }

    /// One compound sample.
    pub fn sample(&self, stream: RandomStream) -> Result<MarkedConfiguration<Scalar>> {
        sample_compound_with_mass(&self.rho, &self.tau, &self.window, self.sigma_mass, stream)
    }

    pub fn sample_simple(
        &self,
        scale: Scalar,
        stream: RandomStream,
    ) -> Result<SimpleConfiguration> {
        sample_simple_with_mass(&self.rho, scale, &self.window, self.sigma_mass, stream)
    }
}

fn finite(v: Scalar, stream: RandomStream) -> Result<Scalar> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { stream_id: stream.stream_id })
    }
}

/// Mean and standard error of `functional` over `n` i.i.d. compound samples,
/// replicas on streams `stream.derive(0..n)`, reduced pairwise.
pub fn mc_expect(
    fixture: &Fixture,
    functional: &(dyn Fn(&MarkedConfiguration<Scalar>) -> Scalar + Sync),
    n: u64,
    stream: RandomStream,
) -> Result<(Scalar, Scalar)> {
    let values: Vec<Scalar> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            finite(functional(&fixture.sample(s)?), s)
        })
        .collect::<Result<_>>()?;
    Ok(mean_stderr(&values))
}

/// Which sampler a Laplace-functional check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Simple,
    Compound,
}

/// Laplace functional against its closed form: `E exp<omega, f>` versus
/// `exp(int (e^f - 1) dsigma)` (simple) or
/// `exp(lambda_tau int (M(f(x)) - 1) dsigma)` with `M` the normalized mark
/// mgf (compound).
pub fn check_laplace(
    fixture: &Fixture,
    f: &ScalarField,
    measure: MeasureKind,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<MCReport> {
    let support = f.support().clone();
    assert!(support.inside(&fixture.window), "test function escapes the window");
    let (estimate, stderr, target, name) = match measure {
        MeasureKind::Simple => {
            let rho = fixture.rho.clone();
            let fc = f.clone();
            let integrand =
                move |x: &[Scalar]| ((fc.value(x)).exp() - 1.0) * rho.value(x);
            let q = integrate_box(&integrand, support.lower(), support.upper(), 1e-10);
            if !q.converged {
                return Err(Error::QuadratureTolerance { estimate: q.value, error: q.error });
            }
            let values: Vec<Scalar> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let s = stream.derive(i);
                    let gamma = fixture.sample_simple(1.0, s)?;
                    finite(
                        gamma.points().iter().map(|p| f.value(p)).sum::<Scalar>().exp(),
                        s,
                    )
                })
                .collect::<Result<_>>()?;
            let (m, se) = mean_stderr(&values);
            (m, se, q.value.exp(), "laplace-simple")
        }
        MeasureKind::Compound => {
            let rho = fixture.rho.clone();
            let tau = fixture.tau.clone();
            let fc = f.clone();
            let integrand =
                move |x: &[Scalar]| (tau.mgf(fc.value(x)) - 1.0) * rho.value(x);
            let q = integrate_box(&integrand, support.lower(), support.upper(), 1e-10);
            if !q.converged {
                return Err(Error::QuadratureTolerance { estimate: q.value, error: q.error });
            }
            let (m, se) = mc_expect(
                fixture,
                &|omega| omega.pair(f, Weighting::Marked).exp(),
                n,
                stream,
            )?;
            (m, se, (fixture.tau.total_mass() * q.value).exp(), "laplace-compound")
        }
    };
    Ok(MCReport::from_stats(name, "laplace-functional", estimate, stderr, target, n, stream.seed, z_max))
}

/// Laplace functional of the position-mark process with an independent
/// uniform mark on `(mark_lo, mark_hi)` and a joint test function on the
/// product space: `E exp(sum f(x_i, m_i))` versus
/// `exp(int int (e^{f(x,m)} - 1) q(m) dm dsigma(x))`.
pub fn check_laplace_marked(
    fixture: &Fixture,
    joint_f: &ScalarField,
    mark_lo: Scalar,
    mark_hi: Scalar,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<MCReport> {
    assert_eq!(joint_f.dim(), fixture.window.dim() + 1);
    assert!(mark_lo < mark_hi);
    let support = joint_f.support().clone();
    let d = fixture.window.dim();
    let rho = fixture.rho.clone();
    let fc = joint_f.clone();
    let q_density = 1.0 / (mark_hi - mark_lo);
    let integrand = move |xm: &[Scalar]| ((fc.value(xm)).exp() - 1.0) * rho.value(&xm[..d]) * q_density;
    let mut lower = support.lower().to_vec();
    let mut upper = support.upper().to_vec();
    // marks live on the configured interval; clip the last axis
    lower[d] = lower[d].max(mark_lo);
    upper[d] = upper[d].min(mark_hi);
    if lower[d] >= upper[d] {
        return Err(Error::Config { line: 0, message: "mark interval misses the test support".into() });
    }
    let q = integrate_box(&integrand, &lower, &upper, 1e-10);
    if !q.converged {
        return Err(Error::QuadratureTolerance { estimate: q.value, error: q.error });
    }
    let mark_sampler = move |rng: &mut ChaCha8Rng| vec![rng.random_range(mark_lo..mark_hi)];
    let values: Vec<Scalar> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            let omega = sample_marked(&fixture.rho, &mark_sampler, &fixture.window, s)?;
            let total: Scalar = omega
                .atoms()
                .iter()
                .map(|(x, m)| {
                    let mut xm = x.clone();
                    xm.extend_from_slice(m);
                    joint_f.value(&xm)
                })
                .sum();
            finite(total.exp(), s)
        })
        .collect::<Result<_>>()?;
    let (m, se) = mean_stderr(&values);
    Ok(MCReport::from_stats(
        "laplace-marked",
        "laplace-functional",
        m,
        se,
        q.value.exp(),
        n,
        stream.seed,
        z_max,
    ))
}

/// First and second moment of `<omega, f>` against
/// `m1 int f dsigma` and `m2 int f^2 dsigma + m1^2 (int f dsigma)^2`.
pub fn check_moments(
    fixture: &Fixture,
    f: &ScalarField,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    let support = f.support().clone();
    let rho = fixture.rho.clone();
    let (f1, f2) = (f.clone(), f.clone());
    let rho2 = rho.clone();
    let i1 = integrate_box(
        &move |x: &[Scalar]| f1.value(x) * rho.value(x),
        support.lower(),
        support.upper(),
        1e-11,
    );
    let i2 = integrate_box(
        &move |x: &[Scalar]| f2.value(x).powi(2) * rho2.value(x),
        support.lower(),
        support.upper(),
        1e-11,
    );
    for q in [&i1, &i2] {
        if !q.converged {
            return Err(Error::QuadratureTolerance { estimate: q.value, error: q.error });
        }
    }
    let m1 = fixture.tau.moment(1);
    let m2 = fixture.tau.moment(2);
    let first_target = m1 * i1.value;
    let second_target = m2 * i2.value + m1 * m1 * i1.value * i1.value;
    let pairs: Vec<(Scalar, Scalar)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            let p = fixture.sample(s)?.pair(f, Weighting::Marked);
            finite(p, s).map(|p| (p, p * p))
        })
        .collect::<Result<_>>()?;
    let firsts: Vec<Scalar> = pairs.iter().map(|p| p.0).collect();
    let seconds: Vec<Scalar> = pairs.iter().map(|p| p.1).collect();
    let (e1, s1) = mean_stderr(&firsts);
    let (e2, s2) = mean_stderr(&seconds);
    Ok(vec![
        MCReport::from_stats("moment-first", "pairing-moments", e1, s1, first_target, n, stream.seed, z_max),
        MCReport::from_stats("moment-second", "pairing-moments", e2, s2, second_target, n, stream.seed, z_max),
    ])
}

/// Integration by parts: paired estimator of
/// `(grad_v F) G + F (grad_v G) + F G B_v`, target 0.
pub fn check_ibp(
    fixture: &Fixture,
    f: &CylinderFunction,
    g: &CylinderFunction,
    v: &CompactVectorField,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<MCReport> {
    let fe = f.to_expr();
    let ge = g.to_expr();
    let rho = fixture.rho.clone();
    let functional = move |omega: &MarkedConfiguration<Scalar>| -> Scalar {
        let df = directional_derivative(&fe, v, omega, DerivMethod::Analytic).unwrap();
        let dg = directional_derivative(&ge, v, omega, DerivMethod::Analytic).unwrap();
        let bv = crate::calculus::log_derivative_b(&rho, v, omega);
        df * ge.eval(omega) + fe.eval(omega) * dg + fe.eval(omega) * ge.eval(omega) * bv
    };
    let (m, se) = mc_expect(fixture, &functional, n, stream)?;
    Ok(MCReport::from_stats("ibp-residual", "integration-by-parts", m, se, 0.0, n, stream.seed, z_max))
}

/// Operator symmetry: paired estimator of `Gamma(F,G) - (HF) G` (target 0)
/// plus the adjointness residual `(HF) G - F (HG)`.
pub fn check_symmetry(
    fixture: &Fixture,
    f: &CylinderFunction,
    g: &CylinderFunction,
    mode: DirichletMode,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    let mode_tag = match mode {
        DirichletMode::OmegaMetric => "omega-metric",
        DirichletMode::GammaMetric => "gamma-metric",
        DirichletMode::LiteralWeighting => "literal-weighting",
    };
    let rho = fixture.rho.clone();
    let pairs: Vec<(Scalar, Scalar)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            let omega = fixture.sample(s)?;
            let gamma_fg = carre(f, g, &omega).unwrap();
            let hf = dirichlet_apply(f, &omega, &rho, mode).unwrap();
            let hg = dirichlet_apply(g, &omega, &rho, mode).unwrap();
            let fv = f.eval(&omega);
            let gv = g.eval(&omega);
            finite(gamma_fg - hf * gv, s).map(|a| (a, hf * gv - fv * hg))
        })
        .collect::<Result<_>>()?;
    let form: Vec<Scalar> = pairs.iter().map(|p| p.0).collect();
    let adj: Vec<Scalar> = pairs.iter().map(|p| p.1).collect();
    let (e1, s1) = mean_stderr(&form);
    let (e2, s2) = mean_stderr(&adj);
    Ok(vec![
        MCReport::from_stats(
            format!("symmetry-{mode_tag}"),
            "form-operator-duality",
            e1,
            s1,
            0.0,
            n,
            stream.seed,
            z_max,
        ),
        MCReport::from_stats(
            format!("adjoint-{mode_tag}"),
            "operator-self-adjointness",
            e2,
            s2,
            0.0,
            n,
            stream.seed,
            z_max,
        ),
    ])
}

/// Quasi-invariance of the measure under a flow diffeomorphism: paired
/// change-of-variables residual, density normalization, and a transported
/// Laplace-functional comparison.
pub fn check_quasi_invariance(
    fixture: &Fixture,
    phi: &Diffeo,
    f: &CylinderFunction,
    laplace_f: &ScalarField,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    let density = RnDensity::new(phi, &fixture.rho, &fixture.tau, 1e-11)?;
    let fe = f.to_expr();
    let triples: Vec<(Scalar, Scalar, Scalar)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            let omega = fixture.sample(s)?;
            let p = density.eval(&omega)?;
            let moved = phi.apply(&omega)?;
            let resid = fe.eval(&moved) - fe.eval(&omega) * p;
            let lap = moved.pair(laplace_f, Weighting::Marked).exp();
            finite(resid, s)?;
            finite(p, s)?;
            finite(lap, s).map(|lap| (resid, p, lap))
        })
        .collect::<Result<_>>()?;
    let resid: Vec<Scalar> = triples.iter().map(|t| t.0).collect();
    let dens: Vec<Scalar> = triples.iter().map(|t| t.1).collect();
    let lap: Vec<Scalar> = triples.iter().map(|t| t.2).collect();
    let (e1, s1) = mean_stderr(&resid);
    let (e2, s2) = mean_stderr(&dens);
    let (e3, s3) = mean_stderr(&lap);
    // transported closed form: the pushforward measure is the compound measure
    // with intensity density transported along the flow
    let rho = fixture.rho.clone();
    let tau = fixture.tau.clone();
    let v = phi.generator.clone();
    let t = phi.time;
    let fc = laplace_f.clone();
    let support = laplace_f.support().hull(phi.generator.support());
    let integrand = move |x: &[Scalar]| {
        let y = v.flow(t, x).expect("flow step underflow").endpoint;
        (tau.mgf(fc.value(&y)) - 1.0) * rho.value(x)
    };
    let q = integrate_box(&integrand, support.lower(), support.upper(), 1e-10);
    if !q.converged {
        return Err(Error::QuadratureTolerance { estimate: q.value, error: q.error });
    }
    let target = (fixture.tau.total_mass() * q.value).exp();
    Ok(vec![
        MCReport::from_stats("qi-change-of-variables", "quasi-invariance", e1, s1, 0.0, n, stream.seed, z_max),
        MCReport::from_stats("qi-density-normalization", "quasi-invariance", e2, s2, 1.0, n, stream.seed, z_max),
        MCReport::from_stats("qi-transported-laplace", "pushforward-intensity", e3, s3, target, n, stream.seed, z_max),
    ])
}

/// Delta-mark reduction: the compound sampler with a unit point-mass mark law
/// must agree with the simple sampler constructively (shared streams) and
/// statistically (independent streams).
pub fn check_reduction(
    fixture_rho: &IntensityDensity,
    f: &ScalarField,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    let tau = MarkLaw::delta(1.0, 1.0);
    let delta_fixture = Fixture::new(fixture_rho.clone(), tau)?;
    // constructive: identical positions under shared seeds
    let mut mismatches = 0u64;
    let probe = n.min(200);
    for i in 0..probe {
        let s = stream.derive(i);
        let omega = delta_fixture.sample(s)?;
        let gamma = delta_fixture.sample_simple(1.0, s)?;
        if omega.positions() != gamma {
            mismatches += 1;
        }
    }
    let constructive = MCReport::from_residual(
        "reduction-constructive",
        "delta-mark-reduction",
        mismatches as Scalar,
        1.0,
        probe,
        stream.seed,
    );
    // statistical: two-sample comparisons on disjoint streams
    let lap_a: Vec<Scalar> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            finite(delta_fixture.sample(s)?.pair(f, Weighting::Marked).exp(), s)
        })
        .collect::<Result<_>>()?;
    let lap_b: Vec<Scalar> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(n + i);
            let gamma = delta_fixture.sample_simple(1.0, s)?;
            finite(gamma.points().iter().map(|p| f.value(p)).sum::<Scalar>().exp(), s)
        })
        .collect::<Result<_>>()?;
    let (ma, sa) = mean_stderr(&lap_a);
    let (mb, sb) = mean_stderr(&lap_b);
    let laplace = MCReport::from_stats(
        "reduction-laplace",
        "delta-mark-reduction",
        ma - mb,
        (sa * sa + sb * sb).sqrt(),
        0.0,
        2 * n,
        stream.seed,
        z_max,
    );
    let mom_a: Vec<Scalar> = lap_a.iter().map(|v| v.ln()).collect();
    let mom_b: Vec<Scalar> = lap_b.iter().map(|v| v.ln()).collect();
    let (ma2, sa2) = mean_stderr(&mom_a);
    let (mb2, sb2) = mean_stderr(&mom_b);
    let moment = MCReport::from_stats(
        "reduction-moment",
        "delta-mark-reduction",
        ma2 - mb2,
        (sa2 * sa2 + sb2 * sb2).sqrt(),
        0.0,
        2 * n,
        stream.seed,
        z_max,
    );
    Ok(vec![constructive, laplace, moment])
}

/// Commutator of the generator family on sampled configurations:
/// `[A(v1), A(v2)] F = A([v1, v2]) F`, reported as the max relative residual.
pub fn check_commutation(
    fixture: &Fixture,
    v1: &CompactVectorField,
    v2: &CompactVectorField,
    f: &CylinderFunction,
    n_omegas: u64,
    stream: RandomStream,
    tol: Scalar,
) -> Result<MCReport> {
    use crate::calculus::{lift_a_apply, lift_a_symbolic};
    use crate::space::lie_bracket;
    let fe = f.to_expr();
    let a1f = lift_a_symbolic(v1, &fe, &fixture.rho)?;
    let a2f = lift_a_symbolic(v2, &fe, &fixture.rho)?;
    let br = lie_bracket(v1, v2);
    let mut max_resid = 0.0;
    for i in 0..n_omegas {
        let omega = fixture.sample(stream.derive(i))?;
        let lhs = lift_a_apply(v1, &a2f, &omega, &fixture.rho)?
            - lift_a_apply(v2, &a1f, &omega, &fixture.rho)?;
        let rhs = lift_a_apply(&br, &fe, &omega, &fixture.rho)?;
        let resid = (lhs - rhs).abs() / (1.0 + rhs.abs());
        if resid > max_resid {
            max_resid = resid;
        }
    }
    Ok(MCReport::from_residual(
        "commutator-bracket",
        "generator-commutation",
        max_resid,
        tol,
        n_omegas,
        stream.seed,
    ))
}

/// Flow finite-difference oracle for the generator family: the derivative of
/// the multiplicative representation along the flow at time zero equals
/// `A(v) F`. Richardson-extrapolated central differences; max relative
/// residual over sampled configurations.
pub fn check_generator_oracle(
    fixture: &Fixture,
    v: &CompactVectorField,
    f: &CylinderFunction,
    n_omegas: u64,
    stream: RandomStream,
    h: Scalar,
    tol: Scalar,
) -> Result<MCReport> {
    use crate::calculus::{lift_a_apply, rep_apply_with};
    let fe = f.to_expr();
    // rep_apply_with takes the inverse-flow density: V(phi_{+t}) pairs with
    // the density computed at time -t
    let dens = |t: Scalar| RnDensity::new(&Diffeo::new(v.clone(), t), &fixture.rho, &fixture.tau, 1e-12);
    let (dp, dm, dp2, dm2) = (dens(-h)?, dens(h)?, dens(-h / 2.0)?, dens(h / 2.0)?);
    let mut max_resid = 0.0;
    for i in 0..n_omegas {
        let omega = fixture.sample(stream.derive(i))?;
        let d_h = (rep_apply_with(&dp, &fe, &omega)? - rep_apply_with(&dm, &fe, &omega)?)
            / (2.0 * h);
        let d_h2 = (rep_apply_with(&dp2, &fe, &omega)? - rep_apply_with(&dm2, &fe, &omega)?) / h;
        let oracle = (4.0 * d_h2 - d_h) / 3.0;
        let exact = lift_a_apply(v, &fe, &omega, &fixture.rho)?;
        let resid = (oracle - exact).abs() / (1.0 + exact.abs());
        if resid > max_resid {
            max_resid = resid;
        }
    }
    Ok(MCReport::from_residual(
        "generator-flow-oracle",
        "generator-flow-derivative",
        max_resid,
        tol,
        n_omegas,
        stream.seed,
    ))
}

/// Stationarity of the diffusion started from the equilibrium law: paired
/// estimator of `F` at horizon `T` minus `F` at time zero.
pub fn check_stationarity(
    fixture: &Fixture,
    f: &CylinderFunction,
    mode: DynamicsMode,
    t_final: Scalar,
    dt: Scalar,
    n: u64,
    stream: RandomStream,
    z_max: Scalar,
) -> Result<MCReport> {
    let diffs: Vec<Scalar> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            let omega0 = fixture.sample(s)?;
            let f0 = f.eval(&omega0);
            let end = simulate(&omega0, &fixture.rho, dt, t_final, mode, s.derive(1 << 40))
                .pop()
                .unwrap();
            finite(f.eval(&end.configuration) - f0, s)
        })
        .collect::<Result<_>>()?;
    let (m, se) = mean_stderr(&diffs);
    let tag = match mode {
        DynamicsMode::MarkWeighted => "mark-weighted",
        DynamicsMode::Unit => "unit",
    };
    Ok(MCReport::from_stats(
        format!("stationarity-{tag}"),
        "equilibrium-invariance",
        m,
        se,
        0.0,
        n,
        stream.seed,
        z_max,
    ))
}

/// Structural versus flow finite-difference directional derivatives across
/// sampled configurations; max relative residual.
pub fn check_directional(
    fixture: &Fixture,
    v: &CompactVectorField,
    f: &CylinderFunction,
    n_omegas: u64,
    stream: RandomStream,
    tol: Scalar,
) -> Result<MCReport> {
    let fe = f.to_expr();
    let mut max_resid = 0.0;
    for i in 0..n_omegas {
        let omega = fixture.sample(stream.derive(i))?;
        let a = directional_derivative(&fe, v, &omega, DerivMethod::Analytic)?;
        let b = directional_derivative(&fe, v, &omega, DerivMethod::FlowFd { h: 1e-4 })?;
        let resid = (a - b).abs() / (1.0 + a.abs());
        if resid > max_resid {
            max_resid = resid;
        }
    }
    Ok(MCReport::from_residual(
        "directional-consistency",
        "chain-rule-vs-flow",
        max_resid,
        tol,
        n_omegas,
        stream.seed,
    ))
}

/// The standard test objects every suite run uses: bumps of radius 0.5
/// centered at 0 and +-0.3, scaled-bump vector fields.
pub struct StandardFixtures {
    pub f_bump: ScalarField,
    pub g_bump: ScalarField,
    pub h_bump: ScalarField,
    pub cyl_f: CylinderFunction,
    pub cyl_g: CylinderFunction,
    pub cyl_h: CylinderFunction,
    pub v1: CompactVectorField,
    pub v2: CompactVectorField,
    pub v3: CompactVectorField,
}

impl StandardFixtures {
    pub fn new() -> Self {
        use crate::calculus::Outer;
        use crate::space::Bump;
        let f_bump = ScalarField::from_bump(Bump::new(vec![0.0], vec![0.5], 0.8));
        let g_bump = ScalarField::from_bump(Bump::new(vec![0.3], vec![0.5], 1.0));
        let h_bump = ScalarField::from_bump(Bump::new(vec![-0.3], vec![0.5], 1.2));
        let cyl_f = CylinderFunction::new(Outer::tanh(vec![1.0]), vec![f_bump.clone()]);
        let cyl_g = CylinderFunction::new(Outer::tanh(vec![0.7]), vec![g_bump.clone()]);
        let cyl_h = CylinderFunction::new(Outer::exp(vec![0.4]), vec![h_bump.clone()]);
        let v1 = CompactVectorField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0), vec![0.4]);
        let v2 = CompactVectorField::from_bump(Bump::new(vec![0.3], vec![0.5], 1.0), vec![-0.3]);
        let v3 = CompactVectorField::from_bump(Bump::new(vec![-0.3], vec![0.5], 1.0), vec![0.35]);
        StandardFixtures { f_bump, g_bump, h_bump, cyl_f, cyl_g, cyl_h, v1, v2, v3 }
    }
}

impl Default for StandardFixtures {
    fn default() -> Self {
        Self::new()
    }
}

/// Stream-id block for check number `k`; blocks never overlap for n < 2^32.
fn block(seed: u64, k: u64) -> RandomStream {
    RandomStream::new(seed, k << 32)
}

/// The full certification suite on the given measure. Check names are stable;
/// identical `(fixture, n, seed, z_max)` reproduce the reports bit for bit.
pub fn standard_suite(
    fixture: &Fixture,
    seed: u64,
    n: u64,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    suite_filtered(fixture, seed, n, z_max, None)
}

/// Check-group names accepted by [`suite_filtered`].
pub const SUITE_GROUPS: [&str; 10] = [
    "laplace",
    "moments",
    "ibp",
    "symmetry",
    "quasi-invariance",
    "reduction",
    "commutation",
    "generator-oracle",
    "directional",
    "stationarity",
];

/// As [`standard_suite`], optionally restricted to one check group; a group
/// runs with the same streams as inside the full suite, so its reports match
/// the full run bit for bit.
pub fn suite_filtered(
    fixture: &Fixture,
    seed: u64,
    n: u64,
    z_max: Scalar,
    group: Option<&str>,
) -> Result<Vec<MCReport>> {
    if let Some(sel) = group {
        if !SUITE_GROUPS.contains(&sel) {
            return Err(Error::Config {
                line: 0,
                message: format!("unknown check `{sel}`; expected one of {SUITE_GROUPS:?}"),
            });
        }
    }
    let want = |g: &str| group.map_or(true, |sel| sel == g);
    let fx = StandardFixtures::new();
    let mut reports = Vec::new();
    if want("laplace") {
        reports.push(check_laplace(fixture, &fx.f_bump, MeasureKind::Simple, n, block(seed, 1), z_max)?);
        reports.push(check_laplace(fixture, &fx.f_bump, MeasureKind::Compound, n, block(seed, 2), z_max)?);
        let joint = ScalarField::from_bump(crate::space::Bump::new(
            vec![0.0, 1.5],
            vec![0.5, 1.0],
            0.5,
        ));
        reports.push(check_laplace_marked(fixture, &joint, 1.0, 2.0, n, block(seed, 3), z_max)?);
    }
    if want("moments") {
        reports.extend(check_moments(fixture, &fx.f_bump, n, block(seed, 4), z_max)?);
    }
    if want("ibp") {
        for (k, (f, g, v)) in [
            (&fx.cyl_f, &fx.cyl_g, &fx.v1),
            (&fx.cyl_g, &fx.cyl_h, &fx.v2),
            (&fx.cyl_h, &fx.cyl_f, &fx.v3),
        ]
        .iter()
        .enumerate()
        {
            let mut r = check_ibp(fixture, f, g, v, n, block(seed, 5 + k as u64), z_max)?;
            r.name = format!("ibp-residual-{}", k + 1);
            reports.push(r);
        }
    }
    if want("symmetry") {
        reports.extend(check_symmetry(
            fixture,
            &fx.cyl_f,
            &fx.cyl_g,
            DirichletMode::OmegaMetric,
            2 * n,
            block(seed, 8),
            z_max,
        )?);
    }
    if want("quasi-invariance") {
        let phi = Diffeo::new(fx.v1.clone(), 0.3);
        reports.extend(check_quasi_invariance(
            fixture,
            &phi,
            &fx.cyl_g,
            &fx.f_bump,
            n,
            block(seed, 9),
            z_max,
        )?);
    }
    if want("reduction") {
        reports.extend(check_reduction(&fixture.rho, &fx.f_bump, n / 2, block(seed, 10), z_max)?);
    }
    if want("commutation") {
        reports.push(check_commutation(fixture, &fx.v1, &fx.v2, &fx.cyl_f, 20, block(seed, 11), 1e-6)?);
    }
    if want("generator-oracle") {
        reports.push(check_generator_oracle(
            fixture,
            &fx.v1,
            &fx.cyl_g,
            10,
            block(seed, 12),
            1e-2,
            1e-6,
        )?);
    }
    if want("directional") {
        reports.push(check_directional(fixture, &fx.v1, &fx.cyl_f, 25, block(seed, 13), 1e-6)?);
    }
    if want("stationarity") {
        reports.push(check_stationarity(
            fixture,
            &fx.cyl_f,
            DynamicsMode::MarkWeighted,
            0.25,
            1e-3,
            n / 4,
            block(seed, 14),
            z_max,
        )?);
    }
    Ok(reports)
}

/// Outcome of the operator-weighting adjudication: symmetry of each candidate
/// weighting against the form, under mixed marks and under unit marks, plus
/// the empirical-generator cross-check.
pub fn adjudicate(
    fixture: &Fixture,
    seed: u64,
    n: u64,
    z_max: Scalar,
) -> Result<Vec<MCReport>> {
    use crate::dynamics::generator_estimate;
    let fx = StandardFixtures::new();
    let mut reports = Vec::new();
    for (k, mode) in [
        DirichletMode::OmegaMetric,
        DirichletMode::GammaMetric,
        DirichletMode::LiteralWeighting,
    ]
    .into_iter()
    .enumerate()
    {
        reports.extend(check_symmetry(
            fixture,
            &fx.cyl_f,
            &fx.cyl_g,
            mode,
            n,
            block(seed, 20 + k as u64),
            z_max,
        )?);
    }
    // unit marks: the three weightings coincide, so all must pass
    let delta = Fixture::new(fixture.rho.clone(), MarkLaw::delta(1.0, 1.0))?;
    for (k, mode) in [
        DirichletMode::OmegaMetric,
        DirichletMode::GammaMetric,
        DirichletMode::LiteralWeighting,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rs = check_symmetry(
            &delta,
            &fx.cyl_f,
            &fx.cyl_g,
            mode,
            n,
            block(seed, 30 + k as u64),
            z_max,
        )?;
        for r in &mut rs {
            r.name = format!("unit-marks-{}", r.name);
        }
        reports.extend(rs);
    }
    // generator cross-check on a designed mixed-mark configuration
    let omega = MarkedConfiguration::compound(vec![
        (vec![-0.2], 2.0),
        (vec![0.1], 1.0),
        (vec![0.25], 2.0),
    ])
    .unwrap();
    let gf = fx.cyl_f.clone();
    let est = generator_estimate(
        &gf,
        &omega,
        &fixture.rho,
        DynamicsMode::MarkWeighted,
        &[2e-3, 1e-3],
        n.max(100),
        block(seed, 40),
    )?;
    for (name, mode) in [
        ("generator-vs-omega-metric", DirichletMode::OmegaMetric),
        ("generator-vs-literal-weighting", DirichletMode::LiteralWeighting),
    ] {
        let target = -dirichlet_apply(&gf, &omega, &fixture.rho, mode)?;
        reports.push(MCReport::from_stats(
            name,
            "empirical-generator",
            est.estimate,
            est.stderr,
            target,
            n.max(100),
            seed,
            z_max,
        ));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Outer;
    use crate::space::Bump;

    fn default_fixture() -> Fixture {
        let window = Window::new(vec![-1.0], vec![1.0]);
        let rho = IntensityDensity::gaussian(window, 1.0, vec![0.0]);
        let tau = MarkLaw::mixture(1.0, vec![1.0, 2.0], vec![0.5, 0.5]);
        Fixture::new(rho, tau).unwrap()
    }

    fn bump(center: Scalar, radius: Scalar, amp: Scalar) -> ScalarField {
        ScalarField::from_bump(Bump::new(vec![center], vec![radius], amp))
    }

    fn vfield(center: Scalar, amp: Scalar) -> CompactVectorField {
        CompactVectorField::from_bump(Bump::new(vec![center], vec![0.5], 1.0), vec![amp])
    }

    #[test]
    fn mc_expect_constant_and_reproducible() {
        let fx = default_fixture();
        let (m, se) = mc_expect(&fx, &|_| 2.5, 200, RandomStream::new(1, 0)).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
        let a = mc_expect(&fx, &|o| o.len() as Scalar, 500, RandomStream::new(1, 0)).unwrap();
        let b = mc_expect(&fx, &|o| o.len() as Scalar, 500, RandomStream::new(1, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mc_expect_count_matches_mass() {
        let fx = default_fixture();
        let n = 20_000;
        let (m, se) =
            mc_expect(&fx, &|o| o.len() as Scalar, n, RandomStream::new(2, 0)).unwrap();
        // lambda_tau = 1, so the expected count is sigma(window)
        assert!((m - fx.sigma_mass).abs() < 3.0 * se, "m={m} mass={}", fx.sigma_mass);
    }

    #[test]
    fn laplace_zero_function() {
        let fx = default_fixture();
        let f = bump(0.0, 0.5, 0.0);
        let r = check_laplace(&fx, &f, MeasureKind::Compound, 500, RandomStream::new(3, 0), 3.0)
            .unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.target, 1.0);
        assert_eq!(r.z, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn laplace_simple_and_compound_pass() {
        let fx = default_fixture();
        let f = bump(0.0, 0.5, 0.6);
        let n = 30_000;
        let r1 =
            check_laplace(&fx, &f, MeasureKind::Simple, n, RandomStream::new(4, 0), 3.5).unwrap();
        assert!(r1.pass, "{}", r1.summary_line());
        let r2 =
            check_laplace(&fx, &f, MeasureKind::Compound, n, RandomStream::new(4, 1 << 32), 3.5)
                .unwrap();
        assert!(r2.pass, "{}", r2.summary_line());
    }

    #[test]
    fn laplace_marked_passes() {
        let fx = default_fixture();
        let joint = ScalarField::from_bump(Bump::new(vec![0.0, 1.5], vec![0.5, 1.0], 0.5));
        let r = check_laplace_marked(&fx, &joint, 1.0, 2.0, 30_000, RandomStream::new(5, 0), 3.5)
            .unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn moments_pass() {
        let fx = default_fixture();
        let f = bump(0.3, 0.5, 1.0);
        let rs = check_moments(&fx, &f, 30_000, RandomStream::new(6, 0), 3.5).unwrap();
        assert_eq!(rs.len(), 2);
        for r in rs {
            assert!(r.pass, "{}", r.summary_line());
        }
    }

    #[test]
    fn ibp_trivial_and_statistical() {
        let fx = default_fixture();
        let f = CylinderFunction::new(Outer::tanh(vec![0.8]), vec![bump(0.0, 0.5, 1.0)]);
        let one = CylinderFunction::new(Outer::linear(1.0, vec![0.0]), vec![bump(0.0, 0.5, 1.0)]);
        let v = vfield(0.1, 0.4);
        let r = check_ibp(&fx, &f, &one, &v, 20_000, RandomStream::new(7, 0), 3.5).unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn symmetry_omega_metric_passes() {
        let fx = default_fixture();
        let f = CylinderFunction::new(Outer::tanh(vec![0.8]), vec![bump(0.0, 0.5, 1.0)]);
        let g = CylinderFunction::new(Outer::tanh(vec![0.5]), vec![bump(0.3, 0.5, 1.0)]);
        let rs = check_symmetry(
            &fx,
            &f,
            &g,
            DirichletMode::OmegaMetric,
            40_000,
            RandomStream::new(8, 0),
            3.5,
        )
        .unwrap();
        assert!(rs[0].pass, "{}", rs[0].summary_line());
    }

    #[test]
    fn quasi_invariance_passes() {
        let fx = default_fixture();
        let phi = Diffeo::new(vfield(0.0, 0.4), 0.3);
        let f = CylinderFunction::new(Outer::tanh(vec![0.8]), vec![bump(0.1, 0.5, 1.0)]);
        let lf = bump(0.0, 0.5, 0.5);
        let rs =
            check_quasi_invariance(&fx, &phi, &f, &lf, 20_000, RandomStream::new(9, 0), 3.5)
                .unwrap();
        for r in &rs {
            assert!(r.pass, "{}", r.summary_line());
        }
    }

    #[test]
    fn reduction_passes() {
        let fx = default_fixture();
        let f = bump(0.0, 0.5, 0.6);
        let rs = check_reduction(&fx.rho, &f, 20_000, RandomStream::new(10, 0), 3.5).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs[0].estimate, 0.0);
        for r in &rs {
            assert!(r.pass, "{}", r.summary_line());
        }
    }

    #[test]
    fn commutation_residual_small() {
        let fx = default_fixture();
        let v1 = vfield(0.0, 0.4);
        let v2 = vfield(0.1, -0.3);
        let f = CylinderFunction::new(Outer::tanh(vec![0.7]), vec![bump(0.0, 0.5, 1.0)]);
        let r = check_commutation(&fx, &v1, &v2, &f, 20, RandomStream::new(11, 0), 1e-6).unwrap();
        assert!(r.pass, "{}", r.summary_line());
        // identical fields commute exactly
        let r0 = check_commutation(&fx, &v1, &v1, &f, 5, RandomStream::new(11, 100), 1e-12).unwrap();
        assert!(r0.pass);
    }

    #[test]
    fn generator_oracle_agrees() {
        let fx = default_fixture();
        let v = vfield(0.0, 0.4);
        let f = CylinderFunction::new(Outer::tanh(vec![0.7]), vec![bump(0.1, 0.5, 1.0)]);
        let r =
            check_generator_oracle(&fx, &v, &f, 10, RandomStream::new(12, 0), 1e-2, 1e-6).unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn stationarity_t0_is_exact() {
        let fx = default_fixture();
        let f = CylinderFunction::new(Outer::tanh(vec![0.8]), vec![bump(0.0, 0.5, 1.0)]);
        let r = check_stationarity(
            &fx,
            &f,
            DynamicsMode::MarkWeighted,
            0.0,
            1e-3,
            300,
            RandomStream::new(13, 0),
            3.0,
        )
        .unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn stationarity_passes() {
        let fx = default_fixture();
        let f = CylinderFunction::new(Outer::tanh(vec![0.8]), vec![bump(0.0, 0.5, 1.0)]);
        let r = check_stationarity(
            &fx,
            &f,
            DynamicsMode::MarkWeighted,
            0.05,
            1e-3,
            5_000,
            RandomStream::new(14, 0),
            3.5,
        )
        .unwrap();
        assert!(r.pass, "{}", r.summary_line());
    }

    #[test]
    fn nonfinite_reports_stream() {
        let fx = default_fixture();
        let err = mc_expect(&fx, &|_| Scalar::NAN, 10, RandomStream::new(15, 7)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
