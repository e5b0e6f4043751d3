//! Exact samplers for the simple, compound, and marked Poisson measures with
//! reproducible, splittable random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::config::{MarkedConfiguration, SimpleConfiguration};
use crate::space::{IntensityDensity, Window};
use crate::{Error, Point, Result, Scalar};

/// Counter-based stream handle: identical `(seed, stream_id)` reproduce the
/// same draw sequence; distinct stream ids give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RandomStream { seed, stream_id }
    }

    /// Stream for replica `i` of a block starting at this stream id.
    pub fn derive(&self, i: u64) -> Self {
        RandomStream { seed: self.seed, stream_id: self.stream_id.wrapping_add(i) }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Finite mark measure `tau` on `(0, infinity)`: total mass, a sampler for
/// the normalized law, and exact moments.
#[derive(Debug, Clone)]
pub struct MarkLaw {
    total_mass: Scalar,
    kind: MarkKind,
}

#[derive(Debug, Clone)]
enum MarkKind {
    Delta { s: Scalar },
    Mixture { atoms: Vec<Scalar>, weights: Vec<Scalar> },
    Gamma { shape: Scalar, scale: Scalar },
    Uniform { a: Scalar, b: Scalar },
}

impl MarkLaw {
    /// Point mass at `s`.
    pub fn delta(total_mass: Scalar, s: Scalar) -> Self {
        assert!(total_mass > 0.0 && s > 0.0);
        MarkLaw { total_mass, kind: MarkKind::Delta { s } }
    }

    /// Finite mixture of point masses; weights are renormalized.
    pub fn mixture(total_mass: Scalar, atoms: Vec<Scalar>, weights: Vec<Scalar>) -> Self {
        assert!(total_mass > 0.0);
        assert_eq!(atoms.len(), weights.len());
        assert!(!atoms.is_empty());
        assert!(atoms.iter().all(|&s| s > 0.0));
        assert!(weights.iter().all(|&w| w > 0.0));
        let z: Scalar = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / z).collect();
        MarkLaw { total_mass, kind: MarkKind::Mixture { atoms, weights } }
    }

    pub fn gamma(total_mass: Scalar, shape: Scalar, scale: Scalar) -> Self {
        assert!(total_mass > 0.0 && shape > 0.0 && scale > 0.0);
        MarkLaw { total_mass, kind: MarkKind::Gamma { shape, scale } }
    }

    pub fn uniform(total_mass: Scalar, a: Scalar, b: Scalar) -> Self {
        assert!(total_mass > 0.0 && 0.0 < a && a < b);
        MarkLaw { total_mass, kind: MarkKind::Uniform { a, b } }
    }

    /// `lambda_tau = tau(R_+)`.
    pub fn total_mass(&self) -> Scalar {
        self.total_mass
    }

    /// Exact `int s^k dtau(s)`; `moment(0)` is the total mass.
    pub fn moment(&self, k: u32) -> Scalar {
        let normalized = match &self.kind {
            MarkKind::Delta { s } => s.powi(k as i32),
            MarkKind::Mixture { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .map(|(s, w)| w * s.powi(k as i32))
                .sum(),
            MarkKind::Gamma { shape, scale } => {
                (0..k).map(|j| scale * (shape + j as Scalar)).product()
            }
            MarkKind::Uniform { a, b } => {
                let p = k as i32 + 1;
                (b.powi(p) - a.powi(p)) / (p as Scalar * (b - a))
            }
        };
        self.total_mass * normalized
    }

    /// Moment generating function of the normalized law, `E[exp(t S)]`.
    /// Closed form for every built-in family.
    pub fn mgf(&self, t: Scalar) -> Scalar {
        match &self.kind {
            MarkKind::Delta { s } => (t * s).exp(),
            MarkKind::Mixture { atoms, weights } => {
                atoms.iter().zip(weights).map(|(s, w)| w * (t * s).exp()).sum()
            }
            MarkKind::Gamma { shape, scale } => {
                assert!(t * scale < 1.0, "mgf outside the analyticity strip");
                (1.0 - t * scale).powf(-shape)
            }
            MarkKind::Uniform { a, b } => {
                if t == 0.0 {
                    1.0
                } else {
                    ((t * b).exp() - (t * a).exp()) / (t * (b - a))
                }
            }
        }
    }

    /// Draw from the normalized law `tau / lambda_tau`. A point mass consumes
    /// no randomness, which makes the delta-mark compound sampler reproduce
    /// the simple sampler draw for draw.
    pub fn sample_normalized<R: Rng>(&self, rng: &mut R) -> Scalar {
        match &self.kind {
            MarkKind::Delta { s } => *s,
            MarkKind::Mixture { atoms, weights } => {
                let u: Scalar = rng.random();
                let mut acc = 0.0;
                for (s, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *s;
                    }
                }
                *atoms.last().unwrap()
            }
            MarkKind::Gamma { shape, scale } => {
                Gamma::new(*shape, *scale).unwrap().sample(rng)
            }
            MarkKind::Uniform { a, b } => rng.random_range(*a..*b),
        }
    }
}

fn poisson_count<R: Rng>(mean: Scalar, rng: &mut R) -> usize {
    if mean == 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

fn uniform_point<R: Rng>(window: &Window, rng: &mut R) -> Point {
    (0..window.dim())
        .map(|k| rng.random_range(window.lower()[k]..window.upper()[k]))
        .collect()
}

/// Rejection-sample one position with density `rho / sigma(window)`.
fn sample_position<R: Rng>(
    rho: &IntensityDensity,
    window: &Window,
    rng: &mut R,
) -> Result<Point> {
    let bound = rho.sup_bound();
    loop {
        let x = uniform_point(window, rng);
        let v = rho.value(&x);
        if v > bound * (1.0 + 1e-12) {
            return Err(Error::EnvelopeViolation { point: x, value: v, bound });
        }
        if rng.random_range(0.0..bound) < v {
            return Ok(x);
        }
    }
}

/// Check the rejection envelope against a quasi-random (Halton) probe grid.
pub fn validate_envelope(rho: &IntensityDensity, window: &Window, probes: usize) -> Result<()> {
    let bound = rho.sup_bound();
    let d = window.dim();
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    for i in 1..=probes {
        let x: Point = (0..d)
            .map(|k| {
                let u = halton(i as u64, PRIMES[k % PRIMES.len()]);
                window.lower()[k] + u * (window.upper()[k] - window.lower()[k])
            })
            .collect();
        let v = rho.value(&x);
        if v > bound * (1.0 + 1e-12) {
            return Err(Error::EnvelopeViolation { point: x, value: v, bound });
        }
    }
    Ok(())
}

fn halton(mut i: u64, base: u64) -> Scalar {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as Scalar;
        r += f * (i % base) as Scalar;
        i /= base;
    }
    r
}

/// Simple Poisson sample with intensity `scale * rho * m` on `window`.
pub fn sample_simple(
    rho: &IntensityDensity,
    intensity_scale: Scalar,
    window: &Window,
    stream: RandomStream,
) -> Result<SimpleConfiguration> {
    let mass = rho.sigma_mass(window, 1e-8)?;
    sample_simple_with_mass(rho, intensity_scale, window, mass, stream)
}

/// As [`sample_simple`] with `sigma(window)` precomputed by the caller.
pub fn sample_simple_with_mass(
    rho: &IntensityDensity,
    intensity_scale: Scalar,
    window: &Window,
    sigma_mass: Scalar,
    stream: RandomStream,
) -> Result<SimpleConfiguration> {
    let mut rng = stream.rng();
    let n = poisson_count(intensity_scale * sigma_mass, &mut rng);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(sample_position(rho, window, &mut rng)?);
    }
    SimpleConfiguration::new(points)
}

/// Compound Poisson sample: ground process with intensity `lambda_tau *
/// sigma`, marks i.i.d. from the normalized mark law.
pub fn sample_compound(
    rho: &IntensityDensity,
    tau: &MarkLaw,
    window: &Window,
    stream: RandomStream,
) -> Result<MarkedConfiguration<Scalar>> {
    let mass = rho.sigma_mass(window, 1e-8)?;
    sample_compound_with_mass(rho, tau, window, mass, stream)
}

pub fn sample_compound_with_mass(
    rho: &IntensityDensity,
    tau: &MarkLaw,
    window: &Window,
    sigma_mass: Scalar,
    stream: RandomStream,
) -> Result<MarkedConfiguration<Scalar>> {
    let mut rng = stream.rng();
    let n = poisson_count(tau.total_mass() * sigma_mass, &mut rng);
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_position(rho, window, &mut rng)?;
        atoms.push((x, 0.0));
    }
    for atom in &mut atoms {
        atom.1 = tau.sample_normalized(&mut rng);
    }
    MarkedConfiguration::compound(atoms)
}

/// Marked Poisson sample: `N ~ Poisson(sigma(window))`, positions i.i.d.
/// `sigma / sigma(window)`, marks i.i.d. from a probability law on `R^q`.
pub fn sample_marked(
    rho: &IntensityDensity,
    mark_sampler: &(dyn Fn(&mut ChaCha8Rng) -> Vec<Scalar> + Sync),
    window: &Window,
    stream: RandomStream,
) -> Result<MarkedConfiguration<Vec<Scalar>>> {
    let mass = rho.sigma_mass(window, 1e-8)?;
    let mut rng = stream.rng();
    let n = poisson_count(mass, &mut rng);
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_position(rho, window, &mut rng)?;
        atoms.push((x, Vec::new()));
    }
    for atom in &mut atoms {
        atom.1 = mark_sampler(&mut rng);
    }
    MarkedConfiguration::new(atoms)
}
