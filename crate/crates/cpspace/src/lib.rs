//! Compound and marked Poisson measures on configuration spaces over a box
//! domain: exact samplers, the intrinsic gradient / divergence / Dirichlet
//! calculus on cylinder functions, the associated equilibrium diffusion, and
//! a Monte Carlo harness that certifies every closed-form identity the
//! calculus satisfies.
//!
//! The numeric kernels (quadrature, flow integration, summation) are generic
//! over the scalar type via [`real::Real`]; the domain layer is pinned to
//! [`Scalar`] because all certified tolerances assume double precision.

pub mod calculus;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod quad;
pub mod real;
pub mod sampler;
pub mod space;
pub mod verify;

/// Scalar type of the domain layer.
pub type Scalar = f64;

/// A point of the underlying space, one coordinate per dimension.
pub type Point = Vec<Scalar>;

pub use calculus::{CylinderFunction, CylinderVectorField, Diffeo, DirichletMode, Expr, Outer};
pub use config::{MarkedConfiguration, ScalarField, SimpleConfiguration};
pub use dynamics::{DynamicsMode, TrajectoryState};
pub use sampler::{MarkLaw, RandomStream};
pub use space::{CompactVectorField, FlowResult, IntensityDensity, Window};
pub use verify::MCReport;

/// Errors surfaced by samplers, quadrature, and the symbolic calculus.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quadrature tolerance not reached, achieved estimate {estimate} (error ~{error:.3e})")]
    QuadratureTolerance { estimate: Scalar, error: Scalar },
    #[error("flow integrator step-size underflow at t={t}")]
    StepUnderflow { t: Scalar },
    #[error("duplicate point in configuration: {0:?}")]
    DuplicatePoint(Point),
    #[error("coinciding positions in configuration over the product space")]
    CoincidingPositions,
    #[error("density envelope violated at {point:?}: value {value} > bound {bound}")]
    EnvelopeViolation {
        point: Point,
        value: Scalar,
        bound: Scalar,
    },
    #[error("missing derivative data: {0}")]
    DerivativeDepth(String),
    #[error("non-finite functional value (stream_id {stream_id})")]
    NonFinite { stream_id: u64 },
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("estimate inconclusive: stderr {stderr} too large for signal {signal}")]
    Inconclusive { stderr: Scalar, signal: Scalar },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
