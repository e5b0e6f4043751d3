//! Equilibrium diffusion of the atoms (marks frozen) and empirical generator
//! estimation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write;

use crate::calculus::CylinderFunction;
use crate::config::MarkedConfiguration;
use crate::real::mean_stderr;
use crate::sampler::RandomStream;
use crate::space::IntensityDensity;
use crate::{Result, Scalar};

/// Which per-atom diffusion the simulation runs; the two candidates differ in
/// how the mark enters the drift and noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsMode {
    /// `dX = (beta/s) dt + sqrt(2 dt / s) xi`: heavier marks diffuse slower.
    MarkWeighted,
    /// `dX = beta dt + sqrt(2 dt) xi`: marks are inert labels.
    Unit,
}

/// Snapshot of the particle system at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub time: Scalar,
    pub configuration: MarkedConfiguration<Scalar>,
}

fn reflect(mut x: Scalar, lo: Scalar, hi: Scalar) -> Scalar {
    // fold into (lo, hi); terminates since each fold shrinks the excursion
    loop {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
}

/// One Euler step of every atom, reflecting at the domain walls; marks and
/// atom count are conserved exactly.
pub fn em_step<R: Rng>(
    state: &TrajectoryState,
    rho: &IntensityDensity,
    dt: Scalar,
    mode: DynamicsMode,
    rng: &mut R,
) -> TrajectoryState {
    assert!(dt > 0.0 && dt <= 0.01, "step size out of the guarded range");
    let window = rho.domain();
    let d = window.dim();
    let atoms = state
        .configuration
        .atoms()
        .iter()
        .map(|(x, s)| {
            let beta = rho.beta(x);
            let (drift_scale, noise_scale) = match mode {
                DynamicsMode::MarkWeighted => (dt / s, (2.0 * dt / s).sqrt()),
                DynamicsMode::Unit => (dt, (2.0 * dt).sqrt()),
            };
            let y: Vec<Scalar> = (0..d)
                .map(|k| {
                    let xi: Scalar = rng.sample(StandardNormal);
                    reflect(
                        x[k] + beta[k] * drift_scale + noise_scale * xi,
                        window.lower()[k],
                        window.upper()[k],
                    )
                })
                .collect();
            (y, *s)
        })
        .collect();
    TrajectoryState {
        time: state.time + dt,
        configuration: MarkedConfiguration::new(atoms).expect("atoms almost surely distinct"),
    }
}

/// Iterate [`em_step`] from `omega0` to horizon `t_final = k dt`, returning
/// every snapshot including the initial one.
pub fn simulate(
    omega0: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
    dt: Scalar,
    t_final: Scalar,
    mode: DynamicsMode,
    stream: RandomStream,
) -> Vec<TrajectoryState> {
    assert!(t_final >= 0.0);
    let steps = if t_final == 0.0 { 0 } else { (t_final / dt).round() as usize };
    assert!(
        (steps as Scalar * dt - t_final).abs() < 1e-9 * dt.max(1e-12),
        "horizon must be a whole number of steps"
    );
    let mut rng = stream.rng();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(TrajectoryState { time: 0.0, configuration: omega0.clone() });
    for _ in 0..steps {
        let next = em_step(states.last().unwrap(), rho, dt, mode, &mut rng);
        states.push(next);
    }
    states
}

/// Result of the empirical generator limit at a fixed configuration.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorEstimate {
    pub estimate: Scalar,
    pub stderr: Scalar,
    /// Set when the standard error swamps the signal.
    pub inconclusive: bool,
}

/// Estimate `L F(omega) = lim_{dt->0} (E[F at one step] - F(omega)) / dt` by
/// first-order extrapolation across the two smallest steps in `dt_list`, with
/// common random numbers across the two levels.
pub fn generator_estimate(
    f: &CylinderFunction,
    omega: &MarkedConfiguration<Scalar>,
    rho: &IntensityDensity,
    mode: DynamicsMode,
    dt_list: &[Scalar],
    replicas: u64,
    stream: RandomStream,
) -> Result<GeneratorEstimate> {
    assert!(dt_list.len() >= 2, "extrapolation needs at least two step sizes");
    let mut dts = dt_list.to_vec();
    dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (dt_small, dt_large) = (dts[0], dts[1]);
    assert!(dt_small > 0.0 && dt_small < dt_large);
    let f0 = f.eval(omega);
    let state0 = TrajectoryState { time: 0.0, configuration: omega.clone() };
    let values: Vec<Scalar> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = stream.derive(i);
            // identical draws at both levels: the step consumes the same
            // number of normals regardless of dt
            let d_small =
                (f.eval(&em_step(&state0, rho, dt_small, mode, &mut s.rng()).configuration) - f0)
                    / dt_small;
            let d_large =
                (f.eval(&em_step(&state0, rho, dt_large, mode, &mut s.rng()).configuration) - f0)
                    / dt_large;
            // remove the O(dt) bias: intercept of the line through both levels
            (dt_large * d_small - dt_small * d_large) / (dt_large - dt_small)
        })
        .collect();
    let (estimate, stderr) = mean_stderr(&values);
    let inconclusive = stderr > 1e-9 && stderr * 3.0 > estimate.abs().max(1e-6);
    Ok(GeneratorEstimate { estimate, stderr, inconclusive })
}

/// Dump every `stride`-th snapshot as JSONL:
/// `{"time": t, "atoms": [[x_1..x_d, s], ...]}`.
pub fn write_trajectory_jsonl<W: Write>(
    out: &mut W,
    states: &[TrajectoryState],
    stride: usize,
) -> Result<()> {
    assert!(stride >= 1);
    for (i, st) in states.iter().enumerate() {
        if i % stride != 0 && i + 1 != states.len() {
            continue;
        }
        let rows: Vec<Vec<Scalar>> = st
            .configuration
            .atoms()
            .iter()
            .map(|(p, s)| {
                let mut r = p.clone();
                r.push(*s);
                r
            })
            .collect();
        let line = serde_json::json!({ "time": st.time, "atoms": rows });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Outer;
    use crate::config::ScalarField;
    use crate::space::{Bump, Window};

    fn window1() -> Window {
        Window::new(vec![-1.0], vec![1.0])
    }

    fn one_atom(x: Scalar, s: Scalar) -> TrajectoryState {
        TrajectoryState {
            time: 0.0,
            configuration: MarkedConfiguration::compound(vec![(vec![x], s)]).unwrap(),
        }
    }

    #[test]
    fn driftless_increments_are_gaussian() {
        let rho = IntensityDensity::constant(window1(), 1.0);
        let dt = 1e-3;
        let incs: Vec<Scalar> = (0..50_000u64)
            .map(|i| {
                let st = em_step(
                    &one_atom(0.0, 1.0),
                    &rho,
                    dt,
                    DynamicsMode::MarkWeighted,
                    &mut RandomStream::new(3, i).rng(),
                );
                st.configuration.atoms()[0].0[0]
            })
            .collect();
        let (mean, se) = mean_stderr(&incs);
        assert!(mean.abs() < 3.0 * se);
        let sq: Vec<Scalar> = incs.iter().map(|&x| x * x).collect();
        let (var, vse) = mean_stderr(&sq);
        assert!((var - 2.0 * dt).abs() < 3.0 * vse, "var={var} want {}", 2.0 * dt);
    }

    #[test]
    fn heavy_mark_freezes_atom() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let st = em_step(
            &one_atom(0.3, 1e12),
            &rho,
            1e-3,
            DynamicsMode::MarkWeighted,
            &mut RandomStream::new(5, 0).rng(),
        );
        assert!((st.configuration.atoms()[0].0[0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn unit_marks_make_modes_coincide() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let st0 = TrajectoryState {
            time: 0.0,
            configuration: MarkedConfiguration::compound(vec![
                (vec![0.1], 1.0),
                (vec![-0.4], 1.0),
            ])
            .unwrap(),
        };
        let a = simulate(&st0.configuration, &rho, 1e-3, 0.05, DynamicsMode::MarkWeighted, RandomStream::new(9, 0));
        let b = simulate(&st0.configuration, &rho, 1e-3, 0.05, DynamicsMode::Unit, RandomStream::new(9, 0));
        assert_eq!(a.last(), b.last());
    }

    #[test]
    fn simulate_conserves_atoms_and_marks() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let omega0 = MarkedConfiguration::compound(vec![
            (vec![0.1], 2.0),
            (vec![-0.4], 1.0),
            (vec![0.6], 0.5),
        ])
        .unwrap();
        let zero = simulate(&omega0, &rho, 1e-3, 0.0, DynamicsMode::Unit, RandomStream::new(1, 0));
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].configuration, omega0);
        let states =
            simulate(&omega0, &rho, 1e-3, 0.1, DynamicsMode::MarkWeighted, RandomStream::new(1, 0));
        assert_eq!(states.len(), 101);
        let window = window1();
        for st in &states {
            assert_eq!(st.configuration.len(), 3);
            let mut marks: Vec<Scalar> =
                st.configuration.atoms().iter().map(|(_, s)| *s).collect();
            marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(marks, vec![0.5, 1.0, 2.0]);
            for (x, _) in st.configuration.atoms() {
                assert!(window.contains(x));
            }
        }
    }

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(1.3, -1.0, 1.0), 0.7);
        assert_eq!(reflect(-1.2, -1.0, 1.0), -0.8);
        assert_eq!(reflect(0.4, -1.0, 1.0), 0.4);
    }

    #[test]
    fn generator_on_constant_function() {
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let f = CylinderFunction::new(
            Outer::linear(2.0, vec![0.0]),
            vec![ScalarField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0))],
        );
        let omega = MarkedConfiguration::compound(vec![(vec![0.1], 2.0)]).unwrap();
        let g = generator_estimate(
            &f,
            &omega,
            &rho,
            DynamicsMode::MarkWeighted,
            &[2e-3, 1e-3],
            2_000,
            RandomStream::new(4, 0),
        )
        .unwrap();
        assert_eq!(g.estimate, 0.0);
        assert_eq!(g.stderr, 0.0);
        assert!(!g.inconclusive);
    }

    #[test]
    fn generator_matches_operator_for_unit_marks() {
        use crate::calculus::{dirichlet_apply, DirichletMode};
        let rho = IntensityDensity::gaussian(window1(), 1.0, vec![0.0]);
        let f = CylinderFunction::new(
            Outer::identity(),
            vec![ScalarField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0))],
        );
        let omega =
            MarkedConfiguration::compound(vec![(vec![0.15], 1.0), (vec![-0.2], 1.0)]).unwrap();
        let g = generator_estimate(
            &f,
            &omega,
            &rho,
            DynamicsMode::MarkWeighted,
            &[2e-3, 1e-3],
            60_000,
            RandomStream::new(6, 0),
        )
        .unwrap();
        let target = -dirichlet_apply(&f, &omega, &rho, DirichletMode::OmegaMetric).unwrap();
        assert!(
            (g.estimate - target).abs() < 3.5 * g.stderr,
            "estimate={} target={target} se={}",
            g.estimate,
            g.stderr
        );
    }

    #[test]
    fn trajectory_jsonl_shape() {
        let rho = IntensityDensity::constant(window1(), 1.0);
        let omega0 = MarkedConfiguration::compound(vec![(vec![0.25], 1.5)]).unwrap();
        let states =
            simulate(&omega0, &rho, 1e-3, 0.004, DynamicsMode::Unit, RandomStream::new(2, 0));
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &states, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // snapshots 0, 2, 4 (last always included)
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("{\"atoms\":[[0.25,1.5]],\"time\":0.0}"));
    }
}
