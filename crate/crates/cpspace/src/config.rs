//! Configurations: finite simple point sets, marked/compound configurations,
//! test functions, pairings, the product-space relabeling, pushforward,
//! restriction, and counting.

use std::io::Write;
use std::sync::Arc;

use crate::real::{dot, mat_vec, trace};
use crate::space::{Bump, CompactVectorField, Window};
use crate::{Error, Point, Result, Scalar};

type ValueFn = dyn Fn(&[Scalar]) -> Scalar + Send + Sync;
type VecFn = dyn Fn(&[Scalar]) -> Vec<Scalar> + Send + Sync;
type MatFn = dyn Fn(&[Scalar]) -> Vec<Vec<Scalar>> + Send + Sync;

fn lex_cmp(a: &[Scalar], b: &[Scalar]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).expect("non-finite coordinate") {
            std::cmp::Ordering::Equal => continue,
            ord => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

/// Finite set of pairwise distinct points.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleConfiguration {
    points: Vec<Point>,
}

impl SimpleConfiguration {
    pub fn new(mut points: Vec<Point>) -> Result<Self> {
        points.sort_by(|a, b| lex_cmp(a, b));
        for pair in points.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::DuplicatePoint(pair[0].clone()));
            }
        }
        Ok(SimpleConfiguration { points })
    }

    pub fn empty() -> Self {
        SimpleConfiguration { points: Vec::new() }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pairing weighting: against the compound measure (marks multiply) or the
/// underlying simple configuration (marks ignored).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Marked,
    Unmarked,
}

/// Finite set of (point, mark) atoms with pairwise distinct points; the mark
/// type is a positive real in compound mode and a vector in marked mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedConfiguration<M = Scalar> {
    atoms: Vec<(Point, M)>,
}

impl<M: Clone + PartialEq + std::fmt::Debug> MarkedConfiguration<M> {
    pub fn new(mut atoms: Vec<(Point, M)>) -> Result<Self> {
        atoms.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        for pair in atoms.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicatePoint(pair[0].0.clone()));
            }
        }
        Ok(MarkedConfiguration { atoms })
    }

    pub fn empty() -> Self {
        MarkedConfiguration { atoms: Vec::new() }
    }

    pub fn atoms(&self) -> &[(Point, M)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Underlying simple configuration of positions.
    pub fn positions(&self) -> SimpleConfiguration {
        SimpleConfiguration { points: self.atoms.iter().map(|(p, _)| p.clone()).collect() }
    }

    /// Keep the atoms whose point lies in `window`, marks retained.
    pub fn restrict(&self, window: &Window) -> Self {
        MarkedConfiguration {
            atoms: self.atoms.iter().filter(|(p, _)| window.contains(p)).cloned().collect(),
        }
    }

    /// Number of atoms with point in `window`.
    pub fn count(&self, window: &Window) -> usize {
        self.atoms.iter().filter(|(p, _)| window.contains(p)).count()
    }
}

impl MarkedConfiguration<Scalar> {
    /// Strictly positive compound marks.
    pub fn compound(atoms: Vec<(Point, Scalar)>) -> Result<Self> {
        assert!(atoms.iter().all(|(_, s)| *s > 0.0), "compound marks must be positive");
        Self::new(atoms)
    }

    /// `<omega, f>`: `sum s_x f(x)` (marked) or `sum f(x)` over positions
    /// (unmarked).
    pub fn pair(&self, f: &ScalarField, weighting: Weighting) -> Scalar {
        self.atoms
            .iter()
            .map(|(p, s)| match weighting {
                Weighting::Marked => s * f.value(p),
                Weighting::Unmarked => f.value(p),
            })
            .sum()
    }

    /// Transport every atom along the time-`t` flow of `v`; marks unchanged.
    pub fn pushforward(&self, v: &CompactVectorField, t: Scalar) -> Result<Self> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (p, s) in &self.atoms {
            atoms.push((v.flow(t, p)?.endpoint, *s));
        }
        Self::new(atoms)
    }
}

/// Relabel a configuration over the product space `X x R_+` (mark as the last
/// coordinate) into a marked configuration. Rejects coinciding base points.
pub fn sigma_map(gamma_hat: &SimpleConfiguration) -> Result<MarkedConfiguration<Scalar>> {
    let mut atoms = Vec::with_capacity(gamma_hat.len());
    for q in gamma_hat.points() {
        let (x, s) = q.split_at(q.len() - 1);
        atoms.push((x.to_vec(), s[0]));
    }
    MarkedConfiguration::new(atoms).map_err(|_| Error::CoincidingPositions)
}

/// Inverse relabeling: positions are distinct by invariant, so this is total.
pub fn sigma_map_inverse(omega: &MarkedConfiguration<Scalar>) -> SimpleConfiguration {
    let points = omega
        .atoms()
        .iter()
        .map(|(p, s)| {
            let mut q = p.clone();
            q.push(*s);
            q
        })
        .collect();
    SimpleConfiguration::new(points).expect("positions distinct")
}

/// Smooth compactly supported test function with closed-form derivatives.
#[derive(Clone)]
pub struct ScalarField {
    value: Arc<ValueFn>,
    gradient: Option<Arc<VecFn>>,
    hessian: Option<Arc<MatFn>>,
    support: Window,
}

impl ScalarField {
    pub fn from_bump(bump: Bump) -> Self {
        let support = bump.support();
        let b1 = bump.clone();
        let b2 = bump.clone();
        let b3 = bump;
        ScalarField {
            value: Arc::new(move |x| b1.value(x)),
            gradient: Some(Arc::new(move |x| b2.gradient(x))),
            hessian: Some(Arc::new(move |x| b3.hessian(x))),
            support,
        }
    }

    pub fn from_parts(
        value: Arc<ValueFn>,
        gradient: Option<Arc<VecFn>>,
        hessian: Option<Arc<MatFn>>,
        support: Window,
    ) -> Self {
        ScalarField { value, gradient, hessian, support }
    }

    pub fn support(&self) -> &Window {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.hessian.is_some()
    }

    pub fn value(&self, x: &[Scalar]) -> Scalar {
        if self.support.contains(x) {
            (self.value)(x)
        } else {
            0.0
        }
    }

    pub fn gradient(&self, x: &[Scalar]) -> Result<Vec<Scalar>> {
        let g = self
            .gradient
            .as_ref()
            .ok_or_else(|| Error::DerivativeDepth("gradient of a derived field".into()))?;
        if self.support.contains(x) {
            Ok(g(x))
        } else {
            Ok(vec![0.0; self.dim()])
        }
    }

    pub fn hessian(&self, x: &[Scalar]) -> Result<Vec<Vec<Scalar>>> {
        let h = self
            .hessian
            .as_ref()
            .ok_or_else(|| Error::DerivativeDepth("hessian of a derived field".into()))?;
        if self.support.contains(x) {
            Ok(h(x))
        } else {
            Ok(vec![vec![0.0; self.dim()]; self.dim()])
        }
    }

    pub fn laplacian(&self, x: &[Scalar]) -> Result<Scalar> {
        Ok(trace(&self.hessian(x)?))
    }

    pub fn scaled(&self, c: Scalar) -> Self {
        let v = self.value.clone();
        ScalarField {
            value: Arc::new(move |x| c * v(x)),
            gradient: self.gradient.clone().map(|g| {
                let f: Arc<VecFn> =
                    Arc::new(move |x: &[Scalar]| g(x).into_iter().map(|t| c * t).collect());
                f
            }),
            hessian: self.hessian.clone().map(|h| {
                let f: Arc<MatFn> = Arc::new(move |x: &[Scalar]| {
                    h(x).into_iter()
                        .map(|r| r.into_iter().map(|t| c * t).collect())
                        .collect()
                });
                f
            }),
            support: self.support.clone(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        let (v1, v2) = (self.value.clone(), other.value.clone());
        let (s1, s2) = (self.support.clone(), other.support.clone());
        let support = self.support.hull(&other.support);
        let inside = move |w: &Window, x: &[Scalar]| w.contains(x);
        let i1 = inside.clone();
        let value = Arc::new(move |x: &[Scalar]| {
            let mut t = 0.0;
            if i1(&s1, x) {
                t += v1(x);
            }
            if i1(&s2, x) {
                t += v2(x);
            }
            t
        });
        let gradient = match (self.gradient.clone(), other.gradient.clone()) {
            (Some(g1), Some(g2)) => {
                let (s1, s2) = (self.support.clone(), other.support.clone());
                let d = self.dim();
                let f: Arc<VecFn> = Arc::new(move |x: &[Scalar]| {
                    let mut t = vec![0.0; d];
                    if s1.contains(x) {
                        for (ti, gi) in t.iter_mut().zip(g1(x)) {
                            *ti += gi;
                        }
                    }
                    if s2.contains(x) {
                        for (ti, gi) in t.iter_mut().zip(g2(x)) {
                            *ti += gi;
                        }
                    }
                    t
                });
                Some(f)
            }
            _ => None,
        };
        let hessian = match (self.hessian.clone(), other.hessian.clone()) {
            (Some(h1), Some(h2)) => {
                let (s1, s2) = (self.support.clone(), other.support.clone());
                let d = self.dim();
                let f: Arc<MatFn> = Arc::new(move |x: &[Scalar]| {
                    let mut t = vec![vec![0.0; d]; d];
                    if s1.contains(x) {
                        for (tr, hr) in t.iter_mut().zip(h1(x)) {
                            for (ti, hi) in tr.iter_mut().zip(hr) {
                                *ti += hi;
                            }
                        }
                    }
                    if s2.contains(x) {
                        for (tr, hr) in t.iter_mut().zip(h2(x)) {
                            for (ti, hi) in tr.iter_mut().zip(hr) {
                                *ti += hi;
                            }
                        }
                    }
                    t
                });
                Some(f)
            }
            _ => None,
        };
        ScalarField { value, gradient, hessian, support }
    }

    /// The derived field `x -> <grad psi(x), v(x)>`. Its gradient
    /// `H_psi v + (grad v)^T grad psi` needs the Hessian of `psi`; one more
    /// derivative order than consumed is unavailable, so the result carries
    /// no Hessian.
    pub fn directional(&self, v: &CompactVectorField) -> Result<ScalarField> {
        let g = self
            .gradient
            .clone()
            .ok_or_else(|| Error::DerivativeDepth("gradient needed for a directional field".into()))?;
        let support = self.support.clone();
        let (sv, sg) = (v.clone(), v.clone());
        let s1 = support.clone();
        let value = Arc::new(move |x: &[Scalar]| {
            if !s1.contains(x) {
                return 0.0;
            }
            dot(&g(x), &sv.value(x))
        });
        let gradient = match self.hessian.clone() {
            Some(h) => {
                let g2 = self.gradient.clone().unwrap();
                let s2 = support.clone();
                let d = self.dim();
                let f: Arc<VecFn> = Arc::new(move |x: &[Scalar]| {
                    if !s2.contains(x) {
                        return vec![0.0; d];
                    }
                    let hv = mat_vec(&h(x), &sg.value(x));
                    let jac = sg.jacobian(x);
                    let gr = g2(x);
                    (0..d)
                        .map(|k| hv[k] + (0..d).map(|i| jac[i][k] * gr[i]).sum::<Scalar>())
                        .collect()
                });
                Some(f)
            }
            None => None,
        };
        Ok(ScalarField { value, gradient, hessian: None, support })
    }
}

/// Serialize configurations as JSONL, one object per line:
/// `{"atoms":[[x_1..x_d, s], ...]}`.
pub fn write_jsonl<W: Write>(
    out: &mut W,
    configs: &[MarkedConfiguration<Scalar>],
) -> Result<()> {
    for c in configs {
        let rows: Vec<Vec<Scalar>> = c
            .atoms()
            .iter()
            .map(|(p, s)| {
                let mut r = p.clone();
                r.push(*s);
                r
            })
            .collect();
        let line = serde_json::json!({ "atoms": rows });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parse one JSONL configuration line.
pub fn parse_jsonl_line(line: &str) -> Result<MarkedConfiguration<Scalar>> {
    #[derive(serde::Deserialize)]
    struct Row {
        atoms: Vec<Vec<Scalar>>,
    }
    let row: Row = serde_json::from_str(line)?;
    let atoms = row
        .atoms
        .into_iter()
        .map(|mut r| {
            let s = r.pop().expect("atom row has coordinates and a mark");
            (r, s)
        })
        .collect();
    MarkedConfiguration::new(atoms)
}

/// CSV export with columns `x_1..x_d,mark`.
pub fn write_csv<W: Write>(out: &mut W, c: &MarkedConfiguration<Scalar>) -> Result<()> {
    let d = c.atoms().first().map_or(0, |(p, _)| p.len());
    let header: Vec<String> = (1..=d).map(|k| format!("x_{k}")).collect();
    writeln!(out, "{},mark", header.join(","))?;
    for (p, s) in c.atoms() {
        let coords: Vec<String> = p.iter().map(|x| format!("{x}")).collect();
        writeln!(out, "{},{}", coords.join(","), s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window1() -> Window {
        Window::new(vec![-1.0], vec![1.0])
    }

    fn bump(center: Scalar, radius: Scalar) -> ScalarField {
        ScalarField::from_bump(Bump::new(vec![center], vec![radius], 1.0))
    }

    #[test]
    fn duplicate_points_rejected() {
        let err = SimpleConfiguration::new(vec![vec![0.1], vec![0.1]]);
        assert!(matches!(err, Err(Error::DuplicatePoint(_))));
        let err = MarkedConfiguration::compound(vec![(vec![0.2], 1.0), (vec![0.2], 2.0)]);
        assert!(matches!(err, Err(Error::DuplicatePoint(_))));
    }

    #[test]
    fn pair_marked_and_unmarked() {
        // f built so f(x1)=1, f(x2)=4 via two disjoint scaled bumps
        let f = bump(-0.5, 0.2).add(&bump(0.5, 0.2).scaled(4.0));
        let omega = MarkedConfiguration::compound(vec![(vec![-0.5], 2.0), (vec![0.5], 0.5)]).unwrap();
        assert!((omega.pair(&f, Weighting::Marked) - 4.0).abs() < 1e-12);
        assert!((omega.pair(&f, Weighting::Unmarked) - 5.0).abs() < 1e-12);
        let empty = MarkedConfiguration::<Scalar>::empty();
        assert_eq!(empty.pair(&f, Weighting::Marked), 0.0);
        assert_eq!(empty.pair(&f, Weighting::Unmarked), 0.0);
    }

    #[test]
    fn pair_linear_in_f() {
        let f = bump(0.0, 0.5);
        let g = bump(0.3, 0.4);
        let omega =
            MarkedConfiguration::compound(vec![(vec![0.1], 1.5), (vec![-0.2], 0.7), (vec![0.35], 2.0)])
                .unwrap();
        let combo = f.scaled(2.5).add(&g.scaled(-1.25));
        for w in [Weighting::Marked, Weighting::Unmarked] {
            let lhs = omega.pair(&combo, w);
            let rhs = 2.5 * omega.pair(&f, w) - 1.25 * omega.pair(&g, w);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_map_roundtrip() {
        let gamma_hat =
            SimpleConfiguration::new(vec![vec![0.1, 1.5], vec![0.7, 2.0]]).unwrap();
        let omega = sigma_map(&gamma_hat).unwrap();
        assert_eq!(
            omega.atoms(),
            &[(vec![0.1], 1.5), (vec![0.7], 2.0)]
        );
        assert_eq!(sigma_map_inverse(&omega), gamma_hat);
        let empty = sigma_map(&SimpleConfiguration::empty()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sigma_map_rejects_coinciding_base_points() {
        let gamma_hat =
            SimpleConfiguration::new(vec![vec![0.1, 1.5], vec![0.1, 2.0]]).unwrap();
        assert!(matches!(sigma_map(&gamma_hat), Err(Error::CoincidingPositions)));
    }

    #[test]
    fn restrict_and_count() {
        let omega = MarkedConfiguration::compound(vec![
            (vec![-0.5], 1.0),
            (vec![0.0], 2.0),
            (vec![0.5], 1.0),
        ])
        .unwrap();
        assert_eq!(omega.restrict(&window1()), omega);
        assert_eq!(omega.count(&window1()), 3);
        // additivity over a partition (cut between atoms)
        let left = Window::new(vec![-1.0], vec![0.1]);
        let right = Window::new(vec![0.1], vec![1.0]);
        assert_eq!(omega.count(&left) + omega.count(&right), 3);
        let disjoint = Window::new(vec![2.0], vec![3.0]);
        assert!(omega.restrict(&disjoint).is_empty());
        // nested consistency
        let mid = Window::new(vec![-0.6], vec![0.6]);
        let inner = Window::new(vec![-0.1], vec![0.6]);
        assert_eq!(omega.restrict(&inner), omega.restrict(&mid).restrict(&inner));
        assert_eq!(omega.restrict(&inner).count(&inner), omega.count(&inner));
    }

    #[test]
    fn pushforward_identity_cases() {
        let v = CompactVectorField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0), vec![0.3]);
        let omega = MarkedConfiguration::compound(vec![(vec![0.1], 2.0), (vec![0.8], 1.0)]).unwrap();
        assert_eq!(omega.pushforward(&v, 0.0).unwrap(), omega);
        let outside = MarkedConfiguration::compound(vec![(vec![0.8], 1.0), (vec![-0.9], 3.0)]).unwrap();
        assert_eq!(outside.pushforward(&v, 0.7).unwrap(), outside);
    }

    #[test]
    fn pushforward_pairing_identity() {
        // <phi* omega, f> = <omega, f o phi>
        let v = CompactVectorField::from_bump(Bump::new(vec![0.0], vec![0.5], 1.0), vec![0.3]);
        let f = bump(0.1, 0.6);
        let omega = MarkedConfiguration::compound(vec![
            (vec![0.05], 2.0),
            (vec![-0.3], 1.0),
            (vec![0.42], 0.5),
        ])
        .unwrap();
        let t = 0.2;
        let lhs = omega.pushforward(&v, t).unwrap().pair(&f, Weighting::Marked);
        let rhs: Scalar = omega
            .atoms()
            .iter()
            .map(|(p, s)| s * f.value(&v.flow(t, p).unwrap().endpoint))
            .sum();
        assert!((lhs - rhs).abs() < 1e-7);
    }

    #[test]
    fn scalar_field_consistency_by_finite_differences() {
        let f = bump(0.1, 0.45).scaled(1.3);
        let h = 1e-5;
        for &x in &[0.1, 0.3, -0.2] {
            let g = f.gradient(&[x]).unwrap()[0];
            let fd = (f.value(&[x + h]) - f.value(&[x - h])) / (2.0 * h);
            assert!((g - fd).abs() < 1e-5 * (1.0 + g.abs()), "x={x}");
            let hh = f.hessian(&[x]).unwrap()[0][0];
            let fd2 = (f.value(&[x + h]) - 2.0 * f.value(&[x]) + f.value(&[x - h])) / (h * h);
            assert!((hh - fd2).abs() < 1e-3 * (1.0 + hh.abs()), "x={x}");
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let omega = MarkedConfiguration::compound(vec![(vec![0.125], 1.5), (vec![-0.75], 2.0)]).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&omega)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let back = parse_jsonl_line(line.trim()).unwrap();
        assert_eq!(back, omega);
    }

    #[test]
    fn csv_export_shape() {
        let omega = MarkedConfiguration::compound(vec![(vec![0.5], 1.5)]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &omega).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "x_1,mark\n0.5,1.5\n");
    }
}
