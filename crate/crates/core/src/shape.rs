//! The system on a perturbed inclusion and continuation along shape families.
//!
//! For a shape map `φ` all inner-boundary operators are built on the image
//! curve `φ∘γ` (its nodes, normals, curvature and arclength weights, which
//! equal the reference weights times `σ̃`), while `F` keeps its
//! `x`-argument at the reference nodes. Densities stay indexed by the
//! reference parameter.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, FAMILY_VARS};
use crate::geometry::{
    discretize, validate_shape, Curve, DiscreteBoundary, Displacement, Point, ShapeMap,
};
use crate::nonlinear::{
    reconstruct_solution, solve_system, HarmonicPair, Method, NonlinearSystem, SolveFailure,
    SolveOutput, SolverOptions, TransmissionData,
};
use crate::operators::{BlockOperator, DensitySet};

/// A one-parameter family `s ↦ φ_s`, `s ∈ [0, s_max]`, with `φ_0 = id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFamily {
    pub base: Curve,
    pub kind: FamilyKind,
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// `φ_s(x) = (1 + s) x`.
    Dilation,
    /// Displacement `(dx, dy)(t, s)` with its `t`-derivatives.
    Expression {
        dx: Expr,
        dy: Expr,
        dx_dt: Expr,
        dy_dt: Expr,
    },
}

impl ShapeFamily {
    pub fn dilation(base: Curve, s_max: f64) -> ShapeFamily {
        ShapeFamily {
            base,
            kind: FamilyKind::Dilation,
            s_max,
        }
    }

    /// `exprs` is `[dx, dy, dx_dt, dy_dt]` in the variables `t`, `s`.
    /// The displacement must vanish at `s = 0`.
    pub fn from_expressions(base: Curve, exprs: [&str; 4], s_max: f64) -> Result<ShapeFamily> {
        let p = |s: &str| Expr::parse(s, FAMILY_VARS);
        let family = ShapeFamily {
            base,
            kind: FamilyKind::Expression {
                dx: p(exprs[0])?,
                dy: p(exprs[1])?,
                dx_dt: p(exprs[2])?,
                dy_dt: p(exprs[3])?,
            },
            s_max,
        };
        if let FamilyKind::Expression { dx, dy, .. } = &family.kind {
            for j in 0..64 {
                let t = 2.0 * std::f64::consts::PI * j as f64 / 64.0;
                let d = [dx.eval(&[t, 0.0]), dy.eval(&[t, 0.0])];
                if d[0] != 0.0 || d[1] != 0.0 {
                    return Err(Error::InvalidShape(format!(
                        "family displacement must vanish at s = 0, got ({}, {}) at t = {t}",
                        d[0], d[1]
                    )));
                }
            }
        }
        if !(s_max >= 0.0) {
            return Err(Error::InvalidShape(format!(
                "s_max must be non-negative, got {s_max}"
            )));
        }
        Ok(family)
    }

    /// The trefoil family `d(t, s) = s cos(3t) (cos t, sin t)`.
    pub fn trefoil(base: Curve, s_max: f64) -> ShapeFamily {
        ShapeFamily::from_expressions(
            base,
            [
                "s*cos(3*t)*cos(t)",
                "s*cos(3*t)*sin(t)",
                "s*(-3*sin(3*t)*cos(t) - cos(3*t)*sin(t))",
                "s*(-3*sin(3*t)*sin(t) + cos(3*t)*cos(t))",
            ],
            s_max,
        )
        .expect("trefoil expressions are valid")
    }

    pub fn at(&self, s: f64) -> ShapeMap {
        let displacement = if s == 0.0 {
            Displacement::Identity
        } else {
            match &self.kind {
                FamilyKind::Dilation => Displacement::Dilation(1.0 + s),
                FamilyKind::Expression {
                    dx,
                    dy,
                    dx_dt,
                    dy_dt,
                } => Displacement::Expression {
                    dx: dx.clone(),
                    dy: dy.clone(),
                    dx_dt: dx_dt.clone(),
                    dy_dt: dy_dt.clone(),
                    s,
                },
            }
        };
        ShapeMap {
            base: self.base.clone(),
            displacement,
        }
    }
}

/// Fixed data of a perturbation study: outer boundary, reference inclusion
/// and the transmission data.
#[derive(Debug, Clone)]
pub struct ShapeProblem {
    pub data: TransmissionData,
    pub outer: DiscreteBoundary,
    pub base: Curve,
    pub reference: DiscreteBoundary,
}

impl ShapeProblem {
    pub fn new(
        data: &TransmissionData,
        outer: &DiscreteBoundary,
        base: &Curve,
        n_inner: usize,
    ) -> Result<ShapeProblem> {
        Ok(ShapeProblem {
            data: data.clone(),
            outer: outer.clone(),
            base: base.clone(),
            reference: discretize(base, n_inner)?,
        })
    }

    pub fn n_inner(&self) -> usize {
        self.reference.n()
    }

    /// Image boundary of `φ`, after the validity checks.
    pub fn image(&self, phi: &ShapeMap) -> Result<DiscreteBoundary> {
        if phi.base != self.base {
            return Err(Error::InvalidShape(
                "shape map is defined on a different reference curve".into(),
            ));
        }
        let report = validate_shape(phi, self.n_inner(), &self.outer);
        if !report.valid() {
            return Err(Error::InvalidShape(report.describe_failures()));
        }
        if phi.is_identity() {
            return Ok(self.reference.clone());
        }
        discretize(phi, self.n_inner())
    }

    pub fn system_at(&self, phi: &ShapeMap) -> Result<NonlinearSystem> {
        let image = self.image(phi)?;
        NonlinearSystem::new(&self.data, &self.outer, &image, &self.reference.nodes)
    }

    /// `M[φ, x]` on outer and reference inner nodes, constraint rows last.
    pub fn residual_m(&self, phi: &ShapeMap, x: &DensitySet) -> Result<Vec<f64>> {
        self.system_at(phi)?.residual(x)
    }

    /// `∂M/∂x` at `(φ, x)`.
    pub fn jacobian(&self, phi: &ShapeMap, x: &DensitySet) -> Result<BlockOperator> {
        self.system_at(phi)?.jacobian(x)
    }

    /// Newton iteration on `M[φ, ·] = 0` from `guess`.
    pub fn solve_at_shape(
        &self,
        phi: &ShapeMap,
        guess: &DensitySet,
        options: &SolverOptions,
    ) -> std::result::Result<SolveOutput, SolveFailure> {
        let system = self.system_at(phi)?;
        let newton = SolverOptions {
            method: Method::Newton,
            ..options.clone()
        };
        solve_system(&system, guess, &newton)
    }

    pub fn harmonic_pair(&self, phi: &ShapeMap, x: &DensitySet) -> Result<HarmonicPair> {
        reconstruct_solution(x, &self.outer, &self.image(phi)?)
    }
}

/// Probe points for the branch: `u^i` is sampled at `inner`, `u^o` at `outer`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Probes {
    pub inner: Vec<Point>,
    pub outer: Vec<Point>,
}

impl Probes {
    pub fn len(&self) -> usize {
        self.inner.len() + self.outer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks containment against the given boundaries.
    pub fn check(&self, outer: &DiscreteBoundary, inner: &DiscreteBoundary) -> Result<()> {
        for p in &self.inner {
            if !inner.contains(*p) {
                return Err(Error::InvalidShape(format!(
                    "inner probe ({}, {}) is not inside the inclusion",
                    p[0], p[1]
                )));
            }
        }
        for p in &self.outer {
            if inner.contains(*p) || !outer.contains(*p) {
                return Err(Error::InvalidShape(format!(
                    "outer probe ({}, {}) is not between the boundaries",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, pair: &HarmonicPair) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.len());
        for p in &self.inner {
            v.push(pair.u_i(*p)?);
        }
        for p in &self.outer {
            v.push(pair.u_o(*p)?);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub s: f64,
    pub densities: DensitySet,
    pub residual_norm: f64,
    /// `u^i` at the inner probes, then `u^o` at the outer probes.
    pub probe_values: Vec<f64>,
    pub iterations: usize,
}

/// A branch that stopped early; `points` holds everything computed before `failed_s`.
#[derive(Debug)]
pub struct BranchFailure {
    pub points: Vec<BranchPoint>,
    pub failed_s: f64,
    pub error: Error,
}

impl std::fmt::Display for BranchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "continuation stopped at s = {} after {} points: {}",
            self.failed_s,
            self.points.len(),
            self.error
        )
    }
}

impl std::error::Error for BranchFailure {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// Previous solution.
    Constant,
    /// Linear extrapolation from the two previous solutions.
    Secant,
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    /// Options for the solve at `s = 0`; the corrector reuses `tol`,
    /// `max_iter` and `polish` with Newton.
    pub solver: SolverOptions,
    pub predictor: Predictor,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            solver: SolverOptions {
                polish: true,
                ..SolverOptions::default()
            },
            predictor: Predictor::Secant,
        }
    }
}

fn point(
    problem: &ShapeProblem,
    family: &ShapeFamily,
    probes: &Probes,
    s: f64,
    out: SolveOutput,
) -> Result<BranchPoint> {
    let phi = family.at(s);
    let pair = problem.harmonic_pair(&phi, &out.densities)?;
    probes.check(&problem.outer, &pair.inner)?;
    Ok(BranchPoint {
        s,
        probe_values: probes.evaluate(&pair)?,
        residual_norm: out.residual,
        iterations: out.iterations(),
        densities: out.densities,
    })
}

fn extrapolate(a: &DensitySet, b: &DensitySet, w: f64) -> DensitySet {
    // b + w (b - a)
    let v: Vec<f64> = a
        .to_vec()
        .iter()
        .zip(b.to_vec())
        .map(|(x, y)| y + w * (y - x))
        .collect();
    DensitySet::from_vec(&v, b.layout()).expect("same layout")
}

/// Follows the solution branch on the uniform grid `s_k = k s_max / steps`.
///
/// The first point is the unperturbed solve from zero. A failed corrector
/// is retried once through the midpoint of the step.
pub fn continue_branch(
    problem: &ShapeProblem,
    family: &ShapeFamily,
    steps: usize,
    probes: &Probes,
    options: &ContinuationOptions,
) -> std::result::Result<Vec<BranchPoint>, BranchFailure> {
    let mut points: Vec<BranchPoint> = Vec::with_capacity(steps + 1);
    let abort = |points: Vec<BranchPoint>, s: f64, error: Error| BranchFailure {
        points,
        failed_s: s,
        error,
    };
    if family.base != problem.base {
        let e = Error::InvalidShape("family and problem use different reference curves".into());
        return Err(abort(points, 0.0, e));
    }
    let first = problem
        .system_at(&family.at(0.0))
        .map_err(SolveFailure::from)
        .and_then(|sys| {
            solve_system(
                &sys,
                &DensitySet::zeros(problem.outer.n(), problem.n_inner()),
                &options.solver,
            )
        });
    match first
        .map_err(|f| f.error)
        .and_then(|o| point(problem, family, probes, 0.0, o))
    {
        Ok(p) => points.push(p),
        Err(e) => return Err(abort(points, 0.0, e)),
    }
    if steps == 0 {
        return Ok(points);
    }
    let h = family.s_max / steps as f64;
    for k in 1..=steps {
        let s = if k == steps {
            family.s_max
        } else {
            k as f64 * h
        };
        let n = points.len();
        let guess = match (options.predictor, n) {
            (Predictor::Secant, n) if n >= 2 => {
                extrapolate(&points[n - 2].densities, &points[n - 1].densities, 1.0)
            }
            _ => points[n - 1].densities.clone(),
        };
        let attempt = problem.solve_at_shape(&family.at(s), &guess, &options.solver);
        let out = match attempt {
            Ok(o) => o,
            Err(first_failure) => {
                log::warn!(
                    "corrector failed at s = {s} ({}), halving the step",
                    first_failure.error
                );
                let mid = s - 0.5 * h;
                let half_guess = match (options.predictor, n) {
                    (Predictor::Secant, n) if n >= 2 => {
                        extrapolate(&points[n - 2].densities, &points[n - 1].densities, 0.5)
                    }
                    _ => points[n - 1].densities.clone(),
                };
                let retry = problem
                    .solve_at_shape(&family.at(mid), &half_guess, &options.solver)
                    .and_then(|m| {
                        let g = extrapolate(&points[n - 1].densities, &m.densities, 1.0);
                        problem.solve_at_shape(&family.at(s), &g, &options.solver)
                    });
                match retry {
                    Ok(o) => o,
                    Err(f) => return Err(abort(points, s, f.error)),
                }
            }
        };
        match point(problem, family, probes, s, out) {
            Ok(p) => points.push(p),
            Err(e) => return Err(abort(points, s, e)),
        }
    }
    Ok(points)
}

/// Finite-difference derivative estimates of one probe along the branch.
#[derive(Debug, Clone, Serialize)]
pub struct OrderDiagnostic {
    pub order: usize,
    /// Estimates at the centre point with spacings `h`, `2h`, `4h` (as available).
    pub estimates: Vec<f64>,
    /// `(D_{2h} - D_{4h}) / (D_h - D_{2h})`; close to 4 for smooth data.
    pub richardson_ratio: Option<f64>,
    /// `|D_h - D_{2h}|` relative to `max(|D_h|, 1)`.
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessReport {
    pub center_index: usize,
    pub center_s: f64,
    pub orders: Vec<OrderDiagnostic>,
    /// `(s, [d¹, …, d^max_order])` at every grid point where the finest
    /// stencil fits; `None` marks orders whose stencil does not fit.
    pub table: Vec<(f64, Vec<Option<f64>>)>,
}

impl SmoothnessReport {
    /// Every order up to `max_order` has a ratio inside `range`.
    pub fn ratios_within(&self, max_order: usize, range: std::ops::RangeInclusive<f64>) -> bool {
        self.orders
            .iter()
            .filter(|o| o.order <= max_order)
            .all(|o| o.richardson_ratio.is_some_and(|r| range.contains(&r)))
    }
}

fn half_width(order: usize) -> usize {
    if order <= 2 {
        1
    } else {
        2
    }
}

/// Second-order central stencil for the `order`-th derivative at index `i`
/// with spacing `m·h`.
fn central(values: &[f64], i: usize, m: usize, h: f64, order: usize) -> Option<f64> {
    let w = half_width(order) * m;
    if i < w || i + w >= values.len() {
        return None;
    }
    let f = |k: isize| values[(i as isize + k * m as isize) as usize];
    let hh = m as f64 * h;
    Some(match order {
        1 => (f(1) - f(-1)) / (2.0 * hh),
        2 => (f(1) - 2.0 * f(0) + f(-1)) / (hh * hh),
        3 => (f(2) - 2.0 * f(1) + 2.0 * f(-1) - f(-2)) / (2.0 * hh.powi(3)),
        4 => (f(2) - 4.0 * f(1) + 6.0 * f(0) - 4.0 * f(-1) + f(-2)) / hh.powi(4),
        _ => return None,
    })
}

/// Derivative table and Richardson diagnostics for samples on a uniform grid.
/// Diagnostics are taken at `center` (the middle point if `None`).
pub fn smoothness_from_values(
    s: &[f64],
    values: &[f64],
    max_order: usize,
    center: Option<usize>,
) -> Result<SmoothnessReport> {
    if !(1..=4).contains(&max_order) {
        return Err(Error::Domain(format!(
            "max_order must be 1..=4, got {max_order}"
        )));
    }
    let needed = 2 * max_order + 1;
    if values.len() < needed || s.len() != values.len() {
        return Err(Error::GridTooShort {
            needed,
            have: values.len().min(s.len()),
        });
    }
    let h = s[1] - s[0];
    let c = center.unwrap_or(values.len() / 2);
    if c >= values.len() {
        return Err(Error::Domain(format!("center index {c} out of range")));
    }
    let orders = (1..=max_order)
        .map(|order| {
            let estimates: Vec<f64> = [1, 2, 4]
                .iter()
                .map_while(|&m| central(values, c, m, h, order))
                .collect();
            let relative_change = (estimates.len() >= 2)
                .then(|| (estimates[0] - estimates[1]).abs() / estimates[0].abs().max(1.0));
            let richardson_ratio = (estimates.len() == 3)
                .then(|| (estimates[1] - estimates[2]) / (estimates[0] - estimates[1]))
                .filter(|r| r.is_finite());
            OrderDiagnostic {
                order,
                estimates,
                richardson_ratio,
                relative_change,
            }
        })
        .collect();
    let table = (0..values.len())
        .filter(|&i| central(values, i, 1, h, 1).is_some())
        .map(|i| {
            (
                s[i],
                (1..=max_order)
                    .map(|o| central(values, i, 1, h, o))
                    .collect(),
            )
        })
        .collect();
    Ok(SmoothnessReport {
        center_index: c,
        center_s: s[c],
        orders,
        table,
    })
}

/// Diagnostics for probe `probe_index` of a branch.
pub fn smoothness_probe(
    branch: &[BranchPoint],
    probe_index: usize,
    max_order: usize,
) -> Result<SmoothnessReport> {
    let s: Vec<f64> = branch.iter().map(|p| p.s).collect();
    let v = branch
        .iter()
        .map(|p| {
            p.probe_values
                .get(probe_index)
                .copied()
                .ok_or_else(|| Error::Dimension(format!("branch point has no probe {probe_index}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    smoothness_from_values(&s, &v, max_order, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinear::solve_unperturbed;

    fn zero_data() -> TransmissionData {
        TransmissionData::new("0", "0", ["0"; 4], "0").unwrap()
    }

    fn canonical() -> TransmissionData {
        TransmissionData::new(
            "z1 + tanh(z2)",
            "-z2 + tanh(z1)",
            ["1", "1 - tanh(z2)^2", "1 - tanh(z1)^2", "-1"],
            "x1 / 2",
        )
        .unwrap()
    }

    fn problem(data: TransmissionData, n: usize) -> ShapeProblem {
        let outer = discretize(&Curve::circle(2.0), n).unwrap();
        ShapeProblem::new(&data, &outer, &Curve::circle(1.0), n).unwrap()
    }

    fn probes() -> Probes {
        Probes {
            inner: vec![[0.2, 0.1]],
            outer: vec![[1.5, 0.5]],
        }
    }

    #[test]
    fn family_must_start_at_identity() {
        let err = ShapeFamily::from_expressions(Curve::circle(1.0), ["1", "0", "0", "0"], 0.1);
        assert!(matches!(err, Err(Error::InvalidShape(_))));
        let f = ShapeFamily::trefoil(Curve::circle(1.0), 0.1);
        assert!(f.at(0.0).is_identity());
    }

    #[test]
    fn residual_of_zeros() {
        let p = problem(TransmissionData::new("0", "0", ["0"; 4], "x1").unwrap(), 16);
        let r = p
            .residual_m(
                &ShapeMap::identity(Curve::circle(1.0)),
                &DensitySet::zeros(16, 16),
            )
            .unwrap();
        for j in 0..16 {
            assert_eq!(r[j], -p.outer.nodes[j][0]);
        }
        assert!(r[16..].iter().all(|v| *v == 0.0));
        let z = problem(zero_data(), 16);
        let r = z
            .residual_m(
                &ShapeMap::dilation(Curve::circle(1.0), 1.1),
                &DensitySet::zeros(16, 16),
            )
            .unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn invalid_shape_rejected_before_assembly() {
        let p = problem(zero_data(), 16);
        let phi = ShapeMap::dilation(Curve::circle(1.0), 3.0);
        let err = p
            .solve_at_shape(&phi, &DensitySet::zeros(16, 16), &SolverOptions::default())
            .unwrap_err();
        assert!(matches!(err.error, Error::InvalidShape(_)));
    }

    #[test]
    fn zero_step_branch_is_the_unperturbed_solution() {
        let p = problem(canonical(), 32);
        let family = ShapeFamily::trefoil(Curve::circle(1.0), 0.1);
        let opts = ContinuationOptions::default();
        let b = continue_branch(&p, &family, 0, &probes(), &opts).unwrap();
        assert_eq!(b.len(), 1);
        let direct = solve_unperturbed(&p.data, &p.outer, &p.reference, &opts.solver).unwrap();
        assert_eq!(b[0].densities, direct.densities);
    }

    #[test]
    fn dilation_of_zero_data_is_constant() {
        let p = problem(zero_data(), 16);
        let family = ShapeFamily::dilation(Curve::circle(1.0), 0.2);
        let b =
            continue_branch(&p, &family, 8, &probes(), &ContinuationOptions::default()).unwrap();
        assert_eq!(b.len(), 9);
        for pt in &b {
            assert_eq!(pt.densities.norm_inf(), 0.0);
        }
        let r = smoothness_probe(&b, 0, 4).unwrap();
        for o in &r.orders {
            assert!(o.estimates.iter().all(|e| *e == 0.0));
        }
    }

    #[test]
    fn containment_failure_gives_partial_branch() {
        let p = problem(zero_data(), 16);
        let family = ShapeFamily::dilation(Curve::circle(1.0), 1.5);
        let err = continue_branch(&p, &family, 6, &probes(), &ContinuationOptions::default())
            .unwrap_err();
        assert!(!err.points.is_empty() && err.points.len() < 7);
        assert!(err.failed_s > 0.0);
    }

    #[test]
    fn smoothness_of_polynomial_and_noise() {
        let s: Vec<f64> = (0..21).map(|k| 0.005 * k as f64).collect();
        let v: Vec<f64> = s.iter().map(|x| (3.0 * x).sin() + x * x).collect();
        let r = smoothness_from_values(&s, &v, 4, None).unwrap();
        assert!(r.ratios_within(4, 3.5..=4.5), "{r:?}");
        let mut noisy = v.clone();
        noisy[11] += 1e-3;
        let r = smoothness_from_values(&s, &noisy, 2, None).unwrap();
        for o in &r.orders {
            let ratio = o.richardson_ratio.unwrap_or(f64::NAN);
            assert!(!(2.0..=8.0).contains(&ratio), "{o:?}");
        }
        assert!(matches!(
            smoothness_from_values(&s[..5], &v[..5], 3, None),
            Err(Error::GridTooShort { needed: 7, have: 5 })
        ));
    }
}
