//! Boundary nonlinearities, the integral system they induce and its solvers.
//!
//! The unknown is a [`DensitySet`]. With `α = (α¹, α²)` the traces of
//! `u^o` and `u^i` at the inner nodes, the system reads
//!
//! ```text
//! J_0 x = [f^o; F₁(x_ref, α); F₂(x_ref, α); 0; 0]
//! ```
//!
//! where `J_0` is the bordered operator with no `A` coupling. Picard
//! iterates `T_A(x) = J_A⁻¹ [f^o; F(α) - Aα; 0; 0]` for a fixed admissible
//! `A`, Newton uses `J_A` with `A = ∂F/∂z` at the current traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, POINT_VARS, TRANSMISSION_VARS};
use crate::geometry::{DiscreteBoundary, Point};
use crate::linalg::norm_inf;
use crate::operators::{
    check_a_conditions, BlockOperator, DensitySet, FactoredOperator, InterfaceOperators, Layout,
    MatrixField,
};
use crate::potential::{
    eval_single_layer, grad_single_layer, normal_derivative, normal_gradient_at, single_layer_at,
    trace_v, FieldValue, Side,
};

/// `F₁`, `F₂` with their `z`-derivatives, and the outer Neumann datum.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionData {
    pub f1: Expr,
    pub f2: Expr,
    pub df1_dz1: Expr,
    pub df1_dz2: Expr,
    pub df2_dz1: Expr,
    pub df2_dz2: Expr,
    pub f_o: Expr,
}

/// Points, per expression, at which derivative validation samples.
pub const DERIVATIVE_SAMPLES: usize = 100;

impl TransmissionData {
    /// Parses all seven expressions. `derivatives` is
    /// `[dF1/dz1, dF1/dz2, dF2/dz1, dF2/dz2]`.
    pub fn parse(f1: &str, f2: &str, derivatives: [&str; 4], f_o: &str) -> Result<Self> {
        let t = |s: &str| Expr::parse(s, TRANSMISSION_VARS);
        Ok(TransmissionData {
            f1: t(f1)?,
            f2: t(f2)?,
            df1_dz1: t(derivatives[0])?,
            df1_dz2: t(derivatives[1])?,
            df2_dz1: t(derivatives[2])?,
            df2_dz2: t(derivatives[3])?,
            f_o: Expr::parse(f_o, POINT_VARS)?,
        })
    }

    /// Parses and checks the derivatives against finite differences.
    pub fn new(f1: &str, f2: &str, derivatives: [&str; 4], f_o: &str) -> Result<Self> {
        let data = TransmissionData::parse(f1, f2, derivatives, f_o)?;
        data.validate_derivatives(0)?;
        Ok(data)
    }

    /// Compares each supplied derivative with a central difference of its
    /// parent at [`DERIVATIVE_SAMPLES`] random points of `[-2, 2]⁴`.
    /// Points where the parent is not finite are skipped.
    pub fn validate_derivatives(&self, seed: u64) -> Result<()> {
        let checks = [
            ("dF1/dz1", &self.f1, &self.df1_dz1, 2),
            ("dF1/dz2", &self.f1, &self.df1_dz2, 3),
            ("dF2/dz1", &self.f2, &self.df2_dz1, 2),
            ("dF2/dz2", &self.f2, &self.df2_dz2, 3),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, parent, derivative, slot) in checks {
            let mut accepted = 0;
            let mut attempts = 0;
            while accepted < DERIVATIVE_SAMPLES && attempts < 20 * DERIVATIVE_SAMPLES {
                attempts += 1;
                let at: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
                let h = 1e-5 * (1.0 + at[slot].abs());
                let mut plus = at;
                let mut minus = at;
                plus[slot] += h;
                minus[slot] -= h;
                let (fp, fm) = (parent.eval(&plus), parent.eval(&minus));
                let supplied = derivative.eval(&at);
                if !(fp.is_finite() && fm.is_finite() && parent.eval(&at).is_finite()) {
                    continue;
                }
                accepted += 1;
                let estimated = (fp - fm) / (2.0 * h);
                let scale = supplied.abs().max(estimated.abs()).max(1.0);
                if !((supplied - estimated).abs() <= 1e-6 * scale) {
                    return Err(Error::DerivativeMismatch {
                        name: name.to_string(),
                        at,
                        supplied,
                        estimated,
                    });
                }
            }
        }
        Ok(())
    }

    /// `f^o` sampled at the outer nodes.
    pub fn neumann_datum(&self, outer: &DiscreteBoundary) -> Result<Vec<f64>> {
        outer
            .nodes
            .iter()
            .enumerate()
            .map(|(j, p)| finite("f_o", j, self.f_o.eval(p)))
            .collect()
    }
}

fn finite(what: &str, index: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            index,
            value,
        })
    }
}

/// Pointwise `F(x_j, h1_j, h2_j)`.
pub fn nemytskii_apply(f: &Expr, points: &[Point], h1: &[f64], h2: &[f64]) -> Result<Vec<f64>> {
    if h1.len() != points.len() || h2.len() != points.len() {
        return Err(Error::Dimension(format!(
            "{} points but {} and {} values",
            points.len(),
            h1.len(),
            h2.len()
        )));
    }
    (0..points.len())
        .map(|j| {
            let p = points[j];
            finite(f.source(), j, f.eval(&[p[0], p[1], h1[j], h2[j]]))
        })
        .collect()
}

/// `∂F_j/∂z_k` at `(x, α¹(x), α²(x))`.
pub fn linearization_matrix(
    data: &TransmissionData,
    points: &[Point],
    alpha1: &[f64],
    alpha2: &[f64],
) -> Result<MatrixField> {
    Ok(MatrixField {
        a11: nemytskii_apply(&data.df1_dz1, points, alpha1, alpha2)?,
        a12: nemytskii_apply(&data.df1_dz2, points, alpha1, alpha2)?,
        a21: nemytskii_apply(&data.df2_dz1, points, alpha1, alpha2)?,
        a22: nemytskii_apply(&data.df2_dz2, points, alpha1, alpha2)?,
    })
}

/// Empirical growth exponent of `|F(x, ζ) - A(x) ζ|`. A heuristic, not a proof.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    /// Fitted slope of log-residual against `log(1 + |ζ₁| + |ζ₂|)`.
    pub delta: f64,
    /// `exp` of the fitted intercept.
    pub constant: f64,
    pub max_residual: f64,
    /// Residual identically (numerically) zero.
    pub trivial: bool,
    pub pass: bool,
}

/// Samples `ζ` on 24 geometric shells `|ζ₁| + |ζ₂| = r` up to
/// `sample_radius`, 32 directions each, at every node, and fits the upper
/// half of the shells. Passes when the slope is below `0.95`.
pub fn check_growth(
    data: &TransmissionData,
    points: &[Point],
    a: &MatrixField,
    sample_radius: f64,
) -> GrowthReport {
    const SHELLS: usize = 24;
    const DIRECTIONS: usize = 32;
    let r_min = (sample_radius * 1e-2).min(0.5);
    let mut xs = Vec::with_capacity(SHELLS);
    let mut ys = Vec::with_capacity(SHELLS);
    let mut overall = 0.0f64;
    for s in 0..SHELLS {
        let r = r_min * (sample_radius / r_min).powf(s as f64 / (SHELLS - 1) as f64);
        let mut shell_max = 0.0f64;
        for d in 0..DIRECTIONS {
            let psi = 2.0 * std::f64::consts::PI * (d as f64 + 0.5) / DIRECTIONS as f64;
            let (c, sn) = (psi.cos(), psi.sin());
            let scale = r / (c.abs() + sn.abs());
            let z = [scale * c, scale * sn];
            for (j, p) in points.iter().enumerate() {
                let args = [p[0], p[1], z[0], z[1]];
                let m = a.at(j);
                let e1 = data.f1.eval(&args) - (m[0][0] * z[0] + m[0][1] * z[1]);
                let e2 = data.f2.eval(&args) - (m[1][0] * z[0] + m[1][1] * z[1]);
                let e = e1.hypot(e2);
                shell_max = if e.is_nan() {
                    f64::INFINITY
                } else {
                    shell_max.max(e)
                };
            }
        }
        overall = overall.max(shell_max);
        xs.push((1.0 + r).ln());
        ys.push(shell_max);
    }
    if overall <= 1e-14 {
        return GrowthReport {
            delta: 0.0,
            constant: 0.0,
            max_residual: overall,
            trivial: true,
            pass: true,
        };
    }
    if !overall.is_finite() {
        return GrowthReport {
            delta: f64::INFINITY,
            constant: f64::INFINITY,
            max_residual: overall,
            trivial: false,
            pass: false,
        };
    }
    let lo = SHELLS / 2;
    let floor = 1e-300;
    let ly: Vec<f64> = ys[lo..].iter().map(|y| y.max(floor).ln()).collect();
    let lx = &xs[lo..];
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let delta = sxy / sxx;
    let constant = (my - delta * mx).exp();
    GrowthReport {
        delta,
        constant,
        max_residual: overall,
        trivial: false,
        pass: delta < 0.95,
    }
}

/// The discretized integral system on one pair of boundaries.
///
/// `inner` is the boundary the inclusion actually occupies (the image curve
/// under a shape map); `reference_points` are where `F` takes its
/// `x`-argument, the reference inner nodes.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    data: TransmissionData,
    outer: DiscreteBoundary,
    inner: DiscreteBoundary,
    reference_points: Vec<Point>,
    ops: InterfaceOperators,
    f_o: Vec<f64>,
}

impl NonlinearSystem {
    pub fn new(
        data: &TransmissionData,
        outer: &DiscreteBoundary,
        inner: &DiscreteBoundary,
        reference_points: &[Point],
    ) -> Result<NonlinearSystem> {
        if reference_points.len() != inner.n() {
            return Err(Error::Dimension(format!(
                "{} reference points for {} inner nodes",
                reference_points.len(),
                inner.n()
            )));
        }
        let ops = InterfaceOperators::new(outer, inner)?;
        Ok(NonlinearSystem {
            data: data.clone(),
            outer: outer.clone(),
            inner: inner.clone(),
            reference_points: reference_points.to_vec(),
            ops,
            f_o: data.neumann_datum(outer)?,
        })
    }

    /// System on the unperturbed inclusion: `F` sees the inner nodes themselves.
    pub fn unperturbed(
        data: &TransmissionData,
        outer: &DiscreteBoundary,
        inner: &DiscreteBoundary,
    ) -> Result<NonlinearSystem> {
        NonlinearSystem::new(data, outer, inner, &inner.nodes)
    }

    pub fn layout(&self) -> Layout {
        self.ops.layout()
    }

    pub fn data(&self) -> &TransmissionData {
        &self.data
    }

    pub fn outer(&self) -> &DiscreteBoundary {
        &self.outer
    }

    pub fn inner(&self) -> &DiscreteBoundary {
        &self.inner
    }

    pub fn reference_points(&self) -> &[Point] {
        &self.reference_points
    }

    pub fn operators(&self) -> &InterfaceOperators {
        &self.ops
    }

    pub fn neumann_datum(&self) -> &[f64] {
        &self.f_o
    }

    pub fn traces(&self, x: &DensitySet) -> (Vec<f64>, Vec<f64>) {
        self.ops.traces(&x.to_vec())
    }

    fn nonlinear_terms(&self, alpha: &(Vec<f64>, Vec<f64>)) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = &self.reference_points;
        Ok((
            nemytskii_apply(&self.data.f1, p, &alpha.0, &alpha.1)?,
            nemytskii_apply(&self.data.f2, p, &alpha.0, &alpha.1)?,
        ))
    }

    /// `M(x)`: the three boundary rows followed by the two constraint rows.
    pub fn residual(&self, x: &DensitySet) -> Result<Vec<f64>> {
        let v = x.to_vec();
        let mut r = self.ops.linear_part().matvec(&v);
        let alpha = self.ops.traces(&v);
        let (g1, g2) = self.nonlinear_terms(&alpha)?;
        let l = self.layout();
        let (no, ni) = (l.n_outer, l.n_inner);
        for j in 0..no {
            r[j] -= self.f_o[j];
        }
        for j in 0..ni {
            r[no + j] -= g1[j];
            r[no + ni + j] -= g2[j];
        }
        Ok(r)
    }

    pub fn residual_norm(&self, x: &DensitySet) -> Result<f64> {
        Ok(norm_inf(&self.residual(x)?))
    }

    pub fn linearization(&self, x: &DensitySet) -> Result<MatrixField> {
        let (a1, a2) = self.traces(x);
        linearization_matrix(&self.data, &self.reference_points, &a1, &a2)
    }

    /// Newton Jacobian `∂M/∂x` at `x`.
    pub fn jacobian(&self, x: &DensitySet) -> Result<BlockOperator> {
        self.ops.assemble(&self.linearization(x)?)
    }

    pub fn picard_operator(&self, a: MatrixField) -> Result<PicardOperator<'_>> {
        let factored = self.ops.assemble(&a)?.factorize()?;
        Ok(PicardOperator {
            system: self,
            a,
            factored,
        })
    }

    /// Picard matrix per `choice`; the linearized choice falls back to
    /// `((1, 0), (0, -1))` when the linearization is not admissible.
    pub fn picard_matrix(&self, choice: &PicardMatrix, x: &DensitySet) -> Result<MatrixField> {
        let n = self.layout().n_inner;
        Ok(match choice {
            PicardMatrix::Fixed(a) => MatrixField::constant(n, *a),
            PicardMatrix::Linearized => {
                let a = self.linearization(x)?;
                if check_a_conditions(&a).all_pass() {
                    a
                } else {
                    log::info!("linearization is not admissible, Picard uses ((1,0),(0,-1))");
                    MatrixField::constant(n, [[1.0, 0.0], [0.0, -1.0]])
                }
            }
        })
    }
}

/// `T_A` for a fixed `A` with `J_A` factored once.
pub struct PicardOperator<'a> {
    system: &'a NonlinearSystem,
    a: MatrixField,
    factored: FactoredOperator,
}

impl PicardOperator<'_> {
    pub fn matrix(&self) -> &MatrixField {
        &self.a
    }

    pub fn condition(&self) -> f64 {
        self.factored.condition()
    }

    pub fn apply(&self, x: &DensitySet) -> Result<DensitySet> {
        let s = self.system;
        let alpha = s.traces(x);
        let (g1, g2) = s.nonlinear_terms(&alpha)?;
        let (l1, l2) = self.a.apply(&alpha.0, &alpha.1);
        let mut rhs = s.f_o.clone();
        rhs.extend(g1.iter().zip(&l1).map(|(g, l)| g - l));
        rhs.extend(g2.iter().zip(&l2).map(|(g, l)| g - l));
        self.factored.solve(&rhs)
    }
}

/// One step of `T_A`.
pub fn picard_step(op: &PicardOperator<'_>, state: &DensitySet) -> Result<DensitySet> {
    op.apply(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Picard,
    Newton,
    Hybrid,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "picard" => Ok(Method::Picard),
            "newton" => Ok(Method::Newton),
            "hybrid" => Ok(Method::Hybrid),
            other => Err(format!(
                "unknown method `{other}` (expected picard, newton or hybrid)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PicardMatrix {
    /// `∂F/∂z` at the initial guess, if admissible.
    Linearized,
    Fixed([[f64; 2]; 2]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    /// Picard relaxation `ω` in `x ← (1 - ω) x + ω T_A(x)`.
    pub damping: f64,
    /// Hybrid switches to Newton once a Picard step is shorter than this.
    pub switch_tol: f64,
    pub picard_matrix: PicardMatrix,
    /// Take one extra Newton step after reaching `tol`, kept only if it
    /// lowers the residual. Useful when iterates feed finite differences.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::Hybrid,
            tol: 1e-10,
            max_iter: 100,
            damping: 1.0,
            switch_tol: 1e-3,
            picard_matrix: PicardMatrix::Linearized,
            polish: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub method: Method,
    /// `‖M(x_k)‖_∞` after the step.
    pub residual: f64,
    /// `‖x_k - x_{k-1}‖_∞`.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub densities: DensitySet,
    pub trace: Vec<IterationRecord>,
    pub residual: f64,
    /// The `A` used by Picard steps, if any were taken.
    pub picard_matrix: Option<MatrixField>,
}

impl SolveOutput {
    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iteration)
    }
}

/// A failed solve, with whatever trace was produced before the failure.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: Error,
    pub trace: Vec<IterationRecord>,
    pub last: Option<DensitySet>,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} recorded iterations",
            self.error,
            self.trace.len()
        )
    }
}

impl std::error::Error for SolveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for SolveFailure {
    fn from(error: Error) -> Self {
        SolveFailure {
            error,
            trace: Vec::new(),
            last: None,
        }
    }
}

/// Iterates from `guess` until `‖M(x)‖_∞ ≤ tol`.
pub fn solve_system(
    system: &NonlinearSystem,
    guess: &DensitySet,
    options: &SolverOptions,
) -> std::result::Result<SolveOutput, SolveFailure> {
    let mut trace = Vec::new();
    let mut x = guess.clone();
    let fail = |error: Error, trace: Vec<IterationRecord>, x: &DensitySet| {
        // an iterate blowing up is divergence, not bad input
        let error = match error {
            Error::NonFinite { .. } if trace.len() > 1 => {
                log::warn!("iteration diverged: {error}");
                Error::NonConvergence {
                    iterations: trace.len() - 1,
                    residual: f64::INFINITY,
                }
            }
            e => e,
        };
        SolveFailure {
            error,
            trace,
            last: Some(x.clone()),
        }
    };
    if x.layout() != system.layout() {
        return Err(
            Error::Dimension("initial guess does not match the system layout".into()).into(),
        );
    }
    let mut residual = match system.residual_norm(&x) {
        Ok(r) => r,
        Err(e) => return Err(fail(e, trace, &x)),
    };
    trace.push(IterationRecord {
        iteration: 0,
        method: options.method,
        residual,
        step: 0.0,
    });

    let mut picard: Option<PicardOperator<'_>> = None;
    let mut newton_phase = options.method == Method::Newton;
    let mut iteration = 0;
    while residual > options.tol {
        if iteration >= options.max_iter {
            let e = Error::NonConvergence {
                iterations: iteration,
                residual,
            };
            return Err(fail(e, trace, &x));
        }
        iteration += 1;
        let step_result = if newton_phase {
            newton_update(system, &x)
        } else {
            if picard.is_none() {
                match system
                    .picard_matrix(&options.picard_matrix, &x)
                    .and_then(|a| system.picard_operator(a))
                {
                    Ok(op) => picard = Some(op),
                    Err(e) => return Err(fail(e, trace, &x)),
                }
            }
            let op = picard.as_ref().expect("Picard operator initialized above");
            op.apply(&x).map(|t| relax(&x, &t, options.damping))
        };
        let next = match step_result {
            Ok(n) => n,
            Err(e) => return Err(fail(e, trace, &x)),
        };
        let step = difference_norm(&next, &x);
        x = next;
        residual = match system.residual_norm(&x) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, trace, &x)),
        };
        trace.push(IterationRecord {
            iteration,
            method: if newton_phase {
                Method::Newton
            } else {
                Method::Picard
            },
            residual,
            step,
        });
        log::debug!("iteration {iteration}: residual {residual:e}, step {step:e}");
        if !residual.is_finite() || !x.is_finite() {
            let e = Error::NonConvergence {
                iterations: iteration,
                residual,
            };
            return Err(fail(e, trace, &x));
        }
        if options.method == Method::Hybrid && !newton_phase && step < options.switch_tol {
            newton_phase = true;
        }
    }
    if options.polish && residual > 0.0 {
        if let Ok(next) = newton_update(system, &x) {
            if let Ok(r) = system.residual_norm(&next) {
                if r < residual {
                    iteration += 1;
                    trace.push(IterationRecord {
                        iteration,
                        method: Method::Newton,
                        residual: r,
                        step: difference_norm(&next, &x),
                    });
                    x = next;
                    residual = r;
                }
            }
        }
    }
    Ok(SolveOutput {
        densities: x,
        trace,
        residual,
        picard_matrix: picard.map(|p| p.a),
    })
}

fn newton_update(system: &NonlinearSystem, x: &DensitySet) -> Result<DensitySet> {
    let r = system.residual(x)?;
    let delta = system.jacobian(x)?.factorize()?.solve(&r)?;
    let v: Vec<f64> = x
        .to_vec()
        .iter()
        .zip(delta.to_vec())
        .map(|(a, d)| a - d)
        .collect();
    DensitySet::from_vec(&v, x.layout())
}

fn relax(x: &DensitySet, t: &DensitySet, omega: f64) -> DensitySet {
    if omega == 1.0 {
        return t.clone();
    }
    let v: Vec<f64> = x
        .to_vec()
        .iter()
        .zip(t.to_vec())
        .map(|(a, b)| (1.0 - omega) * a + omega * b)
        .collect();
    DensitySet::from_vec(&v, x.layout()).expect("same layout")
}

pub fn difference_norm(a: &DensitySet, b: &DensitySet) -> f64 {
    a.to_vec()
        .iter()
        .zip(b.to_vec())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Solves the unperturbed system from a zero start.
pub fn solve_unperturbed(
    data: &TransmissionData,
    outer: &DiscreteBoundary,
    inner: &DiscreteBoundary,
    options: &SolverOptions,
) -> std::result::Result<SolveOutput, SolveFailure> {
    let system = NonlinearSystem::unperturbed(data, outer, inner)?;
    solve_system(&system, &DensitySet::zeros(outer.n(), inner.n()), options)
}

/// `u^o` and `u^i` rebuilt from densities by the single layer representation.
#[derive(Debug, Clone)]
pub struct HarmonicPair {
    pub densities: DensitySet,
    pub outer: DiscreteBoundary,
    /// The boundary the inclusion occupies; its weights carry `σ̃`.
    pub inner: DiscreteBoundary,
}

pub fn reconstruct_solution(
    densities: &DensitySet,
    outer: &DiscreteBoundary,
    inner: &DiscreteBoundary,
) -> Result<HarmonicPair> {
    if densities.layout() != Layout::new(outer.n(), inner.n()) {
        return Err(Error::Dimension(
            "densities do not match the boundary node counts".into(),
        ));
    }
    Ok(HarmonicPair {
        densities: densities.clone(),
        outer: outer.clone(),
        inner: inner.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Outer,
    Inner,
    Exterior,
}

impl HarmonicPair {
    pub fn region(&self, x: Point) -> Region {
        if self.inner.contains(x) {
            Region::Inner
        } else if self.outer.contains(x) {
            Region::Outer
        } else {
            Region::Exterior
        }
    }

    /// `u^o(x)` with the near-boundary flag.
    pub fn u_o_flagged(&self, x: Point) -> Result<FieldValue<f64>> {
        if self.region(x) != Region::Outer {
            return Err(Error::Domain(format!(
                "u_o is defined between the boundaries; ({}, {}) is not",
                x[0], x[1]
            )));
        }
        let d = &self.densities;
        let a = eval_single_layer(&self.outer, &d.mu_o, x);
        let b = eval_single_layer(&self.inner, &d.mu_i, x);
        Ok(FieldValue {
            value: a.value + b.value + d.rho_o,
            near_boundary: a.near_boundary || b.near_boundary,
        })
    }

    /// `u^i(x)` with the near-boundary flag.
    pub fn u_i_flagged(&self, x: Point) -> Result<FieldValue<f64>> {
        if self.region(x) != Region::Inner {
            return Err(Error::Domain(format!(
                "u_i is defined inside the inclusion; ({}, {}) is not",
                x[0], x[1]
            )));
        }
        let v = eval_single_layer(&self.inner, &self.densities.eta_i, x);
        Ok(FieldValue {
            value: v.value + self.densities.rho_i,
            near_boundary: v.near_boundary,
        })
    }

    pub fn u_o(&self, x: Point) -> Result<f64> {
        self.u_o_flagged(x).map(|v| v.value)
    }

    pub fn u_i(&self, x: Point) -> Result<f64> {
        self.u_i_flagged(x).map(|v| v.value)
    }

    /// Whichever of `u^o`, `u^i` is defined at `x`.
    pub fn value(&self, x: Point) -> Result<f64> {
        match self.region(x) {
            Region::Inner => self.u_i(x),
            _ => self.u_o(x),
        }
    }

    pub fn grad_u_o(&self, x: Point) -> Result<Point> {
        self.u_o_flagged(x)?;
        let d = &self.densities;
        let a = grad_single_layer(&self.outer, &d.mu_o, x).value;
        let b = grad_single_layer(&self.inner, &d.mu_i, x).value;
        Ok([a[0] + b[0], a[1] + b[1]])
    }
}

/// Pointwise residuals of the three boundary conditions, recomputed from
/// the layer potentials rather than from the assembled operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryResiduals {
    pub outer_neumann: f64,
    pub transmission_outer: f64,
    pub transmission_inner: f64,
}

impl BoundaryResiduals {
    pub fn max(&self) -> f64 {
        self.outer_neumann
            .max(self.transmission_outer)
            .max(self.transmission_inner)
    }
}

pub fn boundary_residuals(system: &NonlinearSystem, x: &DensitySet) -> Result<BoundaryResiduals> {
    let (outer, inner) = (&system.outer, &system.inner);
    // ν·∇u^o on ∂Ω^o
    let own = normal_derivative(Side::Interior, outer, &x.mu_o);
    let cross = normal_gradient_at(&outer.nodes, &outer.normals, inner).matvec(&x.mu_i);
    let outer_neumann = (0..outer.n())
        .map(|j| (own[j] + cross[j] - system.f_o[j]).abs())
        .fold(0.0, f64::max);

    // traces of u^o, u^i on the inclusion boundary
    let vo = single_layer_at(&inner.nodes, outer).matvec(&x.mu_o);
    let vi = trace_v(inner, &x.mu_i);
    let ve = trace_v(inner, &x.eta_i);
    let uo: Vec<f64> = (0..inner.n()).map(|j| vo[j] + vi[j] + x.rho_o).collect();
    let ui: Vec<f64> = ve.iter().map(|v| v + x.rho_i).collect();
    let f1 = nemytskii_apply(&system.data.f1, &system.reference_points, &uo, &ui)?;
    let f2 = nemytskii_apply(&system.data.f2, &system.reference_points, &uo, &ui)?;

    let dn_o_own = normal_derivative(Side::Exterior, inner, &x.mu_i);
    let dn_o_cross = normal_gradient_at(&inner.nodes, &inner.normals, outer).matvec(&x.mu_o);
    let dn_i = normal_derivative(Side::Interior, inner, &x.eta_i);
    let mut t1 = 0.0f64;
    let mut t2 = 0.0f64;
    for j in 0..inner.n() {
        t1 = t1.max((dn_o_own[j] + dn_o_cross[j] - f1[j]).abs());
        t2 = t2.max((dn_i[j] - f2[j]).abs());
    }
    Ok(BoundaryResiduals {
        outer_neumann,
        transmission_outer: t1,
        transmission_inner: t2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{discretize, Curve};

    fn canonical() -> TransmissionData {
        TransmissionData::new(
            "z1 + tanh(z2)",
            "-z2 + tanh(z1)",
            ["1", "1 - tanh(z2)^2", "1 - tanh(z1)^2", "-1"],
            "x1 / 2",
        )
        .unwrap()
    }

    fn circles(n: usize) -> (DiscreteBoundary, DiscreteBoundary) {
        (
            discretize(&Curve::circle(2.0), n).unwrap(),
            discretize(&Curve::circle(1.0), n).unwrap(),
        )
    }

    #[test]
    fn derivative_validation_catches_mistakes() {
        let bad = TransmissionData::new("z1^2", "z2", ["z1", "0", "0", "1"], "0");
        match bad {
            Err(Error::DerivativeMismatch { name, .. }) => assert_eq!(name, "dF1/dz1"),
            other => panic!("{other:?}"),
        }
        assert!(TransmissionData::new("log(z1)", "z2", ["1/z1", "0", "0", "1"], "0").is_ok());
    }

    #[test]
    fn nemytskii_examples() {
        let pts: Vec<Point> = (0..8)
            .map(|j| {
                let t = j as f64 * std::f64::consts::PI / 4.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let h1: Vec<f64> = (0..8).map(|j| j as f64 - 3.0).collect();
        let zeros = vec![0.0; 8];
        let ones = vec![1.0; 8];
        let id = Expr::parse("z1", TRANSMISSION_VARS).unwrap();
        assert_eq!(nemytskii_apply(&id, &pts, &h1, &zeros).unwrap(), h1);
        let f = Expr::parse("z1 + tanh(z2)", TRANSMISSION_VARS).unwrap();
        assert!(nemytskii_apply(&f, &pts, &zeros, &zeros)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let g = Expr::parse("x1*z2", TRANSMISSION_VARS).unwrap();
        let out = nemytskii_apply(&g, &pts, &zeros, &ones).unwrap();
        for (o, p) in out.iter().zip(&pts) {
            assert_eq!(*o, p[0]);
        }
        let l = Expr::parse("log(z1)", TRANSMISSION_VARS).unwrap();
        match nemytskii_apply(&l, &pts, &h1, &zeros) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linearization_examples() {
        let pts = vec![[1.0, 0.0], [0.0, 1.0]];
        let linear = TransmissionData::new("z1", "-z2", ["1", "0", "0", "-1"], "0").unwrap();
        let a = linearization_matrix(&linear, &pts, &[3.0, -1.0], &[2.0, 5.0]).unwrap();
        assert_eq!(a, MatrixField::constant(2, [[1.0, 0.0], [0.0, -1.0]]));
        let a = linearization_matrix(&canonical(), &pts, &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(a, MatrixField::constant(2, [[1.0, 1.0], [1.0, -1.0]]));
        let a = linearization_matrix(&canonical(), &pts, &[0.4, -2.0], &[1.3, 0.1]).unwrap();
        // symmetric part is ((1, d), (d, 1)) with |d| = |sech²(z2) - sech²(z1)| / 2 < 1/2
        let r = check_a_conditions(&a);
        assert!(r.all_pass());
        assert!(r.min_eigenvalue >= 0.5, "{r:?}");
    }

    #[test]
    fn growth_examples() {
        let pts = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let lin = TransmissionData::new("z1 - z2", "2*z2", ["1", "-1", "0", "2"], "0").unwrap();
        let a = MatrixField::constant(3, [[1.0, -1.0], [0.0, 2.0]]);
        let r = check_growth(&lin, &pts, &a, 100.0);
        assert!(r.trivial && r.pass);

        let a = MatrixField::constant(3, [[1.0, 0.0], [0.0, -1.0]]);
        let r = check_growth(&canonical(), &pts, &a, 100.0);
        assert!(
            r.pass && r.delta.abs() < 0.05 && r.max_residual <= 2f64.sqrt(),
            "{r:?}"
        );

        let quad = TransmissionData::new("z1^2", "0", ["2*z1", "0", "0", "0"], "0").unwrap();
        let r = check_growth(
            &quad,
            &pts,
            &MatrixField::constant(3, [[0.0; 2]; 2]),
            1000.0,
        );
        assert!(!r.pass && (r.delta - 2.0).abs() < 0.1, "{r:?}");
    }

    #[test]
    fn zero_data_gives_constants() {
        let (outer, inner) = circles(32);
        let zero = TransmissionData::new("0", "0", ["0"; 4], "0").unwrap();
        let out = solve_unperturbed(&zero, &outer, &inner, &SolverOptions::default()).unwrap();
        let pair = reconstruct_solution(&out.densities, &outer, &inner).unwrap();
        let c = pair.u_o([1.5, 0.0]).unwrap();
        for p in [
            [0.0, 1.4],
            [-1.2, -0.9],
            [1.7, 0.3],
            [0.1, -1.6],
            [-1.5, 0.2],
        ] {
            assert!((pair.u_o(p).unwrap() - c).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_constants_and_regions() {
        let (outer, inner) = circles(32);
        let mut d = DensitySet::zeros(32, 32);
        d.rho_o = 3.0;
        d.rho_i = -1.0;
        let pair = reconstruct_solution(&d, &outer, &inner).unwrap();
        assert_eq!(pair.u_o([1.5, 0.2]).unwrap(), 3.0);
        assert_eq!(pair.u_i([0.1, 0.2]).unwrap(), -1.0);
        assert!(matches!(pair.u_o([0.1, 0.2]), Err(Error::Domain(_))));
        assert!(matches!(pair.u_i([1.5, 0.2]), Err(Error::Domain(_))));
        assert!(matches!(pair.u_o([3.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn canonical_case_converges() {
        let (outer, inner) = circles(32);
        let data = canonical();
        for method in [Method::Hybrid, Method::Newton, Method::Picard] {
            let opts = SolverOptions {
                method,
                ..SolverOptions::default()
            };
            let out = solve_unperturbed(&data, &outer, &inner, &opts).unwrap();
            assert!(out.residual <= 1e-10, "{method:?}");
            let system = NonlinearSystem::unperturbed(&data, &outer, &inner).unwrap();
            let br = boundary_residuals(&system, &out.densities).unwrap();
            assert!(br.max() <= 1e-9, "{br:?}");
        }
    }

    #[test]
    fn picard_steps_shrink_monotonically() {
        let (outer, inner) = circles(64);
        let opts = SolverOptions {
            method: Method::Picard,
            tol: 1e-14,
            max_iter: 60,
            ..SolverOptions::default()
        };
        let trace = match solve_unperturbed(&canonical(), &outer, &inner, &opts) {
            Ok(out) => out.trace,
            Err(fail) => fail.trace,
        };
        // the first record is the starting guess, with no step
        let below = trace.iter().skip(1).position(|r| r.step < 1e-10);
        let end = 1 + below.expect("step never fell below 1e-10 in 60 iterations");
        for pair in trace[3..=end].windows(2) {
            assert!(pair[1].step < pair[0].step, "{pair:?}");
        }
    }

    #[test]
    fn newton_jacobian_matches_differences() {
        let (outer, inner) = circles(16);
        let system = NonlinearSystem::unperturbed(&canonical(), &outer, &inner).unwrap();
        let mut x = DensitySet::zeros(16, 16);
        for j in 0..16 {
            let t = outer.params[j];
            x.mu_o[j] = t.cos();
            x.mu_i[j] = 0.5 * (2.0 * t).sin();
            x.eta_i[j] = 0.3 * t.sin();
        }
        x.rho_o = 0.2;
        x.rho_i = -0.4;
        let j = system.jacobian(&x).unwrap();
        let layout = x.layout();
        let dir: Vec<f64> = (0..layout.dim())
            .map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let h = 1e-6;
        let shift = |s: f64| {
            let v: Vec<f64> = x
                .to_vec()
                .iter()
                .zip(&dir)
                .map(|(a, d)| a + s * d)
                .collect();
            DensitySet::from_vec(&v, layout).unwrap()
        };
        let rp = system.residual(&shift(h)).unwrap();
        let rm = system.residual(&shift(-h)).unwrap();
        let fd: Vec<f64> = rp
            .iter()
            .zip(&rm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let jd = j.matrix().matvec(&dir);
        let err = fd
            .iter()
            .zip(&jd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6 * norm_inf(&jd), "{err}");
    }

    #[test]
    fn non_convergence_keeps_trace() {
        let (outer, inner) = circles(16);
        let quad = TransmissionData::new("z1 + z1^2", "-z2", ["1 + 2*z1", "0", "0", "-1"], "10*x1")
            .unwrap();
        let opts = SolverOptions {
            method: Method::Picard,
            max_iter: 10,
            picard_matrix: PicardMatrix::Fixed([[1.0, 0.0], [0.0, -1.0]]),
            ..SolverOptions::default()
        };
        let err = solve_unperturbed(&quad, &outer, &inner, &opts).unwrap_err();
        assert!(matches!(err.error, Error::NonConvergence { .. }), "{err}");
        assert!(!err.trace.is_empty());
    }
}
