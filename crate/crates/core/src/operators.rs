//! The bordered block operator `J_A` acting on
//! `(μ^o, μ^i, η^i, ρ^o, ρ^i)` and the admissibility test for `A`.
//!
//! Unknowns are laid out as `[μ^o (N_o), μ^i (N_i), η^i (N_i), ρ^o, ρ^i]`.
//! Rows are the outer Neumann row, the two transmission rows and two
//! constraint rows fixing the weighted means of `μ^o` and `η^i` to zero. The
//! constraint rows are scaled by `√N / L` so that their Euclidean norm is
//! close to one and they do not dominate the condition estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, DiscreteBoundary};
use crate::linalg::{norm_inf, DenseMatrix, Lu};
use crate::potential::{
    adjoint_double_layer_matrix, normal_gradient_at, single_layer_at, single_layer_matrix,
};

/// Condition estimates above this are treated as numerically singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Index map of the five unknown blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_outer: usize,
    pub n_inner: usize,
}

impl Layout {
    pub fn new(n_outer: usize, n_inner: usize) -> Layout {
        Layout { n_outer, n_inner }
    }

    pub fn dim(&self) -> usize {
        self.n_outer + 2 * self.n_inner + 2
    }

    /// Rows carrying boundary equations (everything except the two constraints).
    pub fn equation_rows(&self) -> usize {
        self.n_outer + 2 * self.n_inner
    }

    pub fn mu_o(&self) -> std::ops::Range<usize> {
        0..self.n_outer
    }

    pub fn mu_i(&self) -> std::ops::Range<usize> {
        self.n_outer..self.n_outer + self.n_inner
    }

    pub fn eta_i(&self) -> std::ops::Range<usize> {
        self.n_outer + self.n_inner..self.n_outer + 2 * self.n_inner
    }

    pub fn rho_o(&self) -> usize {
        self.n_outer + 2 * self.n_inner
    }

    pub fn rho_i(&self) -> usize {
        self.n_outer + 2 * self.n_inner + 1
    }
}

/// Layer densities and constants of the integral representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySet {
    pub mu_o: Vec<f64>,
    pub mu_i: Vec<f64>,
    pub eta_i: Vec<f64>,
    pub rho_o: f64,
    pub rho_i: f64,
}

impl DensitySet {
    pub fn zeros(n_outer: usize, n_inner: usize) -> DensitySet {
        DensitySet {
            mu_o: vec![0.0; n_outer],
            mu_i: vec![0.0; n_inner],
            eta_i: vec![0.0; n_inner],
            rho_o: 0.0,
            rho_i: 0.0,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.mu_o.len(), self.mu_i.len())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().dim());
        v.extend_from_slice(&self.mu_o);
        v.extend_from_slice(&self.mu_i);
        v.extend_from_slice(&self.eta_i);
        v.push(self.rho_o);
        v.push(self.rho_i);
        v
    }

    pub fn from_vec(v: &[f64], layout: Layout) -> Result<DensitySet> {
        if v.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "density vector has {} entries, layout needs {}",
                v.len(),
                layout.dim()
            )));
        }
        Ok(DensitySet {
            mu_o: v[layout.mu_o()].to_vec(),
            mu_i: v[layout.mu_i()].to_vec(),
            eta_i: v[layout.eta_i()].to_vec(),
            rho_o: v[layout.rho_o()],
            rho_i: v[layout.rho_i()],
        })
    }

    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Relative weighted means `|Σ w μ| / (Σ w · max|μ|)` of `μ^o` and `η^i`.
    /// `inner_weights` must be the image arclength weights.
    pub fn mean_zero_defects(&self, outer_weights: &[f64], inner_weights: &[f64]) -> (f64, f64) {
        (
            relative_mean(&self.mu_o, outer_weights),
            relative_mean(&self.eta_i, inner_weights),
        )
    }
}

fn relative_mean(v: &[f64], w: &[f64]) -> f64 {
    let scale = w.iter().sum::<f64>() * norm_inf(v);
    if scale == 0.0 {
        return 0.0;
    }
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().abs() / scale
}

/// `A(x)` sampled at the inner nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixField {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a21: Vec<f64>,
    pub a22: Vec<f64>,
}

impl MatrixField {
    pub fn constant(n: usize, a: [[f64; 2]; 2]) -> MatrixField {
        MatrixField {
            a11: vec![a[0][0]; n],
            a12: vec![a[0][1]; n],
            a21: vec![a[1][0]; n],
            a22: vec![a[1][1]; n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize) -> [[f64; 2]; 2]) -> MatrixField {
        let mut m = MatrixField::constant(n, [[0.0; 2]; 2]);
        for j in 0..n {
            let a = f(j);
            m.a11[j] = a[0][0];
            m.a12[j] = a[0][1];
            m.a21[j] = a[1][0];
            m.a22[j] = a[1][1];
        }
        m
    }

    pub fn len(&self) -> usize {
        self.a11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a11.is_empty()
    }

    pub fn at(&self, j: usize) -> [[f64; 2]; 2] {
        [[self.a11[j], self.a12[j]], [self.a21[j], self.a22[j]]]
    }

    pub fn is_finite(&self) -> bool {
        [&self.a11, &self.a12, &self.a21, &self.a22]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `(A α)` at every node, returned as the two components.
    pub fn apply(&self, alpha1: &[f64], alpha2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut r1 = Vec::with_capacity(n);
        let mut r2 = Vec::with_capacity(n);
        for j in 0..n {
            r1.push(self.a11[j] * alpha1[j] + self.a12[j] * alpha2[j]);
            r2.push(self.a21[j] * alpha1[j] + self.a22[j] * alpha2[j]);
        }
        (r1, r2)
    }
}

/// Outcome of the three admissibility tests on `A`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub finite: bool,
    /// Symmetric part of `Ã = ((A11, A12), (-A21, -A22))` is positive semidefinite.
    pub semidefinite: bool,
    /// No nonzero constant vector is annihilated by `A(x)` at every node.
    pub nondegenerate: bool,
    pub min_eigenvalue: f64,
    pub min_singular_value: f64,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.finite && self.semidefinite && self.nondegenerate
    }
}

pub fn check_a_conditions(a: &MatrixField) -> AdmissibilityReport {
    let finite = a.is_finite() && !a.is_empty();
    let mut min_eig = f64::INFINITY;
    // Gram matrix of the 2N x 2 stack of all A(x_j)
    let mut g = [[0.0; 2]; 2];
    for j in 0..a.len() {
        let m = a.at(j);
        let (p, q, r) = (m[0][0], 0.5 * (m[0][1] - m[1][0]), -m[1][1]);
        let mean = 0.5 * (p + r);
        let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        min_eig = min_eig.min(mean - rad);
        for c1 in 0..2 {
            for c2 in 0..2 {
                g[c1][c2] += m[0][c1] * m[0][c2] + m[1][c1] * m[1][c2];
            }
        }
    }
    let mean = 0.5 * (g[0][0] + g[1][1]);
    let rad = (0.25 * (g[0][0] - g[1][1]).powi(2) + g[0][1] * g[0][1]).sqrt();
    let sigma = (mean - rad).max(0.0).sqrt();
    AdmissibilityReport {
        finite,
        semidefinite: finite && min_eig >= -1e-12,
        nondegenerate: finite && sigma > 1e-10,
        min_eigenvalue: min_eig,
        min_singular_value: sigma,
    }
}

/// Geometry-dependent blocks shared by every `J_A` on a fixed pair of boundaries.
///
/// Holds `J_0` (the operator with `A = 0`, constraint rows included) and the
/// trace map `x ↦ (α¹, α²)` at the inner nodes, so `J_A = J_0 - A·T`.
#[derive(Debug, Clone)]
pub struct InterfaceOperators {
    layout: Layout,
    j0: DenseMatrix,
    traces: DenseMatrix,
}

impl InterfaceOperators {
    /// `inner` is the (possibly perturbed) inner boundary itself, so its
    /// weights already include the change of variables.
    pub fn new(outer: &DiscreteBoundary, inner: &DiscreteBoundary) -> Result<InterfaceOperators> {
        let gap = 3.0 * outer.mesh_width().max(inner.mesh_width());
        let mut closest = f64::INFINITY;
        for p in &inner.nodes {
            for q in &outer.nodes {
                closest = closest.min(dist(*p, *q));
            }
        }
        if !(closest > 0.0) || !inner.nodes.iter().all(|p| outer.contains(*p)) {
            return Err(Error::InvalidShape(format!(
                "inner boundary must lie strictly inside the outer one (closest node distance {closest:.3e})"
            )));
        }
        if closest <= gap {
            log::warn!(
                "boundaries are {closest:.3e} apart, below three mesh widths ({gap:.3e}); \
                 cross-boundary quadrature loses accuracy"
            );
        }

        let layout = Layout::new(outer.n(), inner.n());
        let (no, ni) = (layout.n_outer, layout.n_inner);
        let wo = adjoint_double_layer_matrix(outer);
        let wi = adjoint_double_layer_matrix(inner);
        let vi = single_layer_matrix(inner);
        let g_oi = normal_gradient_at(&outer.nodes, &outer.normals, inner);
        let g_io = normal_gradient_at(&inner.nodes, &inner.normals, outer);
        let s_io = single_layer_at(&inner.nodes, outer);

        let dim = layout.dim();
        let mut j0 = DenseMatrix::zeros(dim, dim);
        let (mi, eta) = (layout.mu_i().start, layout.eta_i().start);
        for r in 0..no {
            for c in 0..no {
                j0.set(r, c, wo.get(r, c));
            }
            j0.add(r, r, -0.5);
            for c in 0..ni {
                j0.set(r, mi + c, g_oi.get(r, c));
            }
        }
        for r in 0..ni {
            let row2 = no + r;
            let row3 = no + ni + r;
            for c in 0..no {
                j0.set(row2, c, g_io.get(r, c));
            }
            for c in 0..ni {
                j0.set(row2, mi + c, wi.get(r, c));
                j0.set(row3, eta + c, wi.get(r, c));
            }
            j0.add(row2, mi + r, 0.5);
            j0.add(row3, eta + r, -0.5);
        }
        let so = (no as f64).sqrt() / outer.length();
        let si = (ni as f64).sqrt() / inner.length();
        for c in 0..no {
            j0.set(layout.rho_o(), c, so * outer.weights[c]);
        }
        for c in 0..ni {
            j0.set(layout.rho_i(), eta + c, si * inner.weights[c]);
        }

        let mut traces = DenseMatrix::zeros(2 * ni, dim);
        for r in 0..ni {
            for c in 0..no {
                traces.set(r, c, s_io.get(r, c));
            }
            for c in 0..ni {
                traces.set(r, mi + c, vi.get(r, c));
                traces.set(ni + r, eta + c, vi.get(r, c));
            }
            traces.set(r, layout.rho_o(), 1.0);
            traces.set(ni + r, layout.rho_i(), 1.0);
        }
        Ok(InterfaceOperators { layout, j0, traces })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// `J_0`: the bordered operator without the `A` coupling.
    pub fn linear_part(&self) -> &DenseMatrix {
        &self.j0
    }

    /// Traces `α¹ = v[μ^o] + V[μ^i] + ρ^o` and `α² = V[η^i] + ρ^i` at inner nodes.
    pub fn traces(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut t = self.traces.matvec(x);
        let a2 = t.split_off(self.layout.n_inner);
        (t, a2)
    }

    pub fn assemble(&self, a: &MatrixField) -> Result<BlockOperator> {
        let (no, ni) = (self.layout.n_outer, self.layout.n_inner);
        if a.len() != ni {
            return Err(Error::Dimension(format!(
                "matrix field has {} samples, inner boundary has {ni} nodes",
                a.len()
            )));
        }
        if !a.is_finite() {
            return Err(Error::Domain("matrix field has non-finite entries".into()));
        }
        let mut m = self.j0.clone();
        let dim = self.layout.dim();
        for r in 0..ni {
            let t1 = self.traces.row(r);
            let t2 = self.traces.row(ni + r);
            for c in 0..dim {
                if t1[c] != 0.0 || t2[c] != 0.0 {
                    m.add(no + r, c, -(a.a11[r] * t1[c] + a.a12[r] * t2[c]));
                    m.add(no + ni + r, c, -(a.a21[r] * t1[c] + a.a22[r] * t2[c]));
                }
            }
        }
        Ok(BlockOperator {
            layout: self.layout,
            matrix: m,
        })
    }
}

/// Dense bordered `J_A`.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    layout: Layout,
    matrix: DenseMatrix,
}

impl BlockOperator {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Full image including the two constraint rows.
    pub fn apply(&self, x: &DensitySet) -> Vec<f64> {
        self.matrix.matvec(&x.to_vec())
    }

    pub fn smallest_singular_value(&self) -> f64 {
        self.matrix.smallest_singular_value()
    }

    pub fn factorize(&self) -> Result<FactoredOperator> {
        let lu = Lu::factor(&self.matrix)?;
        let condition = lu.condition_estimate();
        if !(condition <= SINGULAR_CONDITION) {
            return Err(Error::Singular { condition });
        }
        Ok(FactoredOperator {
            layout: self.layout,
            lu,
            condition,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FactoredOperator {
    layout: Layout,
    lu: Lu,
    condition: f64,
}

impl FactoredOperator {
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Accepts either the equation rows alone (constraints taken as zero)
    /// or a full right-hand side including the constraint rows.
    pub fn solve(&self, rhs: &[f64]) -> Result<DensitySet> {
        let dim = self.layout.dim();
        let mut b = rhs.to_vec();
        if b.len() == self.layout.equation_rows() {
            b.resize(dim, 0.0);
        }
        if b.len() != dim {
            return Err(Error::Dimension(format!(
                "right-hand side has {} entries, expected {} or {dim}",
                rhs.len(),
                self.layout.equation_rows()
            )));
        }
        DensitySet::from_vec(&self.lu.solve(&b), self.layout)
    }
}

pub fn assemble_ja(
    outer: &DiscreteBoundary,
    inner: &DiscreteBoundary,
    a: &MatrixField,
) -> Result<BlockOperator> {
    InterfaceOperators::new(outer, inner)?.assemble(a)
}

pub fn solve_ja(j: &BlockOperator, rhs: &[f64]) -> Result<DensitySet> {
    j.factorize()?.solve(rhs)
}
