//! Single layer potential of the 2D Laplacian and its boundary operators.
//!
//! On-curve operators use the Nyström nodes of a [`DiscreteBoundary`]. The
//! trace `V` splits the logarithmic kernel as
//!
//! ```text
//! log|γ(t) - γ(s)|² = log(4 sin²((t-s)/2)) + log(|γ(t) - γ(s)|² / (4 sin²((t-s)/2)))
//! ```
//!
//! and integrates the first factor with the periodic log-weight quadrature of
//! Martensen–Kussmaul type, the smooth remainder with the trapezoid rule.
//! `W*` has a continuous kernel on smooth curves and uses the trapezoid rule
//! with the curvature limit `κ/(4π)` on the diagonal.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{dist, trig_interpolate, DiscreteBoundary, Point};
use crate::linalg::DenseMatrix;

/// Measure of the unit sphere in `R^n`.
pub fn unit_sphere_measure(n: usize) -> f64 {
    // s_1 = 2, s_2 = 2π, s_{n+2} = 2π s_n / n
    let (mut s, mut k) = if n.is_multiple_of(2) {
        (2.0 * PI, 2)
    } else {
        (2.0, 1)
    };
    while k < n {
        s *= 2.0 * PI / k as f64;
        k += 2;
    }
    s
}

/// `S_n(x)`: `(1/2π) log|x|` in the plane, `|x|^{2-n} / ((2-n) s_n)` otherwise.
pub fn fundamental_solution(n: usize, x: &[f64]) -> Result<f64> {
    if n < 2 || x.len() != n {
        return Err(Error::Dimension(format!(
            "need a point of dimension n >= 2, got n = {n} with {} coordinates",
            x.len()
        )));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(Error::Domain(
            "fundamental solution is singular at 0".into(),
        ));
    }
    let sn = unit_sphere_measure(n);
    Ok(if n == 2 {
        r.ln() / sn
    } else {
        r.powi(2 - n as i32) / ((2.0 - n as f64) * sn)
    })
}

#[inline]
fn s2(z: Point) -> f64 {
    (z[0] * z[0] + z[1] * z[1]).ln() / (4.0 * PI)
}

#[inline]
fn grad_s2(z: Point) -> Point {
    let r2 = z[0] * z[0] + z[1] * z[1];
    [z[0] / (2.0 * PI * r2), z[1] / (2.0 * PI * r2)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

/// Off-boundary evaluation result. `near_boundary` marks points within three
/// mesh widths of the source nodes, where plain trapezoid sums lose accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue<T> {
    pub value: T,
    pub near_boundary: bool,
}

fn near(b: &DiscreteBoundary, x: Point) -> bool {
    let h = b.mesh_width();
    b.nodes.iter().any(|y| dist(x, *y) <= 3.0 * h)
}

/// `v[μ](x) = Σ_j S₂(x - y_j) μ_j w_j`.
pub fn eval_single_layer(b: &DiscreteBoundary, mu: &[f64], x: Point) -> FieldValue<f64> {
    let value = b
        .nodes
        .iter()
        .zip(mu)
        .zip(&b.weights)
        .map(|((y, m), w)| s2([x[0] - y[0], x[1] - y[1]]) * m * w)
        .sum();
    FieldValue {
        value,
        near_boundary: near(b, x),
    }
}

/// `∇v[μ](x)`.
pub fn grad_single_layer(b: &DiscreteBoundary, mu: &[f64], x: Point) -> FieldValue<Point> {
    let mut g = [0.0; 2];
    for ((y, m), w) in b.nodes.iter().zip(mu).zip(&b.weights) {
        let k = grad_s2([x[0] - y[0], x[1] - y[1]]);
        g[0] += k[0] * m * w;
        g[1] += k[1] * m * w;
    }
    FieldValue {
        value: g,
        near_boundary: near(b, x),
    }
}

/// Single layer evaluated with the density interpolated onto `4N` nodes.
/// Used for plotting close to the boundary; still not trusted within three
/// mesh widths.
pub fn eval_single_layer_upsampled(
    b: &DiscreteBoundary,
    mu: &[f64],
    x: Point,
) -> Result<FieldValue<f64>> {
    let fine = b.refined(4)?;
    let mu_fine: Vec<f64> = fine
        .params
        .iter()
        .map(|&t| trig_interpolate(mu, t))
        .collect();
    let v = eval_single_layer(&fine, &mu_fine, x);
    Ok(FieldValue {
        value: v.value,
        near_boundary: near(b, x),
    })
}

/// Weights `R_k`, `k = 0..N`, of the periodic quadrature
/// `∫₀^{2π} log(4 sin²((t_i - s)/2)) f(s) ds ≈ Σ_j R_{(i-j) mod N} f(t_j)`.
pub fn log_quadrature_weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let tau = 2.0 * PI * k as f64 / nf;
            let mut acc = 0.0;
            for m in 1..half {
                acc += (m as f64 * tau).cos() / m as f64;
            }
            let alt = if k % 2 == 0 { 1.0 } else { -1.0 };
            -4.0 * PI / nf * acc - 4.0 * PI / (nf * nf) * alt
        })
        .collect()
}

/// Nyström matrix of `V` on `b`.
pub fn single_layer_matrix(b: &DiscreteBoundary) -> DenseMatrix {
    let n = b.n();
    let r = log_quadrature_weights(n);
    let h = 2.0 * PI / n as f64;
    DenseMatrix::from_fn(n, n, |i, j| {
        let smooth = if i == j {
            (b.speeds[i] * b.speeds[i]).ln()
        } else {
            let (x, y) = (b.nodes[i], b.nodes[j]);
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            let s = (0.5 * (b.params[i] - b.params[j])).sin();
            (d2 / (4.0 * s * s)).ln()
        };
        let k = (i + n - j) % n;
        (r[k] + h * smooth) * b.speeds[j] / (4.0 * PI)
    })
}

/// Nyström matrix of `W*` on `b`.
pub fn adjoint_double_layer_matrix(b: &DiscreteBoundary) -> DenseMatrix {
    let n = b.n();
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            b.curvature[i] / (4.0 * PI) * b.weights[i]
        } else {
            let (x, y) = (b.nodes[i], b.nodes[j]);
            let g = grad_s2([x[0] - y[0], x[1] - y[1]]);
            (b.normals[i][0] * g[0] + b.normals[i][1] * g[1]) * b.weights[j]
        }
    })
}

pub fn trace_v(b: &DiscreteBoundary, mu: &[f64]) -> Vec<f64> {
    single_layer_matrix(b).matvec(mu)
}

pub fn apply_wstar(b: &DiscreteBoundary, mu: &[f64]) -> Vec<f64> {
    adjoint_double_layer_matrix(b).matvec(mu)
}

/// `ν·∇v^±[μ]` on the boundary: `(∓½ I + W*)[μ]` (interior is `+`).
pub fn normal_derivative(side: Side, b: &DiscreteBoundary, mu: &[f64]) -> Vec<f64> {
    let w = apply_wstar(b, mu);
    let sign = match side {
        Side::Interior => -0.5,
        Side::Exterior => 0.5,
    };
    w.iter().zip(mu).map(|(wi, m)| sign * m + wi).collect()
}

/// Matrix of `μ ↦ v[μ](x_a)` for targets off the source curve.
pub fn single_layer_at(targets: &[Point], source: &DiscreteBoundary) -> DenseMatrix {
    DenseMatrix::from_fn(targets.len(), source.n(), |a, j| {
        let (x, y) = (targets[a], source.nodes[j]);
        s2([x[0] - y[0], x[1] - y[1]]) * source.weights[j]
    })
}

/// Matrix of `μ ↦ ν_a · ∇v[μ](x_a)` for targets off the source curve.
pub fn normal_gradient_at(
    targets: &[Point],
    normals: &[Point],
    source: &DiscreteBoundary,
) -> DenseMatrix {
    DenseMatrix::from_fn(targets.len(), source.n(), |a, j| {
        let (x, y) = (targets[a], source.nodes[j]);
        let g = grad_s2([x[0] - y[0], x[1] - y[1]]);
        (normals[a][0] * g[0] + normals[a][1] * g[1]) * source.weights[j]
    })
}
