//! Closed planar curves, shape maps and their Nyström discretizations.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type Point = [f64; 2];

/// A smooth closed curve parametrized over `[0, 2π)`.
pub trait ParametricCurve: Send + Sync {
    fn position(&self, t: f64) -> Point;
    fn velocity(&self, t: f64) -> Point;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    Circle {
        center: Point,
        radius: f64,
    },
    Ellipse {
        center: Point,
        semi_x: f64,
        semi_y: f64,
    },
    /// `r(t) = radius * (1 + amplitude * cos(frequency * t))`.
    Star {
        center: Point,
        radius: f64,
        amplitude: f64,
        frequency: i32,
    },
    /// Expressions in `t` for the position and its derivative.
    Expression {
        x: Expr,
        y: Expr,
        dx: Expr,
        dy: Expr,
    },
    /// The same curve traversed backwards (`t -> -t`).
    Reversed(Box<Curve>),
}

impl Curve {
    pub fn circle(radius: f64) -> Curve {
        Curve::Circle {
            center: [0.0, 0.0],
            radius,
        }
    }

    pub fn ellipse(semi_x: f64, semi_y: f64) -> Curve {
        Curve::Ellipse {
            center: [0.0, 0.0],
            semi_x,
            semi_y,
        }
    }

    pub fn star(radius: f64, amplitude: f64, frequency: i32) -> Curve {
        Curve::Star {
            center: [0.0, 0.0],
            radius,
            amplitude,
            frequency,
        }
    }

    /// Center and radius when the curve is a circle.
    pub fn as_circle(&self) -> Option<(Point, f64)> {
        match self {
            Curve::Circle { center, radius } => Some((*center, *radius)),
            _ => None,
        }
    }

    /// Returns a counterclockwise version of the curve, reversing it when the
    /// sampled signed area is negative. The flag reports whether it flipped.
    pub fn oriented(self) -> (Curve, bool) {
        if signed_area(&self, 256) < 0.0 {
            log::warn!("curve is clockwise; reversing its orientation");
            (Curve::Reversed(Box::new(self)), true)
        } else {
            (self, false)
        }
    }
}

impl ParametricCurve for Curve {
    fn position(&self, t: f64) -> Point {
        match self {
            Curve::Circle { center, radius } => {
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            }
            Curve::Ellipse {
                center,
                semi_x,
                semi_y,
            } => [center[0] + semi_x * t.cos(), center[1] + semi_y * t.sin()],
            Curve::Star {
                center,
                radius,
                amplitude,
                frequency,
            } => {
                let r = radius * (1.0 + amplitude * (*frequency as f64 * t).cos());
                [center[0] + r * t.cos(), center[1] + r * t.sin()]
            }
            Curve::Expression { x, y, .. } => [x.eval(&[t]), y.eval(&[t])],
            Curve::Reversed(c) => c.position(-t),
        }
    }

    fn velocity(&self, t: f64) -> Point {
        match self {
            Curve::Circle { radius, .. } => [-radius * t.sin(), radius * t.cos()],
            Curve::Ellipse { semi_x, semi_y, .. } => [-semi_x * t.sin(), semi_y * t.cos()],
            Curve::Star {
                radius,
                amplitude,
                frequency,
                ..
            } => {
                let k = *frequency as f64;
                let r = radius * (1.0 + amplitude * (k * t).cos());
                let dr = -radius * amplitude * k * (k * t).sin();
                [dr * t.cos() - r * t.sin(), dr * t.sin() + r * t.cos()]
            }
            Curve::Expression { dx, dy, .. } => [dx.eval(&[t]), dy.eval(&[t])],
            Curve::Reversed(c) => {
                let v = c.velocity(-t);
                [-v[0], -v[1]]
            }
        }
    }
}

/// Signed area of the polygon through `n` equispaced samples.
pub fn signed_area(curve: &dyn ParametricCurve, n: usize) -> f64 {
    let pts: Vec<Point> = (0..n)
        .map(|j| curve.position(2.0 * PI * j as f64 / n as f64))
        .collect();
    polygon_area(&pts)
}

fn polygon_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|j| {
            let (a, b) = (pts[j], pts[(j + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        * 0.5
}

/// Displacement defining `φ(γ(t)) = γ(t) + d(t)` on the reference inner curve.
#[derive(Debug, Clone, PartialEq)]
pub enum Displacement {
    Identity,
    /// `φ(x) = factor * x`.
    Dilation(f64),
    /// Expressions in `(t, s)` evaluated at a fixed family parameter `s`.
    Expression {
        dx: Expr,
        dy: Expr,
        dx_dt: Expr,
        dy_dt: Expr,
        s: f64,
    },
}

/// A shape map of the reference inner boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMap {
    pub base: Curve,
    pub displacement: Displacement,
}

impl ShapeMap {
    pub fn identity(base: Curve) -> ShapeMap {
        ShapeMap {
            base,
            displacement: Displacement::Identity,
        }
    }

    pub fn dilation(base: Curve, factor: f64) -> ShapeMap {
        ShapeMap {
            base,
            displacement: Displacement::Dilation(factor),
        }
    }

    pub fn is_identity(&self) -> bool {
        match &self.displacement {
            Displacement::Identity => true,
            Displacement::Dilation(f) => *f == 1.0,
            Displacement::Expression { .. } => false,
        }
    }

    fn offset(&self, t: f64) -> (Point, Point) {
        match &self.displacement {
            Displacement::Identity => ([0.0; 2], [0.0; 2]),
            Displacement::Dilation(f) => {
                let (p, v) = (self.base.position(t), self.base.velocity(t));
                let c = f - 1.0;
                ([c * p[0], c * p[1]], [c * v[0], c * v[1]])
            }
            Displacement::Expression {
                dx,
                dy,
                dx_dt,
                dy_dt,
                s,
            } => {
                let a = [t, *s];
                ([dx.eval(&a), dy.eval(&a)], [dx_dt.eval(&a), dy_dt.eval(&a)])
            }
        }
    }
}

impl ParametricCurve for ShapeMap {
    fn position(&self, t: f64) -> Point {
        let p = self.base.position(t);
        let (d, _) = self.offset(t);
        [p[0] + d[0], p[1] + d[1]]
    }

    fn velocity(&self, t: f64) -> Point {
        let v = self.base.velocity(t);
        let (_, dv) = self.offset(t);
        [v[0] + dv[0], v[1] + dv[1]]
    }
}

/// Nyström data of a closed curve at the nodes `t_j = 2πj/N`.
#[derive(Clone)]
pub struct DiscreteBoundary {
    curve: Arc<dyn ParametricCurve>,
    pub params: Vec<f64>,
    pub nodes: Vec<Point>,
    pub velocities: Vec<Point>,
    pub speeds: Vec<f64>,
    pub normals: Vec<Point>,
    /// Arclength trapezoid weights `(2π/N) |γ'(t_j)|`.
    pub weights: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl fmt::Debug for DiscreteBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteBoundary")
            .field("n", &self.n())
            .field("length", &self.length())
            .finish()
    }
}

/// Samples `curve` at `n` equispaced parameters.
///
/// The orientation must already be counterclockwise (see [`Curve::oriented`])
/// for the normals to point outward.
pub fn discretize<C>(curve: &C, n: usize) -> Result<DiscreteBoundary>
where
    C: ParametricCurve + Clone + 'static,
{
    DiscreteBoundary::from_arc(Arc::new(curve.clone()), n)
}

impl DiscreteBoundary {
    pub fn from_arc(curve: Arc<dyn ParametricCurve>, n: usize) -> Result<DiscreteBoundary> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Discretization(format!(
                "node count must be even and at least 4, got {n}"
            )));
        }
        let h = 2.0 * PI / n as f64;
        let params: Vec<f64> = (0..n).map(|j| h * j as f64).collect();
        let nodes: Vec<Point> = params.iter().map(|&t| curve.position(t)).collect();
        let velocities: Vec<Point> = params.iter().map(|&t| curve.velocity(t)).collect();
        let mut speeds = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for (j, v) in velocities.iter().enumerate() {
            let s = v[0].hypot(v[1]);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NonRegular { index: j });
            }
            speeds.push(s);
            normals.push([v[1] / s, -v[0] / s]);
        }
        let weights = speeds.iter().map(|s| h * s).collect();
        let ax = spectral_derivative(&velocities.iter().map(|v| v[0]).collect::<Vec<_>>());
        let ay = spectral_derivative(&velocities.iter().map(|v| v[1]).collect::<Vec<_>>());
        let curvature = (0..n)
            .map(|j| {
                let v = velocities[j];
                (v[0] * ay[j] - v[1] * ax[j]) / speeds[j].powi(3)
            })
            .collect();
        Ok(DiscreteBoundary {
            curve,
            params,
            nodes,
            velocities,
            speeds,
            normals,
            weights,
            curvature,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn curve(&self) -> &Arc<dyn ParametricCurve> {
        &self.curve
    }

    /// Total trapezoid length `Σ w_j`.
    pub fn length(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest distance between consecutive nodes.
    pub fn mesh_width(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|j| dist(self.nodes[j], self.nodes[(j + 1) % n]))
            .fold(0.0, f64::max)
    }

    pub fn signed_area(&self) -> f64 {
        polygon_area(&self.nodes)
    }

    /// Weighted integral `Σ w_j f_j`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, f)| w * f).sum()
    }

    /// Same curve with `factor` times as many nodes.
    pub fn refined(&self, factor: usize) -> Result<DiscreteBoundary> {
        DiscreteBoundary::from_arc(self.curve.clone(), self.n() * factor)
    }

    /// Point-in-polygon test against the node polygon (winding number).
    pub fn contains(&self, p: Point) -> bool {
        let n = self.n();
        let mut winding = 0i32;
        for j in 0..n {
            let a = self.nodes[j];
            let b = self.nodes[(j + 1) % n];
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
            if a[1] <= p[1] {
                if b[1] > p[1] && cross > 0.0 {
                    winding += 1;
                }
            } else if b[1] <= p[1] && cross < 0.0 {
                winding -= 1;
            }
        }
        winding != 0
    }

    /// Distance from `p` to the node polygon.
    pub fn distance_to(&self, p: Point) -> f64 {
        let n = self.n();
        (0..n)
            .map(|j| segment_distance(p, self.nodes[j], self.nodes[(j + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

/// Derivative of the trigonometric interpolant of equispaced periodic samples.
pub fn spectral_derivative(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, f) in values.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = i as isize - j as isize;
                let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                acc += 0.5 * sign / (0.5 * h * d as f64).tan() * f;
            }
            acc
        })
        .collect()
}

/// Evaluates the trigonometric interpolant of equispaced samples at `t`.
pub fn trig_interpolate(values: &[f64], t: f64) -> f64 {
    let n = values.len();
    let h = 2.0 * PI / n as f64;
    let mut acc = 0.0;
    for (j, f) in values.iter().enumerate() {
        let tau = t - h * j as f64;
        let half = 0.5 * tau;
        let s = half.sin();
        let kernel = if s.abs() < 1e-14 {
            // tau is a multiple of 2π
            1.0
        } else {
            (0.5 * n as f64 * tau).sin() * half.cos() / (n as f64 * s)
        };
        acc += kernel * f;
    }
    acc
}

/// Change-of-variables weight `|d/dt(φ∘γ)| / |γ'|` at the reference nodes.
pub fn sigma_tilde(phi: &ShapeMap, n: usize) -> Result<Vec<f64>> {
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|j| {
            let t = h * j as f64;
            let v = phi.velocity(t);
            let b = phi.base.velocity(t);
            let image = v[0].hypot(v[1]);
            let base = b[0].hypot(b[1]);
            if !(image > 1e-10) || !(base > 0.0) {
                return Err(Error::DegenerateSpeed { index: j });
            }
            Ok(image / base)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeReport {
    pub injective: bool,
    pub immersion: bool,
    pub contained: bool,
    /// Smallest distance between images of distinct nodes.
    pub min_pair_distance: f64,
    pub min_speed: f64,
    /// Smallest distance from an image node to the outer boundary nodes;
    /// negative when some image node lies outside.
    pub containment_margin: f64,
}

impl ShapeReport {
    pub fn valid(&self) -> bool {
        self.injective && self.immersion && self.contained
    }

    pub fn describe_failures(&self) -> String {
        let mut parts = Vec::new();
        if !self.injective {
            parts.push(format!(
                "injectivity fails (min node distance {:e})",
                self.min_pair_distance
            ));
        }
        if !self.immersion {
            parts.push(format!("immersion fails (min speed {:e})", self.min_speed));
        }
        if !self.contained {
            parts.push(format!(
                "containment fails (margin {:e})",
                self.containment_margin
            ));
        }
        parts.join("; ")
    }
}

/// Discrete checks of injectivity, immersion and containment in the outer domain.
pub fn validate_shape(phi: &ShapeMap, n: usize, outer: &DiscreteBoundary) -> ShapeReport {
    let h = 2.0 * PI / n as f64;
    let pts: Vec<Point> = (0..n).map(|j| phi.position(h * j as f64)).collect();
    let speeds: Vec<f64> = (0..n)
        .map(|j| {
            let v = phi.velocity(h * j as f64);
            v[0].hypot(v[1])
        })
        .collect();
    let length: f64 = speeds.iter().map(|s| h * s).sum();

    let mut min_pair = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            min_pair = min_pair.min(dist(pts[i], pts[j]));
        }
    }
    let min_speed = speeds.iter().copied().fold(f64::INFINITY, f64::min);

    let mut margin = f64::INFINITY;
    for p in &pts {
        let d = outer
            .nodes
            .iter()
            .map(|q| dist(*p, *q))
            .fold(f64::INFINITY, f64::min);
        let signed = if outer.contains(*p) { d } else { -d };
        margin = margin.min(signed);
    }

    ShapeReport {
        injective: min_pair.is_finite() && min_pair > 1e-10 * length,
        immersion: min_speed > 1e-10,
        contained: margin > 0.0,
        min_pair_distance: min_pair,
        min_speed,
        containment_margin: margin,
    }
}
