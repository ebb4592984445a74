//! Problem configuration: a TOML file with flat sections.
//!
//! ```toml
//! [outer]
//! kind = "circle"
//! radius = 2.0
//!
//! [inner]
//! kind = "star"
//! radius = 0.9
//! amplitude = 0.1
//! frequency = 4
//!
//! [discretization]
//! n = 64
//!
//! [transmission]
//! f1 = "z1 + tanh(z2)"
//! f2 = "-z2 + tanh(z1)"
//! df1_dz1 = "1"
//! df1_dz2 = "1 - tanh(z2)^2"
//! df2_dz1 = "1 - tanh(z1)^2"
//! df2_dz2 = "-1"
//! f_o = "x1 / 2"
//! ```
//!
//! Every problem found while validating is collected, each tagged with the
//! line it came from, and reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use tbem_core::expr::{CURVE_VARS, FAMILY_VARS, POINT_VARS, TRANSMISSION_VARS};
use tbem_core::nonlinear::PicardMatrix;
use tbem_core::{
    discretize, Curve, Expr, Method, Point, Probes, ShapeFamily, SolverOptions, TransmissionData,
};

pub const DEFAULT_N: usize = 64;
pub const MIN_N: usize = 8;
pub const MAX_N: usize = 4096;

/// One problem in a config file. `line` is 1-based; 0 means "whole file".
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub path: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} problem(s) in {}:",
            self.diagnostics.len(),
            self.path.display()
        )?;
        for d in &self.diagnostics {
            write!(f, "\n  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct ShapeConfig {
    pub family: Option<ShapeFamily>,
    pub steps: usize,
    pub max_order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub densities: String,
    pub trace: String,
    pub field: String,
    pub probes: String,
    pub branch: String,
    pub derivatives: String,
    pub derivative_table: String,
    pub convergence: String,
    pub report: String,
    pub timing: String,
    /// Field grid points per axis.
    pub grid: [usize; 2],
    /// Write the field grid after `solve`.
    pub write_field: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            densities: "densities.json".into(),
            trace: "trace.csv".into(),
            field: "field.csv".into(),
            probes: "probes.csv".into(),
            branch: "branch.csv".into(),
            derivatives: "derivatives.csv".into(),
            derivative_table: "derivative_table.csv".into(),
            convergence: "convergence.csv".into(),
            report: "verify.json".into(),
            timing: "timing.csv".into(),
            grid: [41, 41],
            write_field: true,
        }
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub outer: Curve,
    pub inner: Curve,
    pub n: usize,
    pub n_inner: usize,
    /// Largest node count used by `convergence`.
    pub convergence_max: usize,
    pub data: TransmissionData,
    pub solver: SolverOptions,
    pub shape: ShapeConfig,
    pub probes: Probes,
    pub output: OutputConfig,
}

// ---- raw file layout -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    outer: Option<Spanned<RawCurve>>,
    inner: Option<Spanned<RawCurve>>,
    discretization: Option<RawDiscretization>,
    transmission: Spanned<RawTransmission>,
    solver: Option<RawSolver>,
    shape: Option<Spanned<RawShape>>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    kind: Option<Spanned<String>>,
    center: Option<Point>,
    radius: Option<Spanned<f64>>,
    semi_x: Option<Spanned<f64>>,
    semi_y: Option<Spanned<f64>>,
    amplitude: Option<Spanned<f64>>,
    frequency: Option<i32>,
    x: Option<Spanned<String>>,
    y: Option<Spanned<String>>,
    dx: Option<Spanned<String>>,
    dy: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    n: Option<Spanned<i64>>,
    n_inner: Option<Spanned<i64>>,
    convergence_max: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransmission {
    f1: Spanned<String>,
    f2: Spanned<String>,
    df1_dz1: Spanned<String>,
    df1_dz2: Spanned<String>,
    df2_dz1: Spanned<String>,
    df2_dz2: Spanned<String>,
    f_o: Option<Spanned<String>>,
    check_derivatives: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    method: Option<Spanned<String>>,
    tol: Option<Spanned<f64>>,
    max_iter: Option<Spanned<i64>>,
    damping: Option<Spanned<f64>>,
    switch_tol: Option<Spanned<f64>>,
    picard_matrix: Option<[[f64; 2]; 2]>,
    polish: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    family: Option<Spanned<String>>,
    dx: Option<Spanned<String>>,
    dy: Option<Spanned<String>>,
    dx_dt: Option<Spanned<String>>,
    dy_dt: Option<Spanned<String>>,
    s_max: Option<Spanned<f64>>,
    steps: Option<Spanned<i64>>,
    max_order: Option<Spanned<i64>>,
    probes_inner: Option<Spanned<Vec<Point>>>,
    probes_outer: Option<Spanned<Vec<Point>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    densities: Option<String>,
    trace: Option<String>,
    field: Option<String>,
    probes: Option<String>,
    branch: Option<String>,
    derivatives: Option<String>,
    derivative_table: Option<String>,
    convergence: Option<String>,
    report: Option<String>,
    timing: Option<String>,
    grid: Option<Spanned<[i64; 2]>>,
    write_field: Option<bool>,
}

// ---- validation ------------------------------------------------------------

struct Validator<'a> {
    source: &'a str,
    diagnostics: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.source.len());
        self.source[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn push(&mut self, offset: usize, message: impl Into<String>) {
        let line = self.line(offset);
        self.diagnostics.push(Diagnostic {
            line,
            message: message.into(),
        });
    }

    fn expr(&mut self, key: &str, value: &Spanned<String>, vars: &[&str]) -> Option<Expr> {
        match Expr::parse(value.get_ref(), vars) {
            Ok(e) => Some(e),
            Err(e) => {
                self.push(value.span().start, format!("{key}: {e}"));
                None
            }
        }
    }

    fn positive(&mut self, key: &str, value: &Option<Spanned<f64>>, default: f64) -> f64 {
        match value {
            None => default,
            Some(v) if *v.get_ref() > 0.0 && v.get_ref().is_finite() => *v.get_ref(),
            Some(v) => {
                self.push(
                    v.span().start,
                    format!("{key} must be positive, got {}", v.get_ref()),
                );
                default
            }
        }
    }

    fn count(
        &mut self,
        key: &str,
        value: &Option<Spanned<i64>>,
        default: usize,
        min: i64,
    ) -> usize {
        match value {
            None => default,
            Some(v) if *v.get_ref() >= min => *v.get_ref() as usize,
            Some(v) => {
                self.push(
                    v.span().start,
                    format!("{key} must be at least {min}, got {}", v.get_ref()),
                );
                default
            }
        }
    }

    fn node_count(&mut self, key: &str, value: &Option<Spanned<i64>>, default: usize) -> usize {
        let Some(v) = value else { return default };
        let n = *v.get_ref();
        if n % 2 != 0 {
            self.push(v.span().start, format!("{key}: N must be even, got {n}"));
            return default;
        }
        if n < MIN_N as i64 || n > MAX_N as i64 {
            self.push(
                v.span().start,
                format!("{key}: N must be between {MIN_N} and {MAX_N}, got {n}"),
            );
            return default;
        }
        n as usize
    }

    fn curve(
        &mut self,
        section: &str,
        raw: Option<&Spanned<RawCurve>>,
        default_radius: f64,
    ) -> Option<Curve> {
        let Some(raw) = raw else {
            return Some(Curve::circle(default_radius));
        };
        let at = raw.span().start;
        let c = raw.get_ref();
        let kind = c.kind.as_ref().map_or("circle", |k| k.get_ref().as_str());
        let center = c.center.unwrap_or([0.0, 0.0]);
        let curve = match kind {
            "circle" => Curve::Circle {
                center,
                radius: self.positive(&format!("{section}.radius"), &c.radius, default_radius),
            },
            "ellipse" => {
                if c.semi_x.is_none() || c.semi_y.is_none() {
                    self.push(at, format!("{section}: an ellipse needs semi_x and semi_y"));
                }
                Curve::Ellipse {
                    center,
                    semi_x: self.positive(&format!("{section}.semi_x"), &c.semi_x, 1.0),
                    semi_y: self.positive(&format!("{section}.semi_y"), &c.semi_y, 1.0),
                }
            }
            "star" => {
                let amplitude = c.amplitude.as_ref().map_or(0.0, |a| *a.get_ref());
                if !(0.0..1.0).contains(&amplitude.abs()) {
                    let off = c.amplitude.as_ref().map_or(at, |a| a.span().start);
                    self.push(
                        off,
                        format!("{section}.amplitude must satisfy |a| < 1, got {amplitude}"),
                    );
                }
                Curve::Star {
                    center,
                    radius: self.positive(&format!("{section}.radius"), &c.radius, default_radius),
                    amplitude,
                    frequency: c.frequency.unwrap_or(3),
                }
            }
            "expression" => {
                let mut get = |name: &str, v: &Option<Spanned<String>>| match v {
                    Some(s) => self.expr(&format!("{section}.{name}"), s, CURVE_VARS),
                    None => {
                        self.push(at, format!("{section}: an expression curve needs `{name}`"));
                        None
                    }
                };
                let (x, y, dx, dy) = (
                    get("x", &c.x),
                    get("y", &c.y),
                    get("dx", &c.dx),
                    get("dy", &c.dy),
                );
                Curve::Expression {
                    x: x?,
                    y: y?,
                    dx: dx?,
                    dy: dy?,
                }
            }
            other => {
                let off = c.kind.as_ref().map_or(at, |k| k.span().start);
                self.push(
                    off,
                    format!("{section}.kind: unknown curve kind `{other}` (expected circle, ellipse, star or expression)"),
                );
                return None;
            }
        };
        Some(curve.oriented().0)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let fail = |message: String| ConfigError {
        path: path.to_path_buf(),
        diagnostics: vec![Diagnostic { line: 0, message }],
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("cannot read file: {e}")))?;
    parse_config(&text).map_err(|diagnostics| ConfigError {
        path: path.to_path_buf(),
        diagnostics,
    })
}

/// Validates configuration text.
pub fn parse_config(text: &str) -> Result<ProblemConfig, Vec<Diagnostic>> {
    let mut v = Validator {
        source: text,
        diagnostics: Vec::new(),
    };
    let raw: RawConfig = match toml::from_str(text) {
        Ok(raw) => raw,
        Err(e) => {
            let line = e.span().map_or(0, |s| v.line(s.start));
            return Err(vec![Diagnostic {
                line,
                message: e.message().trim().to_string(),
            }]);
        }
    };

    let outer = v.curve("outer", raw.outer.as_ref(), 2.0);
    let inner = v.curve("inner", raw.inner.as_ref(), 1.0);

    let disc = raw.discretization.as_ref();
    let n = v.node_count(
        "discretization.n",
        &disc.and_then(|d| d.n.clone()),
        DEFAULT_N,
    );
    let n_inner = v.node_count(
        "discretization.n_inner",
        &disc.and_then(|d| d.n_inner.clone()),
        n,
    );
    let convergence_max = match disc.and_then(|d| d.convergence_max.clone()) {
        None => 256,
        Some(c) if *c.get_ref() >= 16 => *c.get_ref() as usize,
        Some(c) => {
            v.push(
                c.span().start,
                format!(
                    "discretization.convergence_max must be at least 16, got {}",
                    c.get_ref()
                ),
            );
            256
        }
    };

    let t = raw.transmission.get_ref();
    let t_line = raw.transmission.span().start;
    let mut exprs_ok = true;
    for (key, value) in [
        ("f1", &t.f1),
        ("f2", &t.f2),
        ("df1_dz1", &t.df1_dz1),
        ("df1_dz2", &t.df1_dz2),
        ("df2_dz1", &t.df2_dz1),
        ("df2_dz2", &t.df2_dz2),
    ] {
        exprs_ok &= v
            .expr(&format!("transmission.{key}"), value, TRANSMISSION_VARS)
            .is_some();
    }
    let f_o_text = t
        .f_o
        .as_ref()
        .map_or("0".to_string(), |s| s.get_ref().clone());
    if let Some(f_o) = &t.f_o {
        exprs_ok &= v.expr("transmission.f_o", f_o, POINT_VARS).is_some();
    }
    let data = if exprs_ok {
        let parsed = TransmissionData::parse(
            t.f1.get_ref(),
            t.f2.get_ref(),
            [
                t.df1_dz1.get_ref(),
                t.df1_dz2.get_ref(),
                t.df2_dz1.get_ref(),
                t.df2_dz2.get_ref(),
            ],
            &f_o_text,
        );
        match parsed {
            Ok(d) => {
                if t.check_derivatives.unwrap_or(true) {
                    if let Err(e) = d.validate_derivatives(0) {
                        v.push(t_line, format!("transmission: {e}"));
                    }
                }
                Some(d)
            }
            Err(e) => {
                v.push(t_line, format!("transmission: {e}"));
                None
            }
        }
    } else {
        None
    };

    let solver = raw
        .solver
        .as_ref()
        .map_or_else(SolverOptions::default, |s| {
            let d = SolverOptions::default();
            let method = match &s.method {
                None => d.method,
                Some(m) => m.get_ref().parse::<Method>().unwrap_or_else(|e| {
                    v.push(m.span().start, format!("solver.method: {e}"));
                    d.method
                }),
            };
            let damping = match &s.damping {
                Some(w) if !(*w.get_ref() > 0.0 && *w.get_ref() <= 1.0) => {
                    v.push(
                        w.span().start,
                        format!("solver.damping must be in (0, 1], got {}", w.get_ref()),
                    );
                    d.damping
                }
                Some(w) => *w.get_ref(),
                None => d.damping,
            };
            SolverOptions {
                method,
                tol: v.positive("solver.tol", &s.tol, d.tol),
                max_iter: v.count("solver.max_iter", &s.max_iter, d.max_iter, 1),
                damping,
                switch_tol: v.positive("solver.switch_tol", &s.switch_tol, d.switch_tol),
                picard_matrix: s
                    .picard_matrix
                    .map_or(PicardMatrix::Linearized, PicardMatrix::Fixed),
                polish: s.polish.unwrap_or(d.polish),
            }
        });

    let mut probes = Probes::default();
    let mut shape = ShapeConfig {
        family: None,
        steps: 20,
        max_order: 3,
    };
    let mut probe_line = 0;
    if let Some(raw_shape) = &raw.shape {
        let at = raw_shape.span().start;
        probe_line = at;
        let s = raw_shape.get_ref();
        shape.steps = v.count("shape.steps", &s.steps, 20, 2);
        shape.max_order = v.count("shape.max_order", &s.max_order, 3, 1).min(4);
        if let Some(p) = &s.probes_inner {
            probes.inner = p.get_ref().clone();
        }
        if let Some(p) = &s.probes_outer {
            probes.outer = p.get_ref().clone();
        }
        let s_max = match &s.s_max {
            Some(m) if *m.get_ref() >= 0.0 && m.get_ref().is_finite() => *m.get_ref(),
            Some(m) => {
                v.push(
                    m.span().start,
                    format!("shape.s_max must be non-negative, got {}", m.get_ref()),
                );
                0.0
            }
            None => 0.1,
        };
        if let (Some(family), Some(base)) = (&s.family, inner.clone()) {
            shape.family = match family.get_ref().as_str() {
                "dilation" => Some(ShapeFamily::dilation(base, s_max)),
                "trefoil" => Some(ShapeFamily::trefoil(base, s_max)),
                "expression" => {
                    let mut get = |name: &str, e: &Option<Spanned<String>>| match e {
                        Some(text) => v
                            .expr(&format!("shape.{name}"), text, FAMILY_VARS)
                            .map(|_| text.get_ref().clone()),
                        None => {
                            v.push(at, format!("shape: an expression family needs `{name}`"));
                            None
                        }
                    };
                    let parts = [
                        get("dx", &s.dx),
                        get("dy", &s.dy),
                        get("dx_dt", &s.dx_dt),
                        get("dy_dt", &s.dy_dt),
                    ];
                    if parts.iter().all(Option::is_some) {
                        let p: Vec<String> = parts.into_iter().flatten().collect();
                        match ShapeFamily::from_expressions(
                            base,
                            [&p[0], &p[1], &p[2], &p[3]],
                            s_max,
                        ) {
                            Ok(f) => Some(f),
                            Err(e) => {
                                v.push(at, format!("shape: {e}"));
                                None
                            }
                        }
                    } else {
                        None
                    }
                }
                other => {
                    v.push(
                        family.span().start,
                        format!("shape.family: unknown family `{other}` (expected dilation, trefoil or expression)"),
                    );
                    None
                }
            };
        }
    }

    let mut output = OutputConfig::default();
    if let Some(o) = &raw.output {
        let set = |target: &mut String, value: &Option<String>| {
            if let Some(v) = value {
                *target = v.clone();
            }
        };
        set(&mut output.densities, &o.densities);
        set(&mut output.trace, &o.trace);
        set(&mut output.field, &o.field);
        set(&mut output.probes, &o.probes);
        set(&mut output.branch, &o.branch);
        set(&mut output.derivatives, &o.derivatives);
        set(&mut output.derivative_table, &o.derivative_table);
        set(&mut output.convergence, &o.convergence);
        set(&mut output.report, &o.report);
        set(&mut output.timing, &o.timing);
        if let Some(g) = &o.grid {
            let [nx, ny] = *g.get_ref();
            if nx < 2 || ny < 2 || nx > 2000 || ny > 2000 {
                v.push(
                    g.span().start,
                    format!("output.grid entries must be in 2..=2000, got [{nx}, {ny}]"),
                );
            } else {
                output.grid = [nx as usize, ny as usize];
            }
        }
        output.write_field = o.write_field.unwrap_or(true);
    }

    // geometric checks need every piece to have parsed
    if let (Some(outer), Some(inner)) = (&outer, &inner) {
        let inner_at = raw.inner.as_ref().map_or(0, |s| s.span().start);
        match (discretize(outer, n), discretize(inner, n_inner)) {
            (Ok(ob), Ok(ib)) => {
                if let Some(j) = ib.nodes.iter().position(|p| !ob.contains(*p)) {
                    v.push(
                        inner_at,
                        format!(
                            "inner curve is not inside the outer curve (node {j} at ({}, {}))",
                            ib.nodes[j][0], ib.nodes[j][1]
                        ),
                    );
                } else if let Err(e) = probes.check(&ob, &ib) {
                    v.push(probe_line, format!("shape: {e}"));
                }
            }
            (Err(e), _) => v.push(
                raw.outer.as_ref().map_or(0, |s| s.span().start),
                format!("outer: {e}"),
            ),
            (_, Err(e)) => v.push(inner_at, format!("inner: {e}")),
        }
    }

    if !v.diagnostics.is_empty() {
        v.diagnostics.sort_by_key(|d| d.line);
        return Err(v.diagnostics);
    }
    Ok(ProblemConfig {
        outer: outer.expect("validated"),
        inner: inner.expect("validated"),
        n,
        n_inner,
        convergence_max,
        data: data.expect("validated"),
        solver,
        shape,
        probes,
        output,
    })
}
