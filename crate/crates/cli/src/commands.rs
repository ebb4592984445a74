//! `solve`, `perturb` and `convergence`.

use std::time::Instant;

use serde::Serialize;

use tbem_core::geometry::DiscreteBoundary;
use tbem_core::nonlinear::{GrowthReport, IterationRecord, Region};
use tbem_core::shape::Predictor;
use tbem_core::study::{convergence_study, levels_up_to};
use tbem_core::{
    boundary_residuals, check_growth, continue_branch, discretize, reconstruct_solution,
    smoothness_probe, solve_unperturbed, BranchPoint, ContinuationOptions, DensitySet,
    HarmonicPair, NonlinearSystem, Probes, ShapeProblem, SmoothnessReport, SolverOptions,
};

use crate::config::ProblemConfig;
use crate::output::{Cell, Csv, OutputDir};
use crate::CliError;

/// Band around each boundary, in mesh widths, where field samples are skipped.
pub const SKIP_BAND: f64 = 3.0;

pub(crate) fn boundaries(
    cfg: &ProblemConfig,
) -> Result<(DiscreteBoundary, DiscreteBoundary), CliError> {
    let outer = discretize(&cfg.outer, cfg.n).map_err(CliError::internal)?;
    let inner = discretize(&cfg.inner, cfg.n_inner).map_err(CliError::internal)?;
    Ok((outer, inner))
}

fn trace_csv(trace: &[IterationRecord]) -> Csv {
    let mut csv = Csv::new(&["iteration", "method", "residual", "step"]);
    for r in trace {
        let method = match r.method {
            tbem_core::Method::Picard => "picard",
            tbem_core::Method::Newton => "newton",
            tbem_core::Method::Hybrid => "hybrid",
        };
        csv.row(vec![
            r.iteration.into(),
            method.into(),
            r.residual.into(),
            r.step.into(),
        ]);
    }
    csv
}

fn probe_names(probes: &Probes) -> Vec<String> {
    (0..probes.inner.len())
        .map(|i| format!("inner_{i}"))
        .chain((0..probes.outer.len()).map(|i| format!("outer_{i}")))
        .collect()
}

fn probe_points(probes: &Probes) -> Vec<[f64; 2]> {
    probes.inner.iter().chain(&probes.outer).copied().collect()
}

struct Timing {
    csv: Csv,
    start: Instant,
}

impl Timing {
    fn new() -> Timing {
        Timing {
            csv: Csv::new(&["stage", "seconds"]),
            start: Instant::now(),
        }
    }

    fn mark(&mut self, stage: &str) {
        let secs = self.start.elapsed().as_secs_f64();
        self.csv.row(vec![stage.into(), secs.into()]);
        self.start = Instant::now();
    }
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    converged: bool,
    iterations: usize,
    residual: f64,
    boundary_residuals: Option<tbem_core::nonlinear::BoundaryResiduals>,
    growth: GrowthReport,
    densities: Option<&'a DensitySet>,
}

/// Field samples on a rectilinear grid over the bounding box of the outer
/// curve. Points outside the domain or near a boundary are marked `skip`.
pub fn field_grid(pair: &HarmonicPair, grid: [usize; 2]) -> Result<Csv, CliError> {
    let (outer, inner) = (&pair.outer, &pair.inner);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &outer.nodes {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let band_o = SKIP_BAND * outer.mesh_width();
    let band_i = SKIP_BAND * inner.mesh_width();
    let mut csv = Csv::new(&["x", "y", "region", "value"]);
    for iy in 0..grid[1] {
        let y = lo[1] + (hi[1] - lo[1]) * iy as f64 / (grid[1] - 1) as f64;
        for ix in 0..grid[0] {
            let x = lo[0] + (hi[0] - lo[0]) * ix as f64 / (grid[0] - 1) as f64;
            let p = [x, y];
            let near = outer.distance_to(p) < band_o || inner.distance_to(p) < band_i;
            let region = pair.region(p);
            let (label, value) = match region {
                _ if near => ("skip", Cell::Empty),
                Region::Exterior => ("skip", Cell::Empty),
                Region::Inner => ("inner", pair.u_i(p).map_err(CliError::internal)?.into()),
                Region::Outer => ("outer", pair.u_o(p).map_err(CliError::internal)?.into()),
            };
            csv.row(vec![x.into(), y.into(), label.into(), value]);
        }
    }
    Ok(csv)
}

pub fn cmd_solve(cfg: &ProblemConfig, out: &OutputDir) -> Result<(), CliError> {
    let mut timing = Timing::new();
    let (outer, inner) = boundaries(cfg)?;
    let system =
        NonlinearSystem::unperturbed(&cfg.data, &outer, &inner).map_err(CliError::internal)?;
    let a0 = system
        .picard_matrix(
            &cfg.solver.picard_matrix,
            &DensitySet::zeros(outer.n(), inner.n()),
        )
        .map_err(CliError::internal)?;
    let radius = 10.0
        * (1.0
            + system
                .neumann_datum()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())));
    let growth = check_growth(&cfg.data, &inner.nodes, &a0, radius);
    timing.mark("setup");

    let result = solve_unperturbed(&cfg.data, &outer, &inner, &cfg.solver);
    timing.mark("solve");
    let io = CliError::io;

    let sol = match result {
        Ok(sol) => sol,
        Err(failure) => {
            out.write_csv(&cfg.output.trace, &trace_csv(&failure.trace))
                .map_err(io)?;
            let summary = SolveSummary {
                converged: false,
                iterations: failure.trace.last().map_or(0, |r| r.iteration),
                residual: failure.trace.last().map_or(f64::NAN, |r| r.residual),
                boundary_residuals: None,
                growth,
                densities: failure.last.as_ref(),
            };
            out.write_json(&cfg.output.densities, &summary)
                .map_err(io)?;
            out.write_csv(&cfg.output.timing, &timing.csv).map_err(io)?;
            return Err(CliError::NonConvergence(failure.to_string()));
        }
    };

    let bc = boundary_residuals(&system, &sol.densities).map_err(CliError::internal)?;
    let pair = reconstruct_solution(&sol.densities, &outer, &inner).map_err(CliError::internal)?;
    out.write_csv(&cfg.output.trace, &trace_csv(&sol.trace))
        .map_err(io)?;
    let summary = SolveSummary {
        converged: true,
        iterations: sol.iterations(),
        residual: sol.residual,
        boundary_residuals: Some(bc),
        growth,
        densities: Some(&sol.densities),
    };
    out.write_json(&cfg.output.densities, &summary)
        .map_err(io)?;

    if !cfg.probes.is_empty() {
        let values = cfg.probes.evaluate(&pair).map_err(CliError::internal)?;
        let mut csv = Csv::new(&["probe", "x", "y", "value"]);
        for ((name, p), v) in probe_names(&cfg.probes)
            .iter()
            .zip(probe_points(&cfg.probes))
            .zip(values)
        {
            csv.row(vec![
                name.as_str().into(),
                p[0].into(),
                p[1].into(),
                v.into(),
            ]);
        }
        out.write_csv(&cfg.output.probes, &csv).map_err(io)?;
    }
    if cfg.output.write_field {
        out.write_csv(&cfg.output.field, &field_grid(&pair, cfg.output.grid)?)
            .map_err(io)?;
    }
    timing.mark("output");
    out.write_csv(&cfg.output.timing, &timing.csv).map_err(io)?;
    log::info!(
        "converged in {} iterations, residual {:e}",
        sol.iterations(),
        sol.residual
    );
    Ok(())
}

fn branch_csv(points: &[BranchPoint], probes: &Probes) -> Csv {
    let mut header = vec!["s".to_string(), "residual".into(), "iterations".into()];
    header.extend(probe_names(probes));
    let mut csv = Csv::new(&header);
    for p in points {
        let mut row: Vec<Cell> = vec![p.s.into(), p.residual_norm.into(), p.iterations.into()];
        row.extend(p.probe_values.iter().map(|&v| Cell::from(v)));
        csv.row(row);
    }
    csv
}

fn diagnostics_csv(reports: &[(String, SmoothnessReport)]) -> (Csv, Csv) {
    let mut diag = Csv::new(&[
        "probe",
        "order",
        "center_s",
        "d_h",
        "d_2h",
        "d_4h",
        "richardson_ratio",
        "relative_change",
    ]);
    let max_order = reports.first().map_or(0, |(_, r)| r.orders.len());
    let mut header = vec!["probe".to_string(), "s".into()];
    header.extend((1..=max_order).map(|k| format!("d{k}")));
    let mut table = Csv::new(&header);
    for (name, report) in reports {
        for o in &report.orders {
            diag.row(vec![
                name.as_str().into(),
                o.order.into(),
                report.center_s.into(),
                o.estimates.first().copied().into(),
                o.estimates.get(1).copied().into(),
                o.estimates.get(2).copied().into(),
                o.richardson_ratio.into(),
                o.relative_change.into(),
            ]);
        }
        for (s, ds) in &report.table {
            let mut row: Vec<Cell> = vec![name.as_str().into(), (*s).into()];
            row.extend(ds.iter().map(|d| Cell::from(*d)));
            table.row(row);
        }
    }
    (diag, table)
}

#[derive(Serialize)]
struct BranchSummary {
    complete: bool,
    points: usize,
    s_max: f64,
    failed_s: Option<f64>,
    error: Option<String>,
}

pub fn cmd_perturb(cfg: &ProblemConfig, out: &OutputDir) -> Result<(), CliError> {
    let Some(family) = &cfg.shape.family else {
        return Err(CliError::Config(
            "perturb needs a [shape] section with a `family`".into(),
        ));
    };
    let mut timing = Timing::new();
    let io = CliError::io;
    let outer = discretize(&cfg.outer, cfg.n).map_err(CliError::internal)?;
    let problem = ShapeProblem::new(&cfg.data, &outer, &cfg.inner, cfg.n_inner)
        .map_err(CliError::internal)?;
    let options = ContinuationOptions {
        solver: SolverOptions {
            polish: true,
            ..cfg.solver.clone()
        },
        predictor: Predictor::Secant,
    };
    let (points, failure) =
        match continue_branch(&problem, family, cfg.shape.steps, &cfg.probes, &options) {
            Ok(points) => (points, None),
            Err(f) => (f.points, Some((f.failed_s, f.error.to_string()))),
        };
    timing.mark("continuation");

    out.write_csv(&cfg.output.branch, &branch_csv(&points, &cfg.probes))
        .map_err(io)?;
    let names = probe_names(&cfg.probes);
    let needed = 2 * cfg.shape.max_order + 1;
    if !names.is_empty() && points.len() >= needed {
        let mut reports = Vec::new();
        for (i, name) in names.iter().enumerate() {
            let r =
                smoothness_probe(&points, i, cfg.shape.max_order).map_err(CliError::internal)?;
            reports.push((name.clone(), r));
        }
        let (diag, table) = diagnostics_csv(&reports);
        out.write_csv(&cfg.output.derivatives, &diag).map_err(io)?;
        out.write_csv(&cfg.output.derivative_table, &table)
            .map_err(io)?;
    } else {
        log::warn!(
            "derivative diagnostics skipped: need probes and at least {needed} branch points"
        );
    }
    let summary = BranchSummary {
        complete: failure.is_none(),
        points: points.len(),
        s_max: family.s_max,
        failed_s: failure.as_ref().map(|f| f.0),
        error: failure.as_ref().map(|f| f.1.clone()),
    };
    out.write_json("branch_summary.json", &summary)
        .map_err(io)?;
    timing.mark("output");
    out.write_csv(&cfg.output.timing, &timing.csv).map_err(io)?;
    match failure {
        None => Ok(()),
        Some((s, e)) => Err(CliError::NonConvergence(format!(
            "branch stopped at s = {s} after {} points: {e}",
            points.len()
        ))),
    }
}

pub fn cmd_convergence(cfg: &ProblemConfig, out: &OutputDir) -> Result<(), CliError> {
    if cfg.probes.is_empty() {
        return Err(CliError::Config(
            "convergence needs probe points (shape.probes_inner / shape.probes_outer)".into(),
        ));
    }
    let levels = levels_up_to(cfg.convergence_max);
    let mut failure = None;
    let rows = convergence_study(&levels, |n| {
        let outer = discretize(&cfg.outer, n)?;
        let inner = discretize(&cfg.inner, n)?;
        let sol = solve_unperturbed(&cfg.data, &outer, &inner, &cfg.solver).map_err(|f| {
            let e = f.error;
            failure = Some(format!("N = {n}: {e}"));
            e
        })?;
        let pair = reconstruct_solution(&sol.densities, &outer, &inner)?;
        cfg.probes.evaluate(&pair)
    });
    let rows = match rows {
        Ok(rows) => rows,
        Err(e) => {
            return Err(match failure {
                Some(msg) => CliError::NonConvergence(msg),
                None => CliError::internal(e),
            })
        }
    };
    let names = probe_names(&cfg.probes);
    let mut header = vec!["n".to_string()];
    header.extend(names.iter().map(|n| format!("value_{n}")));
    header.extend(names.iter().map(|n| format!("delta_{n}")));
    let mut csv = Csv::new(&header);
    let mut timing = Csv::new(&["n", "seconds"]);
    for r in &rows {
        let mut row: Vec<Cell> = vec![r.n.into()];
        row.extend(r.probe_values.iter().map(|&v| Cell::from(v)));
        row.extend((0..names.len()).map(|i| Cell::from(r.deltas.get(i).copied())));
        csv.row(row);
        timing.row(vec![r.n.into(), r.runtime.as_secs_f64().into()]);
    }
    out.write_csv(&cfg.output.convergence, &csv)
        .map_err(CliError::io)?;
    out.write_csv(&cfg.output.timing, &timing)
        .map_err(CliError::io)?;
    for r in &rows {
        if let Some(d) = r.max_delta() {
            log::info!("N = {:>4}: max probe delta {d:.3e}", r.n);
        }
    }
    Ok(())
}
