use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tbem_core::{discretize, Curve};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Run {
    code: i32,
    dir: tempfile::TempDir,
    stderr: String,
}

impl Run {
    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.dir.path().join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}\nstderr:\n{}", self.stderr))
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }

    fn exists(&self, name: &str) -> bool {
        self.dir.path().join(name).exists()
    }
}

fn tbem(args: &[&str], config: &Path) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_tbem"))
        .args(args)
        .arg(config)
        .arg("--out-dir")
        .arg(dir.path())
        .arg("--quiet")
        .output()
        .unwrap();
    Run {
        code: output.status.code().unwrap_or(-1),
        dir,
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

fn with_text(args: &[&str], text: &str) -> Run {
    let file = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
    std::fs::write(file.path(), text).unwrap();
    tbem(args, file.path())
}

/// Parses a CSV into a header and rows of raw cells.
fn csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

const ZERO: &str = r#"
[transmission]
f1 = "0"
f2 = "0"
df1_dz1 = "0"
df1_dz2 = "0"
df2_dz1 = "0"
df2_dz2 = "0"
f_o = "0"

[solver]
picard_matrix = [[1.0, 0.0], [0.0, -1.0]]

[output]
grid = [21, 21]
"#;

#[test]
fn manufactured_solve_matches_the_exact_solution() {
    let run = tbem(&["solve"], &configs().join("manufactured.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = csv(&run.read("probes.csv"));
    let (x, y, v) = (
        column(&header, "x"),
        column(&header, "y"),
        column(&header, "value"),
    );
    for row in rows {
        let p: [f64; 2] = [row[x].parse().unwrap(), row[y].parse().unwrap()];
        let value: f64 = row[v].parse().unwrap();
        let r2 = p[0] * p[0] + p[1] * p[1];
        let exact = if r2 < 1.0 { p[0] } else { p[0] + p[0] / r2 };
        assert!((value - exact).abs() <= 1e-8, "{p:?}: {value} vs {exact}");
    }
    let summary = run.json("densities.json");
    assert_eq!(summary["converged"], Value::Bool(true));
    assert!(
        summary["boundary_residuals"]["outer_neumann"]
            .as_f64()
            .unwrap()
            < 1e-9
    );
    assert!(run.exists("trace.csv") && run.exists("field.csv") && run.exists("timing.csv"));
}

#[test]
fn zero_data_gives_constant_fields() {
    let run = with_text(&["solve"], ZERO);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let d = run.json("densities.json");
    let rho_o = d["densities"]["rho_o"].as_f64().unwrap();
    let rho_i = d["densities"]["rho_i"].as_f64().unwrap();
    let (header, rows) = csv(&run.read("field.csv"));
    let (region, value) = (column(&header, "region"), column(&header, "value"));
    let mut seen = 0;
    for row in rows {
        let expected = match row[region].as_str() {
            "outer" => rho_o,
            "inner" => rho_i,
            _ => continue,
        };
        seen += 1;
        assert_eq!(row[value].parse::<f64>().unwrap(), expected);
    }
    assert!(seen > 20, "{seen}");
}

#[test]
fn field_regions_agree_with_point_in_polygon() {
    let run = tbem(&["solve"], &configs().join("star_linear.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let outer = discretize(&Curve::ellipse(2.2, 1.8), 64).unwrap();
    let inner = discretize(&Curve::star(0.9, 0.1, 4), 64).unwrap();
    // independent even-odd ray casting
    let inside = |nodes: &[[f64; 2]], p: [f64; 2]| {
        let mut c = false;
        for i in 0..nodes.len() {
            let (a, b) = (nodes[i], nodes[(i + 1) % nodes.len()]);
            if (a[1] > p[1]) != (b[1] > p[1])
                && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0])
            {
                c = !c;
            }
        }
        c
    };
    let (header, rows) = csv(&run.read("field.csv"));
    let (x, y, region) = (
        column(&header, "x"),
        column(&header, "y"),
        column(&header, "region"),
    );
    let mut counts = [0; 3];
    for row in rows {
        let p = [row[x].parse().unwrap(), row[y].parse().unwrap()];
        match row[region].as_str() {
            "inner" => {
                counts[0] += 1;
                assert!(inside(&inner.nodes, p), "{p:?}");
            }
            "outer" => {
                counts[1] += 1;
                assert!(inside(&outer.nodes, p) && !inside(&inner.nodes, p), "{p:?}");
            }
            "skip" => counts[2] += 1,
            other => panic!("unexpected region {other}"),
        }
    }
    assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
}

#[test]
fn divergent_picard_exits_2_with_trace() {
    let text = r#"
[discretization]
n = 32

[transmission]
f1 = "z1 + z1^2"
f2 = "-z2"
df1_dz1 = "1 + 2*z1"
df1_dz2 = "0"
df2_dz1 = "0"
df2_dz2 = "-1"
f_o = "10*x1"

[solver]
method = "picard"
max_iter = 10
"#;
    let run = with_text(&["solve"], text);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let (_, rows) = csv(&run.read("trace.csv"));
    assert!(!rows.is_empty());
    assert_eq!(run.json("densities.json")["converged"], Value::Bool(false));
}

#[test]
fn config_errors_exit_1() {
    let bad = ZERO.replace("f1 = \"0\"", "f1 = \"z3\"");
    let run = with_text(&["solve"], &bad);
    assert_eq!(run.code, 1);
    assert!(
        run.stderr.contains("z3") && run.stderr.contains("line 3"),
        "{}",
        run.stderr
    );

    let odd = format!("[discretization]\nn = 63\n{ZERO}");
    let run = with_text(&["solve"], &odd);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("N must be even"), "{}", run.stderr);

    let run = tbem(&["solve"], Path::new("/nonexistent/problem.toml"));
    assert_eq!(run.code, 1);
}

#[test]
fn solve_output_is_deterministic() {
    let a = tbem(&["solve"], &configs().join("canonical_trefoil.toml"));
    let b = tbem(&["solve"], &configs().join("canonical_trefoil.toml"));
    assert_eq!(a.code, 0);
    for name in ["densities.json", "trace.csv", "field.csv", "probes.csv"] {
        assert_eq!(a.read(name), b.read(name), "{name}");
    }
}

#[test]
fn trefoil_branch_has_smooth_derivatives() {
    let run = tbem(&["perturb"], &configs().join("canonical_trefoil.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, branch) = csv(&run.read("branch.csv"));
    assert_eq!(branch.len(), 21);
    let (header, rows) = csv(&run.read("derivatives.csv"));
    let (order, ratio) = (
        column(&header, "order"),
        column(&header, "richardson_ratio"),
    );
    for row in rows {
        if row[order].parse::<usize>().unwrap() <= 2 {
            let r: f64 = row[ratio].parse().unwrap();
            assert!((3.0..=5.0).contains(&r), "ratio {r}");
        }
    }
    assert_eq!(
        run.json("branch_summary.json")["complete"],
        Value::Bool(true)
    );
}

#[test]
fn zero_data_dilation_branch_is_constant() {
    let text = format!(
        "{ZERO}\n[shape]\nfamily = \"dilation\"\ns_max = 0.2\nsteps = 10\nmax_order = 2\nprobes_inner = [[0.1, 0.0]]\nprobes_outer = [[1.6, 0.0]]\n"
    );
    let run = with_text(&["perturb"], &text);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (header, rows) = csv(&run.read("derivative_table.csv"));
    let d1 = column(&header, "d1");
    for row in rows {
        for cell in &row[d1..] {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn escaping_family_gives_partial_branch() {
    let text = format!("{ZERO}\n[shape]\nfamily = \"dilation\"\ns_max = 1.5\nsteps = 10\n");
    let run = with_text(&["perturb"], &text);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let summary = run.json("branch_summary.json");
    assert_eq!(summary["complete"], Value::Bool(false));
    let failed = summary["failed_s"].as_f64().unwrap();
    assert!(failed > 0.9 && failed <= 1.5, "{failed}");
    let (_, rows) = csv(&run.read("branch.csv"));
    assert!(!rows.is_empty() && rows.len() < 11);
}

#[test]
fn verify_passes_on_the_canonical_problem() {
    let run = tbem(&["verify"], &configs().join("canonical_trefoil.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report = run.json("verify.json");
    assert_eq!(report["passed"], Value::Bool(true));
    let statuses: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["status"].as_str().unwrap())
        .collect();
    assert!(statuses.iter().all(|s| *s == "passed"), "{statuses:?}");
}

#[test]
fn verify_skips_checks_that_do_not_apply() {
    let run = tbem(&["verify"], &configs().join("star_linear.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let report = run.json("verify.json");
    let checks = report["checks"].as_array().unwrap();
    let status = |name: &str| {
        checks
            .iter()
            .find(|c| c["name"] == name)
            .map(|c| c["status"].as_str().unwrap().to_string())
            .unwrap()
    };
    assert_eq!(status("v_fourier_inner"), "skipped");
    assert_eq!(status("concentric_oracle"), "skipped");
    assert_eq!(status("jump_relation_inner"), "passed");
}

#[test]
fn tampered_threshold_fails_verify() {
    let run = tbem(
        &["verify", "--override-threshold", "jump_relation_outer=-1"],
        &configs().join("canonical_trefoil.toml"),
    );
    assert_eq!(run.code, 4, "{}", run.stderr);
    assert!(run.stderr.contains("jump_relation_outer"));
    let report = run.json("verify.json");
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"] == "failed")
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, vec!["jump_relation_outer"]);
}

fn deltas(run: &Run) -> Vec<(usize, f64)> {
    let (header, rows) = csv(&run.read("convergence.csv"));
    let cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("delta_"))
        .collect();
    rows.iter()
        .filter(|r| !r[cols[0]].is_empty())
        .map(|r| {
            let d = cols
                .iter()
                .map(|&c| r[c].parse::<f64>().unwrap())
                .fold(0.0, f64::max);
            (r[0].parse().unwrap(), d)
        })
        .collect()
}

#[test]
fn manufactured_convergence_is_spectral() {
    let run = tbem(&["convergence"], &configs().join("manufactured.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let d = deltas(&run);
    assert_eq!(
        d.iter().map(|x| x.0).collect::<Vec<_>>(),
        vec![16, 32, 64, 128]
    );
    for w in d.windows(2) {
        assert!(w[1].1 < w[0].1, "{d:?}");
    }
    assert!(d[3].1 <= 1e-10, "{d:?}");
}

#[test]
fn star_convergence_is_super_algebraic() {
    let run = tbem(&["convergence"], &configs().join("star_linear.toml"));
    assert_eq!(run.code, 0, "{}", run.stderr);
    let d = deltas(&run);
    for w in d.windows(2) {
        if w[0].1 < 1e-2 && w[0].1 > 1e-12 {
            assert!(w[1].1 * 10.0 <= w[0].1, "{d:?}");
        }
    }
}

#[test]
fn capped_convergence_has_a_single_row() {
    let text = format!(
        "[discretization]\nn = 16\nconvergence_max = 16\n{ZERO}\n[shape]\nprobes_outer = [[1.5, 0.0]]\n"
    );
    let run = with_text(&["convergence"], &text);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (_, rows) = csv(&run.read("convergence.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].last().unwrap().is_empty());
}
