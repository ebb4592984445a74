//! Property and invariant checks that span several modules.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbem_core::expr::CURVE_VARS;
use tbem_core::linalg::{dot, norm_inf};
use tbem_core::nonlinear::{difference_norm, PicardMatrix};
use tbem_core::oracle::circle_wstar_value;
use tbem_core::potential::single_layer_matrix;
use tbem_core::*;

fn canonical() -> TransmissionData {
    TransmissionData::new(
        "z1 + tanh(z2)",
        "-z2 + tanh(z1)",
        ["1", "1 - tanh(z2)^2", "1 - tanh(z1)^2", "-1"],
        "x1 / 2",
    )
    .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convex_curves_have_outward_normals(
        a in 0.3f64..3.0, b in 0.3f64..3.0, cx in -5.0f64..5.0, cy in -5.0f64..5.0, half in 4usize..64,
    ) {
        let curve = Curve::Ellipse { center: [cx, cy], semi_x: a, semi_y: b };
        let bd = discretize(&curve, 2 * half).unwrap();
        let n = bd.n() as f64;
        let centroid = [
            bd.nodes.iter().map(|p| p[0]).sum::<f64>() / n,
            bd.nodes.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        for (p, nu) in bd.nodes.iter().zip(&bd.normals) {
            prop_assert!(nu[0] * (p[0] - centroid[0]) + nu[1] * (p[1] - centroid[1]) > 0.0);
        }
    }

    #[test]
    fn parameter_shift_permutes_weights(shift in 0usize..32, a in 0.5f64..2.0, b in 0.5f64..2.0) {
        let n = 32;
        let c = 2.0 * PI * shift as f64 / n as f64;
        let e = |s: String| Expr::parse(&s, CURVE_VARS).unwrap();
        let shifted = Curve::Expression {
            x: e(format!("{a:?}*cos(t + {c:?})")),
            y: e(format!("{b:?}*sin(t + {c:?})")),
            dx: e(format!("-{a:?}*sin(t + {c:?})")),
            dy: e(format!("{b:?}*cos(t + {c:?})")),
        };
        let plain = discretize(&Curve::ellipse(a, b), n).unwrap();
        let moved = discretize(&shifted, n).unwrap();
        let sorted = |w: &[f64]| {
            let mut v = w.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        for (x, y) in sorted(&plain.weights).iter().zip(sorted(&moved.weights)) {
            prop_assert!((x - y).abs() <= 1e-14 * x.abs());
        }
        for j in 0..n {
            let k = (j + shift) % n;
            prop_assert!((moved.nodes[j][0] - plain.nodes[k][0]).abs() < 1e-13);
            prop_assert!((moved.nodes[j][1] - plain.nodes[k][1]).abs() < 1e-13);
        }
    }

    #[test]
    fn identity_map_has_unit_stretch(half in 2usize..128, amp in 0.0f64..0.3) {
        let phi = ShapeMap::identity(Curve::star(1.0, amp, 3));
        let st = sigma_tilde(&phi, 2 * half).unwrap();
        prop_assert!(st.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_layer_is_weighted_symmetric(seed in any::<u64>(), amp in 0.0f64..0.3, half in 8usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bd = discretize(&Curve::star(1.2, amp, 5), 2 * half).unwrap();
        let v = single_layer_matrix(&bd);
        let (mu, eta) = (random_vec(&mut rng, bd.n()), random_vec(&mut rng, bd.n()));
        let weighted = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&bd.weights).map(|((x, y), w)| x * y * w).sum()
        };
        let lhs = weighted(&v.matvec(&mu), &eta);
        let rhs = weighted(&mu, &v.matvec(&eta));
        let scale = dot(&mu, &mu).sqrt() * dot(&eta, &eta).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-11 * scale, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn single_layer_has_mean_value_property(
        seed in any::<u64>(), cx in -0.4f64..0.4, cy in -0.4f64..0.4, r in 0.05f64..0.3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bd = discretize(&Curve::ellipse(1.5, 1.1), 64).unwrap();
        // smooth density from a few modes
        let modes: Vec<(f64, f64)> = (0..5).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mu: Vec<f64> = bd.params.iter().map(|&t| {
            modes.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * t).cos() + b * (k as f64 * t).sin()).sum()
        }).collect();
        let c = [cx, cy];
        let field = |x: Point| Ok(eval_single_layer(&bd, &mu, x).value);
        let mut vmax = 0.0f64;
        for j in 0..32 {
            let th = 2.0 * PI * j as f64 / 32.0;
            vmax = vmax.max(field([cx + r * th.cos(), cy + r * th.sin()]).unwrap().abs());
        }
        let defect = mean_value_check(field, c, r, 32).unwrap();
        prop_assert!(defect <= 1e-10 * (1.0 + vmax), "defect {}", defect);
    }

    #[test]
    fn wstar_on_circles_matches_closed_form(seed in any::<u64>(), r in 0.3f64..3.0, half in 8usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bd = discretize(&Curve::circle(r), 2 * half).unwrap();
        let mu = random_vec(&mut rng, bd.n());
        let expected = circle_wstar_value(r, bd.integrate(&mu));
        for w in apply_wstar(&bd, &mu) {
            prop_assert!((w - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn solves_preserve_mean_zero_constraints(seed in any::<u64>(), amp in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 32;
        let outer = discretize(&Curve::circle(2.0), n).unwrap();
        let inner = discretize(&Curve::star(0.9, amp, 3), n).unwrap();
        let a = MatrixField::from_fn(n, |j| {
            let x = inner.nodes[j][0];
            [[1.0 + x * x, x], [-x, -1.0]]
        });
        let j = assemble_ja(&outer, &inner, &a).unwrap();
        let rhs = random_vec(&mut rng, n + 2 * n);
        let x = solve_ja(&j, &rhs).unwrap();
        let (d_o, d_i) = x.mean_zero_defects(&outer.weights, &inner.weights);
        prop_assert!(d_o <= 1e-12 && d_i <= 1e-12, "{} {}", d_o, d_i);
    }
}

/// `x - T_A(x) = J_A⁻¹ M(x)`, so each residual bounds the other through
/// `‖J_A‖` and `‖J_A⁻¹‖`.
#[test]
fn fixed_point_and_system_residuals_are_equivalent() {
    let n = 16;
    let outer = discretize(&Curve::circle(2.0), n).unwrap();
    let inner = discretize(&Curve::circle(1.0), n).unwrap();
    let system = NonlinearSystem::unperturbed(&canonical(), &outer, &inner).unwrap();
    let layout = system.layout();
    let a = system
        .picard_matrix(&PicardMatrix::Linearized, &DensitySet::zeros(n, n))
        .unwrap();
    let t = system.picard_operator(a.clone()).unwrap();
    let ja = system.operators().assemble(&a).unwrap();
    let norm_j = ja.matrix().norm_inf();
    let factored = ja.factorize().unwrap();
    let dim = layout.dim();
    // ‖J⁻¹‖_∞ from the explicit inverse
    let mut inv_rows = vec![0.0; dim];
    for col in 0..dim {
        let mut e = vec![0.0; dim];
        e[col] = 1.0;
        let c = factored.solve(&e).unwrap().to_vec();
        for (r, v) in c.iter().enumerate() {
            inv_rows[r] += v.abs();
        }
    }
    let norm_inv = inv_rows.iter().copied().fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = solve_unperturbed(&canonical(), &outer, &inner, &SolverOptions::default()).unwrap();
    for scale in [1.0, 1e-3, 1e-6, 1e-9] {
        let v: Vec<f64> = out
            .densities
            .to_vec()
            .iter()
            .map(|x| x + scale * rng.random_range(-1.0..1.0))
            .collect();
        let x = DensitySet::from_vec(&v, layout).unwrap();
        let fp = difference_norm(&x, &t.apply(&x).unwrap());
        let m = norm_inf(&system.residual(&x).unwrap());
        assert!(
            m <= norm_j * fp * (1.0 + 1e-8) + 1e-14,
            "{m} vs {norm_j} * {fp}"
        );
        assert!(
            fp <= norm_inv * m * (1.0 + 1e-8) + 1e-14,
            "{fp} vs {norm_inv} * {m}"
        );
    }
}

/// Dilating a concentric linear problem: the continued branch agrees with
/// fresh solves at the dilated radii started from the closed form.
#[test]
fn dilation_branch_matches_direct_solves() {
    let n = 64;
    let data = TransmissionData::new("z1", "-z2 + 0.5", ["1", "0", "0", "-1"], "x1").unwrap();
    let outer = discretize(&Curve::circle(2.0), n).unwrap();
    let base = Curve::circle(1.0);
    let problem = ShapeProblem::new(&data, &outer, &base, n).unwrap();
    let family = ShapeFamily::dilation(base, 0.2);
    let probes = Probes {
        inner: vec![[0.1, 0.2]],
        outer: vec![[1.6, 0.3]],
    };
    let branch = continue_branch(
        &problem,
        &family,
        10,
        &probes,
        &ContinuationOptions::default(),
    )
    .unwrap();
    let f_o = FourierSeries::cosine(1, 2.0);
    for point in branch.iter().step_by(3) {
        let radius = 1.0 + point.s;
        let exact = concentric_linear_solve(
            radius,
            2.0,
            [[1.0, 0.0], [0.0, -1.0]],
            &f_o,
            &FourierSeries::zero(),
            &FourierSeries::constant(0.5),
        )
        .unwrap();
        let inner = discretize(&Curve::circle(radius), n).unwrap();
        let system = NonlinearSystem::new(&data, &outer, &inner, &problem.reference.nodes).unwrap();
        let options = SolverOptions {
            method: Method::Newton,
            ..SolverOptions::default()
        };
        let direct = solve_system(&system, &exact.density_set(n, n), &options).unwrap();
        let pair = reconstruct_solution(&direct.densities, &outer, &inner).unwrap();
        let values = probes.evaluate(&pair).unwrap();
        for (a, b) in values.iter().zip(&point.probe_values) {
            assert!((a - b).abs() <= 1e-8, "s = {}: {a} vs {b}", point.s);
        }
    }
}

/// Every tenth branch point: Jacobian against central differences, valid
/// shape, probes inside their regions.
#[test]
fn branch_points_pass_guards_and_jacobian_checks() {
    let n = 32;
    let outer = discretize(&Curve::circle(2.0), n).unwrap();
    let base = Curve::circle(1.0);
    let problem = ShapeProblem::new(&canonical(), &outer, &base, n).unwrap();
    let family = ShapeFamily::trefoil(base, 0.1);
    let probes = Probes {
        inner: vec![[0.2, 0.1]],
        outer: vec![[1.5, 0.5]],
    };
    let branch = continue_branch(
        &problem,
        &family,
        20,
        &probes,
        &ContinuationOptions::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for point in &branch {
        let phi = family.at(point.s);
        assert!(validate_shape(&phi, n, &outer).valid(), "s = {}", point.s);
        let image = problem.image(&phi).unwrap();
        probes.check(&outer, &image).unwrap();
    }
    for point in branch.iter().step_by(10) {
        let phi = family.at(point.s);
        let x = &point.densities;
        let j = problem.jacobian(&phi, x).unwrap();
        for _ in 0..5 {
            let d = random_vec(&mut rng, x.layout().dim());
            let h = 1e-6;
            let shifted = |sign: f64| {
                let v: Vec<f64> = x
                    .to_vec()
                    .iter()
                    .zip(&d)
                    .map(|(a, b)| a + sign * h * b)
                    .collect();
                DensitySet::from_vec(&v, x.layout()).unwrap()
            };
            let rp = problem.residual_m(&phi, &shifted(1.0)).unwrap();
            let rm = problem.residual_m(&phi, &shifted(-1.0)).unwrap();
            let jd = j.matrix().matvec(&d);
            let diff: Vec<f64> = rp
                .iter()
                .zip(&rm)
                .zip(&jd)
                .map(|((p, m), q)| (p - m) / (2.0 * h) - q)
                .collect();
            assert!(norm_inf(&diff) <= 1e-6 * norm_inf(&jd), "s = {}", point.s);
        }
    }
}
