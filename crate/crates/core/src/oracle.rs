//! Closed-form references on concentric circles.
//!
//! Nothing here calls into the quadrature code: single layer potentials of
//! `cos kθ`, `sin kθ` densities on a circle of radius `R` are
//!
//! ```text
//! k = 0:  R log R            (r ≤ R),   R log r            (r ≥ R)
//! k ≥ 1: -(R/2k)(r/R)^k cos kθ (r ≤ R),  -(R/2k)(R/r)^k cos kθ (r ≥ R)
//! ```
//!
//! and the linear transmission system decouples into one small dense system
//! per Fourier mode, solved by a local Gaussian elimination.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nonlinear::TransmissionData;
use crate::operators::DensitySet;

/// Eigenvalue of `V` on the circle of radius `r` for the mode `k`.
pub fn fourier_v_eigenvalue(r: f64, k: i64) -> f64 {
    if k == 0 {
        r * r.ln()
    } else {
        -r / (2.0 * k.unsigned_abs() as f64)
    }
}

/// Value of `W*[μ]` on a circle of radius `r`, a constant: `(1/(4πr)) ∫ μ dσ`.
pub fn circle_wstar_value(r: f64, integral: f64) -> f64 {
    integral / (4.0 * PI * r)
}

/// `f(θ) = Σ_k cos[k] cos kθ + sin[k] sin kθ` (`sin[0]` is ignored).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FourierSeries {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn zero() -> FourierSeries {
        FourierSeries::default()
    }

    pub fn cosine(k: usize, amplitude: f64) -> FourierSeries {
        let mut cos = vec![0.0; k + 1];
        cos[k] = amplitude;
        FourierSeries { cos, sin: vec![] }
    }

    pub fn sine(k: usize, amplitude: f64) -> FourierSeries {
        let mut sin = vec![0.0; k + 1];
        sin[k] = amplitude;
        FourierSeries { cos: vec![], sin }
    }

    pub fn constant(c: f64) -> FourierSeries {
        FourierSeries::cosine(0, c)
    }

    pub fn max_mode(&self) -> usize {
        self.cos.len().max(self.sin.len()).saturating_sub(1)
    }

    pub fn cos_coeff(&self, k: usize) -> f64 {
        self.cos.get(k).copied().unwrap_or(0.0)
    }

    pub fn sin_coeff(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.sin.get(k).copied().unwrap_or(0.0)
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        (0..=self.max_mode())
            .map(|k| {
                let kt = k as f64 * theta;
                self.cos_coeff(k) * kt.cos() + self.sin_coeff(k) * kt.sin()
            })
            .sum()
    }
}

/// Coefficients `(μ^o, μ^i, η^i)` of one mode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModeCoefficients {
    pub mu_o: f64,
    pub mu_i: f64,
    pub eta_i: f64,
}

/// Exact solution of the linear problem `F(x, z) = A z + g(x)` on
/// concentric circles centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentricSolution {
    pub r_inner: f64,
    pub r_outer: f64,
    /// Index `k` holds the coefficients of `cos kθ`.
    pub cos: Vec<ModeCoefficients>,
    /// Index `k` holds the coefficients of `sin kθ` (entry 0 unused).
    pub sin: Vec<ModeCoefficients>,
    pub rho_o: f64,
    pub rho_i: f64,
    /// `∫ f^o dσ` over the outer circle.
    pub compatibility_defect: f64,
}

fn gauss_solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for c in col..N {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn mode_system(
    k: usize,
    ri: f64,
    ro: f64,
    a: [[f64; 2]; 2],
    rhs: [f64; 3],
) -> Result<ModeCoefficients> {
    let kf = k as f64;
    let q = ri / ro;
    // α¹ = c_o m_o + c_i m_i,  α² = c_i e_i
    let c_o = -(ro / (2.0 * kf)) * q.powi(k as i32);
    let c_i = -ri / (2.0 * kf);
    let m = [
        [-0.5, 0.5 * q.powi(k as i32 + 1), 0.0],
        [
            -0.5 * q.powi(k as i32 - 1) - a[0][0] * c_o,
            0.5 - a[0][0] * c_i,
            -a[0][1] * c_i,
        ],
        [-a[1][0] * c_o, -a[1][0] * c_i, -0.5 - a[1][1] * c_i],
    ];
    let x = gauss_solve(m, rhs).ok_or(Error::OracleSingular { mode: k })?;
    Ok(ModeCoefficients {
        mu_o: x[0],
        mu_i: x[1],
        eta_i: x[2],
    })
}

/// Per-mode direct solve of the linear transmission problem with Neumann
/// datum `f_o` on the circle of radius `r_outer` and `F(x, z) = A z + g(x)`
/// on the circle of radius `r_inner`.
pub fn concentric_linear_solve(
    r_inner: f64,
    r_outer: f64,
    a: [[f64; 2]; 2],
    f_o: &FourierSeries,
    g1: &FourierSeries,
    g2: &FourierSeries,
) -> Result<ConcentricSolution> {
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(Error::Domain(format!(
            "need 0 < inner radius < outer radius, got {r_inner} and {r_outer}"
        )));
    }
    let (ri, ro) = (r_inner, r_outer);
    // mode 0: unknowns (m_o, m_i, e_i, ρ^o, ρ^i); the last two rows are the
    // mean-zero constraints m_o = 0, e_i = 0
    let (lo, li) = (ro * ro.ln(), ri * ri.ln());
    let m0 = [
        [0.0, ri / ro, 0.0, 0.0, 0.0],
        [
            -a[0][0] * lo,
            1.0 - a[0][0] * li,
            -a[0][1] * li,
            -a[0][0],
            -a[0][1],
        ],
        [
            -a[1][0] * lo,
            -a[1][0] * li,
            -a[1][1] * li,
            -a[1][0],
            -a[1][1],
        ],
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
    ];
    let b0 = [f_o.cos_coeff(0), g1.cos_coeff(0), g2.cos_coeff(0), 0.0, 0.0];
    let x0 = gauss_solve(m0, b0).ok_or(Error::OracleSingular { mode: 0 })?;

    let kmax = f_o.max_mode().max(g1.max_mode()).max(g2.max_mode());
    let mut cos = vec![ModeCoefficients {
        mu_o: x0[0],
        mu_i: x0[1],
        eta_i: x0[2],
    }];
    let mut sin = vec![ModeCoefficients::default()];
    for k in 1..=kmax {
        let c = [f_o.cos_coeff(k), g1.cos_coeff(k), g2.cos_coeff(k)];
        let s = [f_o.sin_coeff(k), g1.sin_coeff(k), g2.sin_coeff(k)];
        cos.push(mode_system(k, ri, ro, a, c)?);
        sin.push(mode_system(k, ri, ro, a, s)?);
    }
    Ok(ConcentricSolution {
        r_inner,
        r_outer,
        cos,
        sin,
        rho_o: x0[3],
        rho_i: x0[4],
        compatibility_defect: 2.0 * PI * ro * f_o.cos_coeff(0),
    })
}

fn polar(x: Point) -> (f64, f64) {
    (x[0].hypot(x[1]), x[1].atan2(x[0]))
}

impl ConcentricSolution {
    fn modes(&self) -> impl Iterator<Item = (usize, &ModeCoefficients, &ModeCoefficients)> {
        self.cos
            .iter()
            .zip(&self.sin)
            .enumerate()
            .map(|(k, (c, s))| (k, c, s))
    }

    /// Densities sampled at `θ_j = 2πj/N` on both circles.
    pub fn density_set(&self, n_outer: usize, n_inner: usize) -> DensitySet {
        let sample = |n: usize, pick: fn(&ModeCoefficients) -> f64| -> Vec<f64> {
            (0..n)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / n as f64;
                    self.modes()
                        .map(|(k, c, s)| {
                            let kt = k as f64 * t;
                            pick(c) * kt.cos() + pick(s) * kt.sin()
                        })
                        .sum()
                })
                .collect()
        };
        DensitySet {
            mu_o: sample(n_outer, |m| m.mu_o),
            mu_i: sample(n_inner, |m| m.mu_i),
            eta_i: sample(n_inner, |m| m.eta_i),
            rho_o: self.rho_o,
            rho_i: self.rho_i,
        }
    }

    /// `u^o` for `r_inner < |x| < r_outer`.
    pub fn u_o(&self, x: Point) -> Result<f64> {
        let (r, th) = polar(x);
        if !(r > self.r_inner && r < self.r_outer) {
            return Err(Error::Domain(format!(
                "u_o is defined in the annulus; |x| = {r} is outside"
            )));
        }
        let (ri, ro) = (self.r_inner, self.r_outer);
        let mut u = self.rho_o + ro * ro.ln() * self.cos[0].mu_o + ri * r.ln() * self.cos[0].mu_i;
        for (k, c, s) in self.modes().skip(1) {
            let kf = k as f64;
            let fo = -(ro / (2.0 * kf)) * (r / ro).powi(k as i32);
            let fi = -(ri / (2.0 * kf)) * (ri / r).powi(k as i32);
            let (ck, sk) = ((kf * th).cos(), (kf * th).sin());
            u += (fo * c.mu_o + fi * c.mu_i) * ck + (fo * s.mu_o + fi * s.mu_i) * sk;
        }
        Ok(u)
    }

    /// `u^i` for `|x| < r_inner`.
    pub fn u_i(&self, x: Point) -> Result<f64> {
        let (r, th) = polar(x);
        if !(r < self.r_inner) {
            return Err(Error::Domain(format!(
                "u_i is defined inside the inner circle; |x| = {r} is outside"
            )));
        }
        let ri = self.r_inner;
        let mut u = self.rho_i + ri * ri.ln() * self.cos[0].eta_i;
        for (k, c, s) in self.modes().skip(1) {
            let kf = k as f64;
            let f = -(ri / (2.0 * kf)) * (r / ri).powi(k as i32);
            u += f * (c.eta_i * (kf * th).cos() + s.eta_i * (kf * th).sin());
        }
        Ok(u)
    }
}

/// |mean of `field` over `samples` equispaced points of the circle − value at the centre|.
pub fn mean_value_check(
    field: impl Fn(Point) -> Result<f64>,
    center: Point,
    radius: f64,
    samples: usize,
) -> Result<f64> {
    if samples == 0 || !(radius > 0.0) {
        return Err(Error::Domain(
            "mean value check needs samples > 0 and radius > 0".into(),
        ));
    }
    let mut acc = 0.0;
    for j in 0..samples {
        let t = 2.0 * PI * j as f64 / samples as f64;
        acc += field([center[0] + radius * t.cos(), center[1] + radius * t.sin()])?;
    }
    Ok((acc / samples as f64 - field(center)?).abs())
}

/// An exactly solvable affine transmission problem on the circles of radii 1 and 2.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub data: TransmissionData,
    pub r_inner: f64,
    pub r_outer: f64,
    /// `A` with `F(x, z) = A z + g(x)`.
    pub a: [[f64; 2]; 2],
    pub solution: ConcentricSolution,
}

impl ManufacturedCase {
    /// `u^o(x) = x₁ + x₁/|x|²`.
    pub fn exact_u_o(x: Point) -> f64 {
        x[0] + x[0] / (x[0] * x[0] + x[1] * x[1])
    }

    /// `u^i(x) = x₁`.
    pub fn exact_u_i(x: Point) -> f64 {
        x[0]
    }
}

/// Builds the fixture from the exact pair
/// `u^o = x₁ + x₁/|x|²`, `u^i = x₁`.
///
/// On `|x| = 2`, `∂_r u^o = ¾ cos θ`. On `|x| = 1`, `u^o = 2x₁`,
/// `∂_r u^o = 0`, `u^i = ∂_r u^i = x₁`, so `F₁ = z₁ - 2x₁` and
/// `F₂ = -z₂ + 2x₁` hold identically with `A = ((1, 0), (0, -1))`.
pub fn manufactured_affine_case() -> ManufacturedCase {
    let data = TransmissionData::new("z1 - 2*x1", "-z2 + 2*x1", ["1", "0", "0", "-1"], "0.375*x1")
        .expect("fixture expressions are valid");
    let a = [[1.0, 0.0], [0.0, -1.0]];
    let solution = concentric_linear_solve(
        1.0,
        2.0,
        a,
        &FourierSeries::cosine(1, 0.75),
        &FourierSeries::cosine(1, -2.0),
        &FourierSeries::cosine(1, 2.0),
    )
    .expect("fixture modes are regular");
    ManufacturedCase {
        data,
        r_inner: 1.0,
        r_outer: 2.0,
        a,
        solution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v_eigenvalues() {
        assert_eq!(fourier_v_eigenvalue(1.0, 0), 0.0);
        assert_eq!(fourier_v_eigenvalue(1.0, 1), -0.5);
        assert_eq!(fourier_v_eigenvalue(1.0, -1), -0.5);
        assert!((fourier_v_eigenvalue(2.0, 0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((circle_wstar_value(1.0, 2.0 * PI) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn gauss_handles_pivoting_and_singularity() {
        let x = gauss_solve([[0.0, 1.0], [2.0, 0.0]], [3.0, 4.0]).unwrap();
        assert_eq!(x, [2.0, 3.0]);
        assert!(gauss_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_none());
    }

    #[test]
    fn zero_data_zero_solution() {
        let z = FourierSeries::zero();
        let s = concentric_linear_solve(1.0, 2.0, [[1.0, 0.0], [0.0, -1.0]], &z, &z, &z).unwrap();
        assert_eq!(s.density_set(8, 8).norm_inf(), 0.0);
        assert_eq!(s.compatibility_defect, 0.0);
    }

    #[test]
    fn constant_datum_reports_defect() {
        let z = FourierSeries::zero();
        let s = concentric_linear_solve(
            1.0,
            2.0,
            [[1.0, 0.0], [0.0, -1.0]],
            &FourierSeries::constant(0.5),
            &z,
            &z,
        )
        .unwrap();
        assert!((s.compatibility_defect - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn degenerate_a_is_singular_at_mode_zero() {
        let z = FourierSeries::zero();
        let err = concentric_linear_solve(1.0, 2.0, [[0.0; 2]; 2], &z, &z, &z).unwrap_err();
        assert!(matches!(err, Error::OracleSingular { mode: 0 }));
    }

    #[test]
    fn manufactured_densities_are_closed_form() {
        let case = manufactured_affine_case();
        let s = &case.solution;
        for m in [s.cos[1].mu_o, s.cos[1].mu_i, s.cos[1].eta_i] {
            assert!((m + 2.0).abs() < 1e-14, "{m}");
        }
        assert!(s.rho_o.abs() < 1e-15 && s.rho_i.abs() < 1e-15);
        for p in [[1.5, 0.0], [0.3, -1.4], [-1.1, 0.9]] {
            let e = ManufacturedCase::exact_u_o(p);
            assert!((s.u_o(p).unwrap() - e).abs() < 1e-14);
        }
        for p in [[0.5, 0.0], [-0.2, 0.7]] {
            assert!((s.u_i(p).unwrap() - ManufacturedCase::exact_u_i(p)).abs() < 1e-15);
        }
    }

    #[test]
    fn manufactured_pair_is_harmonic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let r = rng.random_range(1.3..1.7);
            let t = rng.random_range(0.0..2.0 * PI);
            let c = [r * t.cos(), r * t.sin()];
            let res = mean_value_check(|x| Ok(ManufacturedCase::exact_u_o(x)), c, 0.2, 64).unwrap();
            assert!(res <= 1e-12);
        }
    }

    #[test]
    fn mean_value_examples() {
        assert_eq!(
            mean_value_check(|_| Ok(5.0), [0.3, 0.1], 0.5, 16).unwrap(),
            0.0
        );
        let h = mean_value_check(|x| Ok(x[0] * x[0] - x[1] * x[1]), [0.3, -0.2], 0.7, 64).unwrap();
        assert!(h <= 1e-14);
        let r = 0.4;
        let nh = mean_value_check(|x| Ok(x[0] * x[0]), [1.0, 2.0], r, 64).unwrap();
        assert!((nh - r * r / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sine_modes_rotate_cosine_modes() {
        let a = [[2.0, 0.5], [-0.5, -1.0]];
        let z = FourierSeries::zero();
        let c =
            concentric_linear_solve(0.7, 1.9, a, &FourierSeries::cosine(3, 1.0), &z, &z).unwrap();
        let s = concentric_linear_solve(0.7, 1.9, a, &FourierSeries::sine(3, 1.0), &z, &z).unwrap();
        assert_eq!(c.cos[3], s.sin[3]);
        // a quarter turn of the k = 3 mode maps cos to sin
        let p = [1.2f64, 0.4];
        let th = PI / 6.0;
        let q = [
            p[0] * th.cos() - p[1] * th.sin(),
            p[0] * th.sin() + p[1] * th.cos(),
        ];
        assert!((c.u_o(p).unwrap() - s.u_o(q).unwrap()).abs() < 1e-14);
    }
}
