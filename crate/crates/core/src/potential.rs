//! Moutard potentials.
//!
//! For `Phi` solving `dbar Phi + B conj(Phi) = 0` and `Phi+` solving
//! `dz Phi+ - conj(Phi+) B = 0`, the matrix 1-form
//!
//! ```text
//! d omega = -conj(Phi+) Phi dz + Phi+ conj(Phi) dzbar
//! ```
//!
//! is closed, and on a simply connected domain it integrates to a potential
//! that is unique up to a constant. Choosing that constant pure imaginary
//! makes `omega` skew-real (`omega + conj(omega) = 0` entrywise).
//!
//! [`omega`] integrates the form along grid lines with the composite
//! trapezoid rule. [`omega_hat`] builds the companion potential
//! `dbar omega_hat = F+ Phi` from the Pompeiu operator; it carries no
//! reality condition.

use std::io::Write;

use num_complex::Complex64;

use crate::cauchy::{pompeiu_t, PompeiuPlan};
use crate::error::{Error, Result};
use crate::grid::{dbar, dz, fmt_g17, norms, write_mfield, Grid, MatrixField, StencilMask};

/// Constant matrix (row-major) used as `omega` at the basepoint.
pub type ConstantMatrix = Vec<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaOptions {
    /// Node index `(i, j)` where `omega` equals `c0`.
    pub basepoint: (usize, usize),
    /// Pure imaginary `N x N` constant.
    pub c0: ConstantMatrix,
    /// When set, the integrability defect of the inputs is measured and a
    /// warning attached if it exceeds `100 * tol`.
    pub consistency_tol: Option<f64>,
}

impl OmegaOptions {
    /// Basepoint at the grid center and `c0 = i c I`.
    pub fn centered(grid: &Grid, n: usize, c: f64) -> Self {
        OmegaOptions {
            basepoint: grid.center_node(),
            c0: imaginary_identity(n, c),
            consistency_tol: None,
        }
    }
}

/// `i c I` as a row-major matrix.
pub fn imaginary_identity(n: usize, c: f64) -> ConstantMatrix {
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for d in 0..n {
        m[d * n + d] = Complex64::new(0.0, c);
    }
    m
}

#[derive(Debug, Clone)]
pub struct PotentialField {
    /// Skew-real potential (after projection).
    pub omega: MatrixField,
    /// Largest entrywise `|Re omega|` before projection.
    pub skew_real_defect: f64,
    /// Largest nodewise Frobenius gap between the horizontal-first and the
    /// vertical-first integration paths.
    pub path_defect: f64,
    pub c0: ConstantMatrix,
    pub basepoint: (usize, usize),
    pub warnings: Vec<String>,
}

/// Potential of the closed form built from `phi` and `phi_plus`.
///
/// Integrates from the basepoint along the row, then up or down the column
/// (the canonical path); the column-first path is computed only to fill
/// `path_defect`.
pub fn omega(phi: &MatrixField, phi_plus: &MatrixField, opts: &OmegaOptions) -> Result<PotentialField> {
    phi.ensure_compatible(phi_plus, "omega Phi/Phi+")?;
    let grid = *phi.grid();
    let n = phi.n();
    if opts.c0.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: opts.c0.len(),
            context: "omega basepoint constant".into(),
        });
    }
    if opts.c0.iter().any(|c| c.re != 0.0) {
        return Err(Error::Config("omega basepoint constant must be pure imaginary".into()));
    }
    let (i0, j0) = opts.basepoint;
    if i0 >= grid.nx || j0 >= grid.ny {
        return Err(Error::Config(format!(
            "basepoint ({i0}, {j0}) outside the {}x{} grid",
            grid.nx, grid.ny
        )));
    }

    // dbar omega = Phi+ conj(Phi), dz omega = -conj(Phi+) Phi
    let w_bar = phi_plus.matmul(&phi.conj())?;
    let w_z = phi_plus.conj().matmul(phi)?.scale(Complex64::new(-1.0, 0.0));
    // d/dx = dz + dbar, d/dy = i (dz - dbar)
    let px = w_z.add(&w_bar)?;
    let py = w_z.sub(&w_bar)?.scale(Complex64::new(0.0, 1.0));

    let row_first = integrate(&grid, n, &px, &py, (i0, j0), &opts.c0, Order::RowFirst);
    let col_first = integrate(&grid, n, &px, &py, (i0, j0), &opts.c0, Order::ColumnFirst);

    let path_defect = row_first.sub(&col_first)?.sup_norm();
    let skew_real_defect = row_first.data().iter().map(|c| c.re.abs()).fold(0.0, f64::max);

    let mut warnings = Vec::new();
    if let Some(tol) = opts.consistency_tol {
        let defect = integrability_defect(phi, phi_plus)?;
        if defect > 100.0 * tol {
            warnings.push(format!(
                "integrability defect {defect:.3e} exceeds 100 x tol ({tol:.1e}); inputs are not a solution pair and omega depends on the path"
            ));
        }
    }

    Ok(PotentialField {
        omega: row_first.skew_real_part(),
        skew_real_defect,
        path_defect,
        c0: opts.c0.clone(),
        basepoint: (i0, j0),
        warnings,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Order {
    RowFirst,
    ColumnFirst,
}

fn integrate(
    grid: &Grid,
    n: usize,
    px: &MatrixField,
    py: &MatrixField,
    (i0, j0): (usize, usize),
    c0: &[Complex64],
    order: Order,
) -> MatrixField {
    let nn = n * n;
    let mut out = MatrixField::zeros(*grid, n);
    let idx = |i: usize, j: usize| grid.index(i, j);
    let data_x = px.data();
    let data_y = py.data();

    // Trapezoid step from node a to its neighbour b.
    let step = |out: &mut MatrixField, from: usize, to: usize, deriv: &[Complex64], h: f64| {
        for e in 0..nn {
            let v = out.data()[from * nn + e] + (deriv[from * nn + e] + deriv[to * nn + e]) * (0.5 * h);
            out.data_mut()[to * nn + e] = v;
        }
    };

    out.at_mut(idx(i0, j0)).copy_from_slice(c0);
    match order {
        Order::RowFirst => {
            for i in (i0 + 1)..grid.nx {
                step(&mut out, idx(i - 1, j0), idx(i, j0), data_x, grid.hx);
            }
            for i in (0..i0).rev() {
                step(&mut out, idx(i + 1, j0), idx(i, j0), data_x, -grid.hx);
            }
            for i in 0..grid.nx {
                for j in (j0 + 1)..grid.ny {
                    step(&mut out, idx(i, j - 1), idx(i, j), data_y, grid.hy);
                }
                for j in (0..j0).rev() {
                    step(&mut out, idx(i, j + 1), idx(i, j), data_y, -grid.hy);
                }
            }
        }
        Order::ColumnFirst => {
            for j in (j0 + 1)..grid.ny {
                step(&mut out, idx(i0, j - 1), idx(i0, j), data_y, grid.hy);
            }
            for j in (0..j0).rev() {
                step(&mut out, idx(i0, j + 1), idx(i0, j), data_y, -grid.hy);
            }
            for j in 0..grid.ny {
                for i in (i0 + 1)..grid.nx {
                    step(&mut out, idx(i - 1, j), idx(i, j), data_x, grid.hx);
                }
                for i in (0..i0).rev() {
                    step(&mut out, idx(i + 1, j), idx(i, j), data_x, -grid.hx);
                }
            }
        }
    }
    out
}

/// MFIELD dump of `omega` followed by `DEFECTS skew=<g> path=<g>`.
pub fn write_potential<W: Write>(p: &PotentialField, mut w: W) -> Result<()> {
    write_mfield(&p.omega, &mut w)?;
    writeln!(
        w,
        "DEFECTS skew={} path={}",
        fmt_g17(p.skew_real_defect),
        fmt_g17(p.path_defect)
    )?;
    Ok(())
}

/// `dbar omega_hat = F+ Phi`, represented by `T(F+ Phi)`.
pub fn omega_hat(phi: &MatrixField, f_plus: &MatrixField, plan: &PompeiuPlan) -> Result<MatrixField> {
    phi.ensure_compatible(f_plus, "omega_hat Phi/F+")?;
    Ok(pompeiu_t(&f_plus.matmul(phi)?, plan))
}

/// `sup |dz(Phi+ conj Phi) + dbar(conj(Phi+) Phi)|` over the interior.
///
/// Vanishes for a solution pair; it is the closedness condition of the
/// form integrated by [`omega`].
pub fn integrability_defect(phi: &MatrixField, phi_plus: &MatrixField) -> Result<f64> {
    phi.ensure_compatible(phi_plus, "integrability Phi/Phi+")?;
    let a = dz(&phi_plus.matmul(&phi.conj())?);
    let b = dbar(&phi_plus.conj().matmul(phi)?);
    let region = StencilMask::new(a.undefined_margin());
    Ok(norms(&a.add(&b)?, &region)?.sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::{PompeiuMode, SingularCellRule};
    use crate::grid::make_grid;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn square(n: usize) -> Grid {
        make_grid(-1.0, 1.0, -1.0, 1.0, n, n).unwrap()
    }

    fn scalar(g: Grid, f: impl Fn(Complex64) -> Complex64 + Sync) -> MatrixField {
        MatrixField::scalar_fn(g, 1, f)
    }

    #[test]
    fn constant_pair_is_exact() {
        let g = square(17);
        let one = MatrixField::identity(g, 1);
        let opts = OmegaOptions {
            basepoint: (3, 11),
            c0: vec![c(0.0, 0.0)],
            consistency_tol: Some(1e-10),
        };
        let p = omega(&one, &one, &opts).unwrap();
        let z0 = g.node(3, 11);
        for k in 0..g.len() {
            let z = g.node_at(k);
            let want = (z.conj() - z) - (z0.conj() - z0);
            assert!((p.omega.at(k)[0] - want).norm() < 1e-14);
        }
        assert!(p.path_defect < 1e-14);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn linear_phi_matches_antiderivative() {
        // omega = (zbar^2 - z^2)/2 up to the basepoint constant
        let g = square(33);
        let phi = scalar(g, |z| z);
        let one = MatrixField::identity(g, 1);
        let opts = OmegaOptions::centered(&g, 1, 0.0);
        let p = omega(&phi, &one, &opts).unwrap();
        let err = (0..g.len())
            .map(|k| {
                let z = g.node_at(k);
                (p.omega.at(k)[0] - (z.conj().powi(2) - z.powi(2)) * 0.5).norm()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn zero_phi_gives_constant() {
        let g = square(17);
        let zero = MatrixField::zeros(g, 2);
        let plus = MatrixField::scalar_fn(g, 2, |z| z.conj());
        let opts = OmegaOptions::centered(&g, 2, 4.0);
        let p = omega(&zero, &plus, &opts).unwrap();
        assert_eq!(p.omega, MatrixField::constant(g, 2, &imaginary_identity(2, 4.0)));
    }

    #[test]
    fn rejects_real_constant() {
        let g = square(17);
        let one = MatrixField::identity(g, 1);
        let opts = OmegaOptions {
            basepoint: (0, 0),
            c0: vec![c(1.0, 1.0)],
            consistency_tol: None,
        };
        assert!(matches!(omega(&one, &one, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn warns_on_non_solutions() {
        let g = square(17);
        let one = MatrixField::identity(g, 1);
        let zp = scalar(g, |z| z);
        let mut opts = OmegaOptions::centered(&g, 1, 0.0);
        opts.consistency_tol = Some(1e-10);
        let p = omega(&one, &zp, &opts).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert!(p.path_defect > 1.0);
    }

    #[test]
    fn cubic_pair_path_defect_is_second_order() {
        let defect = |n: usize| {
            let g = square(n);
            let phi = scalar(g, |z| z.powi(3));
            let one = MatrixField::identity(g, 1);
            omega(&phi, &one, &OmegaOptions::centered(&g, 1, 1.0))
                .unwrap()
                .path_defect
        };
        let order = (defect(17) / defect(33)).log2();
        assert!((order - 2.0).abs() < 0.05, "{order}");
    }

    #[test]
    fn projection_is_idempotent() {
        let g = square(17);
        let phi = scalar(g, |z| z.exp());
        let plus = scalar(g, |z| z.conj() + 2.0);
        let p = omega(&phi, &plus, &OmegaOptions::centered(&g, 1, 1.0)).unwrap();
        assert_eq!(p.omega.skew_real_part(), p.omega);
        let sum = p.omega.add(&p.omega.conj()).unwrap();
        assert_eq!(sum.sup_norm(), 0.0);
    }

    #[test]
    fn basepoint_moves_by_a_constant() {
        let g = square(33);
        let phi = scalar(g, |z| z.powi(3) + z.exp());
        let plus = scalar(g, |z| z.conj().powi(2) + 1.0);
        let a = omega(&phi, &plus, &OmegaOptions::centered(&g, 1, 0.0)).unwrap();
        let mut o = OmegaOptions::centered(&g, 1, 0.0);
        o.basepoint = (5, 27);
        let b = omega(&phi, &plus, &o).unwrap();
        let diff = a.omega.sub(&b.omega).unwrap();
        let base = diff.at(0)[0];
        let spread = (0..g.len()).map(|k| (diff.at(k)[0] - base).norm()).fold(0.0, f64::max);
        assert!(spread <= 2.0 * a.path_defect.max(b.path_defect), "{spread}");
    }

    #[test]
    fn path_defect_bounded_by_integrability() {
        // Non-solution pair whose integrands are linear along grid lines, so
        // the trapezoid rule is exact and the path gap is pure curl.
        let g = square(17);
        let one = MatrixField::identity(g, 1);
        let zp = scalar(g, |z| z);
        let p = omega(&one, &zp, &OmegaOptions::centered(&g, 1, 0.0)).unwrap();
        let integ = integrability_defect(&one, &zp).unwrap();
        assert!((integ - 2.0).abs() < 1e-12);
        assert!(p.path_defect <= 2.0 * integ * g.area());
        // Exact pair with linear integrands: both vanish.
        let phi = scalar(g, |z| z);
        let zb = scalar(g, |z| z.conj());
        let q = omega(&phi, &zb, &OmegaOptions::centered(&g, 1, 0.0)).unwrap();
        let integ = integrability_defect(&phi, &zb).unwrap();
        assert!(integ < 1e-12);
        assert!(q.path_defect <= 2.0 * integ * g.area() + 1e-13);
    }

    #[test]
    fn integrability_of_simple_pairs() {
        let g = square(17);
        let zero = MatrixField::zeros(g, 2);
        assert_eq!(integrability_defect(&zero, &zero).unwrap(), 0.0);
        let one = MatrixField::identity(g, 1);
        assert!(integrability_defect(&one, &one).unwrap() <= 1e-12);
    }

    #[test]
    fn omega_hat_cases() {
        let g = square(17);
        let plan = PompeiuPlan::new(g, PompeiuMode::FastConvolution, SingularCellRule::Zero);
        let zero = MatrixField::zeros(g, 2);
        let phi = MatrixField::scalar_fn(g, 2, |z| z.exp());
        assert_eq!(omega_hat(&phi, &zero, &plan).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn dump_has_defects_line() {
        let g = square(9);
        let one = MatrixField::identity(g, 1);
        let p = omega(&one, &one, &OmegaOptions::centered(&g, 1, 1.0)).unwrap();
        let mut buf = Vec::new();
        write_potential(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().last().unwrap(), "DEFECTS skew=0 path=0");
        let back = crate::grid::read_mfield(text.as_bytes()).unwrap();
        assert_eq!(back, p.omega);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn additive_in_phi(
            a in -1.0f64..1.0, b in -1.0f64..1.0, cc in -1.0f64..1.0,
            c1 in -2.0f64..2.0, c2 in -2.0f64..2.0,
        ) {
            let g = square(13);
            let phi1 = scalar(g, move |z| z * c(a, b));
            let phi2 = scalar(g, move |z| (z * cc).exp());
            let plus = scalar(g, |z| z.conj() * 0.5 + 1.0);
            let o = |c0: f64| OmegaOptions::centered(&g, 1, c0);
            let sum = omega(&phi1.add(&phi2).unwrap(), &plus, &o(c1 + c2)).unwrap();
            let w1 = omega(&phi1, &plus, &o(c1)).unwrap();
            let w2 = omega(&phi2, &plus, &o(c2)).unwrap();
            let gap = sum.omega.sub(&w1.omega.add(&w2.omega).unwrap()).unwrap().sup_norm();
            prop_assert!(gap < 1e-12);
        }
    }
}
