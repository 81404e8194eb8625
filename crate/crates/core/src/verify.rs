//! Residuals of the four coefficient systems, and refinement studies.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dbar, dz, fmt_g17, norms, MatrixField, StencilMask};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    /// `dbar Psi + A Psi + B conj(Psi) = 0`
    Sys1,
    /// `dbar Psi + B conj(Psi) = 0`
    Sys2,
    /// `dz Psi+ - conj(Psi+) B = 0`
    Sys3,
    /// `dbar Psi + A Psi = 0`
    Sys6,
}

impl SystemId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemId::Sys1 => "sys1",
            SystemId::Sys2 => "sys2",
            SystemId::Sys3 => "sys3",
            SystemId::Sys6 => "sys6",
        }
    }
}

/// Field arguments for [`residual`], one variant per system.
#[derive(Debug, Clone, Copy)]
pub enum SystemFields<'a> {
    Sys1 {
        a: &'a MatrixField,
        b: &'a MatrixField,
        psi: &'a MatrixField,
    },
    Sys2 {
        b: &'a MatrixField,
        psi: &'a MatrixField,
    },
    Sys3 {
        b: &'a MatrixField,
        psi_plus: &'a MatrixField,
    },
    Sys6 {
        a: &'a MatrixField,
        psi: &'a MatrixField,
    },
}

impl SystemFields<'_> {
    pub fn id(&self) -> SystemId {
        match self {
            SystemFields::Sys1 { .. } => SystemId::Sys1,
            SystemFields::Sys2 { .. } => SystemId::Sys2,
            SystemFields::Sys3 { .. } => SystemId::Sys3,
            SystemFields::Sys6 { .. } => SystemId::Sys6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub system: SystemId,
    pub sup: f64,
    pub l2: f64,
    pub region: StencilMask,
}

/// The left-hand side of the chosen system, nodewise.
pub fn residual_field(fields: SystemFields<'_>) -> Result<MatrixField> {
    match fields {
        SystemFields::Sys1 { a, b, psi } => {
            a.ensure_compatible(psi, "sys1 A/Psi")?;
            b.ensure_compatible(psi, "sys1 B/Psi")?;
            dbar(psi).add(&a.matmul(psi)?)?.add(&b.matmul(&psi.conj())?)
        }
        SystemFields::Sys2 { b, psi } => {
            b.ensure_compatible(psi, "sys2 B/Psi")?;
            dbar(psi).add(&b.matmul(&psi.conj())?)
        }
        SystemFields::Sys3 { b, psi_plus } => {
            b.ensure_compatible(psi_plus, "sys3 B/Psi+")?;
            dz(psi_plus).sub(&psi_plus.conj().matmul(b)?)
        }
        SystemFields::Sys6 { a, psi } => {
            a.ensure_compatible(psi, "sys6 A/Psi")?;
            dbar(psi).add(&a.matmul(psi)?)
        }
    }
}

/// Interior norms of the system's left-hand side.
pub fn residual(fields: SystemFields<'_>, region: StencilMask) -> Result<ResidualReport> {
    let lhs = residual_field(fields)?;
    let nrm = norms(&lhs, &region)?;
    Ok(ResidualReport {
        system: fields.id(),
        sup: nrm.sup,
        l2: nrm.l2,
        region,
    })
}

/// One level of a refinement study for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub metric: String,
    pub n: usize,
    pub h: f64,
    pub value: f64,
    /// `log(v_prev / v) / log(h_prev / h)`, from the second level on.
    pub order_est: Option<f64>,
}

/// Empirical order between two levels; `None` unless both values are
/// positive and finite.
pub fn order_between(h_coarse: f64, v_coarse: f64, h_fine: f64, v_fine: f64) -> Option<f64> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if ok(v_coarse) && ok(v_fine) && h_coarse > h_fine {
        Some((v_coarse / v_fine).ln() / (h_coarse / h_fine).ln())
    } else {
        None
    }
}

/// Attach order estimates to a sequence of `(n, h, value)` levels.
pub fn rows_with_orders(metric: &str, levels: &[(usize, f64, f64)]) -> Vec<ConvergenceRow> {
    levels
        .iter()
        .enumerate()
        .map(|(k, &(n, h, value))| ConvergenceRow {
            metric: metric.to_string(),
            n,
            h,
            value,
            order_est: if k == 0 {
                None
            } else {
                let (_, hp, vp) = levels[k - 1];
                order_between(hp, vp, h, value)
            },
        })
        .collect()
}

/// Aligned refinement: at least two sizes, each odd, `n_{k+1} = 2 n_k - 1`.
pub fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a convergence study needs at least 2 grid sizes, got {}",
            sizes.len()
        )));
    }
    for w in sizes.windows(2) {
        if w[1] != 2 * w[0] - 1 {
            return Err(Error::Config(format!(
                "grid sizes must refine as n -> 2n - 1, got {} -> {}",
                w[0], w[1]
            )));
        }
    }
    if sizes.iter().any(|n| n % 2 == 0) {
        return Err(Error::Config("grid sizes must be odd".into()));
    }
    Ok(())
}

/// Run the scenario's pipeline at every size and collect one row per
/// (metric, size), with order estimates.
pub fn convergence_study(scenario: &Scenario, sizes: &[usize]) -> Result<Vec<ConvergenceRow>> {
    check_sizes(sizes)?;
    let levels = scenario.run_levels(sizes)?;
    Ok(crate::scenario::study_rows(&levels))
}

/// `scenario,n,h,metric,value,order_est`; empty `order_est` where undefined.
pub fn write_convergence_csv<W: Write>(scenario: &str, rows: &[ConvergenceRow], mut w: W) -> Result<()> {
    writeln!(w, "scenario,n,h,metric,value,order_est")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            scenario,
            r.n,
            fmt_g17(r.h),
            r.metric,
            fmt_g17(r.value),
            r.order_est.map(fmt_g17).unwrap_or_default()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Grid};
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn g(n: usize) -> Grid {
        make_grid(-1.0, 1.0, -1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn stencil_exact_systems() {
        let grid = g(17);
        let zero = MatrixField::zeros(grid, 1);
        let z3 = MatrixField::scalar_fn(grid, 1, |z| z.powi(3));
        let r = residual(SystemFields::Sys2 { b: &zero, psi: &z3 }, StencilMask::new(2)).unwrap();
        assert!(r.sup <= 1e-12 && r.system == SystemId::Sys2);
        let zb2 = MatrixField::scalar_fn(grid, 1, |z| z.conj().powi(2));
        let r = residual(
            SystemFields::Sys3 {
                b: &zero,
                psi_plus: &zb2,
            },
            StencilMask::new(2),
        )
        .unwrap();
        assert!(r.sup <= 1e-12);
    }

    #[test]
    fn sys6_exponential_is_fourth_order() {
        let a = 0.7;
        let err = |n: usize| {
            let grid = g(n);
            let af = MatrixField::scalar_fn(grid, 1, |_| c(a, 0.0));
            let psi = MatrixField::scalar_fn(grid, 1, |z| (-z.conj() * a).exp());
            residual(SystemFields::Sys6 { a: &af, psi: &psi }, StencilMask::new(2))
                .unwrap()
                .sup
        };
        let (e1, e2) = (err(17), err(33));
        assert!(e1 < 1e-4);
        let order = (e1 / e2).log2();
        assert!((3.2..=4.8).contains(&order), "order {order}");
    }

    #[test]
    fn homogeneous_in_scaling() {
        let grid = g(17);
        let b = MatrixField::scalar_fn(grid, 2, |z| c(0.1, 0.0) * z);
        let a = MatrixField::scalar_fn(grid, 2, |z| c(0.0, 0.2) + z.conj());
        let psi = MatrixField::from_fn(grid, 2, |z, m| {
            m[0] = z.exp();
            m[1] = z.conj();
            m[2] = c(1.0, 1.0);
            m[3] = z * z.conj();
        });
        let base = residual(
            SystemFields::Sys1 {
                a: &a,
                b: &b,
                psi: &psi,
            },
            StencilMask::new(2),
        )
        .unwrap();
        // Sys1 is real-linear: scale by a real factor.
        let s = -3.5;
        let scaled = psi.scale(c(s, 0.0));
        let r = residual(
            SystemFields::Sys1 {
                a: &a,
                b: &b,
                psi: &scaled,
            },
            StencilMask::new(2),
        )
        .unwrap();
        assert!((r.sup - s.abs() * base.sup).abs() <= 1e-12 * r.sup);
        // Sys6 is complex-linear.
        let base6 = residual(SystemFields::Sys6 { a: &a, psi: &psi }, StencilMask::new(2)).unwrap();
        let alpha = c(0.6, -0.8) * 2.0;
        let r6 = residual(
            SystemFields::Sys6 {
                a: &a,
                psi: &psi.scale(alpha),
            },
            StencilMask::new(2),
        )
        .unwrap();
        assert!((r6.sup - alpha.norm() * base6.sup).abs() <= 1e-12 * r6.sup);
    }

    #[test]
    fn arity_and_grid_checks() {
        let a = MatrixField::zeros(g(17), 1);
        let b = MatrixField::zeros(g(19), 1);
        assert!(residual(SystemFields::Sys6 { a: &a, psi: &b }, StencilMask::new(2)).is_err());
    }

    #[test]
    fn size_checks() {
        assert!(check_sizes(&[65]).is_err());
        assert!(check_sizes(&[65, 128]).is_err());
        assert!(check_sizes(&[64, 127]).is_err());
        assert!(check_sizes(&[65, 129, 257]).is_ok());
    }

    #[test]
    fn orders() {
        let rows = rows_with_orders("m", &[(9, 0.25, 1.0), (17, 0.125, 0.25), (33, 0.0625, 0.0)]);
        assert_eq!(rows[0].order_est, None);
        assert!((rows[1].order_est.unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(rows[2].order_est, None);
        let mut buf = Vec::new();
        write_convergence_csv("s", &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "scenario,n,h,metric,value,order_est\ns,9,0.25,m,1,\ns,17,0.125,m,0.25,2\ns,33,0.0625,m,0,\n"
        );
    }
}
