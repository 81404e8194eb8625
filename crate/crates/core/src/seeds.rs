//! Neumann (Picard) iteration for concrete solutions of the coefficient
//! systems, the gauge factor `g` and the auxiliary field `Lambda`.
//!
//! Every solver is a fixed-point iteration `X <- Phi(X)` whose map is built
//! from the Pompeiu operators:
//!
//! | target                             | map                                 |
//! |------------------------------------|-------------------------------------|
//! | `dbar Psi + A Psi + B conj Psi = 0`| `Psi = H - T(A Psi + B conj Psi)`   |
//! | `dbar Psi + B conj Psi = 0`        | `Psi = H - T(B conj Psi)`           |
//! | `dz Psi+ - conj(Psi+) B = 0`       | `Psi+ = H+ + Tbar(conj(Psi+) B)`    |
//! | `dbar g + A g = 0`                 | `g = I - T(A g)`                    |
//! | `dbar Lambda = Lambda A + F+`      | `Lambda = T(Lambda A + F+)`         |
//!
//! The residual recorded per iteration is the fixed-point defect
//! `sup |Phi(X_k) - X_k|`; the PDE residual of the returned field is
//! limited by the discretization and reported separately.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cauchy::{pompeiu_t, pompeiu_tbar, PompeiuPlan};
use crate::error::{Error, Result};
use crate::grid::{dbar, dz, fmt_g17, inverse_field, norms, InvertibilityReport, MatrixField, StencilMask};
use crate::verify::{residual, SystemFields};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationSettings {
    /// Target for the sup-norm fixed-point defect.
    pub tol: f64,
    pub max_iter: usize,
    /// Refuse to iterate when the a-priori contraction estimate reaches this.
    pub contraction_guard: f64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        IterationSettings {
            tol: 1e-10,
            max_iter: 60,
            contraction_guard: 0.9,
        }
    }
}

impl IterationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter < 1 || !(self.contraction_guard > 0.0) {
            return Err(Error::Config(format!(
                "iteration settings need tol > 0, max_iter >= 1, guard > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `sup |Phi(X_k) - X_k|`.
    pub residual_sup: f64,
    /// `sup |X_k - X_{k-1}|`, zero for the initial iterate.
    pub delta_sup: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub field: MatrixField,
    pub history: Vec<IterationRecord>,
    /// `|T|_est * sup |coefficient|`.
    pub contraction_estimate: f64,
    /// Residual of the defining PDE on the 3-cell inset interior.
    pub pde_residual: f64,
}

/// The gauge factor together with its invertibility report.
#[derive(Debug, Clone)]
pub struct GaugeOutcome {
    pub solve: SolveOutcome,
    pub invertibility: InvertibilityReport,
}

/// Region used for the PDE residual attached to solver outcomes.
pub const REPORT_REGION: StencilMask = StencilMask {
    margin_x: 3,
    margin_y: 3,
};

/// A-priori bound used by the contraction guard: `2 * diam(D)`.
pub fn pompeiu_norm_estimate(plan: &PompeiuPlan) -> f64 {
    2.0 * plan.grid().diameter()
}

fn check_contraction(coef_sup: f64, plan: &PompeiuPlan, s: &IterationSettings) -> Result<f64> {
    let q = pompeiu_norm_estimate(plan) * coef_sup;
    if q >= s.contraction_guard {
        return Err(Error::NonContraction {
            q,
            guard: s.contraction_guard,
        });
    }
    Ok(q)
}

fn check_analytic(defect_field: &MatrixField, what: &'static str, s: &IterationSettings) -> Result<()> {
    let defect = norms(defect_field, &StencilMask::new(2))?.sup;
    let limit = 10.0 * s.tol;
    if defect > limit {
        return Err(Error::SeedNotAnalytic { what, defect, limit });
    }
    Ok(())
}

fn picard(
    init: MatrixField,
    s: &IterationSettings,
    map: impl Fn(&MatrixField) -> Result<MatrixField>,
) -> Result<(MatrixField, Vec<IterationRecord>)> {
    s.validate()?;
    let mut history = Vec::new();
    let mut cur = init;
    let mut delta = 0.0;
    for iter in 0..=s.max_iter {
        let next = map(&cur)?;
        let residual_sup = next.sub(&cur)?.sup_norm();
        history.push(IterationRecord {
            iter,
            residual_sup,
            delta_sup: delta,
        });
        if residual_sup <= s.tol {
            return Ok((cur, history));
        }
        if !residual_sup.is_finite() {
            break;
        }
        delta = residual_sup;
        cur = next;
    }
    Err(Error::NonConvergence { history })
}

/// `dbar Psi + A Psi + B conj(Psi) = 0` with holomorphic seed `h`.
pub fn solve_system1(
    a: &MatrixField,
    b: &MatrixField,
    h: &MatrixField,
    plan: &PompeiuPlan,
    s: &IterationSettings,
) -> Result<SolveOutcome> {
    a.ensure_compatible(h, "solve_system1 A/H")?;
    b.ensure_compatible(h, "solve_system1 B/H")?;
    check_analytic(&dbar(h), "holomorphic", s)?;
    let q = check_contraction(a.sup_norm() + b.sup_norm(), plan, s)?;
    let (field, history) = picard(h.clone(), s, |psi| {
        let src = a.matmul(psi)?.add(&b.matmul(&psi.conj())?)?;
        h.sub(&pompeiu_t(&src, plan))
    })?;
    let pde = residual(SystemFields::Sys1 { a, b, psi: &field }, REPORT_REGION)?;
    Ok(SolveOutcome {
        field,
        history,
        contraction_estimate: q,
        pde_residual: pde.sup,
    })
}

/// `dbar Psi + B conj(Psi) = 0` with holomorphic seed `h`.
pub fn solve_system2(
    b: &MatrixField,
    h: &MatrixField,
    plan: &PompeiuPlan,
    s: &IterationSettings,
) -> Result<SolveOutcome> {
    b.ensure_compatible(h, "solve_system2 B/H")?;
    check_analytic(&dbar(h), "holomorphic", s)?;
    let q = check_contraction(b.sup_norm(), plan, s)?;
    let (field, history) = picard(h.clone(), s, |psi| h.sub(&pompeiu_t(&b.matmul(&psi.conj())?, plan)))?;
    let pde = residual(SystemFields::Sys2 { b, psi: &field }, REPORT_REGION)?;
    Ok(SolveOutcome {
        field,
        history,
        contraction_estimate: q,
        pde_residual: pde.sup,
    })
}

/// `dz Psi+ - conj(Psi+) B = 0` with antiholomorphic seed `h_plus`.
pub fn solve_system3(
    b: &MatrixField,
    h_plus: &MatrixField,
    plan: &PompeiuPlan,
    s: &IterationSettings,
) -> Result<SolveOutcome> {
    b.ensure_compatible(h_plus, "solve_system3 B/H+")?;
    check_analytic(&dz(h_plus), "antiholomorphic", s)?;
    let q = check_contraction(b.sup_norm(), plan, s)?;
    let (field, history) = picard(h_plus.clone(), s, |pp| {
        h_plus.add(&pompeiu_tbar(&pp.conj().matmul(b)?, plan))
    })?;
    let pde = residual(SystemFields::Sys3 { b, psi_plus: &field }, REPORT_REGION)?;
    Ok(SolveOutcome {
        field,
        history,
        contraction_estimate: q,
        pde_residual: pde.sup,
    })
}

/// Gauge factor: `dbar g + A g = 0`, seeded with the identity.
///
/// Fails with [`Error::Singular`] when `g` is not invertible somewhere
/// (`cond_max` bounds the nodewise condition estimate).
pub fn solve_gauge(a: &MatrixField, plan: &PompeiuPlan, s: &IterationSettings, cond_max: f64) -> Result<GaugeOutcome> {
    let id = MatrixField::identity(*a.grid(), a.n());
    let q = check_contraction(a.sup_norm(), plan, s)?;
    let (field, history) = picard(id.clone(), s, |g| id.sub(&pompeiu_t(&a.matmul(g)?, plan)))?;
    let pde = residual(SystemFields::Sys6 { a, psi: &field }, REPORT_REGION)?;
    let (_, invertibility) = inverse_field(&field, cond_max);
    invertibility.require_clean("gauge factor")?;
    Ok(GaugeOutcome {
        solve: SolveOutcome {
            field,
            history,
            contraction_estimate: q,
            pde_residual: pde.sup,
        },
        invertibility,
    })
}

/// `dbar Lambda = Lambda A + F+`, seeded with `T(F+)`.
pub fn solve_lambda(
    a: &MatrixField,
    f_plus: &MatrixField,
    plan: &PompeiuPlan,
    s: &IterationSettings,
) -> Result<SolveOutcome> {
    a.ensure_compatible(f_plus, "solve_lambda A/F+")?;
    let q = check_contraction(a.sup_norm(), plan, s)?;
    let init = pompeiu_t(f_plus, plan);
    let (field, history) = picard(init, s, |lam| Ok(pompeiu_t(&lam.matmul(a)?.add(f_plus)?, plan)))?;
    let pde = lambda_residual(a, f_plus, &field, REPORT_REGION)?;
    Ok(SolveOutcome {
        field,
        history,
        contraction_estimate: q,
        pde_residual: pde.sup,
    })
}

/// Interior norms of `dbar Lambda - Lambda A - F+`.
pub fn lambda_residual(
    a: &MatrixField,
    f_plus: &MatrixField,
    lambda: &MatrixField,
    region: StencilMask,
) -> Result<crate::grid::Norms> {
    let lhs = dbar(lambda).sub(&lambda.matmul(a)?)?.sub(f_plus)?;
    norms(&lhs, &region)
}

/// `iter,residual_sup,delta_sup`
pub fn write_history_csv<W: Write>(history: &[IterationRecord], mut w: W) -> Result<()> {
    writeln!(w, "iter,residual_sup,delta_sup")?;
    for r in history {
        writeln!(w, "{},{},{}", r.iter, fmt_g17(r.residual_sup), fmt_g17(r.delta_sup))?;
    }
    Ok(())
}
