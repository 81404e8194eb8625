//! Moutard-type transformations and gauge reductions.
//!
//! All maps are nodewise algebra on already-built fields. Potentials are
//! passed in rather than recomputed so that their integration constants
//! stay an explicit choice of the caller.

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::{dbar, inverse_field, InvertibilityReport, MatrixField, StencilMask};
use crate::potential::PotentialField;
use crate::verify::{residual, SystemFields};

pub const DEFAULT_COND_MAX: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct TheoremOneResult {
    pub psi_t: MatrixField,
    pub psi_plus_t: MatrixField,
    pub b_t: MatrixField,
    /// Report for `omega_{F,F+}`.
    pub invertibility: InvertibilityReport,
}

#[derive(Debug, Clone)]
pub struct PropOneResult {
    pub psi_t: MatrixField,
    pub a_t: MatrixField,
    /// Report for `omega_hat_{F,F+}`.
    pub invertibility: InvertibilityReport,
}

#[derive(Debug, Clone)]
pub struct GaugeReduced {
    pub psi_t: MatrixField,
    pub b_t: MatrixField,
    pub invertibility: InvertibilityReport,
}

#[derive(Debug, Clone)]
pub struct RemarkOutcome {
    /// `I - F omega_hat^-1 Lambda`.
    pub g: MatrixField,
    /// `A + F omega_hat^-1 F+`.
    pub a_t: MatrixField,
    /// `sup |dbar(g Psi) + A~ g Psi|` over finite nodes of the region.
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// Region nodes skipped because the residual is not finite there
    /// (stencil neighbourhoods of flagged `omega_hat` nodes).
    pub excluded: usize,
    pub invertibility: InvertibilityReport,
    pub omega_hat_report: InvertibilityReport,
}

impl RemarkOutcome {
    /// True when every node where `g` fails to invert is also a flagged
    /// node of `omega_hat`.
    pub fn clean_off_singular_set(&self) -> bool {
        self.invertibility
            .flagged
            .iter()
            .all(|k| self.omega_hat_report.flagged.binary_search(k).is_ok())
    }
}

/// Sup of the input residuals under the pivot systems.
pub fn theorem1_input_residual(
    b: &MatrixField,
    f: &MatrixField,
    f_plus: &MatrixField,
    psi: &MatrixField,
    psi_plus: &MatrixField,
    region: StencilMask,
) -> Result<f64> {
    let r = [
        residual(SystemFields::Sys2 { b, psi: f }, region)?.sup,
        residual(SystemFields::Sys2 { b, psi }, region)?.sup,
        residual(SystemFields::Sys3 { b, psi_plus: f_plus }, region)?.sup,
        residual(SystemFields::Sys3 { b, psi_plus }, region)?.sup,
    ];
    Ok(r.into_iter().fold(0.0, f64::max))
}

/// ```text
/// Psi~  = Psi  - F omega_FF^-1 omega_PsiF
/// Psi+~ = Psi+ - omega_FPsi+ omega_FF^-1 F+
/// B~    = B    + F omega_FF^-1 F+
/// ```
///
/// Refuses with `singular omega` when `omega_FF` has a flagged node.
#[allow(clippy::too_many_arguments)]
pub fn transform_theorem1(
    b: &MatrixField,
    f: &MatrixField,
    f_plus: &MatrixField,
    psi: &MatrixField,
    psi_plus: &MatrixField,
    omega_ff: &PotentialField,
    omega_psi_f: &PotentialField,
    omega_f_psi_plus: &PotentialField,
    cond_max: f64,
) -> Result<TheoremOneResult> {
    for (other, ctx) in [
        (f, "theorem1 B/F"),
        (f_plus, "theorem1 B/F+"),
        (psi, "theorem1 B/Psi"),
        (psi_plus, "theorem1 B/Psi+"),
        (&omega_ff.omega, "theorem1 B/omega_FF"),
        (&omega_psi_f.omega, "theorem1 B/omega_PsiF"),
        (&omega_f_psi_plus.omega, "theorem1 B/omega_FPsi+"),
    ] {
        b.ensure_compatible(other, ctx)?;
    }
    let (inv, report) = inverse_field(&omega_ff.omega, cond_max);
    report.require_clean("omega")?;
    let f_inv = f.matmul(&inv)?;
    let psi_t = psi.sub(&f_inv.matmul(&omega_psi_f.omega)?)?;
    let psi_plus_t = psi_plus.sub(&MatrixField::matmul_chain(&[&omega_f_psi_plus.omega, &inv, f_plus])?)?;
    let b_t = b.add(&f_inv.matmul(f_plus)?)?;
    Ok(TheoremOneResult {
        psi_t,
        psi_plus_t,
        b_t,
        invertibility: report,
    })
}

/// ```text
/// Psi~ = Psi - F omega_hat_FF^-1 omega_hat_PsiF
/// A~   = A   + F omega_hat_FF^-1 F+
/// ```
pub fn transform_prop1(
    a: &MatrixField,
    f: &MatrixField,
    f_plus: &MatrixField,
    psi: &MatrixField,
    omega_hat_ff: &MatrixField,
    omega_hat_psi_f: &MatrixField,
    cond_max: f64,
) -> Result<PropOneResult> {
    for (other, ctx) in [
        (f, "prop1 A/F"),
        (f_plus, "prop1 A/F+"),
        (psi, "prop1 A/Psi"),
        (omega_hat_ff, "prop1 A/omega_hat_FF"),
        (omega_hat_psi_f, "prop1 A/omega_hat_PsiF"),
    ] {
        a.ensure_compatible(other, ctx)?;
    }
    let (inv, report) = inverse_field(omega_hat_ff, cond_max);
    report.require_clean("omega_hat")?;
    let f_inv = f.matmul(&inv)?;
    Ok(PropOneResult {
        psi_t: psi.sub(&f_inv.matmul(omega_hat_psi_f)?)?,
        a_t: a.add(&f_inv.matmul(f_plus)?)?,
        invertibility: report,
    })
}

/// `Psi~ = g^-1 Psi`, `B~ = g^-1 B conj(g)`.
pub fn gauge_reduce(b: &MatrixField, psi: &MatrixField, g: &MatrixField, cond_max: f64) -> Result<GaugeReduced> {
    b.ensure_compatible(psi, "gauge B/Psi")?;
    b.ensure_compatible(g, "gauge B/g")?;
    let (g_inv, report) = inverse_field(g, cond_max);
    report.require_clean("gauge factor")?;
    Ok(GaugeReduced {
        psi_t: g_inv.matmul(psi)?,
        b_t: MatrixField::matmul_chain(&[&g_inv, b, &g.conj()])?,
        invertibility: report,
    })
}

/// Build `g = I - F omega_hat^-1 Lambda` and measure the identity
/// `dbar(g Psi) + A~ (g Psi) = 0`.
///
/// Never refuses on singular `omega_hat` or `g`; both reports are returned.
#[allow(clippy::too_many_arguments)]
pub fn remark_check(
    a: &MatrixField,
    f: &MatrixField,
    f_plus: &MatrixField,
    psi: &MatrixField,
    omega_hat_ff: &MatrixField,
    lambda: &MatrixField,
    region: StencilMask,
    cond_max: f64,
) -> Result<RemarkOutcome> {
    for (other, ctx) in [
        (f, "remark A/F"),
        (f_plus, "remark A/F+"),
        (psi, "remark A/Psi"),
        (omega_hat_ff, "remark A/omega_hat_FF"),
        (lambda, "remark A/Lambda"),
    ] {
        a.ensure_compatible(other, ctx)?;
    }
    let grid = *a.grid();
    let n = a.n();
    let (inv, omega_hat_report) = inverse_field(omega_hat_ff, cond_max);
    let f_inv = f.matmul(&inv)?;
    let g = MatrixField::identity(grid, n).sub(&f_inv.matmul(lambda)?)?;
    let a_t = a.add(&f_inv.matmul(f_plus)?)?;
    let g_psi = g.matmul(psi)?;
    let lhs = dbar(&g_psi).add(&a_t.matmul(&g_psi)?)?;

    let mut sup = 0.0f64;
    let mut sum = 0.0f64;
    let mut excluded = 0;
    for k in region.nodes(&grid) {
        let norm = lhs.at(k).iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
        if norm.is_finite() {
            sup = sup.max(norm);
            sum += norm * norm;
        } else {
            excluded += 1;
        }
    }
    let (_, invertibility) = inverse_field(&g, cond_max);
    Ok(RemarkOutcome {
        g,
        a_t,
        residual_sup: sup,
        residual_l2: (grid.hx * grid.hy * sum).sqrt(),
        excluded,
        invertibility,
        omega_hat_report,
    })
}
