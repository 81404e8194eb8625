use num_complex::Complex64;
use rayon::prelude::*;

use super::field::frobenius;
use super::{MatrixField, StencilMask};
use crate::error::{Error, Result};

/// Border width left undefined by the five-point central stencil.
pub const STENCIL_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    /// Largest nodewise Frobenius norm over the region.
    pub sup: f64,
    /// `sqrt(hx * hy * sum of squared Frobenius norms)`.
    pub l2: f64,
}

/// `d/dzbar = (d/dx + i d/dy) / 2`, fourth order, interior only.
pub fn dbar(f: &MatrixField) -> MatrixField {
    complex_derivative(f, 1.0)
}

/// `d/dz = (d/dx - i d/dy) / 2`, fourth order, interior only.
pub fn dz(f: &MatrixField) -> MatrixField {
    complex_derivative(f, -1.0)
}

// Stencil [1, -8, 0, 8, -1] / 12h along each axis, entrywise.
fn complex_derivative(f: &MatrixField, sign: f64) -> MatrixField {
    let grid = *f.grid();
    let n = f.n();
    let nn = n * n;
    let margin = f.undefined_margin() + STENCIL_MARGIN;
    let mut out = MatrixField::zeros(grid, n);
    out.set_undefined_margin(margin);
    let (nx, ny) = (grid.nx, grid.ny);
    if nx <= 2 * margin || ny <= 2 * margin {
        return out;
    }
    let cx = 1.0 / (12.0 * grid.hx);
    let cy = 1.0 / (12.0 * grid.hy);
    let src = f.data();
    out.data_mut()
        .par_chunks_mut(nx * nn)
        .enumerate()
        .filter(|(j, _)| *j >= margin && *j + margin < ny)
        .for_each(|(j, row)| {
            for i in margin..nx - margin {
                let at = |ii: usize, jj: usize, e: usize| src[(jj * nx + ii) * nn + e];
                for e in 0..nn {
                    let ddx = (at(i - 2, j, e) - at(i - 1, j, e) * 8.0 + at(i + 1, j, e) * 8.0 - at(i + 2, j, e)) * cx;
                    let ddy = (at(i, j - 2, e) - at(i, j - 1, e) * 8.0 + at(i, j + 1, e) * 8.0 - at(i, j + 2, e)) * cy;
                    row[i * nn + e] = (ddx + Complex64::new(0.0, sign) * ddy) * 0.5;
                }
            }
        });
    out
}

/// Sup and L2 norms of `f` over `region`.
pub fn norms(f: &MatrixField, region: &StencilMask) -> Result<Norms> {
    let grid = f.grid();
    if region.margin() < f.undefined_margin() {
        return Err(Error::Config(format!(
            "region margin {} reaches into the undefined border ({}) of the field",
            region.margin(),
            f.undefined_margin()
        )));
    }
    if region.count(grid) == 0 {
        return Err(Error::EmptyRegion(format!(
            "margins {}x{} on a {}x{} grid",
            region.margin_x, region.margin_y, grid.nx, grid.ny
        )));
    }
    let mut sup = 0.0f64;
    let mut sq = 0.0f64;
    for k in region.nodes(grid) {
        let v = frobenius(f.at(k));
        sup = if v.is_nan() { f64::NAN } else { sup.max(v) };
        sq += v * v;
    }
    Ok(Norms {
        sup,
        l2: (grid.hx * grid.hy * sq).sqrt(),
    })
}
