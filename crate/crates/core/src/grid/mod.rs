//! Uniform rectangular grids, matrix-valued fields on them, nodewise matrix
//! algebra and fourth-order finite-difference `d/dz`, `d/dzbar`.
//!
//! Nodes are stored row-major with `j` (the `y` index) outer and `i` inner,
//! so node `(i, j)` lives at flat index `j * nx + i`. Each node carries an
//! `N x N` complex matrix, itself row-major.

mod builder;
mod field;
mod mfield;
mod stencil;

pub use builder::{build_field, BuilderMatrix, Cx, FieldBuilder, Variable};
pub use field::{inverse_field, pointwise, InvertibilityReport, MatrixField, PointwiseOp};
pub use mfield::{fmt_g17, read_mfield, write_mfield};
pub use stencil::{dbar, dz, norms, Norms, STENCIL_MARGIN};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Domain rectangle `[x0, x1] x [y0, y1]` sampled by `nx * ny` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    /// Smallest node count per axis: the five-point stencil plus a two-node margin.
    pub const MIN_NODES: usize = 9;

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!(
                "grid bounds must be finite, got [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        if !(x0 < x1) || !(y0 < y1) {
            return Err(Error::Config(format!(
                "grid bounds must be ordered, got [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        if nx < Self::MIN_NODES || ny < Self::MIN_NODES {
            return Err(Error::Config(format!(
                "grid needs at least {} nodes per axis, got {nx} x {ny}",
                Self::MIN_NODES
            )));
        }
        Ok(Grid {
            x0,
            x1,
            y0,
            y1,
            nx,
            ny,
            hx: (x1 - x0) / (nx - 1) as f64,
            hy: (y1 - y0) / (ny - 1) as f64,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.x(i), self.y(j))
    }

    pub fn node_at(&self, k: usize) -> Complex64 {
        let (i, j) = self.coords(k);
        self.node(i, j)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn diameter(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// Node closest to the physical point `(x, y)`, clamped into the grid.
    pub fn nearest_node(&self, x: f64, y: f64) -> (usize, usize) {
        let snap = |v: f64, lo: f64, h: f64, n: usize| -> usize {
            let t = ((v - lo) / h).round();
            t.clamp(0.0, (n - 1) as f64) as usize
        };
        (snap(x, self.x0, self.hx, self.nx), snap(y, self.y0, self.hy, self.ny))
    }

    pub fn center_node(&self) -> (usize, usize) {
        ((self.nx - 1) / 2, (self.ny - 1) / 2)
    }

    /// Same rectangle with every cell halved (`n -> 2n - 1`), keeping old nodes.
    pub fn refined(&self) -> Self {
        Grid::new(self.x0, self.x1, self.y0, self.y1, 2 * self.nx - 1, 2 * self.ny - 1)
            .expect("refinement of a valid grid is valid")
    }

    pub(crate) fn ensure_same(&self, other: &Grid, context: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(context.to_string()))
        }
    }
}

/// Shorthand for [`Grid::new`].
pub fn make_grid(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Grid> {
    Grid::new(x0, x1, y0, y1, nx, ny)
}

/// Interior region obtained by dropping a border ring of nodes.
///
/// Node `(i, j)` is inside iff `margin_x <= i < nx - margin_x` and
/// `margin_y <= j < ny - margin_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StencilMask {
    pub margin_x: usize,
    pub margin_y: usize,
}

impl StencilMask {
    pub fn new(margin: usize) -> Self {
        let margin = margin.max(STENCIL_MARGIN);
        StencilMask {
            margin_x: margin,
            margin_y: margin,
        }
    }

    /// Region at physical distance `>= dist` from the rectangle's boundary.
    ///
    /// Under aligned refinement this is the same sub-rectangle at every level,
    /// unlike a fixed node count.
    pub fn inset(grid: &Grid, dist: f64) -> Self {
        let m = |h: f64| -> usize {
            let cells = (dist / h - 1e-9).ceil();
            (cells.max(0.0) as usize).max(STENCIL_MARGIN)
        };
        StencilMask {
            margin_x: m(grid.hx),
            margin_y: m(grid.hy),
        }
    }

    pub fn margin(&self) -> usize {
        self.margin_x.min(self.margin_y)
    }

    #[inline]
    pub fn contains(&self, grid: &Grid, i: usize, j: usize) -> bool {
        i >= self.margin_x && i + self.margin_x < grid.nx && j >= self.margin_y && j + self.margin_y < grid.ny
    }

    pub fn count(&self, grid: &Grid) -> usize {
        let cx = grid.nx.saturating_sub(2 * self.margin_x);
        let cy = grid.ny.saturating_sub(2 * self.margin_y);
        cx * cy
    }

    /// Flat indices of the nodes inside the region.
    pub fn nodes<'a>(&'a self, grid: &'a Grid) -> impl Iterator<Item = usize> + 'a {
        let (mx, my) = (self.margin_x, self.margin_y);
        let jr = my..grid.ny.saturating_sub(my).max(my);
        jr.flat_map(move |j| {
            let ir = mx..grid.nx.saturating_sub(mx).max(mx);
            ir.map(move |i| grid.index(i, j))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_bounds() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 9, 9).unwrap();
        assert_eq!(g.hx, 0.25);
        assert_eq!(g.hy, 0.25);
        let g = make_grid(0.0, 2.0, 0.0, 1.0, 9, 17).unwrap();
        assert_eq!(g.hx, 0.25);
        assert_eq!(g.hy, 0.0625);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(make_grid(1.0, -1.0, 0.0, 1.0, 9, 9), Err(Error::Config(_))));
        assert!(make_grid(0.0, 1.0, 0.0, 1.0, 8, 9).is_err());
        assert!(make_grid(0.0, 1.0, 0.0, f64::NAN, 9, 9).is_err());
        assert!(make_grid(0.0, 1.0, 1.0, 1.0, 9, 9).is_err());
    }

    #[test]
    fn node_coordinates() {
        let g = make_grid(-1.0, 1.0, -2.0, 2.0, 9, 17).unwrap();
        assert_eq!(g.node(0, 0), Complex64::new(-1.0, -2.0));
        assert_eq!(g.node(8, 16), Complex64::new(1.0, 2.0));
        assert_eq!(g.node(4, 8), Complex64::new(0.0, 0.0));
        assert_eq!(g.coords(g.index(3, 5)), (3, 5));
    }

    #[test]
    fn refinement_keeps_nodes() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 9, 9).unwrap();
        let f = g.refined();
        assert_eq!((f.nx, f.ny), (17, 17));
        for i in 0..9 {
            assert_eq!(g.x(i), f.x(2 * i));
        }
    }

    #[test]
    fn mask_counts() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 9, 9).unwrap();
        let m = StencilMask::new(2);
        assert_eq!(m.count(&g), 25);
        assert_eq!(m.nodes(&g).count(), 25);
        assert!(m.contains(&g, 2, 6));
        assert!(!m.contains(&g, 7, 4));
        let inset = StencilMask::inset(&g, 0.5);
        assert_eq!(inset.margin_x, 2);
        let fine = StencilMask::inset(&g.refined(), 0.5);
        assert_eq!(fine.margin_x, 4);
    }
}
