use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::Grid;
use crate::error::{Error, Result};

/// An `N x N` complex matrix at every node of a [`Grid`].
///
/// `undefined_margin` is the width of the border ring on which values carry
/// no meaning (derivative fields leave the outer two rings unset). Entries
/// there are zero. `partial` lists nodes whose values are NaN because an
/// inversion was refused there.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    n: usize,
    data: Vec<Complex64>,
    undefined_margin: usize,
    partial: Vec<usize>,
}

impl MatrixField {
    pub fn zeros(grid: Grid, n: usize) -> Self {
        assert!(n >= 1, "matrix dimension must be positive");
        MatrixField {
            grid,
            n,
            data: vec![Complex64::new(0.0, 0.0); grid.len() * n * n],
            undefined_margin: 0,
            partial: Vec::new(),
        }
    }

    pub fn from_data(grid: Grid, n: usize, data: Vec<Complex64>) -> Result<Self> {
        if n == 0 || data.len() != grid.len() * n * n {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * n * n,
                got: data.len(),
                context: "field data length".into(),
            });
        }
        Ok(MatrixField {
            grid,
            n,
            data,
            undefined_margin: 0,
            partial: Vec::new(),
        })
    }

    /// Same matrix `m` (row-major, `n*n` entries) at every node.
    pub fn constant(grid: Grid, n: usize, m: &[Complex64]) -> Self {
        assert_eq!(m.len(), n * n);
        let mut data = Vec::with_capacity(grid.len() * n * n);
        for _ in 0..grid.len() {
            data.extend_from_slice(m);
        }
        MatrixField {
            grid,
            n,
            data,
            undefined_margin: 0,
            partial: Vec::new(),
        }
    }

    pub fn identity(grid: Grid, n: usize) -> Self {
        Self::constant(grid, n, &identity_matrix(n))
    }

    /// Scalar field `f(z)` times the identity.
    pub fn scalar_fn(grid: Grid, n: usize, f: impl Fn(Complex64) -> Complex64 + Sync) -> Self {
        let mut out = Self::zeros(grid, n);
        let nn = n * n;
        out.data.par_chunks_mut(nn).enumerate().for_each(|(k, m)| {
            let v = f(grid.node_at(k));
            for d in 0..n {
                m[d * n + d] = v;
            }
        });
        out
    }

    /// Fill every node from its coordinate.
    pub fn from_fn(grid: Grid, n: usize, f: impl Fn(Complex64, &mut [Complex64]) + Sync) -> Self {
        let mut out = Self::zeros(grid, n);
        out.data
            .par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(k, m)| f(grid.node_at(k), m));
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[Complex64] {
        let nn = self.n * self.n;
        &self.data[k * nn..(k + 1) * nn]
    }

    #[inline]
    pub fn at_mut(&mut self, k: usize) -> &mut [Complex64] {
        let nn = self.n * self.n;
        &mut self.data[k * nn..(k + 1) * nn]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[Complex64] {
        self.at(self.grid.index(i, j))
    }

    pub fn undefined_margin(&self) -> usize {
        self.undefined_margin
    }

    pub(crate) fn set_undefined_margin(&mut self, m: usize) {
        self.undefined_margin = m;
    }

    pub fn partial(&self) -> &[usize] {
        &self.partial
    }

    pub fn is_partial(&self) -> bool {
        !self.partial.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest nodewise Frobenius norm over the whole grid.
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len()).map(|k| frobenius(self.at(k))).fold(0.0, f64::max)
    }

    pub(crate) fn ensure_compatible(&self, other: &MatrixField, context: &str) -> Result<()> {
        self.grid.ensure_same(&other.grid, context)?;
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
                context: context.to_string(),
            });
        }
        Ok(())
    }

    fn derived(&self, data: Vec<Complex64>, margin: usize) -> Self {
        MatrixField {
            grid: self.grid,
            n: self.n,
            data,
            undefined_margin: margin,
            partial: Vec::new(),
        }
    }

    fn zip_entries(
        &self,
        other: &MatrixField,
        context: &str,
        f: impl Fn(Complex64, Complex64) -> Complex64 + Sync,
    ) -> Result<Self> {
        self.ensure_compatible(other, context)?;
        let data = self
            .data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(self.derived(data, self.undefined_margin.max(other.undefined_margin)))
    }

    pub fn add(&self, other: &MatrixField) -> Result<Self> {
        self.zip_entries(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &MatrixField) -> Result<Self> {
        self.zip_entries(other, "sub", |a, b| a - b)
    }

    /// Nodewise matrix product `self * other`.
    pub fn matmul(&self, other: &MatrixField) -> Result<Self> {
        self.ensure_compatible(other, "matmul")?;
        let n = self.n;
        let nn = n * n;
        let mut data = vec![Complex64::new(0.0, 0.0); self.data.len()];
        data.par_chunks_mut(nn).enumerate().for_each(|(k, out)| {
            let a = &self.data[k * nn..(k + 1) * nn];
            let b = &other.data[k * nn..(k + 1) * nn];
            matmul_into(n, a, b, out);
        });
        Ok(self.derived(data, self.undefined_margin.max(other.undefined_margin)))
    }

    /// Product of several fields, left to right.
    pub fn matmul_chain(fields: &[&MatrixField]) -> Result<Self> {
        let (first, rest) = fields
            .split_first()
            .ok_or_else(|| Error::Config("empty product".into()))?;
        let mut acc = (*first).clone();
        for f in rest {
            acc = acc.matmul(f)?;
        }
        Ok(acc)
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        let data = self.data.par_iter().map(|&a| a * alpha).collect();
        self.derived(data, self.undefined_margin)
    }

    /// Entrywise complex conjugation (no transpose).
    pub fn conj(&self) -> Self {
        let data = self.data.par_iter().map(|a| a.conj()).collect();
        self.derived(data, self.undefined_margin)
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let nn = n * n;
        let mut data = self.data.clone();
        data.par_chunks_mut(nn).enumerate().for_each(|(k, out)| {
            let a = &self.data[k * nn..(k + 1) * nn];
            for r in 0..n {
                for c in 0..n {
                    out[c * n + r] = a[r * n + c];
                }
            }
        });
        self.derived(data, self.undefined_margin)
    }

    /// Add the constant matrix `m` at every node.
    pub fn add_constant(&self, m: &[Complex64]) -> Self {
        let nn = self.n * self.n;
        assert_eq!(m.len(), nn);
        let mut out = self.clone();
        out.partial.clear();
        for node in out.data.chunks_mut(nn) {
            for (a, b) in node.iter_mut().zip(m) {
                *a += b;
            }
        }
        out
    }

    /// Entrywise real part set to zero: `(M - conj M) / 2`.
    pub fn skew_real_part(&self) -> Self {
        let data = self.data.iter().map(|a| Complex64::new(0.0, a.im)).collect();
        self.derived(data, self.undefined_margin)
    }

    /// Restriction onto a coarser grid whose nodes are every `stride`-th node.
    pub fn subsample(&self, coarse: Grid, stride: usize) -> Result<Self> {
        if (coarse.nx - 1) * stride != self.grid.nx - 1 || (coarse.ny - 1) * stride != self.grid.ny - 1 {
            return Err(Error::GridMismatch("subsample stride".into()));
        }
        let mut out = MatrixField::zeros(coarse, self.n);
        for j in 0..coarse.ny {
            for i in 0..coarse.nx {
                let src = self.get(i * stride, j * stride).to_vec();
                out.at_mut(coarse.index(i, j)).copy_from_slice(&src);
            }
        }
        Ok(out)
    }
}

/// Nodewise operations over fields sharing a grid and matrix size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointwiseOp {
    Add,
    Sub,
    Matmul,
    Scale(Complex64),
    Conj,
    Transpose,
}

/// Apply `op` nodewise. Binary ops take exactly two operands (`Matmul`
/// accepts a chain), unary ops exactly one.
pub fn pointwise(op: PointwiseOp, operands: &[&MatrixField]) -> Result<MatrixField> {
    let arity = |want: usize| -> Result<()> {
        if operands.len() == want {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{op:?} takes {want} operand(s), got {}",
                operands.len()
            )))
        }
    };
    match op {
        PointwiseOp::Add => {
            arity(2)?;
            operands[0].add(operands[1])
        }
        PointwiseOp::Sub => {
            arity(2)?;
            operands[0].sub(operands[1])
        }
        PointwiseOp::Matmul => MatrixField::matmul_chain(operands),
        PointwiseOp::Scale(alpha) => {
            arity(1)?;
            Ok(operands[0].scale(alpha))
        }
        PointwiseOp::Conj => {
            arity(1)?;
            Ok(operands[0].conj())
        }
        PointwiseOp::Transpose => {
            arity(1)?;
            Ok(operands[0].transpose())
        }
    }
}

/// Outcome of a nodewise inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibilityReport {
    pub min_abs_det: f64,
    /// Largest `|M|_F |M^-1|_F` over invertible nodes.
    pub max_cond: f64,
    pub cond_max: f64,
    /// Nodes with condition above `cond_max`, exactly singular nodes included.
    pub flagged: Vec<usize>,
    /// Exactly singular nodes (subset of `flagged`).
    pub singular: Vec<usize>,
}

impl InvertibilityReport {
    pub fn is_clean(&self) -> bool {
        self.flagged.is_empty()
    }

    /// Err with `what` in the message when any node is flagged.
    pub fn require_clean(&self, what: &str) -> Result<()> {
        match self.flagged.first() {
            None => Ok(()),
            Some(&first) => Err(Error::Singular {
                what: what.to_string(),
                count: self.flagged.len(),
                first,
            }),
        }
    }
}

/// Nodewise inverse of `f`.
///
/// Nodes whose condition estimate exceeds `cond_max` (or that are exactly
/// singular) are set to NaN and recorded both in the report and in the
/// returned field's `partial` list.
pub fn inverse_field(f: &MatrixField, cond_max: f64) -> (MatrixField, InvertibilityReport) {
    let n = f.n;
    let nn = n * n;
    struct NodeInv {
        inv: Vec<Complex64>,
        det: f64,
        cond: f64,
        singular: bool,
    }
    let per_node: Vec<NodeInv> = (0..f.grid.len())
        .into_par_iter()
        .map(|k| {
            let m = f.at(k);
            match invert_small(n, m) {
                Some((inv, det)) => {
                    let cond = frobenius(m) * frobenius(&inv);
                    NodeInv {
                        inv,
                        det: det.norm(),
                        cond,
                        singular: !cond.is_finite(),
                    }
                }
                None => NodeInv {
                    inv: vec![Complex64::new(f64::NAN, f64::NAN); nn],
                    det: 0.0,
                    cond: f64::INFINITY,
                    singular: true,
                },
            }
        })
        .collect();

    let mut data = Vec::with_capacity(f.data.len());
    let mut report = InvertibilityReport {
        min_abs_det: f64::INFINITY,
        max_cond: 0.0,
        cond_max,
        flagged: Vec::new(),
        singular: Vec::new(),
    };
    let interior = |k: usize| {
        let (i, j) = f.grid.coords(k);
        let m = f.undefined_margin;
        i >= m && i + m < f.grid.nx && j >= m && j + m < f.grid.ny
    };
    for (k, node) in per_node.into_iter().enumerate() {
        if !interior(k) {
            data.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), nn));
            continue;
        }
        report.min_abs_det = report.min_abs_det.min(node.det);
        if node.singular {
            report.singular.push(k);
            report.flagged.push(k);
            data.extend(std::iter::repeat_n(Complex64::new(f64::NAN, f64::NAN), nn));
            continue;
        }
        report.max_cond = report.max_cond.max(node.cond);
        if node.cond > cond_max {
            report.flagged.push(k);
            data.extend(std::iter::repeat_n(Complex64::new(f64::NAN, f64::NAN), nn));
        } else {
            data.extend(node.inv);
        }
    }
    let out = MatrixField {
        grid: f.grid,
        n,
        data,
        undefined_margin: f.undefined_margin,
        partial: report.flagged.clone(),
    };
    (out, report)
}

/// Inverse and determinant of a small dense matrix, `None` when singular.
fn invert_small(n: usize, m: &[Complex64]) -> Option<(Vec<Complex64>, Complex64)> {
    if n == 1 {
        let v = m[0];
        if v.re == 0.0 && v.im == 0.0 {
            return None;
        }
        return Some((vec![v.inv()], v));
    }
    let mat = DMatrix::from_row_slice(n, n, m);
    let lu = mat.lu();
    let det = lu.determinant();
    if det.re == 0.0 && det.im == 0.0 {
        return None;
    }
    let inv = lu.try_inverse()?;
    // nalgebra storage is column-major; emit row-major.
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(inv[(r, c)]);
        }
    }
    Some((out, det))
}

#[inline]
pub(crate) fn matmul_into(n: usize, a: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
    for r in 0..n {
        for c in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..n {
                acc += a[r * n + t] * b[t * n + c];
            }
            out[r * n + c] = acc;
        }
    }
}

#[inline]
pub(crate) fn frobenius(m: &[Complex64]) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn identity_matrix(n: usize) -> Vec<Complex64> {
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    for d in 0..n {
        m[d * n + d] = Complex64::new(1.0, 0.0);
    }
    m
}
