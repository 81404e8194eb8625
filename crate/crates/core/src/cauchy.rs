//! Solid Cauchy (Pompeiu) area operators on the grid rectangle.
//!
//! ```text
//! T f(z)    = 1/pi ∬ f(ζ) / (z - ζ)   dA(ζ),   d/dzbar T f = f
//! Tbar f(z) = 1/pi ∬ f(ζ) / (z̄ - ζ̄) dA(ζ),   d/dz Tbar f = f
//! ```
//!
//! Both are discretized with the midpoint rule on cells of area `hx * hy`
//! centered at the nodes, which makes the discrete operator a 2-D
//! convolution of the node samples with the kernel table
//! `K(p, q) = hx hy / (pi (p hx + i q hy))`. The `direct` mode evaluates that
//! sum literally; `fast-convolution` evaluates the same sum through a
//! zero-padded FFT.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, MatrixField};

/// Above this node count the direct sum logs a cost warning.
pub const DIRECT_COST_WARNING_NODES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PompeiuMode {
    Direct,
    #[default]
    FastConvolution,
}

/// Treatment of the cell containing the target node.
///
/// Over a cell centered at the target, `1/(z - ζ)` is odd in `ζ - z`, so its
/// principal value vanishes; the equal-area disk has the same symmetry. Both
/// rules therefore give the singular cell zero weight. They are kept apart
/// so configurations stay explicit about the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularCellRule {
    #[default]
    Zero,
    DiskCorrection,
}

impl SingularCellRule {
    /// Weight of the singular cell in the discrete sum.
    fn weight(self, _grid: &Grid) -> Complex64 {
        match self {
            SingularCellRule::Zero => Complex64::new(0.0, 0.0),
            // 1/pi ∫_{|w| < r} dA / (-w) with pi r^2 = hx hy: zero by symmetry.
            SingularCellRule::DiskCorrection => Complex64::new(0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kernel {
    T,
    Tbar,
}

struct Spectra {
    px: usize,
    py: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    t: Vec<Complex64>,
    tbar: Vec<Complex64>,
}

/// Precomputed kernel tables (and spectra in fast mode) for one grid.
pub struct PompeiuPlan {
    grid: Grid,
    mode: PompeiuMode,
    rule: SingularCellRule,
    /// `K(p, q)` for `p in -(nx-1)..=nx-1`, `q in -(ny-1)..=ny-1`,
    /// stored at `(q + ny - 1) * (2nx - 1) + (p + nx - 1)`.
    kernel: Vec<Complex64>,
    spectra: Option<Spectra>,
}

impl std::fmt::Debug for PompeiuPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PompeiuPlan")
            .field("grid", &self.grid)
            .field("mode", &self.mode)
            .field("rule", &self.rule)
            .finish()
    }
}

impl PompeiuPlan {
    pub fn new(grid: Grid, mode: PompeiuMode, rule: SingularCellRule) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let kw = 2 * nx - 1;
        let kh = 2 * ny - 1;
        let area = grid.hx * grid.hy;
        let mut kernel = vec![Complex64::new(0.0, 0.0); kw * kh];
        for q in 0..kh {
            for p in 0..kw {
                let dp = p as f64 - (nx - 1) as f64;
                let dq = q as f64 - (ny - 1) as f64;
                kernel[q * kw + p] = if dp == 0.0 && dq == 0.0 {
                    rule.weight(&grid)
                } else {
                    let w = Complex64::new(dp * grid.hx, dq * grid.hy);
                    Complex64::new(area / std::f64::consts::PI, 0.0) / w
                };
            }
        }
        let spectra = match mode {
            PompeiuMode::Direct => None,
            PompeiuMode::FastConvolution => Some(Self::spectra(&grid, &kernel)),
        };
        PompeiuPlan {
            grid,
            mode,
            rule,
            kernel,
            spectra,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mode(&self) -> PompeiuMode {
        self.mode
    }

    pub fn rule(&self) -> SingularCellRule {
        self.rule
    }

    fn spectra(grid: &Grid, kernel: &[Complex64]) -> Spectra {
        let (nx, ny) = (grid.nx, grid.ny);
        // Circular convolution of length >= 2n - 1 reproduces the linear one
        // on the first n outputs.
        let px = (2 * nx - 1).next_power_of_two();
        let py = (2 * ny - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(px);
        let row_inv = planner.plan_fft_inverse(px);
        let col_fwd = planner.plan_fft_forward(py);
        let col_inv = planner.plan_fft_inverse(py);
        let kw = 2 * nx - 1;
        let embed = |conj: bool| {
            let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
            for q in 0..(2 * ny - 1) {
                let dq = q as isize - (ny as isize - 1);
                let row = dq.rem_euclid(py as isize) as usize;
                for p in 0..kw {
                    let dp = p as isize - (nx as isize - 1);
                    let col = dp.rem_euclid(px as isize) as usize;
                    let v = kernel[q * kw + p];
                    buf[row * px + col] = if conj { v.conj() } else { v };
                }
            }
            fft2(&mut buf, px, py, &row_fwd, &col_fwd);
            buf
        };
        let t = embed(false);
        let tbar = embed(true);
        Spectra {
            px,
            py,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            t,
            tbar,
        }
    }

    fn apply(&self, f: &MatrixField, which: Kernel) -> MatrixField {
        assert_eq!(f.grid(), &self.grid, "Pompeiu plan applied to a field on another grid");
        match self.mode {
            PompeiuMode::Direct => {
                if self.grid.len() > DIRECT_COST_WARNING_NODES {
                    log::warn!(
                        "direct Pompeiu sum on {} nodes costs O(M^2); consider fast-convolution",
                        self.grid.len()
                    );
                }
                self.apply_direct(f, which)
            }
            PompeiuMode::FastConvolution => self.apply_fft(f, which),
        }
    }

    fn apply_direct(&self, f: &MatrixField, which: Kernel) -> MatrixField {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let nn = f.n() * f.n();
        let kw = 2 * nx - 1;
        // Split re/im tables with the p axis reversed, so that for a fixed
        // target row the kernel slice runs forward with the source row.
        let sign = match which {
            Kernel::T => 1.0,
            Kernel::Tbar => -1.0,
        };
        let mut kre = vec![0.0; self.kernel.len()];
        let mut kim = vec![0.0; self.kernel.len()];
        for (row, chunk) in self.kernel.chunks_exact(kw).enumerate() {
            for (p, v) in chunk.iter().enumerate() {
                kre[row * kw + kw - 1 - p] = v.re;
                kim[row * kw + kw - 1 - p] = sign * v.im;
            }
        }
        let src = f.data();
        let (sre, sim): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..nn)
            .map(|e| {
                let re = (0..g.len()).map(|k| src[k * nn + e].re).collect();
                let im = (0..g.len()).map(|k| src[k * nn + e].im).collect();
                (re, im)
            })
            .unzip();
        let mut out = MatrixField::zeros(g, f.n());
        out.data_mut().par_chunks_mut(nn).enumerate().for_each(|(k, acc)| {
            let (it, jt) = g.coords(k);
            // Lane accumulators per channel; the kernel slice is loaded
            // once and reused across all N*N channels.
            let mut ar = vec![[0.0f64; 8]; nn];
            let mut ai = vec![[0.0f64; 8]; nn];
            let mut tail = vec![Complex64::new(0.0, 0.0); nn];
            let body = nx / 8 * 8;
            for js in 0..ny {
                let off = (jt + ny - 1 - js) * kw + nx - 1 - it;
                let kr = &kre[off..off + nx];
                let ki = &kim[off..off + nx];
                let row = js * nx..(js + 1) * nx;
                for e in 0..nn {
                    let sr = &sre[e][row.clone()];
                    let si = &sim[e][row.clone()];
                    let (cr, ci) = (&mut ar[e], &mut ai[e]);
                    let lanes = kr
                        .chunks_exact(8)
                        .zip(ki.chunks_exact(8))
                        .zip(sr.chunks_exact(8).zip(si.chunks_exact(8)));
                    for ((a, b), (x, y)) in lanes {
                        for l in 0..8 {
                            cr[l] += a[l] * x[l] - b[l] * y[l];
                            ci[l] += a[l] * y[l] + b[l] * x[l];
                        }
                    }
                    for t in body..nx {
                        tail[e] += Complex64::new(kr[t], ki[t]) * Complex64::new(sr[t], si[t]);
                    }
                }
            }
            for e in 0..nn {
                acc[e] = Complex64::new(ar[e].iter().sum(), ai[e].iter().sum()) + tail[e];
            }
        });
        out
    }

    fn apply_fft(&self, f: &MatrixField, which: Kernel) -> MatrixField {
        let sp = self.spectra.as_ref().expect("fast mode has spectra");
        let g = self.grid;
        let (nx, ny, px, py) = (g.nx, g.ny, sp.px, sp.py);
        let nn = f.n() * f.n();
        let spectrum = match which {
            Kernel::T => &sp.t,
            Kernel::Tbar => &sp.tbar,
        };
        let scale = 1.0 / (px * py) as f64;
        let src = f.data();
        let channels: Vec<Vec<Complex64>> = (0..nn)
            .into_par_iter()
            .map(|e| {
                let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
                for j in 0..ny {
                    for i in 0..nx {
                        buf[j * px + i] = src[(j * nx + i) * nn + e];
                    }
                }
                fft2(&mut buf, px, py, &sp.row_fwd, &sp.col_fwd);
                for (b, k) in buf.iter_mut().zip(spectrum) {
                    *b *= k;
                }
                fft2(&mut buf, px, py, &sp.row_inv, &sp.col_inv);
                buf
            })
            .collect();
        let mut out = MatrixField::zeros(g, f.n());
        let data = out.data_mut();
        for (e, ch) in channels.iter().enumerate() {
            for j in 0..ny {
                for i in 0..nx {
                    data[(j * nx + i) * nn + e] = ch[j * px + i] * scale;
                }
            }
        }
        out
    }
}

fn fft2(buf: &mut [Complex64], px: usize, py: usize, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
    row.process(buf);
    let mut column = vec![Complex64::new(0.0, 0.0); py];
    for i in 0..px {
        for j in 0..py {
            column[j] = buf[j * px + i];
        }
        col.process(&mut column);
        for j in 0..py {
            buf[j * px + i] = column[j];
        }
    }
}

/// `T f`, an antiderivative for `d/dzbar` on the grid rectangle.
pub fn pompeiu_t(f: &MatrixField, plan: &PompeiuPlan) -> MatrixField {
    plan.apply(f, Kernel::T)
}

/// `Tbar f`, an antiderivative for `d/dz` on the grid rectangle.
pub fn pompeiu_tbar(f: &MatrixField, plan: &PompeiuPlan) -> MatrixField {
    plan.apply(f, Kernel::Tbar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dbar, dz, make_grid, norms, FieldBuilder, StencilMask};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bump(grid: Grid, n: usize) -> MatrixField {
        MatrixField::from_fn(grid, n, |z, m| {
            let g = (-(z - c(0.1, -0.2)).norm_sqr() / 0.16).exp();
            for (e, v) in m.iter_mut().enumerate() {
                *v = c(g * (1.0 + e as f64), 0.3 * g * e as f64);
            }
        })
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 17, 17).unwrap();
        for mode in [PompeiuMode::Direct, PompeiuMode::FastConvolution] {
            let plan = PompeiuPlan::new(g, mode, SingularCellRule::Zero);
            let z = MatrixField::zeros(g, 2);
            assert_eq!(pompeiu_t(&z, &plan).sup_norm(), 0.0);
            assert_eq!(pompeiu_tbar(&z, &plan).sup_norm(), 0.0);
        }
    }

    #[test]
    fn direct_matches_fast() {
        let g = make_grid(-1.0, 1.5, -0.8, 1.0, 21, 17).unwrap();
        let f = bump(g, 2);
        let d = PompeiuPlan::new(g, PompeiuMode::Direct, SingularCellRule::Zero);
        let q = PompeiuPlan::new(g, PompeiuMode::FastConvolution, SingularCellRule::Zero);
        for (a, b) in [
            (pompeiu_t(&f, &d), pompeiu_t(&f, &q)),
            (pompeiu_tbar(&f, &d), pompeiu_tbar(&f, &q)),
        ] {
            let rel = a.sub(&b).unwrap().sup_norm() / a.sup_norm();
            assert!(rel <= 1e-10, "{rel}");
        }
    }

    #[test]
    fn rules_agree() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 13, 13).unwrap();
        let f = bump(g, 1);
        let a = PompeiuPlan::new(g, PompeiuMode::Direct, SingularCellRule::Zero);
        let b = PompeiuPlan::new(g, PompeiuMode::Direct, SingularCellRule::DiskCorrection);
        assert_eq!(pompeiu_t(&f, &a), pompeiu_t(&f, &b));
    }

    #[test]
    fn tbar_is_conjugated_t() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 17, 17).unwrap();
        let f = bump(g, 2)
            .add(&MatrixField::scalar_fn(g, 2, |z| z * c(0.0, 1.0)))
            .unwrap();
        for mode in [PompeiuMode::Direct, PompeiuMode::FastConvolution] {
            let plan = PompeiuPlan::new(g, mode, SingularCellRule::Zero);
            let lhs = pompeiu_tbar(&f, &plan);
            let rhs = pompeiu_t(&f.conj(), &plan).conj();
            let err = lhs.sub(&rhs).unwrap().sup_norm() / lhs.sup_norm();
            assert!(err < 1e-14, "{err}");
        }
    }

    #[test]
    fn linear_in_f() {
        let g = make_grid(-1.0, 1.0, -1.0, 1.0, 17, 17).unwrap();
        let plan = PompeiuPlan::new(g, PompeiuMode::FastConvolution, SingularCellRule::Zero);
        let f = bump(g, 2);
        let h = MatrixField::scalar_fn(g, 2, |z| z.conj() * z);
        let (a, b) = (c(0.5, -1.0), c(2.0, 0.25));
        let lhs = pompeiu_t(&f.scale(a).add(&h.scale(b)).unwrap(), &plan);
        let rhs = pompeiu_t(&f, &plan)
            .scale(a)
            .add(&pompeiu_t(&h, &plan).scale(b))
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().sup_norm() < 1e-13);
    }

    fn round_trip_err(n: usize, conj: bool) -> f64 {
        let g = make_grid(-2.0, 2.0, -2.0, 2.0, n, n).unwrap();
        let f = FieldBuilder::GaussianBump {
            matrix: crate::grid::BuilderMatrix::Scalar(crate::grid::Cx::Real(1.0)),
            center: crate::grid::Cx::Real(0.0),
            sigma: 0.5,
        }
        .build(g, 1)
        .unwrap();
        let plan = PompeiuPlan::new(g, PompeiuMode::FastConvolution, SingularCellRule::Zero);
        let back = if conj {
            dz(&pompeiu_tbar(&f, &plan))
        } else {
            dbar(&pompeiu_t(&f, &plan))
        };
        norms(&back.sub(&f).unwrap(), &StencilMask::new(3)).unwrap().sup
    }

    #[test]
    fn round_trip_converges() {
        for conj in [false, true] {
            let (a, b) = (round_trip_err(33, conj), round_trip_err(65, conj));
            let order = (a / b).log2();
            assert!(order >= 1.0, "order {order} ({a:e} -> {b:e})");
        }
    }
}
