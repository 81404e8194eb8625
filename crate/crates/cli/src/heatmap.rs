//! Binary PPM heatmaps of nodewise Frobenius norms.

use std::io::Write;

use moutard_core::grid::fmt_g17;
use moutard_core::MatrixField;

/// Anchors of the colour ramp at positions 0, 1/8, ..., 1.
const ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Colour of non-finite nodes.
const NAN_COLOR: [u8; 3] = [255, 0, 255];

/// The fixed 256-entry table, linearly interpolated between the anchors.
pub fn palette() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    for (k, entry) in table.iter_mut().enumerate() {
        let t = k as f64 / 255.0 * 8.0;
        let seg = (t.floor() as usize).min(7);
        let f = t - seg as f64;
        for c in 0..3 {
            let a = ANCHORS[seg][c] as f64;
            let b = ANCHORS[seg + 1][c] as f64;
            entry[c] = (a + (b - a) * f).round() as u8;
        }
    }
    table
}

/// Finite min and max of the node norms; `(0, 0)` when none is finite.
pub fn norm_range(values: &[f64]) -> (f64, f64) {
    let mut it = values.iter().copied().filter(|v| v.is_finite());
    let Some(first) = it.next() else {
        return (0.0, 0.0);
    };
    it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn node_norms(field: &MatrixField) -> Vec<f64> {
    (0..field.grid().len())
        .map(|k| field.at(k).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

/// P6 image, one pixel per node, top row at the largest `y`.
pub fn write_ppm<W: Write>(field: &MatrixField, mut w: W) -> std::io::Result<(f64, f64)> {
    let g = field.grid();
    let values = node_norms(field);
    let (lo, hi) = norm_range(&values);
    let table = palette();
    write!(w, "P6\n{} {}\n255\n", g.nx, g.ny)?;
    let mut row = Vec::with_capacity(3 * g.nx);
    for j in (0..g.ny).rev() {
        row.clear();
        for i in 0..g.nx {
            let v = values[g.index(i, j)];
            let rgb = if !v.is_finite() {
                NAN_COLOR
            } else if hi > lo {
                table[(((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as usize]
            } else {
                table[0]
            };
            row.extend_from_slice(&rgb);
        }
        w.write_all(&row)?;
    }
    Ok((lo, hi))
}

/// Text sidecar with the colour scale bounds.
pub fn write_sidecar<W: Write>(name: &str, field: &MatrixField, lo: f64, hi: f64, mut w: W) -> std::io::Result<()> {
    let g = field.grid();
    writeln!(w, "field {name}")?;
    writeln!(w, "value frobenius-norm")?;
    writeln!(w, "size {} {}", g.nx, g.ny)?;
    writeln!(w, "min {}", fmt_g17(lo))?;
    writeln!(w, "max {}", fmt_g17(hi))?;
    Ok(())
}
