//! Plain-text field dumps.
//!
//! ```text
//! MFIELD v1 nx ny N x0 x1 y0 y1
//! re im re im ...        # one line per node, j outer, i inner, 2*N*N values
//! ```
//! All floats use C's `%.17g` rendering so dumps are bit-exact and diffable.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use super::{Grid, MatrixField};
use crate::error::{Error, Result};

/// Render `x` exactly like C's `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_mfield<W: Write>(field: &MatrixField, mut w: W) -> Result<()> {
    let g = field.grid();
    writeln!(
        w,
        "MFIELD v1 {} {} {} {} {} {} {}",
        g.nx,
        g.ny,
        field.n(),
        fmt_g17(g.x0),
        fmt_g17(g.x1),
        fmt_g17(g.y0),
        fmt_g17(g.y1)
    )?;
    let mut line = String::new();
    for k in 0..g.len() {
        line.clear();
        for (e, v) in field.at(k).iter().enumerate() {
            if e > 0 {
                line.push(' ');
            }
            line.push_str(&fmt_g17(v.re));
            line.push(' ');
            line.push_str(&fmt_g17(v.im));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parse an MFIELD dump. Lines after the node block that start with a
/// keyword (e.g. a `DEFECTS` sidecar line) are ignored.
pub fn read_mfield<R: BufRead>(r: R) -> Result<MatrixField> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 9 || parts[0] != "MFIELD" || parts[1] != "v1" {
        return Err(Error::Parse(format!("bad header: {header:?}")));
    }
    let int = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Parse(format!("bad integer {s:?} in header")))
    };
    let float = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad float {s:?}"))) };
    let (nx, ny, n) = (int(parts[2])?, int(parts[3])?, int(parts[4])?);
    let grid = Grid::new(
        float(parts[5])?,
        float(parts[6])?,
        float(parts[7])?,
        float(parts[8])?,
        nx,
        ny,
    )?;
    let mut data = Vec::with_capacity(grid.len() * n * n);
    for k in 0..grid.len() {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing node line {k}")))??;
        let vals: Vec<f64> = line.split_whitespace().map(float).collect::<Result<_>>()?;
        if vals.len() != 2 * n * n {
            return Err(Error::Parse(format!(
                "node line {k}: expected {} values, got {}",
                2 * n * n,
                vals.len()
            )));
        }
        data.extend(vals.chunks(2).map(|p| Complex64::new(p[0], p[1])));
    }
    MatrixField::from_data(grid, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    #[test]
    fn g17_matches_printf() {
        // Reference strings from glibc printf("%.17g").
        let cases: &[(f64, &str)] = &[
            (0.0, "0"),
            (-0.0, "-0"),
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1e20, "1e+20"),
            (123456789.0, "123456789"),
            (1e16, "10000000000000000"),
            (1e17, "1e+17"),
            (0.0001, "0.0001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (f64::MAX, "1.7976931348623157e+308"),
            (5e-324, "4.9406564584124654e-324"),
            (f64::NAN, "nan"),
            (f64::NEG_INFINITY, "-inf"),
        ];
        for &(x, want) in cases {
            assert_eq!(fmt_g17(x), want, "x = {x:e}");
        }
    }

    proptest! {
        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt_g17(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn dump_and_read_back() {
        let g = make_grid(-1.0, 1.0, -0.5, 0.75, 9, 11).unwrap();
        let f = MatrixField::from_fn(g, 2, |z, m| {
            m[0] = z.exp();
            m[1] = z * z.conj();
            m[3] = Complex64::new(0.1, -1.0 / 3.0);
        });
        let mut buf = Vec::new();
        write_mfield(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("MFIELD v1 9 11 2 -1 1 -0.5 0.75\n"));
        assert_eq!(text.lines().count(), 1 + 99);
        let back = read_mfield(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_bad_dumps() {
        assert!(read_mfield(&b"MFIELD v2 9 9 1 0 1 0 1\n"[..]).is_err());
        assert!(read_mfield(&b"MFIELD v1 9 9 1 0 1 0 1\n0 0\n"[..]).is_err());
        assert!(read_mfield(&b""[..]).is_err());
    }
}
