use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::field::{identity_matrix, matmul_into};
use super::{Grid, MatrixField};
use crate::error::{Error, Result};

/// A complex number in config files: either `1.5` or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cx {
    Real(f64),
    Pair([f64; 2]),
}

impl Cx {
    pub fn value(self) -> Complex64 {
        match self {
            Cx::Real(r) => Complex64::new(r, 0.0),
            Cx::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

impl Default for Cx {
    fn default() -> Self {
        Cx::Real(0.0)
    }
}

impl From<Complex64> for Cx {
    fn from(c: Complex64) -> Self {
        Cx::Pair([c.re, c.im])
    }
}

/// A matrix in config files: a scalar (meaning scalar times identity) or
/// explicit rows of complex entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BuilderMatrix {
    Scalar(Cx),
    Rows(Vec<Vec<Cx>>),
}

impl BuilderMatrix {
    pub fn scalar(c: Complex64) -> Self {
        BuilderMatrix::Scalar(c.into())
    }

    /// Dense row-major `n x n` matrix.
    pub fn dense(&self, n: usize) -> Result<Vec<Complex64>> {
        match self {
            BuilderMatrix::Scalar(c) => {
                let mut m = identity_matrix(n);
                for v in m.iter_mut() {
                    *v *= c.value();
                }
                Ok(m)
            }
            BuilderMatrix::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    let got = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(rows.len());
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got,
                        context: "builder coefficient matrix".into(),
                    });
                }
                Ok(rows.iter().flatten().map(|c| c.value()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Z,
    Zbar,
}

fn one() -> BuilderMatrix {
    BuilderMatrix::Scalar(Cx::Real(1.0))
}

/// Named analytic families used to sample coefficient and seed fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldBuilder {
    Zero,
    /// The identity matrix at every node.
    Identity,
    Constant {
        matrix: BuilderMatrix,
    },
    /// `sum_k c_k z^k`.
    HolomorphicPolynomial {
        coeffs: Vec<BuilderMatrix>,
    },
    /// `sum_k c_k zbar^k`.
    AntiholomorphicPolynomial {
        coeffs: Vec<BuilderMatrix>,
    },
    /// `M exp(-|z - center|^2 / sigma^2)`.
    GaussianBump {
        matrix: BuilderMatrix,
        #[serde(default)]
        center: Cx,
        sigma: f64,
    },
    /// `M exp(rate * z)` or `M exp(rate * zbar)`.
    Exponential {
        #[serde(default = "one")]
        matrix: BuilderMatrix,
        rate: Cx,
        variable: Variable,
    },
    /// `M` inside the closed disk, zero outside.
    IndicatorDisk {
        #[serde(default = "one")]
        matrix: BuilderMatrix,
        #[serde(default)]
        center: Cx,
        radius: f64,
    },
    Sum {
        terms: Vec<FieldBuilder>,
    },
    /// Nodewise matrix product of the factors, left to right.
    Product {
        factors: Vec<FieldBuilder>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Deriv {
    Dbar,
    Dz,
}

/// Builder with its matrices expanded for a fixed `N`.
#[derive(Debug, Clone)]
enum Resolved {
    Constant(Vec<Complex64>),
    Polynomial {
        coeffs: Vec<Vec<Complex64>>,
        variable: Variable,
    },
    Gaussian {
        m: Vec<Complex64>,
        center: Complex64,
        sigma: f64,
    },
    Exponential {
        m: Vec<Complex64>,
        rate: Complex64,
        variable: Variable,
    },
    Disk {
        m: Vec<Complex64>,
        center: Complex64,
        radius: f64,
    },
    Sum(Vec<Resolved>),
    Product(Vec<Resolved>),
}

impl FieldBuilder {
    fn resolve(&self, n: usize) -> Result<Resolved> {
        Ok(match self {
            FieldBuilder::Zero => Resolved::Constant(vec![Complex64::new(0.0, 0.0); n * n]),
            FieldBuilder::Identity => Resolved::Constant(identity_matrix(n)),
            FieldBuilder::Constant { matrix } => Resolved::Constant(matrix.dense(n)?),
            FieldBuilder::HolomorphicPolynomial { coeffs } => Resolved::Polynomial {
                coeffs: coeffs.iter().map(|c| c.dense(n)).collect::<Result<_>>()?,
                variable: Variable::Z,
            },
            FieldBuilder::AntiholomorphicPolynomial { coeffs } => Resolved::Polynomial {
                coeffs: coeffs.iter().map(|c| c.dense(n)).collect::<Result<_>>()?,
                variable: Variable::Zbar,
            },
            FieldBuilder::GaussianBump { matrix, center, sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "gaussian-bump sigma must be positive, got {sigma}"
                    )));
                }
                Resolved::Gaussian {
                    m: matrix.dense(n)?,
                    center: center.value(),
                    sigma: *sigma,
                }
            }
            FieldBuilder::Exponential { matrix, rate, variable } => Resolved::Exponential {
                m: matrix.dense(n)?,
                rate: rate.value(),
                variable: *variable,
            },
            FieldBuilder::IndicatorDisk { matrix, center, radius } => Resolved::Disk {
                m: matrix.dense(n)?,
                center: center.value(),
                radius: *radius,
            },
            FieldBuilder::Sum { terms } => Resolved::Sum(terms.iter().map(|t| t.resolve(n)).collect::<Result<_>>()?),
            FieldBuilder::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::Config("product builder needs at least one factor".into()));
                }
                Resolved::Product(factors.iter().map(|t| t.resolve(n)).collect::<Result<_>>()?)
            }
        })
    }

    /// Whether the family has closed-form `d/dz` and `d/dzbar` everywhere.
    pub fn is_differentiable(&self) -> bool {
        match self {
            FieldBuilder::IndicatorDisk { .. } => false,
            FieldBuilder::Sum { terms } => terms.iter().all(|t| t.is_differentiable()),
            FieldBuilder::Product { factors } => factors.iter().all(|t| t.is_differentiable()),
            _ => true,
        }
    }

    /// Sample the family at every node.
    pub fn build(&self, grid: Grid, n: usize) -> Result<MatrixField> {
        let r = self.resolve(n)?;
        Ok(MatrixField::from_fn(grid, n, |z, out| r.eval_into(n, z, out)))
    }

    /// Closed-form `d/dzbar` of the family, sampled at every node.
    pub fn build_dbar(&self, grid: Grid, n: usize) -> Result<MatrixField> {
        self.build_derivative(grid, n, Deriv::Dbar)
    }

    /// Closed-form `d/dz` of the family, sampled at every node.
    pub fn build_dz(&self, grid: Grid, n: usize) -> Result<MatrixField> {
        self.build_derivative(grid, n, Deriv::Dz)
    }

    fn build_derivative(&self, grid: Grid, n: usize, d: Deriv) -> Result<MatrixField> {
        if !self.is_differentiable() {
            return Err(Error::Config("builder has no closed-form derivative".into()));
        }
        let r = self.resolve(n)?;
        Ok(MatrixField::from_fn(grid, n, |z, out| {
            out.copy_from_slice(&r.derivative(n, z, d))
        }))
    }
}

/// Sample `builder` on `grid` with matrix size `n`.
pub fn build_field(grid: Grid, n: usize, builder: &FieldBuilder) -> Result<MatrixField> {
    builder.build(grid, n)
}

fn scaled(m: &[Complex64], s: Complex64) -> Vec<Complex64> {
    m.iter().map(|&v| v * s).collect()
}

impl Resolved {
    fn eval_into(&self, n: usize, z: Complex64, out: &mut [Complex64]) {
        out.copy_from_slice(&self.eval(n, z));
    }

    fn eval(&self, n: usize, z: Complex64) -> Vec<Complex64> {
        match self {
            Resolved::Constant(m) => m.clone(),
            Resolved::Polynomial { coeffs, variable } => {
                let w = match variable {
                    Variable::Z => z,
                    Variable::Zbar => z.conj(),
                };
                // Horner
                let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
                for c in coeffs.iter().rev() {
                    for (a, b) in acc.iter_mut().zip(c) {
                        *a = *a * w + b;
                    }
                }
                acc
            }
            Resolved::Gaussian { m, center, sigma } => {
                let r2 = (z - center).norm_sqr();
                scaled(m, Complex64::new((-r2 / (sigma * sigma)).exp(), 0.0))
            }
            Resolved::Exponential { m, rate, variable } => {
                let w = match variable {
                    Variable::Z => z,
                    Variable::Zbar => z.conj(),
                };
                scaled(m, (rate * w).exp())
            }
            Resolved::Disk { m, center, radius } => {
                if (z - center).norm() <= *radius {
                    m.clone()
                } else {
                    vec![Complex64::new(0.0, 0.0); n * n]
                }
            }
            Resolved::Sum(terms) => {
                let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
                for t in terms {
                    for (a, b) in acc.iter_mut().zip(t.eval(n, z)) {
                        *a += b;
                    }
                }
                acc
            }
            Resolved::Product(factors) => {
                let mut acc = factors[0].eval(n, z);
                let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
                for f in &factors[1..] {
                    matmul_into(n, &acc, &f.eval(n, z), &mut tmp);
                    std::mem::swap(&mut acc, &mut tmp);
                }
                acc
            }
        }
    }

    fn derivative(&self, n: usize, z: Complex64, d: Deriv) -> Vec<Complex64> {
        let zero = || vec![Complex64::new(0.0, 0.0); n * n];
        match self {
            Resolved::Constant(_) => zero(),
            Resolved::Polynomial { coeffs, variable } => {
                let active = matches!((variable, d), (Variable::Z, Deriv::Dz) | (Variable::Zbar, Deriv::Dbar));
                if !active || coeffs.len() < 2 {
                    return zero();
                }
                let w = match variable {
                    Variable::Z => z,
                    Variable::Zbar => z.conj(),
                };
                let mut acc = zero();
                for (k, c) in coeffs.iter().enumerate().skip(1).rev() {
                    for (a, b) in acc.iter_mut().zip(c) {
                        *a = *a * w + b * k as f64;
                    }
                }
                acc
            }
            Resolved::Gaussian { m, center, sigma } => {
                let r2 = (z - center).norm_sqr();
                let g = (-r2 / (sigma * sigma)).exp();
                // d|z-c|^2/dzbar = z - c, d|z-c|^2/dz = conj(z - c)
                let inner = match d {
                    Deriv::Dbar => z - center,
                    Deriv::Dz => (z - center).conj(),
                };
                scaled(m, inner * (-g / (sigma * sigma)))
            }
            Resolved::Exponential { m, rate, variable } => {
                let active = matches!((variable, d), (Variable::Z, Deriv::Dz) | (Variable::Zbar, Deriv::Dbar));
                if !active {
                    return zero();
                }
                let w = match variable {
                    Variable::Z => z,
                    Variable::Zbar => z.conj(),
                };
                scaled(m, rate * (rate * w).exp())
            }
            Resolved::Disk { .. } => unreachable!("indicator has no derivative"),
            Resolved::Sum(terms) => {
                let mut acc = zero();
                for t in terms {
                    for (a, b) in acc.iter_mut().zip(t.derivative(n, z, d)) {
                        *a += b;
                    }
                }
                acc
            }
            Resolved::Product(factors) => {
                // (f1 f2 ... fk)' = sum_i f1 .. f_i' .. fk
                let values: Vec<Vec<Complex64>> = factors.iter().map(|f| f.eval(n, z)).collect();
                let mut total = zero();
                let mut tmp = zero();
                for i in 0..factors.len() {
                    let mut acc = if i == 0 {
                        factors[0].derivative(n, z, d)
                    } else {
                        values[0].clone()
                    };
                    for (t, f) in factors.iter().enumerate().skip(1) {
                        let rhs = if t == i {
                            f.derivative(n, z, d)
                        } else {
                            values[t].clone()
                        };
                        matmul_into(n, &acc, &rhs, &mut tmp);
                        std::mem::swap(&mut acc, &mut tmp);
                    }
                    for (a, b) in total.iter_mut().zip(acc) {
                        *a += b;
                    }
                }
                total
            }
        }
    }
}
