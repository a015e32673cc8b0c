//! Dense row-major matrices and the handful of matrix functions the
//! controllers need: powers, inverses, spectral radius, the matrix
//! exponential and the continuous-time controllability Gramian.
//!
//! Eigenvalue problems and the exponential are delegated to `nalgebra`;
//! everything else is plain loops over row-major storage.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Iteration cap for the eigen-solvers.
pub const EIGEN_MAX_ITER: usize = 10_000;
/// Convergence tolerance for the eigen-solvers.
pub const EIGEN_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// A 1×1 matrix.
    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(
                "from_row_major",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} entries, expected {ncols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(nrows, ncols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn try_mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &l) in lhs_row.iter().enumerate() {
                if l == 0.0 {
                    continue;
                }
                for (o, &r) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += l * r;
                }
            }
        }
        Ok(out)
    }

    pub fn try_add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn try_sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::dim(
                op,
                format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(
                "mul_vec",
                format!("{}x{} times vector of length {}", self.rows, self.cols, v.len()),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `vᵀ M v` for square `M`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        let mv = self.mul_vec(v)?;
        Ok(dot(v, &mv))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest asymmetry `|M_ij − M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&self) -> Matrix {
        let t = self.transpose();
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&t.data).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// Spectral (operator 2-) norm.
    pub fn norm2(&self) -> Result<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(0.0);
        }
        let gram = self.transpose().try_mul(self)?;
        let eig = symmetric_eigenvalues(&gram)?;
        Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
    }

    /// Inverse by LU with partial pivoting. A pivot below
    /// `1e-14 · max|M|` counts as singular.
    pub fn inverse(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::dim(
                "inverse",
                format!("{}x{} is not square", self.rows, self.cols),
            ));
        }
        let n = self.rows;
        let scale = self.max_abs();
        if scale == 0.0 {
            return Err(Error::NotInvertible);
        }
        let mut lu = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| lu[a * n + col].abs().total_cmp(&lu[b * n + col].abs()))
                .unwrap_or(col);
            let pivot = lu[pivot_row * n + col];
            if pivot.abs() <= 1e-14 * scale {
                return Err(Error::NotInvertible);
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                    inv.swap(col * n + j, pivot_row * n + j);
                }
            }
            let p = 1.0 / pivot;
            for j in 0..n {
                lu[col * n + j] *= p;
                inv[col * n + j] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = lu[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    lu[r * n + j] -= factor * lu[col * n + j];
                    inv[r * n + j] -= factor * inv[col * n + j];
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: n,
            data: inv,
        })
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j] = m[(i, j)];
            }
        }
        out
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.try_mul(rhs).expect("matrix product dimension mismatch")
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.try_add(rhs).expect("matrix sum dimension mismatch")
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.try_sub(rhs).expect("matrix difference dimension mismatch")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn require_square(a: &Matrix, op: &'static str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::dim(op, format!("{}x{} is not square", a.rows, a.cols)))
    }
}

/// `A^k` by repeated multiplication; `A^0 = I`.
pub fn mat_power(a: &Matrix, k: usize) -> Result<Matrix> {
    require_square(a, "mat_power")?;
    let mut out = Matrix::identity(a.rows);
    for _ in 0..k {
        out = &out * a;
    }
    Ok(out)
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    require_square(a, "symmetric_eigenvalues")?;
    if a.rows == 0 {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(a.symmetrize().to_nalgebra(), EIGEN_TOL, EIGEN_MAX_ITER)
        .ok_or(Error::NoConvergence {
            what: "symmetric eigen-solver",
            iterations: EIGEN_MAX_ITER,
            estimate: f64::NAN,
        })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Largest eigenvalue modulus. Closed form for n ≤ 2, real Schur
/// decomposition otherwise.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    require_square(a, "spectral_radius")?;
    match a.rows {
        0 => Ok(0.0),
        1 => Ok(a.data[0].abs()),
        2 => {
            let (p, q, r, s) = (a.data[0], a.data[1], a.data[2], a.data[3]);
            let half_trace = 0.5 * (p + s);
            // (p - s)^2/4 + qr avoids cancellation in trace^2/4 - det.
            let disc = 0.25 * (p - s) * (p - s) + q * r;
            if disc >= 0.0 {
                let root = disc.sqrt();
                Ok((half_trace + root).abs().max((half_trace - root).abs()))
            } else {
                // complex pair: modulus squared is the determinant
                Ok((half_trace * half_trace - disc).sqrt())
            }
        }
        _ => {
            let m = a.to_nalgebra();
            match Schur::try_new(m, EIGEN_TOL, EIGEN_MAX_ITER) {
                Some(schur) => Ok(schur
                    .complex_eigenvalues()
                    .iter()
                    .fold(0.0, |acc: f64, z| acc.max(z.norm()))),
                None => Err(Error::NoConvergence {
                    what: "Schur eigen-solver",
                    iterations: EIGEN_MAX_ITER,
                    estimate: gelfand_estimate(a),
                }),
            }
        }
    }
}

/// `‖A^64‖^(1/64)`, a fallback estimate of the spectral radius.
fn gelfand_estimate(a: &Matrix) -> f64 {
    let mut p = a.clone();
    let mut log_scale = 0.0;
    for _ in 0..6 {
        p = &p * &p;
        log_scale *= 2.0;
        let s = p.max_abs();
        if s == 0.0 || !s.is_finite() {
            return 0.0;
        }
        p = p.scale(1.0 / s);
        log_scale += s.ln();
    }
    ((log_scale + p.frobenius_norm().ln()) / 64.0).exp()
}

/// `e^A` by scaling and squaring with a Padé approximant.
pub fn matrix_exponential(a: &Matrix) -> Result<Matrix> {
    require_square(a, "matrix_exponential")?;
    if a.rows == 0 {
        return Ok(a.clone());
    }
    Ok(Matrix::from_nalgebra(&a.to_nalgebra().exp()))
}

/// `∫₀^T e^{At} B Bᵀ e^{Aᵀt} dt` via the exponential of the block matrix
/// `[[-A, BBᵀ], [0, Aᵀ]]·T`: with blocks `F12` and `F22 = e^{AᵀT}`, the
/// Gramian is `F22ᵀ F12`.
pub fn continuous_gramian(a: &Matrix, b: &Matrix, horizon: f64) -> Result<Matrix> {
    require_square(a, "continuous_gramian")?;
    if b.rows != a.rows {
        return Err(Error::dim(
            "continuous_gramian",
            format!("A is {}x{} but B has {} rows", a.rows, a.cols, b.rows),
        ));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Parameter(format!(
            "Gramian horizon must be positive, got {horizon}"
        )));
    }
    let n = a.rows;
    let bbt = b * &b.transpose();
    let at = a.transpose();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            block.set(i, j, -a.get(i, j) * horizon);
            block.set(i, n + j, bbt.get(i, j) * horizon);
            block.set(n + i, n + j, at.get(i, j) * horizon);
        }
    }
    let e = matrix_exponential(&block)?;
    let mut f12 = Matrix::zeros(n, n);
    let mut f22 = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            f12.set(i, j, e.get(i, n + j));
            f22.set(i, j, e.get(n + i, n + j));
        }
    }
    Ok((&f22.transpose() * &f12).symmetrize())
}

/// Exact decimal arithmetic on the shortest round-trip representation of
/// `f64` values, rounded once at the end. Used where inputs are decimal
/// literals and the result must be the correctly rounded decimal value.
pub mod decimal {
    /// `(mantissa, exponent)` with value `mantissa · 10^exponent`.
    fn parse(x: f64) -> Option<(i128, i32)> {
        if !x.is_finite() {
            return None;
        }
        let s = format!("{x:e}");
        let (mant, exp) = s.split_once('e')?;
        let exp: i32 = exp.parse().ok()?;
        let negative = mant.starts_with('-');
        let mant = mant.trim_start_matches('-');
        let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
        let digits: i128 = format!("{int_part}{frac_part}").parse().ok()?;
        let value = if negative { -digits } else { digits };
        Some((value, exp - frac_part.len() as i32))
    }

    fn render(mantissa: i128, exponent: i32) -> f64 {
        format!("{mantissa}e{exponent}").parse().unwrap_or(f64::NAN)
    }

    /// `x · y`, falling back to the floating-point product when the inputs
    /// are not finite or the exact product does not fit.
    pub fn mul(x: f64, y: f64) -> f64 {
        match (parse(x), parse(y)) {
            (Some((mx, ex)), Some((my, ey))) => match mx.checked_mul(my) {
                Some(m) => render(m, ex + ey),
                None => x * y,
            },
            _ => x * y,
        }
    }

    /// `x + y` with the same fallback rule as [`mul`].
    pub fn add(x: f64, y: f64) -> f64 {
        let (Some((mx, ex)), Some((my, ey))) = (parse(x), parse(y)) else {
            return x + y;
        };
        let e = ex.min(ey);
        let align = |m: i128, from: i32| -> Option<i128> {
            let shift = u32::try_from(from - e).ok()?;
            10i128.checked_pow(shift)?.checked_mul(m)
        };
        match (align(mx, ex), align(my, ey)) {
            (Some(a), Some(b)) => a.checked_add(b).map_or(x + y, |m| render(m, e)),
            _ => x + y,
        }
    }
}
