//! LU-based determinant and inverse for the small square matrices that show
//! up in the classification loss and transition-matrix validation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sign and log-magnitude of a determinant.
///
/// A singular matrix is reported as `sign == 0` with `log_abs == -inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedLogDet {
    pub sign: f64,
    pub log_abs: f64,
}

impl SignedLogDet {
    pub fn is_singular(&self) -> bool {
        self.sign == 0.0
    }

    pub fn det(&self) -> f64 {
        if self.is_singular() {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    pub fn abs_det(&self) -> f64 {
        if self.is_singular() {
            0.0
        } else {
            self.log_abs.exp()
        }
    }
}

/// In-place LU factorization with partial pivoting. `lu` holds `L` (unit
/// diagonal, below) and `U` (on and above the diagonal) on return.
struct Lu {
    lu: Tensor,
    perm: Vec<usize>,
    parity: f64,
    singular: bool,
}

fn lu_decompose(a: &Tensor) -> Result<Lu> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut parity = 1.0;
    let mut singular = false;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            singular = true;
            continue;
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            perm.swap(k, p);
            parity = -parity;
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            if factor != 0.0 {
                for j in k + 1..n {
                    let ukj = lu[(k, j)];
                    lu[(i, j)] -= factor * ukj;
                }
            }
        }
    }
    Ok(Lu {
        lu,
        perm,
        parity,
        singular,
    })
}

pub fn slogdet(a: &Tensor) -> Result<SignedLogDet> {
    let f = lu_decompose(a)?;
    if f.singular {
        return Ok(SignedLogDet {
            sign: 0.0,
            log_abs: f64::NEG_INFINITY,
        });
    }
    let mut sign = f.parity;
    let mut log_abs = 0.0;
    for i in 0..a.rows() {
        let u = f.lu[(i, i)];
        if u < 0.0 {
            sign = -sign;
        }
        log_abs += u.abs().ln();
    }
    Ok(SignedLogDet { sign, log_abs })
}

#[allow(clippy::needless_range_loop)]
pub fn inverse(a: &Tensor) -> Result<Tensor> {
    let f = lu_decompose(a)?;
    if f.singular {
        return Err(Error::Singular(format!(
            "{}x{} matrix has no inverse",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut inv = Tensor::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        // Solve A x = e_j, i.e. L U x = P e_j.
        for (i, c) in col.iter_mut().enumerate() {
            *c = if f.perm[i] == j { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= f.lu[(i, k)] * col[k];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= f.lu[(i, k)] * col[k];
            }
            col[i] = s / f.lu[(i, i)];
        }
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// Gradient of `log|det A|` with respect to `A`, which is `A⁻ᵀ`.
pub fn slogdet_backward(a: &Tensor) -> Result<Tensor> {
    Ok(inverse(a)?.transpose())
}
