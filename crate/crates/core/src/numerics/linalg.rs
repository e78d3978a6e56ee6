use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular `L` with `a = L·Lᵀ`. `label` names the matrix in errors.
pub fn cholesky(a: &Matrix, label: &str) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension {
            op: "cholesky",
            left: a.shape(),
            right: (n, n),
        });
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                layer: label.to_string(),
            });
        }
        let ljj = diag.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
fn invert_lower(l: &Matrix) -> Matrix {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l.get(i, k) * inv.get(k, col);
            }
            inv.set(i, col, s / l.get(i, i));
        }
    }
    inv
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Matrix, label: &str) -> Result<Matrix> {
    let l = cholesky(a, label)?;
    let l_inv = invert_lower(&l);
    // a⁻¹ = L⁻ᵀ · L⁻¹
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += l_inv.get(k, i) * l_inv.get(k, j);
            }
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

/// Upper-triangular `U` with `a⁻¹ = Uᵀ·U`.
///
/// Row `j` of `U` carries the inverse-Hessian information that remains after
/// columns `< j` have been eliminated, which is what sequential OBS updates need.
pub fn upper_cholesky_of_inverse(a: &Matrix, label: &str) -> Result<Matrix> {
    let inv = spd_inverse(a, label)?;
    Ok(cholesky(&inv, label)?.transpose())
}
