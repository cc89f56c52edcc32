//! LU factorisation with partial pivoting, and what it gives us: solves,
//! inverses and determinants of small dense matrices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Packed `PA = LU` factors of a square matrix.
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Tensor<T>) -> Result<Self> {
        let (n, m) = a.dims2()?;
        if n != m {
            return Err(Error::dim("lu", a.shape(), &[n, n]));
        }
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = lu.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
        let tiny = scale * T::epsilon() * T::of(n.max(1) as f64);

        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= tiny || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular matrix in LU factorisation (pivot {} at column {k})",
                    pivot
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / d;
                lu[i * n + k] = factor;
                if factor != T::zero() {
                    for j in k + 1..n {
                        let u = lu[k * n + j];
                        lu[i * n + j] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, sign })
    }

    pub fn determinant(&self) -> T {
        (0..self.n).fold(self.sign, |acc, i| acc * self.lu[i * self.n + i])
    }

    /// Solves `A X = B` for a matrix right-hand side.
    pub fn solve(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.n;
        let (bn, p) = b.dims2()?;
        if bn != n {
            return Err(Error::dim("lu solve", &[n, n], b.shape()));
        }
        let mut x = vec![T::zero(); n * p];
        for (i, &src) in self.perm.iter().enumerate() {
            x[i * p..(i + 1) * p].copy_from_slice(&b.data()[src * p..(src + 1) * p]);
        }
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l != T::zero() {
                    for j in 0..p {
                        let v = x[k * p + j];
                        x[i * p + j] -= l * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[i * n + k];
                if u != T::zero() {
                    for j in 0..p {
                        let v = x[k * p + j];
                        x[i * p + j] -= u * v;
                    }
                }
            }
            let d = self.lu[i * n + i];
            for j in 0..p {
                x[i * p + j] /= d;
            }
        }
        Tensor::new(&[n, p], x)
    }
}

pub fn inverse<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let lu = Lu::factor(a)?;
    lu.solve(&Tensor::identity(lu.n))
}

pub fn determinant<T: Scalar>(a: &Tensor<T>) -> Result<T> {
    match Lu::factor(a) {
        Ok(lu) => Ok(lu.determinant()),
        Err(Error::Numerical(_)) => Ok(T::zero()),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_hand_matrix() {
        let a: Tensor<f64> = Tensor::from_rows(&[vec![4.0, 7.0], vec![2.0, 6.0]]).unwrap();
        let inv = inverse(&a).unwrap();
        let expect = Tensor::from_rows(&[vec![0.6, -0.7], vec![-0.2, 0.4]]).unwrap();
        assert!(inv.max_abs_diff(&expect).unwrap() < 1e-14);
        assert!((determinant(&a).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a: Tensor<f64> = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((determinant(&a).unwrap() + 1.0).abs() < 1e-15);
        let inv = inverse(&a).unwrap();
        assert!(inv.max_abs_diff(&a).unwrap() < 1e-15);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(inverse(&a), Err(Error::Numerical(_))));
        assert_eq!(determinant(&a).unwrap(), 0.0);
    }
}
