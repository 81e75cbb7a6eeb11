//! Dense row-major tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense array of scalars in row-major order.
///
/// Vectors have shape `[n]`, matrices `[rows, cols]`. The only rank-3
/// tensor in the model is the stacked bilinear weight `[labels, d, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) && !data.is_empty() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Entries drawn independently from `uniform(-range, range)`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, range: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for x in t.data.iter_mut() {
            *x = T::of(rng.gen_range(-range..range));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of a matrix; a vector is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [n] => Ok((1, n)),
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("dims2", &self.shape, &[])),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2().expect("row() on a matrix");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// `self · other` for `[m, k] × [k, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` for `[m, k] × [n, k]`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (n, k2) = other.dims2()?;
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::shape("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out.push(dot(a_row, b_row));
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `selfᵀ · other` for `[k, m] × [k, n]`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, m) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::shape("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let b = m(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(Tensor::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn row_times_column() {
        let a = m(&[&[1.0, 2.0]]);
        let b = m(&[&[3.0], &[4.0]]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_against_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f64>::uniform(vec![3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(vec![4, 2], 1.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::<f64>::uniform(vec![3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(vec![5, 4], 1.0, &mut rng);
        let bt = transpose(&b);
        let nt = a.matmul_nt(&b).unwrap();
        let plain = a.matmul(&bt).unwrap();
        for (x, y) in nt.data().iter().zip(plain.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Tensor::<f64>::uniform(vec![3, 5], 1.0, &mut rng);
        let tn = a.matmul_tn(&c).unwrap();
        let plain = transpose(&a).matmul(&c).unwrap();
        assert_eq!(tn.shape(), &[4, 5]);
        for (x, y) in tn.data().iter().zip(plain.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn transpose(t: &Tensor<f64>) -> Tensor<f64> {
        let (r, c) = t.dims2().unwrap();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        Tensor::new(vec![c, r], data).unwrap()
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
