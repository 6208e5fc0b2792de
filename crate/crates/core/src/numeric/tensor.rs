use std::fmt;

use crate::error::{Error, Result};

/// Element type for every tensor in the crate.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Dense row-major tensor of rank 0, 1 or 2.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(x: Real) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<Real>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: Real) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a rank-0 tensor (or the first element of anything else).
    pub fn item(&self) -> Real {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> Real {
        self.data.iter().map(|x| x * x).sum::<Real>().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Real {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_vector(&self, op: &'static str) -> Result<usize> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            s => Err(Error::shape(op, format!("expected a vector, got {:?}", s))),
        }
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {:?}", s))),
        }
    }

    pub(crate) fn expect_scalar(&self, op: &'static str) -> Result<Real> {
        if self.shape.is_empty() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(
                op,
                format!("expected a scalar, got {:?}", self.shape),
            ))
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: Real) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(Real, Real) -> Real,
    ) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `M x` for a `[r, c]` matrix and a length-`c` vector.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = self.expect_matrix("matvec")?;
        let n = x.expect_vector("matvec")?;
        if n != c {
            return Err(Error::shape(
                "matvec",
                format!("matrix [{}, {}] times vector [{}]", r, c, n),
            ));
        }
        let out = self
            .data
            .chunks_exact(c)
            .map(|row| row.iter().zip(&x.data).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Tensor::vector(out))
    }

    /// `Mᵀ y` for a `[r, c]` matrix and a length-`r` vector.
    pub fn matvec_t(&self, y: &Tensor) -> Result<Tensor> {
        let (r, c) = self.expect_matrix("matvec_t")?;
        let n = y.expect_vector("matvec_t")?;
        if n != r {
            return Err(Error::shape(
                "matvec_t",
                format!("matrix [{}, {}]^T times vector [{}]", r, c, n),
            ));
        }
        let mut out = vec![0.0; c];
        for (row, &yi) in self.data.chunks_exact(c).zip(&y.data) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * yi;
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &Tensor, v: &Tensor) -> Tensor {
        let r = u.len();
        let c = v.len();
        let mut data = Vec::with_capacity(r * c);
        for &a in &u.data {
            data.extend(v.data.iter().map(|b| a * b));
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }
}
