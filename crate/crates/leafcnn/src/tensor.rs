//! Minimal dense array type: up to four axes, row-major, channels-last
//! (batch, height, width, channels). Everything flowing through the network
//! is one of these.

use crate::error::{Error, Result};
use crate::parallel;
use std::fmt;

/// Numeric precision of a tensor or a whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Scalar element type. Training runs in `f32`; `f64` exists for gradient
/// verification, where single-precision noise would mask real errors.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + Default + 'static
{
    const PRECISION: Precision;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTE_WIDTH: usize;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTE_WIDTH: usize = 4;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTE_WIDTH: usize = 8;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Ordered list of 1 to 4 positive extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::shape(format!(
                "shape must have 1-4 axes, got {}",
                dims.len()
            )));
        }
        let mut count: u64 = 1;
        for &d in dims {
            if d == 0 {
                return Err(Error::shape("zero extent is forbidden"));
            }
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| Error::shape("element count overflows u64"))?;
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // extents are all >= 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Dense row-major tensor (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Shape,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Every element set to `value`.
    pub fn fill(shape: Shape, value: E) -> Self {
        let n = shape.len();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::fill(shape, E::zero())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Reinterpret as a new shape with the same element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} elements into {}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Convert every element to another precision via f64.
    pub fn cast<F: Element>(self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: E) -> Self {
        self.map(|x| x * k)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Smallest index attaining the maximum. Ties break to the lowest index.
pub fn argmax<E: Element>(v: &[E]) -> Result<usize> {
    if v.is_empty() {
        return Err(Error::argument("argmax of empty vector"));
    }
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Matrix product of `a` (m x k, row-major) and `b` (k x p, row-major) into
/// an m x p output. Accumulation over the inner axis runs in ascending order,
/// so results are bit-reproducible; rows are independent and may be computed
/// in parallel.
pub fn matmul_slices<E: Element>(
    a: &[E],
    b: &[E],
    out: &mut [E],
    m: usize,
    k: usize,
    p: usize,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * p);
    assert_eq!(out.len(), m * p);
    parallel::for_each_chunk_mut(out, p, |i, row| {
        for x in row.iter_mut() {
            *x = E::zero();
        }
        for t in 0..k {
            let av = a[i * k + t];
            let brow = &b[t * p..(t + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    });
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (ad, bd) = (a.shape().dims(), b.shape().dims());
    if ad.len() != 2 || bd.len() != 2 {
        return Err(Error::shape("matmul expects rank-2 tensors"));
    }
    let (m, k, k2, p) = (ad[0], ad[1], bd[0], bd[1]);
    if k != k2 {
        return Err(Error::shape(format!(
            "inner extents disagree: {k} vs {k2}"
        )));
    }
    let mut out = Tensor::zeros(Shape::new(&[m, p])?);
    matmul_slices(a.data(), b.data(), out.data_mut(), m, k, p);
    Ok(out)
}
