use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;
use crate::error::{invalid, mismatch, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major with width
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<Scalar>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<Scalar>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(mismatch!("tensor {dims:?} needs {len} values, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    pub fn item(&self, b: usize) -> &[Scalar] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [Scalar] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_channels(&self, expected: usize, what: &str) -> Result<()> {
        if self.dims[1] != expected {
            return Err(invalid!("{what} expects {expected} input channels, got {}", self.dims[1]));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(invalid!("cannot add tensors {:?} and {:?}", self.dims, other.dims));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
        Ok(())
    }
}

/// Stacks `a` and `b` along the channel axis.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(invalid!("cannot concatenate {:?} with {:?}", a.dims(), b.dims()));
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor4::new([n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients: the first `ca` channels and
/// the rest.
pub fn split_channels(t: &Tensor4, ca: usize) -> Result<(Tensor4, Tensor4)> {
    let [n, c, h, w] = t.dims();
    if ca > c {
        return Err(invalid!("cannot split {c} channels at {ca}"));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for i in 0..n {
        let item = t.item(i);
        a.extend_from_slice(&item[..ca * hw]);
        b.extend_from_slice(&item[ca * hw..]);
    }
    Ok((Tensor4::new([n, ca, h, w], a)?, Tensor4::new([n, c - ca, h, w], b)?))
}
