//! Dense row-major tensor with an optional gradient buffer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major multi-dimensional array with an optional gradient buffer
/// of identical length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                format!("tensor from_vec with shape {shape:?}"),
                n,
                data.len(),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Mutable data together with a read view of the gradient (split borrow
    /// for optimizer updates).
    pub fn data_and_grad(&mut self) -> (&mut [S], Option<&[S]>) {
        (&mut self.data, self.grad.as_deref())
    }

    /// Raw buffer access for structural edits that resize the tensor. The
    /// caller must restore `product(shape) == data.len()` via
    /// [`Tensor::reshape_in_place`] before the tensor is used again.
    pub(crate) fn data_mut_vec(&mut self) -> &mut Vec<S> {
        &mut self.data
    }

    pub(crate) fn reshape_in_place(&mut self, shape: &[usize]) {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
    }

    pub fn grad_mut(&mut self) -> Option<&mut [S]> {
        self.grad.as_deref_mut()
    }

    /// Install a gradient buffer. Length must match the data buffer.
    pub fn set_grad(&mut self, grad: Vec<S>) {
        assert_eq!(grad.len(), self.data.len(), "grad length mismatch");
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn with_shape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                format!("reshape to {shape:?}"),
                self.data.len(),
                n,
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Expect a 4-D shape, returning the dimensions.
    pub fn dims4(&self, context: &str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::dim(
                format!("{context}: rank-4 tensor"),
                4,
                self.shape.len(),
            )),
        }
    }

    /// Expect a 2-D shape, returning the dimensions.
    pub fn dims2(&self, context: &str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [a, b] => Ok((a, b)),
            _ => Err(Error::dim(
                format!("{context}: rank-2 tensor"),
                2,
                self.shape.len(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.clone().with_shape(&[6]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.with_shape(&[7]).is_err());
    }

    #[test]
    #[should_panic(expected = "grad length mismatch")]
    fn set_grad_rejects_wrong_length() {
        let mut t = Tensor::<f32>::zeros(&[2, 2]);
        t.set_grad(vec![0.0; 3]);
    }
}
