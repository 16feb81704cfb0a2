use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an optional gradient accumulator.
///
/// Every op in this crate treats tensors as matrices: a rank-1 shape `[n]`
/// behaves as a single row `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!(
                "unsupported tensor shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape("tensor", &shape, &[values.len()]));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn row(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![1, n], values)
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1, 1],
            values: vec![v],
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    /// Same tensor with a zeroed gradient slot attached.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![T::zero(); self.values.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            shape,
            values,
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn rank_one_is_a_row() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!((t.rows(), t.cols()), (1, 3));
    }

    #[test]
    fn grad_slot_matches_shape() {
        let t = Tensor::<f32>::zeros(vec![2, 2]).unwrap().with_grad();
        assert_eq!(t.grad().unwrap().len(), 4);
    }
}
