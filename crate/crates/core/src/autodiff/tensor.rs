use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major N-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    /// Builds from `f64` values, converting to `T`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// NaN/Inf check.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::contract("tensor contains non-finite values"))
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Extents of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::dim(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [a, b] => Ok((a, b)),
            _ => Err(Error::dim(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[self.shape.len() - 1];
        &self.data[i * w..(i + 1) * w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn validity_check_flags_nan() {
        let t = Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(!t.is_finite());
        assert!(t.validate().is_err());
    }

    #[test]
    fn item_only_for_scalars() {
        assert_eq!(Tensor::scalar(3.0f64).item().unwrap(), 3.0);
        assert!(Tensor::<f64>::zeros(&[2]).item().is_err());
    }
}
