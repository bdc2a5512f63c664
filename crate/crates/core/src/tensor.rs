//! Dense row-major tensors.
//!
//! Shapes follow three conventions throughout the crate:
//! `[C, H, W, D]` for feature maps, `[H, W, D]` for volumes and masks,
//! and `[C_out, C_in, k, k, k]` for convolution kernels. Scalars are
//! rank-1 tensors of length one.

use crate::error::{Error, Result};

/// Element type for all tensor data. Defaults to `f64`; the `f32` cargo
/// feature switches storage and arithmetic to single precision.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Builds a tensor from raw data, validating the element count and
    /// rejecting non-finite values and zero-sized dimensions.
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {expect} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Tensor::from_vec".into(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for values produced by already-validated code
    /// paths. Checks element count only in debug builds.
    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<Real>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        let n = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: Real) -> Self {
        Self::new_unchecked(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// The value of a length-one tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    /// Last three dimensions, i.e. the spatial extent of a feature map,
    /// volume or kernel.
    pub fn spatial(&self) -> Result<[usize; 3]> {
        if self.rank() < 3 {
            return Err(Error::RankMismatch {
                context: "spatial dims".into(),
                expected: 3,
                shape: self.shape.clone(),
            });
        }
        let r = self.rank();
        Ok([self.shape[r - 3], self.shape[r - 2], self.shape[r - 1]])
    }

    /// Channel count of a `[C, H, W, D]` feature map.
    pub fn channels(&self) -> Result<usize> {
        if self.rank() != 4 {
            return Err(Error::RankMismatch {
                context: "channels".into(),
                expected: 4,
                shape: self.shape.clone(),
            });
        }
        Ok(self.shape[0])
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every element is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor::new_unchecked(shape.to_vec(), self.data.clone()))
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor::new_unchecked(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Flat index into an `[H, W, D]` volume.
#[inline(always)]
pub fn idx3(shape: [usize; 3], h: usize, w: usize, d: usize) -> usize {
    (h * shape[1] + w) * shape[2] + d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::from_vec(&[1], vec![Real::NAN]).is_err());
        assert!(Tensor::from_vec(&[1], vec![Real::INFINITY]).is_err());
    }

    #[test]
    fn shape_helpers() {
        let t = Tensor::zeros(&[4, 6, 8, 10]);
        assert_eq!(t.channels().unwrap(), 4);
        assert_eq!(t.spatial().unwrap(), [6, 8, 10]);
        assert_eq!(t.len(), 4 * 6 * 8 * 10);
        assert!(Tensor::zeros(&[3, 3]).spatial().is_err());
    }

    #[test]
    fn binary_detection() {
        assert!(Tensor::from_vec(&[4], vec![0.0, 1.0, 1.0, 0.0]).unwrap().is_binary());
        assert!(!Tensor::from_vec(&[2], vec![0.0, 0.5]).unwrap().is_binary());
    }

    #[test]
    fn idx3_is_row_major() {
        // Depth is the fastest-varying axis.
        assert_eq!(idx3([2, 3, 4], 0, 0, 1), 1);
        assert_eq!(idx3([2, 3, 4], 0, 1, 0), 4);
        assert_eq!(idx3([2, 3, 4], 1, 0, 0), 12);
        assert_eq!(idx3([2, 3, 4], 1, 2, 3), 23);
    }
}
