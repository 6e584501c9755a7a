//! Dense row-major tensors over `f64`, real and complex.
//!
//! The whole pipeline works on small `(channels, height, width)` tensors, so
//! everything here is plain contiguous storage with explicit loops. All public
//! constructors reject non-finite entries; operations that can produce NaN/Inf
//! are expected to validate their own outputs.

use crate::error::{Error, Result};

/// Shape of a tensor as `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

/// Real-valued tensor with row-major `(c, h, w)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(shape: Shape) -> Self {
        let (c, h, w) = shape;
        RealTensor {
            shape,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let (c, h, w) = shape;
        RealTensor {
            shape,
            data: vec![value; c * h * w],
        }
    }

    /// Build from raw row-major data. Fails on length mismatch or non-finite entries.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let (c, h, w) = shape;
        if data.len() != c * h * w {
            return Err(Error::dim(format!(
                "data length {} does not match shape {}x{}x{}",
                data.len(),
                c,
                h,
                w
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite entry in tensor data"));
        }
        Ok(RealTensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.0
    }

    pub fn height(&self) -> usize {
        self.shape.1
    }

    pub fn width(&self) -> usize {
        self.shape.2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.shape;
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.shape;
        self.data[(c * h + y) * w + x] = v;
    }

    /// Borrow one channel plane as a slice of length `h*w`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.shape;
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let (_, h, w) = self.shape;
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    /// Extract a single channel as a `1xh x w` tensor.
    pub fn channel_tensor(&self, c: usize) -> RealTensor {
        let (_, h, w) = self.shape;
        RealTensor {
            shape: (1, h, w),
            data: self.channel(c).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealTensor {
        RealTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &RealTensor, f: impl Fn(f64, f64) -> f64) -> Result<RealTensor> {
        self.check_same_shape(other)?;
        Ok(RealTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &RealTensor) -> Result<RealTensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealTensor) -> Result<RealTensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> RealTensor {
        self.map(|v| alpha * v)
    }

    /// `alpha * self + beta * other`.
    pub fn lerp(&self, other: &RealTensor, alpha: f64, beta: f64) -> Result<RealTensor> {
        self.zip_map(other, |a, b| alpha * a + beta * b)
    }

    pub fn clamp01(&self) -> RealTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &RealTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Complex-valued tensor stored as parallel real/imaginary arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Shape,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexTensor {
    pub fn zeros(shape: Shape) -> Self {
        let (c, h, w) = shape;
        let n = c * h * w;
        ComplexTensor {
            shape,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_parts(shape: Shape, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let (c, h, w) = shape;
        if re.len() != c * h * w || im.len() != re.len() {
            return Err(Error::dim(format!(
                "re/im lengths {}/{} do not match shape {}x{}x{}",
                re.len(),
                im.len(),
                c,
                h,
                w
            )));
        }
        if !re.iter().chain(im.iter()).all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite entry in complex tensor"));
        }
        Ok(ComplexTensor { shape, re, im })
    }

    /// Promote a real tensor to complex with zero imaginary part.
    pub fn from_real(t: &RealTensor) -> Self {
        ComplexTensor {
            shape: t.shape(),
            re: t.data().to_vec(),
            im: vec![0.0; t.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.0
    }

    pub fn height(&self) -> usize {
        self.shape.1
    }

    pub fn width(&self) -> usize {
        self.shape.2
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> (f64, f64) {
        let (_, h, w) = self.shape;
        let i = (c * h + y) * w + x;
        (self.re[i], self.im[i])
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, re: f64, im: f64) {
        let (_, h, w) = self.shape;
        let i = (c * h + y) * w + x;
        self.re[i] = re;
        self.im[i] = im;
    }

    /// Real part as a tensor.
    pub fn real(&self) -> RealTensor {
        RealTensor {
            shape: self.shape,
            data: self.re.clone(),
        }
    }

    /// Imaginary part as a tensor.
    pub fn imag(&self) -> RealTensor {
        RealTensor {
            shape: self.shape,
            data: self.im.clone(),
        }
    }

    /// Extract one channel as a `1 x h x w` complex tensor.
    pub fn channel_tensor(&self, c: usize) -> ComplexTensor {
        let (_, h, w) = self.shape;
        let n = h * w;
        ComplexTensor {
            shape: (1, h, w),
            re: self.re[c * n..(c + 1) * n].to_vec(),
            im: self.im[c * n..(c + 1) * n].to_vec(),
        }
    }

    /// Squared magnitudes, elementwise.
    pub fn sq_magnitudes(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(self.im.iter())
            .map(|(&r, &i)| r * r + i * i)
            .collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.sq_magnitudes().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(self.im.iter()).all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &ComplexTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(RealTensor::from_vec((1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(RealTensor::from_vec((1, 1, 2), vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn channel_views_are_consistent() {
        let mut t = RealTensor::zeros((2, 2, 2));
        t.set(1, 1, 0, 7.0);
        assert_eq!(t.channel(1)[2], 7.0);
        assert_eq!(t.channel_tensor(1).at(0, 1, 0), 7.0);
    }

    #[test]
    fn complex_parts_round_trip() {
        let c = ComplexTensor::from_parts((1, 1, 2), vec![1.0, 2.0], vec![-1.0, 0.5]).unwrap();
        assert_eq!(c.real().data(), &[1.0, 2.0]);
        assert_eq!(c.imag().data(), &[-1.0, 0.5]);
        assert_eq!(c.at(0, 0, 1), (2.0, 0.5));
    }
}
