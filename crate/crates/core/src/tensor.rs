//! Dense double-precision tensors and convolution geometry.

use crate::error::{config_err, dim_err, Result};

/// Dense N-dimensional array in row-major order.
///
/// Feature maps use the `N×C×H×W` layout and convolution kernels
/// `Cout×(Cin/g)×K×K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Only the leading (batch) axis may be empty.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().skip(1).any(|&d| d == 0) {
            return dim_err(format!("zero extent in shape {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return dim_err(format!("shape {shape:?} holds {numel} values but {} were given", data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in shape {shape:?}");
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Interprets the tensor as `N×C×H×W`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => dim_err(format!("expected a 4-d tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [n, c] => Ok((n, c)),
            _ => dim_err(format!("expected a 2-d tensor, got shape {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Geometry of a 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// `K×K` convolution with "same" padding at stride 1 (`p = K/2`).
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, groups: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, padding: kernel / 2, groups, bias: false }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize, groups: usize) -> Self {
        Self::new(in_channels, out_channels, 1, 1, groups)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        Self::new(channels, channels, kernel, stride, channels)
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return config_err(format!("convolution extents must be positive: {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return config_err(format!("channels {}→{} not divisible by groups {}", self.in_channels, self.out_channels, self.groups));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel]
    }

    /// Spatial output extent: `floor((h + 2p − K)/s) + 1`.
    pub fn out_extent(&self, extent: usize) -> Result<usize> {
        let padded = extent + 2 * self.padding;
        if padded < self.kernel {
            return dim_err(format!("input extent {extent} smaller than kernel {}", self.kernel));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_extent(h)?, self.out_extent(w)?))
    }

    /// Weight count, excluding bias.
    pub fn weight_count(&self) -> u64 {
        (self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariants() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_ok());
        assert!(Tensor::new(vec![3, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn output_extent_matches_table_transitions() {
        let s2 = ConvSpec::new(3, 32, 3, 2, 1);
        let s1 = ConvSpec::new(3, 32, 3, 1, 1);
        assert_eq!(s2.out_extent(224).unwrap(), 112);
        assert_eq!(s2.out_extent(14).unwrap(), 7);
        assert_eq!(s2.out_extent(7).unwrap(), 4);
        assert_eq!(s1.out_extent(7).unwrap(), 7);
    }

    #[test]
    fn group_divisibility() {
        assert!(ConvSpec::pointwise(144, 24, 2).validate().is_ok());
        assert!(ConvSpec::pointwise(144, 25, 2).validate().is_err());
        assert!(ConvSpec::depthwise(8, 3, 1).is_depthwise());
    }
}
