//! Dense H×W×C image tensors.

use crate::error::{Error, Result};

/// Shape of an image tensor: height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Dimension(format!(
                "all dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        Ok(())
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        Self::new(self.height, self.width, channels)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Row-major, channel-last real image. Element `(i, j, k)` lives at
/// `(i * width + j) * channels + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    dims: Dims,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds a tensor, checking length and finiteness.
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "data length {} does not match {} ({} elements)",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at element {pos}")));
        }
        Ok(Self { dims, data })
    }

    /// Unchecked constructor for internal arithmetic whose inputs are already valid.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Self::from_raw(dims, vec![0.0; dims.len()]))
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        dims.validate()?;
        Self::new(dims, vec![value; dims.len()])
    }

    /// Builds a tensor from `f(i, j, k)`.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..dims.height {
            for j in 0..dims.width {
                for k in 0..dims.channels {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.width + j) * self.dims.channels + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    /// Copies channel `k` out as a contiguous H×W plane.
    pub fn channel_plane(&self, k: usize) -> Vec<f64> {
        let c = self.dims.channels;
        self.data.iter().skip(k).step_by(c).copied().collect()
    }

    /// Reassembles a tensor from per-channel H×W planes.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let dims = Dims::new(height, width, planes.len());
        dims.validate()?;
        let c = planes.len();
        let mut data = vec![0.0; dims.len()];
        for (k, plane) in planes.iter().enumerate() {
            if plane.len() != dims.pixels() {
                return Err(Error::Dimension(format!(
                    "plane {k} has {} pixels, expected {}",
                    plane.len(),
                    dims.pixels()
                )));
            }
            for (p, v) in plane.iter().enumerate() {
                data[p * c + k] = *v;
            }
        }
        Self::new(dims, data)
    }

    pub fn check_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other, "elementwise operation")?;
        Ok(Self::from_raw(
            self.dims,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other, "inner product")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other, "mse")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns a numeric error naming `context` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(Error::Numeric(format!(
                "{context}: non-finite value at element {pos}"
            ))),
            None => Ok(()),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::Dimension(format!(
                "channel concat: {} vs {}",
                self.dims, other.dims
            )));
        }
        let (ca, cb) = (self.channels(), other.channels());
        let dims = self.dims.with_channels(ca + cb);
        let mut data = Vec::with_capacity(dims.len());
        for p in 0..self.dims.pixels() {
            data.extend_from_slice(&self.data[p * ca..(p + 1) * ca]);
            data.extend_from_slice(&other.data[p * cb..(p + 1) * cb]);
        }
        Ok(Self::from_raw(dims, data))
    }

    /// Keeps channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let c = self.channels();
        if start >= end || end > c {
            return Err(Error::Dimension(format!(
                "channel slice {start}..{end} out of range for {c} channels"
            )));
        }
        let dims = self.dims.with_channels(end - start);
        let mut data = Vec::with_capacity(dims.len());
        for p in 0..self.dims.pixels() {
            data.extend_from_slice(&self.data[p * c + start..p * c + end]);
        }
        Ok(Self::from_raw(dims, data))
    }

    /// Clamps every entry into `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }
}
