//! Planar `C x H x W` grids of `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// A dense channel-major grid. Used both for images (three channels in
/// `[0, 1]`) and for intermediate feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Three-channel image with values in `[0, 1]`.
pub type Image = Tensor;

/// Intermediate activation inside a network.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(
                "Tensor::from_vec",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Build a planar tensor from interleaved `H x W x C` samples.
    pub fn from_interleaved(height: usize, width: usize, channels: usize, hwc: &[f64]) -> Result<Self> {
        if hwc.len() != channels * height * width {
            return Err(shape_err(
                "Tensor::from_interleaved",
                channels * height * width,
                hwc.len(),
            ));
        }
        Ok(Self::from_fn(channels, height, width, |c, y, x| {
            hwc[(y * width + x) * channels + c]
        }))
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for (i, v) in self.plane(c).iter().enumerate() {
                out[i * self.channels + c] = *v;
            }
        }
        out
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err(context, self.shape(), other.shape()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(&self, stage: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(stage))
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Copy out the window `[top, top + h) x [left, left + w)` of every channel.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Tensor {
        debug_assert!(top + h <= self.height && left + w <= self.width);
        Tensor::from_fn(self.channels, h, w, |c, y, x| self.get(c, top + y, left + x))
    }

    /// Centre window of size `h x w`; offsets round down.
    pub fn center_window(&self, h: usize, w: usize) -> Tensor {
        let top = (self.height - h) / 2;
        let left = (self.width - w) / 2;
        self.window(top, left, h, w)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp_unit(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Channel-mean grayscale as a single-channel tensor.
    pub fn channel_mean(&self) -> Tensor {
        let n = self.plane_len();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += *v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Tensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_round_trip() {
        let hwc: Vec<f64> = (0..2 * 3 * 3).map(|v| v as f64).collect();
        let t = Tensor::from_interleaved(2, 3, 3, &hwc).unwrap();
        assert_eq!(t.get(1, 0, 0), 1.0);
        assert_eq!(t.get(0, 1, 2), 15.0);
        assert_eq!(t.to_interleaved(), hwc);
    }

    #[test]
    fn center_window_of_odd_margin_rounds_down() {
        let t = Tensor::from_fn(1, 5, 4, |_, y, x| (y * 10 + x) as f64);
        let w = t.center_window(2, 2);
        assert_eq!(w.get(0, 0, 0), 11.0);
    }
}
