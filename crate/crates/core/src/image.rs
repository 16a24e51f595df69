//! Grayscale images with intensities in `[0, 1]`.
//!
//! Pixels are `f64` in row-major order. Geometric resampling uses the
//! half-pixel-center convention: pixel `(x, y)` is centered at continuous
//! coordinate `(x, y)`, and resizing maps output centers through
//! `src = (dst + 0.5) * scale - 0.5`, which makes same-size resampling exactly
//! the identity.

use alloc::vec;
use alloc::vec::Vec;

/// A single-channel image, row-major, intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// An all-`value` image.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image from row-major pixels. Panics if the element count
    /// does not match the dimensions.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "image data length {} does not match {}x{}",
            data.len(),
            width,
            height
        );
        GrayImage {
            width,
            height,
            data,
        }
    }

    /// Image width in pixels.
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Image height in pixels.
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// True for square images.
    #[inline]
    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    /// Row-major pixel slice.
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable row-major pixel slice.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Pixel accessor.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Pixel setter.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    /// Mean intensity. Zero for empty images.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    #[inline]
    fn pixel(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous `(x, y)`, clamping coordinates to the
    /// pixel-center hull `[0, w-1] x [0, h-1]` first. Integer coordinates
    /// reproduce pixels exactly.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.bilinear(x, y)
    }

    /// Bilinear sample at continuous `(x, y)`, returning `fill` for points
    /// outside the pixel-center hull.
    pub fn sample_or_fill(&self, x: f64, y: f64, fill: f64) -> f64 {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            fill
        } else {
            self.bilinear(x, y)
        }
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = libm::floor(x) as usize;
        let y0 = libm::floor(y) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.pixel(x0, y0) * (1.0 - fx) + self.pixel(x1, y0) * fx;
        let bottom = self.pixel(x0, y1) * (1.0 - fx) + self.pixel(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_by_two() -> GrayImage {
        // 0.0 0.4
        // 0.8 1.0
        GrayImage::from_vec(2, 2, vec![0.0, 0.4, 0.8, 1.0])
    }

    #[test]
    fn integer_coordinates_sample_exactly() {
        let img = two_by_two();
        assert_eq!(img.sample_clamped(0.0, 0.0), 0.0);
        assert_eq!(img.sample_clamped(1.0, 0.0), 0.4);
        assert_eq!(img.sample_clamped(0.0, 1.0), 0.8);
        assert_eq!(img.sample_clamped(1.0, 1.0), 1.0);
    }

    #[test]
    fn center_sample_averages_neighbors() {
        let img = two_by_two();
        let v = img.sample_clamped(0.5, 0.5);
        assert!((v - (0.0 + 0.4 + 0.8 + 1.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_hull_points_use_fill() {
        let img = two_by_two();
        assert_eq!(img.sample_or_fill(-0.01, 0.0, 0.0), 0.0);
        assert_eq!(img.sample_or_fill(1.01, 0.0, 0.5), 0.5);
        assert_eq!(img.sample_or_fill(0.5, 0.5, 9.0), img.sample_clamped(0.5, 0.5));
    }

    #[test]
    fn clamped_sampling_extends_edges() {
        let img = two_by_two();
        assert_eq!(img.sample_clamped(-3.0, 0.0), 0.0);
        assert_eq!(img.sample_clamped(5.0, 1.0), 1.0);
    }
}
