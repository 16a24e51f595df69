//! Stochastic image transform family for view generation.
//!
//! A transform is sampled once into a [`TransformInstance`] — a plain record
//! of every random draw, expressed in image-size-relative units — and applied
//! separately. Splitting sampling from application makes views replayable:
//! the same instance applied to the same image always yields the same pixels,
//! regardless of thread or call order.
//!
//! Application order is fixed:
//!
//! 1. random square crop (area fraction drawn from `crop_area`, aspect
//!    preserved) resized to `output_size` with bilinear interpolation,
//! 2. horizontal flip,
//! 3. affine warp (rotation, translation, isotropic scale) about the image
//!    center; samples falling outside the source are filled with 0,
//! 4. brightness scaling `x <- clamp(b * x)`,
//! 5. contrast scaling about the post-brightness mean
//!    `x <- clamp(mean + c * (x - mean))`,
//! 6. Gaussian blur with a renormalized kernel of radius `ceil(3 sigma)` and
//!    symmetric (edge-inclusive) reflection padding. `sigma = 0` skips the
//!    blur.
//!
//! Resampling uses the half-pixel-center convention of [`crate::image`], so
//! an identity instance (full crop, no flip, zero rotation/translation, unit
//! scale/brightness/contrast, zero blur) reproduces the input exactly when
//! `output_size` matches the source.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::image::GrayImage;
use crate::rng;
use crate::{Error, Result};

/// Sampling intervals for the transform family. All intervals are inclusive
/// and may be degenerate (`lo == hi` pins the value).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the source area, in `(0, 1]`.
    pub crop_area: (f64, f64),
    /// Probability of a horizontal flip.
    pub hflip_prob: f64,
    /// Rotation in degrees.
    pub rotation_deg: (f64, f64),
    /// Maximum |translation| as a fraction of the output size.
    pub max_translate: f64,
    /// Isotropic scale factor; values above 1 magnify.
    pub scale: (f64, f64),
    /// Brightness factor interval.
    pub brightness: (f64, f64),
    /// Contrast factor interval.
    pub contrast: (f64, f64),
    /// Gaussian blur sigma interval, in output pixels.
    pub blur_sigma: (f64, f64),
    /// Side length of transformed views.
    pub output_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_area: (0.6, 1.0),
            hflip_prob: 0.5,
            rotation_deg: (-20.0, 20.0),
            max_translate: 0.1,
            scale: (0.95, 1.05),
            brightness: (0.6, 1.4),
            contrast: (0.6, 1.4),
            blur_sigma: (0.1, 3.0),
            output_size: 224,
        }
    }
}

impl AugmentConfig {
    /// Checks interval well-formedness; call once at configuration time.
    pub fn validate(&self) -> Result<()> {
        let interval = |name: &str, (lo, hi): (f64, f64)| -> Result<()> {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Contract(alloc::format!(
                    "augment interval {name} = ({lo}, {hi}) is not a valid range"
                )));
            }
            Ok(())
        };
        interval("crop_area", self.crop_area)?;
        interval("rotation_deg", self.rotation_deg)?;
        interval("scale", self.scale)?;
        interval("brightness", self.brightness)?;
        interval("contrast", self.contrast)?;
        interval("blur_sigma", self.blur_sigma)?;
        if !(self.crop_area.0 > 0.0 && self.crop_area.1 <= 1.0) {
            return Err(Error::Contract(alloc::format!(
                "crop_area must lie in (0, 1], got ({}, {})",
                self.crop_area.0,
                self.crop_area.1
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Contract(alloc::format!(
                "hflip_prob must be a probability, got {}",
                self.hflip_prob
            )));
        }
        if !(self.max_translate >= 0.0 && self.max_translate.is_finite()) {
            return Err(Error::Contract(alloc::format!(
                "max_translate must be non-negative, got {}",
                self.max_translate
            )));
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::Contract(alloc::format!(
                "scale must be positive, got lower bound {}",
                self.scale.0
            )));
        }
        if self.brightness.0 < 0.0 || self.contrast.0 < 0.0 || self.blur_sigma.0 < 0.0 {
            return Err(Error::Contract(alloc::string::String::from(
                "brightness, contrast and blur_sigma must be non-negative",
            )));
        }
        if self.output_size == 0 {
            return Err(Error::Contract(alloc::string::String::from(
                "output_size must be positive",
            )));
        }
        Ok(())
    }
}

/// A fully determined transform: every random draw, in relative units so the
/// instance is independent of the source image dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformInstance {
    /// Crop side length as a fraction of the source side (`sqrt` of the drawn
    /// area fraction).
    pub crop_side: f64,
    /// Horizontal crop position as a fraction of the free margin.
    pub crop_x: f64,
    /// Vertical crop position as a fraction of the free margin.
    pub crop_y: f64,
    /// Whether to flip horizontally.
    pub hflip: bool,
    /// Rotation in degrees (counterclockwise in pixel coordinates).
    pub rotation_deg: f64,
    /// Horizontal content translation as a fraction of the output size.
    pub translate_x: f64,
    /// Vertical content translation as a fraction of the output size.
    pub translate_y: f64,
    /// Isotropic scale factor.
    pub scale: f64,
    /// Brightness factor.
    pub brightness: f64,
    /// Contrast factor.
    pub contrast: f64,
    /// Blur sigma in output pixels; 0 skips blurring.
    pub blur_sigma: f64,
}

impl TransformInstance {
    /// The identity transform: applying it to an image whose side equals
    /// `output_size` reproduces the input exactly.
    pub fn identity() -> Self {
        TransformInstance {
            crop_side: 1.0,
            crop_x: 0.0,
            crop_y: 0.0,
            hflip: false,
            rotation_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            scale: 1.0,
            brightness: 1.0,
            contrast: 1.0,
            blur_sigma: 0.0,
        }
    }
}

/// Draws one transform instance. The draw order (crop area, crop x, crop y,
/// flip, rotation, translate x, translate y, scale, brightness, contrast,
/// blur sigma) is part of the determinism contract.
pub fn sample_transform(cfg: &AugmentConfig, rng: &mut impl RngCore) -> TransformInstance {
    debug_assert!(cfg.validate().is_ok(), "invalid augment config");
    let area = rng::uniform_in(rng, cfg.crop_area.0, cfg.crop_area.1);
    let crop_x = rng::uniform_01(rng);
    let crop_y = rng::uniform_01(rng);
    let hflip = rng::bernoulli(rng, cfg.hflip_prob);
    let rotation_deg = rng::uniform_in(rng, cfg.rotation_deg.0, cfg.rotation_deg.1);
    let translate_x = rng::uniform_in(rng, -cfg.max_translate, cfg.max_translate);
    let translate_y = rng::uniform_in(rng, -cfg.max_translate, cfg.max_translate);
    let scale = rng::uniform_in(rng, cfg.scale.0, cfg.scale.1);
    let brightness = rng::uniform_in(rng, cfg.brightness.0, cfg.brightness.1);
    let contrast = rng::uniform_in(rng, cfg.contrast.0, cfg.contrast.1);
    let blur_sigma = rng::uniform_in(rng, cfg.blur_sigma.0, cfg.blur_sigma.1);
    TransformInstance {
        crop_side: libm::sqrt(area),
        crop_x,
        crop_y,
        hflip,
        rotation_deg,
        translate_x,
        translate_y,
        scale,
        brightness,
        contrast,
        blur_sigma,
    }
}

/// Applies `instance` to `image`, producing an `output_size` square view.
pub fn apply_transform(
    image: &GrayImage,
    instance: &TransformInstance,
    output_size: usize,
) -> GrayImage {
    let cropped = crop_resize(image, instance, output_size);
    let flipped = if instance.hflip {
        hflip(&cropped)
    } else {
        cropped
    };
    let warped = affine(&flipped, instance);
    let lit = brightness_contrast(&warped, instance.brightness, instance.contrast);
    let mut out = if instance.blur_sigma > 0.0 {
        gaussian_blur(&lit, instance.blur_sigma)
    } else {
        lit
    };
    // Interpolation and blur weights sum to 1 only up to rounding; clamp so
    // the pixel range contract holds exactly.
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Crop stage: a `crop_side`-fraction window positioned by the relative
/// margin offsets, resized to the output square.
fn crop_resize(image: &GrayImage, instance: &TransformInstance, output_size: usize) -> GrayImage {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let crop_w = instance.crop_side * w;
    let crop_h = instance.crop_side * h;
    let x0 = instance.crop_x * (w - crop_w);
    let y0 = instance.crop_y * (h - crop_h);
    let out = output_size as f64;
    let mut result = GrayImage::filled(output_size, output_size, 0.0);
    for oy in 0..output_size {
        let sy = y0 + (oy as f64 + 0.5) * crop_h / out - 0.5;
        for ox in 0..output_size {
            let sx = x0 + (ox as f64 + 0.5) * crop_w / out - 0.5;
            result.set(ox, oy, image.sample_clamped(sx, sy));
        }
    }
    result
}

fn hflip(image: &GrayImage) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, image.get(w - 1 - x, y));
        }
    }
    out
}

/// Affine stage: rotate by `rotation_deg`, translate by
/// `(translate_x, translate_y) * size`, scale about the center. Out-of-bounds
/// source samples fill with 0.
fn affine(image: &GrayImage, instance: &TransformInstance) -> GrayImage {
    if instance.rotation_deg == 0.0
        && instance.translate_x == 0.0
        && instance.translate_y == 0.0
        && instance.scale == 1.0
    {
        return image.clone();
    }
    let size = image.width();
    debug_assert_eq!(size, image.height(), "affine stage expects square views");
    let c = (size as f64 - 1.0) / 2.0;
    let theta = instance.rotation_deg * core::f64::consts::PI / 180.0;
    let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));
    let tx = instance.translate_x * size as f64;
    let ty = instance.translate_y * size as f64;
    let inv_scale = 1.0 / instance.scale;
    let mut out = GrayImage::filled(size, size, 0.0);
    for oy in 0..size {
        for ox in 0..size {
            // Invert the forward map (scale, then rotate, then translate).
            let px = ox as f64 - c - tx;
            let py = oy as f64 - c - ty;
            let qx = (cos_t * px + sin_t * py) * inv_scale;
            let qy = (-sin_t * px + cos_t * py) * inv_scale;
            out.set(ox, oy, image.sample_or_fill(qx + c, qy + c, 0.0));
        }
    }
    out
}

/// Photometric stage: brightness scaling then contrast about the
/// post-brightness mean, each clamped to `[0, 1]`.
pub fn brightness_contrast(image: &GrayImage, brightness: f64, contrast: f64) -> GrayImage {
    let mut out = image.clone();
    for px in out.data_mut() {
        *px = (*px * brightness).clamp(0.0, 1.0);
    }
    if contrast != 1.0 {
        let mean = out.mean();
        for px in out.data_mut() {
            *px = (mean + contrast * (*px - mean)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Discrete Gaussian kernel of radius `ceil(3 sigma)`, renormalized to sum
/// exactly to 1. Exposed so tests can build blur oracles independently.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "gaussian_kernel requires positive sigma");
    let radius = libm::ceil(3.0 * sigma) as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for i in -(radius as i64)..=(radius as i64) {
        let d = i as f64;
        kernel.push(libm::exp(-d * d / denom));
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Reflects `i` into `[0, n)` with symmetric (edge-inclusive) padding:
/// index -1 maps to 0, -2 to 1, n to n-1, and so on.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    // At most two folds are needed while the kernel radius is below the image
    // size; loop to stay correct for tiny images under heavy blur.
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with symmetric reflection padding. Preserves
/// constants exactly up to kernel normalization and conserves total image
/// mass.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> GrayImage {
    if sigma == 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.width(), image.height());

    // Horizontal pass.
    let mut horizontal = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + ki as i64 - radius, w);
                acc += kv * image.get(sx, y);
            }
            horizontal.set(x, y, acc);
        }
    }
    // Vertical pass.
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + ki as i64 - radius, h);
                acc += kv * horizontal.get(x, sy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use alloc::vec;
    use alloc::vec::Vec;

    fn gradient_image(size: usize) -> GrayImage {
        let data: Vec<f64> = (0..size * size)
            .map(|i| i as f64 / (size * size - 1) as f64)
            .collect();
        GrayImage::from_vec(size, size, data)
    }

    #[test]
    fn degenerate_intervals_pin_every_draw() {
        let cfg = AugmentConfig {
            crop_area: (0.81, 0.81),
            hflip_prob: 0.0,
            rotation_deg: (5.0, 5.0),
            max_translate: 0.0,
            scale: (1.02, 1.02),
            brightness: (0.9, 0.9),
            contrast: (1.1, 1.1),
            blur_sigma: (0.4, 0.4),
            output_size: 16,
        };
        let mut rng = stream_from_seed(0);
        let inst = sample_transform(&cfg, &mut rng);
        assert!((inst.crop_side - 0.9).abs() < 1e-12);
        assert!(!inst.hflip);
        assert_eq!(inst.rotation_deg, 5.0);
        assert_eq!(inst.translate_x, 0.0);
        assert_eq!(inst.translate_y, 0.0);
        assert_eq!(inst.scale, 1.02);
        assert_eq!(inst.brightness, 0.9);
        assert_eq!(inst.contrast, 1.1);
        assert_eq!(inst.blur_sigma, 0.4);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let cfg = AugmentConfig::default();
        let mut r1 = stream_from_seed(99);
        let mut r2 = stream_from_seed(99);
        for _ in 0..20 {
            assert_eq!(sample_transform(&cfg, &mut r1), sample_transform(&cfg, &mut r2));
        }
    }

    #[test]
    fn flip_frequency_matches_probability_within_3_sigma() {
        let cfg = AugmentConfig::default();
        let mut rng = stream_from_seed(7);
        let draws = 10_000;
        let flips = (0..draws)
            .filter(|_| sample_transform(&cfg, &mut rng).hflip)
            .count();
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!(
            (flips as f64 - draws as f64 * 0.5).abs() <= 3.0 * sigma,
            "flip count {flips} of {draws}"
        );
    }

    #[test]
    fn identity_instance_reproduces_input_exactly() {
        let img = gradient_image(12);
        let out = apply_transform(&img, &TransformInstance::identity(), 12);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_only_instance_mirrors_pixels() {
        let img = gradient_image(8);
        let inst = TransformInstance {
            hflip: true,
            ..TransformInstance::identity()
        };
        let out = apply_transform(&img, &inst, 8);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(x, y), img.get(7 - x, y));
            }
        }
    }

    #[test]
    fn brightness_contrast_matches_hand_example() {
        // Pixels [0.2, 0.4, 0.6, 0.8], brightness 1, contrast 2:
        // mean 0.5, so values map to [-0.1, 0.3, 0.7, 1.1] -> clamped
        // [0, 0.3, 0.7, 1.0].
        let img = GrayImage::from_vec(2, 2, vec![0.2, 0.4, 0.6, 0.8]);
        let out = brightness_contrast(&img, 1.0, 2.0);
        let expected = [0.0, 0.3, 0.7, 1.0];
        for (o, e) in out.data().iter().zip(&expected) {
            assert!((o - e).abs() < 1e-12, "{o} != {e}");
        }
    }

    #[test]
    fn brightness_halves_intensities() {
        let img = GrayImage::from_vec(2, 1, vec![0.4, 1.0]);
        let out = brightness_contrast(&img, 0.5, 1.0);
        assert!((out.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((out.get(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = GrayImage::filled(9, 9, 0.37);
        let out = gaussian_blur(&img, 1.3);
        for &p in out.data() {
            assert!((p - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_impulse_matches_kernel_oracle() {
        // A centered impulse on a large image reproduces the separable kernel
        // outer product.
        let sigma = 0.8;
        let kernel = gaussian_kernel(sigma);
        let radius = kernel.len() / 2;
        let size = 4 * radius + 3; // kernel never reaches the border
        let mut img = GrayImage::filled(size, size, 0.0);
        let c = size / 2;
        img.set(c, c, 1.0);
        let out = gaussian_blur(&img, sigma);
        for dy in -(radius as i64)..=(radius as i64) {
            for dx in -(radius as i64)..=(radius as i64) {
                let expected =
                    kernel[(dx + radius as i64) as usize] * kernel[(dy + radius as i64) as usize];
                let got = out.get((c as i64 + dx) as usize, (c as i64 + dy) as usize);
                assert!(
                    (got - expected).abs() < 1e-12,
                    "impulse response at ({dx}, {dy}): {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn blur_conserves_total_mass() {
        let img = gradient_image(11);
        let before: f64 = img.data().iter().sum();
        for &sigma in &[0.3, 1.0, 2.5] {
            let out = gaussian_blur(&img, sigma);
            let after: f64 = out.data().iter().sum();
            assert!(
                (before - after).abs() < 1e-9,
                "mass changed under sigma {sigma}: {before} -> {after}"
            );
        }
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for &sigma in &[0.1, 0.5, 1.0, 2.0, 3.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len() % 2, 1);
            let sum: f64 = k.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "kernel sum {sum} at sigma {sigma}");
            for i in 0..k.len() / 2 {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn zero_sigma_skips_blur() {
        let img = gradient_image(6);
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn in_bounds_affine_preserves_constant_images() {
        // Rotation or down-scaling pull in zero-filled border samples, but a
        // transform restricted to in-bounds sampling (no rotation or
        // translation, scale >= 1) must propagate a constant exactly through
        // every stage.
        let img = GrayImage::filled(16, 16, 0.42);
        let inst = TransformInstance {
            crop_side: libm::sqrt(0.7),
            crop_x: 0.3,
            crop_y: 0.8,
            hflip: true,
            scale: 1.04,
            blur_sigma: 1.1,
            ..TransformInstance::identity()
        };
        let out = apply_transform(&img, &inst, 16);
        for &p in out.data() {
            assert!((p - 0.42).abs() < 1e-12, "constant not preserved: {p}");
        }
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let cfg = AugmentConfig {
            output_size: 16,
            ..AugmentConfig::default()
        };
        let img = gradient_image(32);
        let mut rng = stream_from_seed(3);
        for _ in 0..200 {
            let inst = sample_transform(&cfg, &mut rng);
            let out = apply_transform(&img, &inst, cfg.output_size);
            assert_eq!(out.width(), 16);
            assert_eq!(out.height(), 16);
            for &p in out.data() {
                assert!((0.0..=1.0).contains(&p), "pixel {p} escaped [0, 1]");
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_intervals() {
        let mut cfg = AugmentConfig::default();
        cfg.crop_area = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg = AugmentConfig::default();
        cfg.rotation_deg = (10.0, -10.0);
        assert!(cfg.validate().is_err());
        cfg = AugmentConfig::default();
        cfg.hflip_prob = 1.5;
        assert!(cfg.validate().is_err());
        cfg = AugmentConfig::default();
        cfg.output_size = 0;
        assert!(cfg.validate().is_err());
    }
}
