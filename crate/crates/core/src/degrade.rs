//! Parametric detector degradation and the pseudo-flat-field correction.
//!
//! Noise model, applied per pixel after optical blur:
//!
//! ```text
//! out = gain(x, y) · quantize(Poisson(photon_scale · p) / photon_scale + N(0, gaussian_sigma))
//! ```
//!
//! Randomness comes from ChaCha8 keyed by `seed`, one stream per pixel
//! (stream id = row-major pixel index), so the result does not depend on
//! evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

fn unit_gain() -> [f64; 6] {
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeParams {
    /// Gaussian blur width in pixels.
    #[serde(default)]
    pub blur_sigma: f64,
    /// Expected photon count at unit transmission.
    pub photon_scale: f64,
    /// When false the Poisson stage is skipped (the infinite-count limit).
    #[serde(default = "yes")]
    pub poisson: bool,
    /// Additive read noise, in transmission units.
    #[serde(default)]
    pub gaussian_sigma: f64,
    /// Flat-field gain `c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y²` over
    /// normalized coordinates `x, y ∈ [-1, 1]` (x along columns).
    #[serde(default = "unit_gain")]
    pub flat_field_coeffs: [f64; 6],
    /// Number of output levels on [0, 1]; 0 disables quantization.
    #[serde(default)]
    pub quantization_levels: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            blur_sigma: 0.0,
            photon_scale: 1.0e4,
            poisson: true,
            gaussian_sigma: 0.0,
            flat_field_coeffs: unit_gain(),
            quantization_levels: 0,
            seed: 0,
        }
    }
}

impl DegradeParams {
    /// Every stochastic and gain term switched off.
    pub fn identity() -> Self {
        DegradeParams {
            poisson: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::invalid("blur_sigma must be >= 0"));
        }
        if !(self.photon_scale > 0.0 && self.photon_scale.is_finite()) {
            return Err(Error::invalid("photon_scale must be > 0"));
        }
        if !(self.gaussian_sigma >= 0.0) {
            return Err(Error::invalid("gaussian_sigma must be >= 0"));
        }
        if self.quantization_levels == 1 {
            return Err(Error::invalid("quantization_levels must be 0 or >= 2"));
        }
        if self.flat_field_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("flat-field coefficients must be finite"));
        }
        Ok(())
    }

    pub fn gain(&self, x: f64, y: f64) -> f64 {
        let c = &self.flat_field_coeffs;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    }
}

/// Half-sample symmetric reflection: `… c b a | a b c … | … c b a`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable Gaussian convolution with reflective boundaries.
pub fn apply_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (rows, cols) = (image.rows, image.cols);

    let mut tmp = vec![0.0; rows * cols];
    tmp.par_chunks_mut(cols).enumerate().for_each(|(row, out)| {
        let src = &image.data[row * cols..(row + 1) * cols];
        for (c, o) in out.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * src[reflect(c as isize + t as isize - r, cols)])
                .sum();
        }
    });
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(row, out)| {
        for (c, o) in out.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * tmp[reflect(row as isize + t as isize - r, rows) * cols + c])
                .sum();
        }
    });
    Image { rows, cols, data }
}

fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Poisson-Gaussian detection, quantization and flat-field gain.
pub fn apply_noise(image: &Image, params: &DegradeParams) -> Result<Image> {
    params.validate()?;
    if let Some((i, v)) = image.data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("pixel {i} = {v} must be >= 0")));
    }
    let normal = if params.gaussian_sigma > 0.0 {
        Some(Normal::new(0.0, params.gaussian_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let levels = params.quantization_levels;
    let (rows, cols) = (image.rows, image.cols);
    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(row, out)| {
        let y = normalized_coord(row, rows);
        for (col, o) in out.iter_mut().enumerate() {
            let idx = row * cols + col;
            let p = image.data[idx];
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(idx as u64);
            let mut v = p;
            if params.poisson {
                let lambda = params.photon_scale * p;
                v = if lambda > 0.0 {
                    // λ is finite and positive here, so construction cannot fail
                    let counts: f64 = Poisson::new(lambda).map(|d| d.sample(&mut rng)).unwrap_or(lambda);
                    counts / params.photon_scale
                } else {
                    0.0
                };
            }
            if let Some(n) = &normal {
                v += n.sample(&mut rng);
            }
            if levels >= 2 {
                let top = (levels - 1) as f64;
                v = (v.clamp(0.0, 1.0) * top).round() / top;
            }
            *o = params.gain(normalized_coord(col, cols), y) * v;
        }
    });
    Image::new(rows, cols, data)
}

/// Blur, then detection noise.
pub fn degrade(image: &Image, params: &DegradeParams) -> Result<Image> {
    params.validate()?;
    apply_noise(&apply_blur(image, params.blur_sigma), params)
}

pub fn default_flat_field_sigma(image: &Image) -> f64 {
    image.cols as f64 / 8.0
}

/// Divides by a heavy Gaussian blur of the image itself and min-max
/// rescales to [0, 1]. A flat ratio (constant input) maps to all ones.
pub fn pseudo_flat_field(image: &Image, kernel_sigma: f64) -> Result<Image> {
    if !(kernel_sigma > 0.0) {
        return Err(Error::invalid("kernel_sigma must be > 0"));
    }
    if let Some((index, &value)) = image.data.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }
    let background = apply_blur(image, kernel_sigma);
    let ratio: Vec<f64> = image.data.iter().zip(&background.data).map(|(a, b)| a / b).collect();
    let ratio = Image::new(image.rows, image.cols, ratio)?;
    let (lo, hi) = ratio.min_max();
    if hi - lo <= 1e-9 * hi.abs() {
        return Ok(Image::filled(image.rows, image.cols, 1.0));
    }
    Ok(ratio.map(|v| (v - lo) / (hi - lo)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Image {
        Image::from_fn(rows, cols, |r, c| 0.1 + 0.01 * r as f64 + 0.003 * (c * c % 17) as f64)
    }

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn zero_sigma_blur_is_identity() {
        let img = ramp(9, 11);
        assert_eq!(apply_blur(&img, 0.0), img);
    }

    #[test]
    fn blurred_delta_is_unit_sum_kernel() {
        let mut img = Image::filled(41, 41, 0.0);
        img.set(20, 20, 1.0);
        let out = apply_blur(&img, 2.0);
        let sum: f64 = out.data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        // separable: center row is the 1D kernel times its center weight
        let k = gaussian_kernel(2.0);
        let c = k.len() / 2;
        assert!((out.get(20, 20) - k[c] * k[c]).abs() < 1e-15);
        assert!((out.get(20, 23) - k[c] * k[c + 3]).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_mean() {
        let img = ramp(32, 24);
        for sigma in [0.7, 3.0, 5.5] {
            let out = apply_blur(&img, sigma);
            assert!((out.mean() - img.mean()).abs() / img.mean() < 1e-6);
        }
    }

    #[test]
    fn disabled_noise_is_identity() {
        let img = ramp(16, 16);
        assert_eq!(apply_noise(&img, &DegradeParams::identity()).unwrap(), img);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let img = ramp(32, 32);
        let params = DegradeParams {
            gaussian_sigma: 0.01,
            quantization_levels: 256,
            seed: 42,
            ..Default::default()
        };
        let a = apply_noise(&img, &params).unwrap();
        let b = apply_noise(&img, &params).unwrap();
        assert_eq!(a.data, b.data);
        let other = apply_noise(&img, &DegradeParams { seed: 43, ..params }).unwrap();
        assert_ne!(a.data, other.data);
    }

    #[test]
    fn flat_field_gain_multiplies_output() {
        let img = Image::filled(5, 5, 0.5);
        let params = DegradeParams {
            poisson: false,
            flat_field_coeffs: [1.0, 0.2, 0.0, 0.0, 0.0, 0.0],
            ..Default::default()
        };
        let out = apply_noise(&img, &params).unwrap();
        assert!((out.get(2, 0) - 0.5 * 0.8).abs() < 1e-15);
        assert!((out.get(2, 4) - 0.5 * 1.2).abs() < 1e-15);
    }

    #[test]
    fn quantization_snaps_to_levels() {
        let img = Image::new(1, 3, vec![0.1, 0.5, 1.3]).unwrap();
        let params = DegradeParams {
            poisson: false,
            quantization_levels: 3,
            ..Default::default()
        };
        let out = apply_noise(&img, &params).unwrap();
        assert_eq!(out.data, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let img = Image::filled(2, 2, 0.5);
        let bad = DegradeParams {
            quantization_levels: 1,
            ..Default::default()
        };
        assert!(apply_noise(&img, &bad).is_err());
        let bad = DegradeParams {
            photon_scale: 0.0,
            ..Default::default()
        };
        assert!(apply_noise(&img, &bad).is_err());
    }

    #[test]
    fn flat_field_of_constant_is_constant() {
        let out = pseudo_flat_field(&Image::filled(16, 16, 0.3), 2.0).unwrap();
        assert!(out.data.iter().all(|&v| v == out.data[0]));
    }

    #[test]
    fn flat_field_spans_unit_range() {
        let out = pseudo_flat_field(&ramp(32, 32), 4.0).unwrap();
        let (lo, hi) = out.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn flat_field_rejects_non_positive() {
        let mut img = Image::filled(4, 4, 0.5);
        img.set(1, 2, 0.0);
        assert!(matches!(
            pseudo_flat_field(&img, 2.0),
            Err(Error::NonPositivePixel { index: 6, .. })
        ));
    }
}
