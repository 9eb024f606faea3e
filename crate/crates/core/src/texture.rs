//! Per-stroke texture. Two sources:
//!
//! - **Procedural**: value noise on a fixed hashed lattice, shaped by the
//!   stroke's latent vector. Amplitude and scale come from the first two
//!   latent slots; the mapping is smooth, so latents can be fitted by
//!   gradient descent. The modulation factor multiplies stamp colors and is
//!   clamped to `[0.5, 1.5]`.
//! - **External**: one canvas-sized grayscale image per stroke index,
//!   sampled at the pixel being shaded; value `v` maps to modulation
//!   `0.5 + v`.

use std::path::Path;

use crate::diff::Real;
use crate::geometry::LATENT_LEN;
use crate::image::{self, Canvas, ImageError};

/// Smallest feature scale of the procedural noise, in pixels.
pub const MIN_NOISE_SCALE: f64 = 4.0;
/// Largest feature scale of the procedural noise, in pixels.
pub const MAX_NOISE_SCALE: f64 = 32.0;

/// Deterministic lattice value in `[-1, 1]` for an integer grid point.
fn lattice(ix: i64, iy: i64) -> f64 {
    // 64-bit mix (splitmix-style) of the two coordinates; pure integer ops,
    // so the lattice is identical on every platform.
    let mut h = (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Value noise in `[-1, 1]`: lattice values blended with a cubic smoothstep,
/// so the field is C¹ in its inputs (and therefore differentiable through
/// the coordinate scaling).
pub fn value_noise<R: Real>(px: R, py: R) -> R {
    let ix = px.val().floor();
    let iy = py.val().floor();
    let fx = px - ix;
    let fy = py - iy;
    let ux = fx * fx * (fx * (-2.0) + 3.0);
    let uy = fy * fy * (fy * (-2.0) + 3.0);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice(ix, iy);
    let v10 = lattice(ix + 1, iy);
    let v01 = lattice(ix, iy + 1);
    let v11 = lattice(ix + 1, iy + 1);
    let top = ux * (v10 - v00) + v00;
    let bot = ux * (v11 - v01) + v01;
    uy * (bot - top) + top
}

/// Noise amplitude encoded by a latent vector: `0.5 * sigmoid(w0)`.
pub fn latent_amplitude<R: Real>(latent: &[R; LATENT_LEN]) -> R {
    latent[0].sigmoid() * 0.5
}

/// Noise feature scale encoded by a latent vector, in pixels.
pub fn latent_scale<R: Real>(latent: &[R; LATENT_LEN]) -> R {
    latent[1].sigmoid() * (MAX_NOISE_SCALE - MIN_NOISE_SCALE) + MIN_NOISE_SCALE
}

/// Procedural modulation factor at canvas position `(x, y)`, in
/// `[0.5, 1.5]`. Multiplies the stroke's stamp color at that pixel.
pub fn procedural_modulation<R: Real>(latent: &[R; LATENT_LEN], x: f64, y: f64) -> R {
    let g = latent_amplitude(latent);
    let s = latent_scale(latent);
    let n = value_noise(s.rdiv(x), s.rdiv(y));
    (n * g + 1.0).clamp_c(0.5, 1.5)
}

/// File name for the external texture of stroke `index`.
pub fn external_texture_name(index: usize) -> String {
    format!("stroke_{index:04}.ppm")
}

/// Canvas-sized external textures, one per stroke index.
#[derive(Debug, Clone)]
pub struct ExternalTextures {
    images: Vec<Canvas>,
}

impl ExternalTextures {
    /// Load `count` textures named `stroke_0000.ppm`, `stroke_0001.ppm`, …
    /// from `dir`. Every file must exist and match the canvas dimensions.
    pub fn load(
        dir: impl AsRef<Path>,
        count: usize,
        width: usize,
        height: usize,
    ) -> Result<Self, ImageError> {
        let dir = dir.as_ref();
        let mut images = Vec::with_capacity(count);
        for i in 0..count {
            let path = dir.join(external_texture_name(i));
            let img = image::load_image(&path)?;
            if (img.width, img.height) != (width, height) {
                return Err(ImageError::DimensionMismatch(
                    img.width, img.height, width, height,
                ));
            }
            images.push(img);
        }
        Ok(Self { images })
    }

    /// Modulation for stroke `index` at pixel `(x, y)`: `0.5 +` the
    /// luminance of the texture pixel. Coordinates clamp to the image.
    pub fn modulation(&self, index: usize, x: f64, y: f64) -> f64 {
        let img = &self.images[index];
        let px = (x.max(0.0) as usize).min(img.width - 1);
        let py = (y.max(0.0) as usize).min(img.height - 1);
        let p = img.pixel(px, py);
        0.5 + (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{gradcheck, Objective, ParamVector, Real};

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let a: f64 = value_noise(3.7, 2.1);
        let b: f64 = value_noise(3.7, 2.1);
        assert_eq!(a.to_bits(), b.to_bits());
        for i in 0..40 {
            for j in 0..40 {
                let v: f64 = value_noise(i as f64 * 0.73 - 11.0, j as f64 * 1.19 - 7.0);
                assert!((-1.0..=1.0).contains(&v), "noise {v} out of range");
            }
        }
    }

    #[test]
    fn noise_hits_lattice_values_at_integers() {
        for (ix, iy) in [(0i64, 0i64), (3, -2), (-7, 11)] {
            let direct = lattice(ix, iy);
            let sampled: f64 = value_noise(ix as f64, iy as f64);
            assert!((direct - sampled).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_continuous_across_cell_boundaries() {
        for k in -5..5 {
            let x = k as f64;
            let below: f64 = value_noise(x - 1e-7, 2.3);
            let above: f64 = value_noise(x + 1e-7, 2.3);
            assert!((below - above).abs() < 1e-5, "jump at x={x}");
        }
    }

    #[test]
    fn noise_varies_across_the_plane() {
        let a: f64 = value_noise(0.5, 0.5);
        let b: f64 = value_noise(10.5, 3.5);
        let c: f64 = value_noise(-4.5, 8.5);
        assert!((a - b).abs() > 1e-6 || (a - c).abs() > 1e-6);
    }

    #[test]
    fn modulation_stays_in_half_to_three_halves() {
        for w0 in [-30.0, -1.0, 0.0, 2.0, 30.0] {
            for w1 in [-30.0, 0.0, 30.0] {
                let latent = [w0, w1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
                for i in 0..20 {
                    let m: f64 = procedural_modulation(&latent, i as f64 * 3.3, i as f64 * 1.7);
                    assert!((0.5..=1.5).contains(&m), "modulation {m}");
                }
            }
        }
    }

    #[test]
    fn zero_latent_gives_quarter_amplitude_mid_scale() {
        let latent = [0.0; LATENT_LEN];
        let g: f64 = latent_amplitude(&latent);
        let s: f64 = latent_scale(&latent);
        assert!((g - 0.25).abs() < 1e-12);
        assert!((s - 18.0).abs() < 1e-12);
    }

    struct ModulationSum;

    impl Objective for ModulationSum {
        fn eval<R: Real>(&self, params: &[R]) -> R {
            let zero = params[0].lift(0.0);
            let mut latent = [zero; LATENT_LEN];
            latent[..2].copy_from_slice(&params[..2]);
            let mut total = zero;
            for i in 0..6 {
                let (x, y) = (5.0 + i as f64 * 7.3, 3.0 + i as f64 * 4.1);
                total = total + procedural_modulation(&latent, x, y);
            }
            total
        }
    }

    #[test]
    fn modulation_gradients_match_central_differences() {
        let params = ParamVector::new(
            vec!["w0".into(), "w1".into()],
            vec![0.3, -0.4],
        );
        let report = gradcheck(&ModulationSum, &params, 1e-5, 1e-3);
        assert!(report.pass, "worst slot: {:?}", report.worst_slot());
    }

    #[test]
    fn external_textures_load_and_modulate() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            let v = if i == 0 { 0.0 } else { 1.0 };
            let img = Canvas::filled(4, 3, [v; 3]);
            image::save_image(&img, dir.path().join(external_texture_name(i))).unwrap();
        }
        let tex = ExternalTextures::load(dir.path(), 2, 4, 3).unwrap();
        assert_eq!(tex.len(), 2);
        assert!((tex.modulation(0, 1.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((tex.modulation(1, 1.0, 1.0) - 1.5).abs() < 1e-12);
        // off-canvas coordinates clamp instead of panicking
        assert!((tex.modulation(0, -5.0, 99.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn external_load_rejects_missing_or_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = Canvas::filled(4, 3, [0.5; 3]);
        image::save_image(&img, dir.path().join(external_texture_name(0))).unwrap();
        assert!(ExternalTextures::load(dir.path(), 2, 4, 3).is_err());
        assert!(ExternalTextures::load(dir.path(), 1, 8, 8).is_err());
    }
}
