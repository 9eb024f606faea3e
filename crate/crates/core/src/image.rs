//! Pixel containers and image plumbing: PPM/PGM (and optionally PNG) input
//! and output, Sobel gradient fields, per-pixel error maps, grid
//! partitioning, and the bilinear samplers shared by the differentiable
//! render paths.
//!
//! Images are interleaved RGB `f64` in `[0, 1]`, row-major with `y` growing
//! downward. Continuous coordinates place the center of pixel `(i, j)` at
//! `(i + 0.5, j + 0.5)`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::diff::Real;
use crate::parallel;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("grid of {n}x{n} cells does not fit a {width}x{height} image")]
    InvalidGrid {
        n: usize,
        width: usize,
        height: usize,
    },
}

type Result<T> = std::result::Result<T, ImageError>;

/// Interleaved RGB raster. Generic over the scalar so the differentiable
/// renderers can reuse the container; plain images are `Canvas<f64>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas<R = f64> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<R>,
}

impl<R: Real> Canvas<R> {
    pub fn filled(width: usize, height: usize, color: [R; 3]) -> Self {
        assert!(width > 0 && height > 0, "empty canvas");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [R; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, p: [R; 3]) {
        let i = self.idx(x, y);
        self.data[i] = p[0];
        self.data[i + 1] = p[1];
        self.data[i + 2] = p[2];
    }

    pub fn crop(&self, rect: CellRect) -> Canvas<R> {
        debug_assert!(rect.x + rect.w <= self.width && rect.y + rect.h <= self.height);
        let mut data = Vec::with_capacity(rect.w * rect.h * 3);
        for y in rect.y..rect.y + rect.h {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.w * 3]);
        }
        Canvas {
            width: rect.w,
            height: rect.h,
            data,
        }
    }

    /// Luminance (Rec. 601 weights) as a scalar field.
    pub fn luminance(&self) -> ScalarField<R> {
        let values = self
            .data
            .chunks_exact(3)
            .map(|p| p[0] * 0.299 + p[1] * 0.587 + p[2] * 0.114)
            .collect();
        ScalarField {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

impl Canvas<f64> {
    /// Copy into a differentiation context as constants.
    pub fn lift<R: Real>(&self, ctx: R) -> Canvas<R> {
        Canvas {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| ctx.lift(v)).collect(),
        }
    }

    /// Paste `window` over the rectangle `rect`.
    pub fn blit(&mut self, rect: CellRect, window: &Canvas<f64>) {
        assert_eq!((rect.w, rect.h), (window.width, window.height));
        assert!(rect.x + rect.w <= self.width && rect.y + rect.h <= self.height);
        for y in 0..rect.h {
            let dst = ((rect.y + y) * self.width + rect.x) * 3;
            let src = y * rect.w * 3;
            self.data[dst..dst + rect.w * 3].copy_from_slice(&window.data[src..src + rect.w * 3]);
        }
    }

    /// Snapshot of the primal values of a lifted canvas.
    pub fn from_values<R: Real>(c: &Canvas<R>) -> Canvas<f64> {
        Canvas {
            width: c.width,
            height: c.height,
            data: c.data.iter().map(|v| v.val()).collect(),
        }
    }
}

/// Single-channel raster with the same layout conventions as [`Canvas`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<R = f64> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<R>,
}

impl<R: Real> ScalarField<R> {
    pub fn filled(width: usize, height: usize, v: R) -> Self {
        Self {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> R {
        debug_assert!(x < self.width && y < self.height);
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: R) {
        debug_assert!(x < self.width && y < self.height);
        self.values[y * self.width + x] = v;
    }
}

/// Region labels, one id per pixel, ids contiguous in `0..region_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub region_count: u32,
}

impl LabelMap {
    /// Build from raw per-pixel ids, compacting the distinct values (in
    /// ascending order) onto `0..k`.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Self {
        assert_eq!(raw.len(), width * height, "label buffer size mismatch");
        let mut distinct: Vec<u32> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = raw
            .iter()
            .map(|v| distinct.binary_search(v).unwrap() as u32)
            .collect();
        Self {
            width,
            height,
            labels,
            region_count: distinct.len() as u32,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u32 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y * self.width + x]
    }
}

/// Sobel responses of a luminance image.
///
/// `orientation` is the gradient angle folded into `[0, pi)`; pixels with
/// zero magnitude store angle 0.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: ScalarField,
    pub gy: ScalarField,
    pub magnitude: ScalarField,
    pub orientation: ScalarField,
}

/// Axis-aligned pixel rectangle (`x`, `y` top-left corner).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CellRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            w: width,
            h: height,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn intersect(&self, o: CellRect) -> Option<CellRect> {
        let x0 = self.x.max(o.x);
        let y0 = self.y.max(o.y);
        let x1 = (self.x + self.w).min(o.x + o.w);
        let y1 = (self.y + self.h).min(o.y + o.h);
        (x1 > x0 && y1 > y0).then(|| CellRect {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

// --- file formats -----------------------------------------------------------

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn format_err(path: &Path, reason: impl Into<String>) -> ImageError {
    ImageError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// PNM header tokenizer: whitespace-separated tokens, `#` comments.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Option<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok).ok()?.parse().ok()
    }

    /// Position of the first payload byte: one whitespace after the header.
    fn payload_start(&self) -> usize {
        self.pos + 1
    }
}

fn parse_pnm(path: &Path, bytes: &[u8], magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut header = PnmHeader::new(bytes);
    let got = header
        .token()
        .ok_or_else(|| format_err(path, "empty file"))?;
    if got != magic.as_bytes() {
        return Err(format_err(
            path,
            format!("expected {magic} magic, found {:?}", String::from_utf8_lossy(got)),
        ));
    }
    let width = header
        .number()
        .ok_or_else(|| format_err(path, "bad or missing width"))?;
    let height = header
        .number()
        .ok_or_else(|| format_err(path, "bad or missing height"))?;
    let maxval = header
        .number()
        .ok_or_else(|| format_err(path, "bad or missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero dimension"));
    }
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval} (want 255)")));
    }
    let start = header.payload_start();
    let need = width * height * channels;
    if bytes.len() < start + need {
        return Err(format_err(
            path,
            format!("truncated payload: need {need} bytes, have {}", bytes.len().saturating_sub(start)),
        ));
    }
    Ok((width, height, bytes[start..start + need].to_vec()))
}

/// Quantize a unit-range channel to a byte, rounding halves up.
#[inline]
pub fn quantize_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Load an RGB image. Binary PPM (`P6`, maxval 255) always works; PNG needs
/// the `png` feature.
pub fn load_image(path: impl AsRef<Path>) -> Result<Canvas> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "ppm" => {
            let bytes = read_file(path)?;
            let (width, height, payload) = parse_pnm(path, &bytes, "P6", 3)?;
            let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(Canvas {
                width,
                height,
                data,
            })
        }
        #[cfg(feature = "png")]
        "png" => {
            let img = image::open(path)
                .map_err(|e| format_err(path, e.to_string()))?
                .to_rgb8();
            let (width, height) = (img.width() as usize, img.height() as usize);
            let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
            Ok(Canvas {
                width,
                height,
                data,
            })
        }
        other => Err(format_err(path, format!("unsupported image extension {other:?}"))),
    }
}

/// Save an RGB image, quantizing to 8 bits (halves round up). Format picked
/// by extension: `.ppm` always, `.png` with the `png` feature.
pub fn save_image(canvas: &Canvas, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = canvas.data.iter().map(|&v| quantize_channel(v)).collect();
    match extension(path).as_str() {
        "ppm" => {
            let mut out = Vec::with_capacity(bytes.len() + 32);
            write!(out, "P6\n{} {}\n255\n", canvas.width, canvas.height)
                .expect("in-memory write");
            out.extend_from_slice(&bytes);
            std::fs::write(path, out).map_err(|source| ImageError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        #[cfg(feature = "png")]
        "png" => {
            let img = image::RgbImage::from_raw(canvas.width as u32, canvas.height as u32, bytes)
                .expect("buffer size matches dimensions");
            img.save(path).map_err(|e| format_err(path, e.to_string()))
        }
        other => Err(format_err(path, format!("unsupported image extension {other:?}"))),
    }
}

/// Load a label map from a binary PGM (`P5`, maxval 255). Pixel values are
/// region ids; distinct values are compacted to contiguous ids in ascending
/// order.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (width, height, payload) = parse_pnm(path, &bytes, "P5", 1)?;
    let raw: Vec<u32> = payload.iter().map(|&b| b as u32).collect();
    Ok(LabelMap::from_raw(width, height, &raw))
}

/// Save a label map as binary PGM, writing the raw ids.
pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(labels.labels.len() + 32);
    write!(out, "P5\n{} {}\n255\n", labels.width, labels.height).expect("in-memory write");
    for &v in &labels.labels {
        out.push(v.min(255) as u8);
    }
    std::fs::write(path, out).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// --- gradients ---------------------------------------------------------------

/// Luminance of pixel `(x, y)` with edge-clamped coordinates.
#[inline]
pub fn luminance_at<R: Real>(canvas: &Canvas<R>, x: isize, y: isize) -> R {
    let xc = x.clamp(0, canvas.width as isize - 1) as usize;
    let yc = y.clamp(0, canvas.height as isize - 1) as usize;
    let p = canvas.pixel(xc, yc);
    p[0] * 0.299 + p[1] * 0.587 + p[2] * 0.114
}

/// Sobel response of the luminance at one pixel (edge-clamped neighborhood).
/// `gx` grows to the right, `gy` grows downward.
pub fn sobel_at<R: Real>(canvas: &Canvas<R>, x: isize, y: isize) -> (R, R) {
    let l = |dx: isize, dy: isize| luminance_at(canvas, x + dx, y + dy);
    let (tl, tc, tr) = (l(-1, -1), l(0, -1), l(1, -1));
    let (ml, mr) = (l(-1, 0), l(1, 0));
    let (bl, bc, br) = (l(-1, 1), l(0, 1), l(1, 1));
    let gx = (tr - tl) + (mr - ml) * 2.0 + (br - bl);
    let gy = (bl - tl) + (bc - tc) * 2.0 + (br - tr);
    (gx, gy)
}

/// Sobel response bilinearly interpolated between the four pixel centers
/// around a differentiable sample position.
pub fn sobel_bilinear<R: Real>(canvas: &Canvas<R>, x: R, y: R) -> (R, R) {
    let (x0, x1, y0, y1, fx, fy) = bilinear_setup(canvas.width, canvas.height, x.val(), y.val());
    let tx = (x - 0.5 - fx).clamp_c(0.0, 1.0);
    let ty = (y - 0.5 - fy).clamp_c(0.0, 1.0);
    let g00 = sobel_at(canvas, x0 as isize, y0 as isize);
    let g10 = sobel_at(canvas, x1 as isize, y0 as isize);
    let g01 = sobel_at(canvas, x0 as isize, y1 as isize);
    let g11 = sobel_at(canvas, x1 as isize, y1 as isize);
    let blend = |a: R, b: R, c: R, d: R| {
        let top = tx * (b - a) + a;
        let bot = tx * (d - c) + c;
        ty * (bot - top) + top
    };
    (
        blend(g00.0, g10.0, g01.0, g11.0),
        blend(g00.1, g10.1, g01.1, g11.1),
    )
}

/// [`sobel_bilinear`] over constant image data: the field values are plain,
/// but the sample position stays differentiable.
pub fn sobel_bilinear_const<R: Real>(canvas: &Canvas<f64>, x: R, y: R) -> (R, R) {
    let (x0, x1, y0, y1, fx, fy) = bilinear_setup(canvas.width, canvas.height, x.val(), y.val());
    let tx = (x - 0.5 - fx).clamp_c(0.0, 1.0);
    let ty = (y - 0.5 - fy).clamp_c(0.0, 1.0);
    let g00 = sobel_at(canvas, x0 as isize, y0 as isize);
    let g10 = sobel_at(canvas, x1 as isize, y0 as isize);
    let g01 = sobel_at(canvas, x0 as isize, y1 as isize);
    let g11 = sobel_at(canvas, x1 as isize, y1 as isize);
    let blend = |a: f64, b: f64, c: f64, d: f64| {
        let top = tx * (b - a) + a;
        let bot = tx * (d - c) + c;
        ty * (bot - top) + top
    };
    (
        blend(g00.0, g10.0, g01.0, g11.0),
        blend(g00.1, g10.1, g01.1, g11.1),
    )
}

/// Full-image Sobel gradient field of the luminance.
pub fn sobel_gradients(canvas: &Canvas) -> GradientField {
    let (w, h) = (canvas.width, canvas.height);
    let rows = parallel::map_indices(h, |y| {
        let mut row = Vec::with_capacity(w * 4);
        for x in 0..w {
            let (gx, gy) = sobel_at(canvas, x as isize, y as isize);
            let mag = (gx * gx + gy * gy).sqrt();
            let mut angle = if mag > 0.0 { gy.atan2(gx) } else { 0.0 };
            if angle < 0.0 {
                angle += std::f64::consts::PI;
            }
            if angle >= std::f64::consts::PI {
                angle -= std::f64::consts::PI;
            }
            row.push(gx);
            row.push(gy);
            row.push(mag);
            row.push(angle);
        }
        row
    });
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for row in rows {
        for px in row.chunks_exact(4) {
            gx.push(px[0]);
            gy.push(px[1]);
            magnitude.push(px[2]);
            orientation.push(px[3]);
        }
    }
    let field = |values: Vec<f64>| ScalarField {
        width: w,
        height: h,
        values,
    };
    GradientField {
        gx: field(gx),
        gy: field(gy),
        magnitude: field(magnitude),
        orientation: field(orientation),
    }
}

// --- comparisons ---------------------------------------------------------------

/// Per-pixel absolute difference summed over channels; values in `[0, 3]`.
pub fn error_map(a: &Canvas, b: &Canvas) -> Result<ScalarField> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ImageError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let values = parallel::map_indices(a.width * a.height, |i| {
        let p = i * 3;
        (a.data[p] - b.data[p]).abs()
            + (a.data[p + 1] - b.data[p + 1]).abs()
            + (a.data[p + 2] - b.data[p + 2]).abs()
    });
    Ok(ScalarField {
        width: a.width,
        height: a.height,
        values,
    })
}

/// Mean absolute per-pixel difference over all channels.
pub fn mean_l1(a: &Canvas, b: &Canvas) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ImageError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB against a unit dynamic range.
pub fn psnr(a: &Canvas, b: &Canvas) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ImageError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Split a `width x height` image into an `n x n` grid of rectangles in
/// row-major order; remainder pixels go to the last row/column.
pub fn partition_grid(width: usize, height: usize, n: usize) -> Result<Vec<CellRect>> {
    if n == 0 || n > width.min(height) {
        return Err(ImageError::InvalidGrid { n, width, height });
    }
    let bw = width / n;
    let bh = height / n;
    let mut cells = Vec::with_capacity(n * n);
    for row in 0..n {
        let y = row * bh;
        let h = if row == n - 1 { height - y } else { bh };
        for col in 0..n {
            let x = col * bw;
            let w = if col == n - 1 { width - x } else { bw };
            cells.push(CellRect { x, y, w, h });
        }
    }
    Ok(cells)
}

// --- sampling -----------------------------------------------------------------

#[inline]
fn bilinear_setup(width: usize, height: usize, x: f64, y: f64) -> (usize, usize, usize, usize, f64, f64) {
    let ux = x - 0.5;
    let uy = y - 0.5;
    let fx = ux.floor();
    let fy = uy.floor();
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
    let x0 = clamp(fx, width);
    let x1 = clamp(fx + 1.0, width);
    let y0 = clamp(fy, height);
    let y1 = clamp(fy + 1.0, height);
    (x0, x1, y0, y1, fx, fy)
}

/// Bilinear RGB sample of constant image data at a differentiable position.
/// Off-canvas positions clamp to the nearest edge pixel.
pub fn sample_rgb_const<R: Real>(canvas: &Canvas<f64>, x: R, y: R) -> [R; 3] {
    let (x0, x1, y0, y1, fx, fy) = bilinear_setup(canvas.width, canvas.height, x.val(), y.val());
    let tx = (x - 0.5 - fx).clamp_c(0.0, 1.0);
    let ty = (y - 0.5 - fy).clamp_c(0.0, 1.0);
    let p00 = canvas.pixel(x0, y0);
    let p10 = canvas.pixel(x1, y0);
    let p01 = canvas.pixel(x0, y1);
    let p11 = canvas.pixel(x1, y1);
    std::array::from_fn(|c| {
        let top = tx * (p10[c] - p00[c]) + p00[c];
        let bot = tx * (p11[c] - p01[c]) + p01[c];
        ty * (bot - top) + top
    })
}

/// Bilinear RGB sample where both the data and the position are
/// differentiable.
pub fn sample_rgb<R: Real>(canvas: &Canvas<R>, x: R, y: R) -> [R; 3] {
    let (x0, x1, y0, y1, fx, fy) = bilinear_setup(canvas.width, canvas.height, x.val(), y.val());
    let tx = (x - 0.5 - fx).clamp_c(0.0, 1.0);
    let ty = (y - 0.5 - fy).clamp_c(0.0, 1.0);
    let p00 = canvas.pixel(x0, y0);
    let p10 = canvas.pixel(x1, y0);
    let p01 = canvas.pixel(x0, y1);
    let p11 = canvas.pixel(x1, y1);
    std::array::from_fn(|c| {
        let top = tx * (p10[c] - p00[c]) + p00[c];
        let bot = tx * (p11[c] - p01[c]) + p01[c];
        ty * (bot - top) + top
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_canvas() -> Canvas {
        Canvas {
            width: 2,
            height: 2,
            data: vec![
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                1.0, 1.0, 1.0,
            ],
        }
    }

    #[test]
    fn ppm_bytes_are_exactly_as_expected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.ppm");
        save_image(&tiny_canvas(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"P6\n2 2\n255\n".to_vec();
        expected.extend_from_slice(&[
            255, 0, 0, 0, 255, 0, //
            0, 0, 255, 255, 255, 255,
        ]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn quantization_rounds_halves_up() {
        assert_eq!(quantize_channel(0.5), 128);
        assert_eq!(quantize_channel(0.0), 0);
        assert_eq!(quantize_channel(1.0), 255);
        assert_eq!(quantize_channel(-0.2), 0);
        assert_eq!(quantize_channel(1.7), 255);
    }

    #[test]
    fn ppm_round_trip_stays_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ppm");
        let mut canvas = Canvas::filled(5, 3, [0.0, 0.0, 0.0]);
        for (i, v) in canvas.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.137).fract();
        }
        save_image(&canvas, &path).unwrap();
        let loaded = load_image(&path).unwrap();
        for (a, b) in canvas.data.iter().zip(&loaded.data) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn save_load_is_idempotent_after_first_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        let mut canvas = Canvas::filled(4, 4, [0.0; 3]);
        for (i, v) in canvas.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.231).fract();
        }
        save_image(&canvas, &p1).unwrap();
        let once = load_image(&p1).unwrap();
        save_image(&once, &p2).unwrap();
        let twice = load_image(&p2).unwrap();
        assert_eq!(once.data, twice.data);
    }

    #[test]
    fn ppm_parser_handles_comments_and_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        std::fs::write(&path, &bytes).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert!((img.data[0] - 10.0 / 255.0).abs() < 1e-12);

        let path2 = dir.path().join("t.ppm");
        std::fs::write(&path2, b"P6\n2 2\n255\n\x01\x02").unwrap();
        let err = load_image(&path2).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn labels_compact_to_contiguous_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        let mut bytes = b"P5\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 0, 7]);
        std::fs::write(&path, &bytes).unwrap();
        let labels = load_labels(&path).unwrap();
        assert_eq!(labels.region_count, 2);
        assert_eq!(labels.labels, vec![1, 0, 1]);
    }

    #[test]
    fn sobel_of_constant_image_is_zero() {
        let canvas = Canvas::filled(6, 6, [0.3, 0.6, 0.1]);
        let g = sobel_gradients(&canvas);
        assert!(g.magnitude.values.iter().all(|&m| m.abs() < 1e-12));
    }

    #[test]
    fn sobel_impulse_matches_brute_force_convolution() {
        let mut canvas = Canvas::filled(5, 5, [0.0; 3]);
        canvas.set_pixel(2, 2, [1.0, 1.0, 1.0]);
        let lum = canvas.luminance();
        let g = sobel_gradients(&canvas);
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        for y in 0..5i32 {
            for x in 0..5i32 {
                let mut ex = 0.0;
                let mut ey = 0.0;
                for dy in -1..=1i32 {
                    for dx in -1..=1i32 {
                        let sx = (x + dx).clamp(0, 4) as usize;
                        let sy = (y + dy).clamp(0, 4) as usize;
                        let v = lum.at(sx, sy);
                        ex += kx[(dy + 1) as usize][(dx + 1) as usize] * v;
                        ey += ky[(dy + 1) as usize][(dx + 1) as usize] * v;
                    }
                }
                assert!((g.gx.at(x as usize, y as usize) - ex).abs() < 1e-12);
                assert!((g.gy.at(x as usize, y as usize) - ey).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_step_edge_has_positive_gx_and_zero_gy() {
        let mut canvas = Canvas::filled(6, 6, [0.0; 3]);
        for y in 0..6 {
            for x in 3..6 {
                canvas.set_pixel(x, y, [1.0, 1.0, 1.0]);
            }
        }
        let g = sobel_gradients(&canvas);
        for y in 1..5 {
            assert!(g.gx.at(2, y) > 0.0);
            assert!(g.gx.at(3, y) > 0.0);
            assert!(g.gy.at(2, y).abs() < 1e-12);
            assert!(g.gy.at(3, y).abs() < 1e-12);
        }
    }

    #[test]
    fn error_map_is_symmetric_and_bounded() {
        let a = tiny_canvas();
        let mut b = tiny_canvas();
        b.data[0] = 0.25;
        b.data[7] = 0.9;
        let ab = error_map(&a, &b).unwrap();
        let ba = error_map(&b, &a).unwrap();
        assert_eq!(ab.values, ba.values);
        assert!(ab.values.iter().all(|&v| (0.0..=3.0).contains(&v)));
        let zero = error_map(&a, &a).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_splits_101_into_50_and_51() {
        let cells = partition_grid(101, 101, 2).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0], CellRect { x: 0, y: 0, w: 50, h: 50 });
        assert_eq!(cells[1], CellRect { x: 50, y: 0, w: 51, h: 50 });
        assert_eq!(cells[2], CellRect { x: 0, y: 50, w: 50, h: 51 });
        assert_eq!(cells[3], CellRect { x: 50, y: 50, w: 51, h: 51 });
    }

    #[test]
    fn grid_rejects_more_cells_than_pixels() {
        assert!(partition_grid(4, 9, 5).is_err());
        assert!(partition_grid(9, 4, 5).is_err());
        assert!(partition_grid(8, 8, 0).is_err());
    }

    #[test]
    fn grid_cells_tile_the_image_exactly() {
        for (w, h, n) in [(17, 13, 3), (64, 64, 4), (9, 9, 9)] {
            let cells = partition_grid(w, h, n).unwrap();
            let mut seen = vec![0u8; w * h];
            for c in &cells {
                for y in c.y..c.y + c.h {
                    for x in c.x..c.x + c.w {
                        seen[y * w + x] += 1;
                    }
                }
            }
            assert!(seen.iter().all(|&s| s == 1), "{w}x{h} n={n}");
        }
    }

    #[test]
    fn bilinear_center_hits_pixel_values_exactly() {
        let canvas = tiny_canvas();
        let p = sample_rgb_const(&canvas, 0.5f64, 0.5f64);
        assert_eq!(p, [1.0, 0.0, 0.0]);
        let q = sample_rgb_const(&canvas, 1.5f64, 1.5f64);
        assert_eq!(q, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn bilinear_midpoint_averages_and_edges_clamp() {
        let canvas = tiny_canvas();
        let mid = sample_rgb_const(&canvas, 1.0f64, 0.5f64);
        assert!((mid[0] - 0.5).abs() < 1e-12);
        assert!((mid[1] - 0.5).abs() < 1e-12);
        let off = sample_rgb_const(&canvas, -3.0f64, 0.5f64);
        assert_eq!(off, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = tiny_canvas();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Canvas::filled(2, 2, [0.5; 3]);
        assert!(psnr(&a, &b).unwrap() < 20.0);
    }
}
