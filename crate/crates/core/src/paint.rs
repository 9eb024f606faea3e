//! Paint-stroke renderers. A stroke is flattened into stamps (disks with
//! interpolated color and radius) and composited onto the canvas. Three
//! implementations share those semantics:
//!
//! - [`render_sequential`]: the reference. Stamps deposit paint in order;
//!   within a stroke, earlier stamps occlude later ones (self-overlap does
//!   not double-darken), and the stroke as a whole composites over the
//!   canvas with its opacity.
//! - [`render_parallel`]: order-free reformulation. A pixel is inside the
//!   stroke if any stamp disk covers it, takes the color of the *nearest*
//!   stamp center (ties to the lowest stamp index), and the whole stroke is
//!   composited in one step. Evaluated tile-by-tile with candidate pruning;
//!   output is bit-identical regardless of thread count.
//! - [`render_soft`]: smooth relaxation for gradient descent. Hard coverage
//!   becomes a sigmoid of a soft maximum of per-stamp signed distances, and
//!   nearest-color becomes a distance-weighted soft minimum.
//!
//! The sequential and parallel renderers agree exactly wherever stamps of a
//! stroke do not overlap; inside self-overlap regions they differ only in
//! which stamp's interpolated color wins (first-covering vs. nearest).

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::geometry::{PaintStamps, PaintStroke, StrokeGeometry};
use crate::image::{Canvas, CellRect};
use crate::parallel;
use crate::texture;

/// Rendering knobs shared by all renderers and embedded in saved timelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Bézier subdivision count; a stroke renders as `segments + 1` stamps.
    pub segments: usize,
    /// Softness of the coverage boundary, in pixels.
    pub tau: f64,
    /// Temperature of the soft maximum/minimum blends, in pixels.
    pub gamma: f64,
    /// Skip soft-render work farther than `margin * tau` outside a stroke's
    /// stamp disks; `None` evaluates the full window (needed when comparing
    /// against finite differences, which are confused by cutoffs).
    pub soft_cull_margin: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            segments: 16,
            tau: 1.0,
            gamma: 2.0,
            soft_cull_margin: Some(12.0),
        }
    }
}

/// Per-pixel color modulation: `(stroke_index, x, y) -> factor`, with `x`,
/// `y` at the pixel center in canvas coordinates.
pub type TexModFn<'a> = &'a (dyn Fn(usize, f64, f64) -> f64 + Sync);

const TILE: usize = 16;

/// Pixel rectangle covered by the union of stamp disks grown by `margin`,
/// clipped to `bounds`. `None` when nothing intersects.
fn stamps_bbox(
    positions: &[[f64; 2]],
    radii: &[f64],
    margin: f64,
    bounds: CellRect,
) -> Option<CellRect> {
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (p, &r) in positions.iter().zip(radii) {
        let r = r.max(0.0) + margin;
        x0 = x0.min(p[0] - r);
        y0 = y0.min(p[1] - r);
        x1 = x1.max(p[0] + r);
        y1 = y1.max(p[1] + r);
    }
    if !x0.is_finite() {
        return None;
    }
    let xi0 = (x0 - 1.0).floor().max(0.0) as usize;
    let yi0 = (y0 - 1.0).floor().max(0.0) as usize;
    let xi1 = (x1 + 1.0).ceil().max(0.0) as usize;
    let yi1 = (y1 + 1.0).ceil().max(0.0) as usize;
    CellRect {
        x: xi0,
        y: yi0,
        w: xi1.saturating_sub(xi0),
        h: yi1.saturating_sub(yi0),
    }
    .intersect(bounds)
}

/// Inclusive pixel range whose centers can lie inside the disk, clipped to
/// `bounds`; `None` if empty.
fn disk_pixels(cx: f64, cy: f64, r: f64, bounds: CellRect) -> Option<(usize, usize, usize, usize)> {
    let x0 = ((cx - r - 0.5).ceil().max(bounds.x as f64)) as usize;
    let y0 = ((cy - r - 0.5).ceil().max(bounds.y as f64)) as usize;
    let xe = (cx + r - 0.5).floor();
    let ye = (cy + r - 0.5).floor();
    if xe < x0 as f64 || ye < y0 as f64 {
        return None;
    }
    let x1 = (xe as usize).min(bounds.x + bounds.w - 1);
    let y1 = (ye as usize).min(bounds.y + bounds.h - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0, x1, y0, y1))
}

#[inline]
fn modulated(color: [f64; 3], m: f64) -> [f64; 3] {
    [
        (color[0] * m).clamp(0.0, 1.0),
        (color[1] * m).clamp(0.0, 1.0),
        (color[2] * m).clamp(0.0, 1.0),
    ]
}

/// Composite one stroke onto `canvas` in place with the sequential
/// (reference) semantics, touching only pixels inside `clip`.
pub fn commit_paint(
    canvas: &mut Canvas,
    stroke: &PaintStroke<f64>,
    stroke_index: usize,
    cfg: &RenderConfig,
    clip: CellRect,
    tex: Option<TexModFn>,
) {
    let stamps = stroke.stamps(cfg.segments);
    let alpha = stroke.alpha;
    let bounds = match clip.intersect(CellRect::full(canvas.width, canvas.height)) {
        Some(b) => b,
        None => return,
    };
    let bbox = match stamps_bbox(&stamps.positions, &stamps.radii, 0.0, bounds) {
        Some(b) => b,
        None => return,
    };

    // Paint accumulated in front-to-back order: `acc` is the premultiplied
    // color deposited so far, `trans` the remaining transmittance. A stamp
    // only shows through what earlier stamps of the same stroke let pass.
    let mut acc = vec![0.0f64; bbox.w * bbox.h * 3];
    let mut trans = vec![1.0f64; bbox.w * bbox.h];
    for k in 0..stamps.positions.len() {
        let [cx, cy] = stamps.positions[k];
        let r = stamps.radii[k];
        if r <= 0.0 {
            continue;
        }
        let color = stamps.colors[k];
        let Some((x0, x1, y0, y1)) = disk_pixels(cx, cy, r, bbox) else {
            continue;
        };
        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            let dy2 = (py - cy) * (py - cy);
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let dx = px - cx;
                if dx * dx + dy2 > r * r {
                    continue;
                }
                let i = (y - bbox.y) * bbox.w + (x - bbox.x);
                let t = trans[i];
                if t == 0.0 {
                    continue;
                }
                let col = match tex {
                    Some(f) => modulated(color, f(stroke_index, px, py)),
                    None => color,
                };
                acc[3 * i] += t * alpha * col[0];
                acc[3 * i + 1] += t * alpha * col[1];
                acc[3 * i + 2] += t * alpha * col[2];
                trans[i] *= 1.0 - alpha;
            }
        }
    }

    for y in 0..bbox.h {
        for x in 0..bbox.w {
            let i = y * bbox.w + x;
            if trans[i] == 1.0 {
                continue;
            }
            let j = canvas.idx(bbox.x + x, bbox.y + y);
            for c in 0..3 {
                canvas.data[j + c] = acc[3 * i + c] + trans[i] * canvas.data[j + c];
            }
        }
    }
}

/// Render strokes over `background` with the stamp-ordered reference
/// semantics.
pub fn render_sequential(
    background: &Canvas,
    strokes: &[PaintStroke<f64>],
    cfg: &RenderConfig,
    tex: Option<TexModFn>,
) -> Canvas {
    let mut out = background.clone();
    let full = CellRect::full(out.width, out.height);
    for (i, stroke) in strokes.iter().enumerate() {
        commit_paint(&mut out, stroke, i, cfg, full, tex);
    }
    out
}

/// Render strokes over `background` with the order-free per-stroke
/// semantics, evaluated in parallel tiles.
pub fn render_parallel(
    background: &Canvas,
    strokes: &[PaintStroke<f64>],
    cfg: &RenderConfig,
    tex: Option<TexModFn>,
) -> Canvas {
    let mut out = background.clone();
    let full = CellRect::full(out.width, out.height);
    for (i, stroke) in strokes.iter().enumerate() {
        commit_paint_parallel(&mut out, stroke, i, cfg, full, tex);
    }
    out
}

/// Composite one stroke onto `canvas` in place with the order-free
/// (nearest-stamp) semantics, touching only pixels inside `clip`.
pub fn commit_paint_parallel(
    out: &mut Canvas,
    stroke: &PaintStroke<f64>,
    stroke_index: usize,
    cfg: &RenderConfig,
    clip: CellRect,
    tex: Option<TexModFn>,
) {
    let stamps = stroke.stamps(cfg.segments);
    let alpha = stroke.alpha;
    let bounds = match clip.intersect(CellRect::full(out.width, out.height)) {
        Some(b) => b,
        None => return,
    };
    let bbox = match stamps_bbox(&stamps.positions, &stamps.radii, 0.0, bounds) {
        Some(b) => b,
        None => return,
    };
    let tiles_x = (bbox.w + TILE - 1) / TILE;
    let tiles_y = (bbox.h + TILE - 1) / TILE;

    let shaded = {
        let frame: &Canvas = out;
        parallel::map_indices(tiles_x * tiles_y, |ti| {
            let tx = bbox.x + (ti % tiles_x) * TILE;
            let ty = bbox.y + (ti / tiles_x) * TILE;
            let rect = CellRect {
                x: tx,
                y: ty,
                w: TILE.min(bbox.x + bbox.w - tx),
                h: TILE.min(bbox.y + bbox.h - ty),
            };
            shade_tile(frame, &stamps, alpha, stroke_index, rect, tex)
        })
    };
    for (rect, buf) in shaded.into_iter().flatten() {
        for y in 0..rect.h {
            let dst = out.idx(rect.x, rect.y + y);
            let src = y * rect.w * 3;
            out.data[dst..dst + rect.w * 3].copy_from_slice(&buf[src..src + rect.w * 3]);
        }
    }
}

fn shade_tile(
    frame: &Canvas,
    stamps: &PaintStamps<f64>,
    alpha: f64,
    stroke_index: usize,
    rect: CellRect,
    tex: Option<TexModFn>,
) -> Option<(CellRect, Vec<f64>)> {
    let n = stamps.positions.len();
    // Distance bounds from each stamp center to the tile's pixel centers.
    let cx0 = rect.x as f64 + 0.5;
    let cx1 = (rect.x + rect.w - 1) as f64 + 0.5;
    let cy0 = rect.y as f64 + 0.5;
    let cy1 = (rect.y + rect.h - 1) as f64 + 0.5;
    let mut dmin2 = Vec::with_capacity(n);
    let mut min_dmax2 = f64::INFINITY;
    let mut region: Vec<usize> = Vec::new();
    let mut tile_fully_covered = false;
    for k in 0..n {
        let [sx, sy] = stamps.positions[k];
        let dxn = (cx0 - sx).max(sx - cx1).max(0.0);
        let dyn_ = (cy0 - sy).max(sy - cy1).max(0.0);
        let dn2 = dxn * dxn + dyn_ * dyn_;
        let dxf = (sx - cx0).abs().max((sx - cx1).abs());
        let dyf = (sy - cy0).abs().max((sy - cy1).abs());
        let df2 = dxf * dxf + dyf * dyf;
        dmin2.push(dn2);
        min_dmax2 = min_dmax2.min(df2);
        let r = stamps.radii[k];
        if r > 0.0 && dn2 <= r * r {
            region.push(k);
            tile_fully_covered |= df2 <= r * r;
        }
    }
    if region.is_empty() {
        return None;
    }
    // A stamp can be the nearest somewhere in the tile only if its nearest
    // possible distance beats some stamp's farthest possible distance.
    let color_cands: Vec<usize> = (0..n).filter(|&k| dmin2[k] <= min_dmax2).collect();

    let mut buf = Vec::with_capacity(rect.w * rect.h * 3);
    for y in 0..rect.h {
        let src = frame.idx(rect.x, rect.y + y);
        buf.extend_from_slice(&frame.data[src..src + rect.w * 3]);
    }
    for y in 0..rect.h {
        let py = (rect.y + y) as f64 + 0.5;
        for x in 0..rect.w {
            let px = (rect.x + x) as f64 + 0.5;
            let covered = tile_fully_covered
                || region.iter().any(|&k| {
                    let [sx, sy] = stamps.positions[k];
                    let (dx, dy) = (px - sx, py - sy);
                    let r = stamps.radii[k];
                    dx * dx + dy * dy <= r * r
                });
            if !covered {
                continue;
            }
            let mut best_d2 = f64::INFINITY;
            let mut best_k = 0usize;
            for &k in &color_cands {
                let [sx, sy] = stamps.positions[k];
                let (dx, dy) = (px - sx, py - sy);
                let d2 = dx * dx + dy * dy;
                if d2 < best_d2 {
                    best_d2 = d2;
                    best_k = k;
                }
            }
            let col = match tex {
                Some(f) => modulated(stamps.colors[best_k], f(stroke_index, px, py)),
                None => stamps.colors[best_k],
            };
            let i = (y * rect.w + x) * 3;
            for c in 0..3 {
                buf[i + c] = alpha * col[c] + (1.0 - alpha) * buf[i + c];
            }
        }
    }
    Some((rect, buf))
}

/// Soft coverage and color of one stroke at a point: coverage is
/// `sigmoid(m / tau)` where `m` is a Boltzmann-weighted average (temperature
/// `gamma`) of the per-stamp signed distances `r_k - d_k`; color softly
/// selects the nearest stamp's color at the same temperature.
///
/// The weighted average — rather than a log-sum-exp — keeps `m` equal to the
/// true signed distance when stamps coincide, so degenerate strokes do not
/// inflate their footprint.
pub fn soft_cov_color<R: Real>(
    stamps: &PaintStamps<R>,
    px: f64,
    py: f64,
    tau: f64,
    gamma: f64,
) -> (R, [R; 3]) {
    let n = stamps.positions.len();
    let mut dist = Vec::with_capacity(n);
    let mut signed = Vec::with_capacity(n);
    for k in 0..n {
        let dx = stamps.positions[k][0].rsub(px);
        let dy = stamps.positions[k][1].rsub(py);
        let d = (dx * dx + dy * dy).sqrt();
        dist.push(d);
        signed.push(stamps.radii[k] - d);
    }
    let mut a_max = signed[0];
    for &a in &signed[1..] {
        a_max = a_max.max2(a);
    }
    let mut w_sum = a_max.lift(0.0);
    let mut wa_sum = w_sum;
    for &a in &signed {
        let w = ((a - a_max) / gamma).exp();
        w_sum = w_sum + w;
        wa_sum = wa_sum + w * a;
    }
    let m = wa_sum / w_sum;
    let cov = (m / tau).sigmoid();

    let mut d_min = dist[0];
    for &d in &dist[1..] {
        d_min = d_min.min2(d);
    }
    let mut v_sum = a_max.lift(0.0);
    let mut color = [v_sum; 3];
    for k in 0..n {
        let v = ((d_min - dist[k]) / gamma).exp();
        v_sum = v_sum + v;
        for c in 0..3 {
            color[c] = color[c] + v * stamps.colors[k][c];
        }
    }
    (cov, color.map(|c| c / v_sum))
}

/// Soft coverage field of a stroke over (part of) `window`. Values outside
/// `rect` are implicitly zero.
#[derive(Debug, Clone)]
pub struct CoverageMask<R> {
    /// Canvas-coordinate rectangle the mask covers; may be empty.
    pub rect: CellRect,
    /// Row-major coverage values over `rect`.
    pub values: Vec<R>,
}

impl<R: Real> CoverageMask<R> {
    pub fn sum(&self, ctx: R) -> R {
        let mut total = ctx.lift(0.0);
        for &v in &self.values {
            total = total + v;
        }
        total
    }

    pub fn at(&self, x: usize, y: usize) -> Option<R> {
        self.rect
            .contains(x, y)
            .then(|| self.values[(y - self.rect.y) * self.rect.w + (x - self.rect.x)])
    }
}

/// Soft coverage mask of a stroke's geometry within `window`.
pub fn stroke_mask<R: Real>(
    geom: &StrokeGeometry<R>,
    cfg: &RenderConfig,
    window: CellRect,
) -> CoverageMask<R> {
    let stamps_r = geom.sample_stamps(cfg.segments);
    let n = stamps_r.positions.len();
    let positions: Vec<[f64; 2]> = stamps_r
        .positions
        .iter()
        .map(|p| [p[0].val(), p[1].val()])
        .collect();
    let radii: Vec<f64> = stamps_r.radii.iter().map(|r| r.val()).collect();
    let rect = match cfg.soft_cull_margin {
        Some(m) => stamps_bbox(&positions, &radii, m * cfg.tau, window),
        None => Some(window),
    };
    let Some(rect) = rect else {
        return CoverageMask {
            rect: CellRect {
                x: window.x,
                y: window.y,
                w: 0,
                h: 0,
            },
            values: Vec::new(),
        };
    };
    // Reuse the paint path with dummy colors for the coverage blend.
    let zero = geom.r_start.lift(0.0);
    let stamps = PaintStamps {
        positions: stamps_r.positions,
        radii: stamps_r.radii,
        colors: vec![[zero; 3]; n],
    };
    let mut values = Vec::with_capacity(rect.w * rect.h);
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            let (cov, _) = soft_cov_color(&stamps, x as f64 + 0.5, y as f64 + 0.5, cfg.tau, cfg.gamma);
            values.push(cov);
        }
    }
    CoverageMask { rect, values }
}

/// Differentiable render of `strokes` over a window of the canvas.
///
/// `base` is the current canvas content cropped to `window` (plain values;
/// it is treated as constant). The result has `window` dimensions; pixel
/// `(i, j)` sits at canvas coordinates `(window.x + i, window.y + j)`.
/// With `textured`, stamp colors are modulated by each stroke's procedural
/// texture before compositing.
pub fn render_soft<R: Real>(
    base: &Canvas<f64>,
    window: CellRect,
    strokes: &[PaintStroke<R>],
    cfg: &RenderConfig,
    textured: bool,
) -> Canvas<R> {
    assert_eq!((base.width, base.height), (window.w, window.h));
    assert!(!strokes.is_empty(), "nothing to render");
    let ctx = strokes[0].alpha;
    let mut out: Canvas<R> = base.lift(ctx);
    for stroke in strokes {
        let stamps = stroke.stamps(cfg.segments);
        let rect = match cfg.soft_cull_margin {
            Some(m) => {
                let positions: Vec<[f64; 2]> = stamps
                    .positions
                    .iter()
                    .map(|p| [p[0].val(), p[1].val()])
                    .collect();
                let radii: Vec<f64> = stamps.radii.iter().map(|r| r.val()).collect();
                match stamps_bbox(&positions, &radii, m * cfg.tau, window) {
                    Some(r) => r,
                    None => continue,
                }
            }
            None => window,
        };
        let latent = stroke.latent;
        for y in rect.y..rect.y + rect.h {
            let py = y as f64 + 0.5;
            for x in rect.x..rect.x + rect.w {
                let px = x as f64 + 0.5;
                let (cov, color) = soft_cov_color(&stamps, px, py, cfg.tau, cfg.gamma);
                let color = if textured {
                    let m = texture::procedural_modulation(&latent, px, py);
                    color.map(|c| (c * m).clamp_c(0.0, 1.0))
                } else {
                    color
                };
                let a = cov * stroke.alpha;
                let keep = a.rsub(1.0);
                let (wx, wy) = (x - window.x, y - window.y);
                let prev = out.pixel(wx, wy);
                out.set_pixel(
                    wx,
                    wy,
                    [
                        color[0] * a + keep * prev[0],
                        color[1] * a + keep * prev[1],
                        color[2] * a + keep * prev[2],
                    ],
                );
            }
        }
    }
    out
}
