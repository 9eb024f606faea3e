//! Objective terms that drive stroke fitting: photometric error, gradient
//! alignment along stroke paths, segment containment, stroke-size pressure,
//! entropic optimal transport between mass grids, and an optional pluggable
//! perceptual term. Everything is generic over [`Real`], so the same code
//! evaluates plainly and under the gradient tape.

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::geometry::{StampSequence, StrokeGeometry};
use crate::image::{
    partition_grid, sobel_bilinear, sobel_bilinear_const, Canvas, CellRect, LabelMap, ScalarField,
};
use crate::paint::CoverageMask;

/// Relative weights of the combined objective, plus the knobs inside the
/// individual terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_pixel: f64,
    pub lambda_perc: f64,
    pub lambda_grad: f64,
    pub lambda_seg: f64,
    pub lambda_ot: f64,
    pub lambda_area: f64,
    /// Weight of the magnitude part inside the gradient-alignment term.
    pub grad_alpha: f64,
    /// Weight of the direction part inside the gradient-alignment term.
    pub grad_beta: f64,
    /// Scale (in covered pixels) of the stroke-size penalty.
    pub area_eta: f64,
    /// Multiplier applied to `grad_alpha` during the smudge pass.
    pub smudge_grad_alpha_scale: f64,
    /// Multiplier applied to `lambda_area` during the smudge pass.
    pub smudge_area_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pixel: 1.0,
            lambda_perc: 0.1,
            lambda_grad: 0.1,
            lambda_seg: 0.1,
            lambda_ot: 0.2,
            lambda_area: 0.02,
            grad_alpha: 1.0,
            grad_beta: 1.0,
            area_eta: 64.0,
            smudge_grad_alpha_scale: 5.0,
            smudge_area_scale: 5.0,
        }
    }
}

impl LossWeights {
    /// Weights for the smudge pass: edge-magnitude matching and the size
    /// penalty are emphasized so smears track target edges without bloating.
    pub fn for_smudge_phase(&self) -> LossWeights {
        let mut w = self.clone();
        w.grad_alpha *= w.smudge_grad_alpha_scale;
        w.lambda_area *= w.smudge_area_scale;
        w
    }
}

/// Configuration of the entropic transport term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OTConfig {
    /// Cells per side of the downsampled mass grid (clamped to the image).
    pub grid: usize,
    /// Entropic sharpness; larger approximates unregularized transport.
    pub entropic_lambda: f64,
    /// Fixed number of alternating scaling iterations.
    pub iterations: usize,
}

impl Default for OTConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            entropic_lambda: 10.0,
            iterations: 100,
        }
    }
}

/// Pluggable feature extractor for the perceptual term. Implementations map
/// an image to a list of single-channel feature maps; the loss is the mean
/// absolute difference per layer, summed over layers.
pub trait FeatureExtractor: Sync {
    fn features<R: Real>(&self, img: &Canvas<R>) -> Vec<ScalarField<R>>;
}

/// Stand-in extractor producing no layers; with it (or with `None`) the
/// perceptual term is zero.
pub struct NoFeatures;

impl FeatureExtractor for NoFeatures {
    fn features<R: Real>(&self, _img: &Canvas<R>) -> Vec<ScalarField<R>> {
        Vec::new()
    }
}

/// `None` with a concrete hook type, for call sites without an extractor.
pub fn no_features() -> Option<&'static NoFeatures> {
    None
}

/// Mean absolute difference over all pixels and channels.
pub fn pixel_loss<R: Real>(render: &Canvas<R>, target: &Canvas<f64>) -> R {
    assert_eq!(
        (render.width, render.height),
        (target.width, target.height),
        "pixel loss image size mismatch"
    );
    let ctx = render.data[0];
    let mut total = ctx.lift(0.0);
    for (&r, &t) in render.data.iter().zip(&target.data) {
        total = total + (r - t).abs();
    }
    total * (1.0 / render.data.len() as f64)
}

/// Mean absolute feature difference per layer, summed over layers. Layers
/// come from `hook`; without one the term is zero.
pub fn perceptual_loss<R: Real, H: FeatureExtractor + ?Sized>(
    ctx: R,
    render: &Canvas<R>,
    target: &Canvas<f64>,
    hook: Option<&H>,
) -> R {
    let Some(hook) = hook else {
        return ctx.lift(0.0);
    };
    let fr = hook.features(render);
    let ft = hook.features(target);
    assert_eq!(fr.len(), ft.len(), "feature layer count mismatch");
    let mut total = ctx.lift(0.0);
    for (lr, lt) in fr.iter().zip(&ft) {
        assert_eq!(
            (lr.width, lr.height),
            (lt.width, lt.height),
            "feature layer size mismatch"
        );
        let mut layer = ctx.lift(0.0);
        for (&a, &b) in lr.values.iter().zip(&lt.values) {
            layer = layer + (a - b).abs();
        }
        total = total + layer * (1.0 / lr.values.len() as f64);
    }
    total
}

/// Gradient alignment sampled at one stroke's stamp centers, normalized by
/// the stroke's polyline arc length. Each in-canvas sample compares Sobel
/// responses of render and target: their magnitude gap, plus a direction
/// term that penalizes misalignment in proportion to the weaker magnitude
/// (angles compared modulo π, so opposite gradients count as aligned).
/// Samples whose centers fall off the canvas are skipped; a zero-length
/// stroke contributes nothing.
pub fn gradient_loss<R: Real>(
    render: &Canvas<R>,
    target: &Canvas<f64>,
    stamps: &StampSequence<R>,
    grad_alpha: f64,
    grad_beta: f64,
) -> R {
    let ctx = stamps.positions[0][0];
    let mut arc = ctx.lift(0.0);
    for pair in stamps.positions.windows(2) {
        let dx = pair[1][0] - pair[0][0];
        let dy = pair[1][1] - pair[0][1];
        arc = arc + (dx * dx + dy * dy).sqrt();
    }
    if arc.val() <= 1e-9 {
        return ctx.lift(0.0);
    }
    let (w, h) = (render.width as f64, render.height as f64);
    let mut total = ctx.lift(0.0);
    for p in &stamps.positions {
        let (x, y) = (p[0], p[1]);
        if x.val() < 0.0 || x.val() >= w || y.val() < 0.0 || y.val() >= h {
            continue;
        }
        let (gxr, gyr) = sobel_bilinear(render, x, y);
        let (gxt, gyt) = sobel_bilinear_const(target, x, y);
        let mr2 = gxr * gxr + gyr * gyr;
        let mt2 = gxt * gxt + gyt * gyt;
        let mr = mr2.sqrt();
        let mt = mt2.sqrt();
        let l_mag = (mr - mt).abs();
        // cos of the doubled angle difference, expressed through the raw
        // components so no branch or atan2 is needed:
        // cos 2Δθ = (ar·at + br·bt) / (|g_r|²·|g_t|²)  with a = gx²−gy²,
        // b = 2·gx·gy.
        let ar = gxr * gxr - gyr * gyr;
        let br = gxr * gyr * 2.0;
        let at = gxt * gxt - gyt * gyt;
        let bt = gxt * gyt * 2.0;
        let cos2 = (ar * at + br * bt) / (mr2 * mt2 + 1e-12);
        let l_dir = mr.min2(mt) * cos2.rsub(1.0) * 0.5;
        total = total + l_mag * grad_alpha + l_dir * grad_beta;
    }
    total / arc
}

/// Fraction of one stroke's soft coverage that spills outside the segment
/// region it covers most. Ties pick the lowest region id; the normalizer is
/// clamped below by one so near-empty masks stay stable.
pub fn seg_loss<R: Real>(ctx: R, mask: &CoverageMask<R>, labels: &LabelMap) -> R {
    let rect = mask.rect;
    assert!(
        rect.w == 0 || (rect.x + rect.w <= labels.width && rect.y + rect.h <= labels.height),
        "coverage mask outside the label map"
    );
    let mut overlaps = vec![ctx.lift(0.0); labels.region_count as usize];
    for (i, &v) in mask.values.iter().enumerate() {
        let x = rect.x + i % rect.w;
        let y = rect.y + i / rect.w;
        let id = labels.at(x, y) as usize;
        overlaps[id] = overlaps[id] + v;
    }
    let mut area = ctx.lift(0.0);
    for &o in &overlaps {
        area = area + o;
    }
    let mut best = 0;
    for (i, o) in overlaps.iter().enumerate() {
        if o.val() > overlaps[best].val() {
            best = i;
        }
    }
    let off = if overlaps.is_empty() {
        ctx.lift(0.0)
    } else {
        area - overlaps[best]
    };
    off / area.max2(ctx.lift(1.0))
}

/// Mean size penalty `exp(−area/η)` over the strokes' coverage masks:
/// vanishing strokes cost ~1 each, large ones nothing.
pub fn area_loss<R: Real>(ctx: R, masks: &[CoverageMask<R>], eta: f64) -> R {
    assert!(!masks.is_empty(), "area loss needs at least one stroke");
    let mut total = ctx.lift(0.0);
    for m in masks {
        total = total + (m.sum(ctx) * (-1.0 / eta)).exp();
    }
    total * (1.0 / masks.len() as f64)
}

fn matvec(mat: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &mat[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (m, v) in row.iter().zip(x) {
            acc += m * v;
        }
        *o = acc;
    }
    out
}

fn matvec_t(mat: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &mat[i * n..(i + 1) * n];
        for (o, m) in out.iter_mut().zip(row) {
            *o += m * xi;
        }
    }
    out
}

fn grid_side(cfg: &OTConfig, width: usize, height: usize) -> usize {
    cfg.grid.min(width).min(height).max(1)
}

/// Luminance mass of `img` pooled onto a `side`×`side` grid, floored at
/// 1e-6 per cell and normalized to sum one.
pub fn mass_distribution<R: Real>(img: &Canvas<R>, side: usize) -> Vec<R> {
    let cells = partition_grid(img.width, img.height, side).expect("validated grid side");
    let lum = img.luminance();
    let ctx = img.data[0];
    let mut masses: Vec<R> = Vec::with_capacity(cells.len());
    for c in &cells {
        let mut acc = ctx.lift(0.0);
        for y in c.y..c.y + c.h {
            for x in c.x..c.x + c.w {
                acc = acc + lum.at(x, y);
            }
        }
        masses.push(acc * (1.0 / c.area() as f64) + 1e-6);
    }
    let mut total = ctx.lift(0.0);
    for &m in &masses {
        total = total + m;
    }
    for m in &mut masses {
        *m = *m / total;
    }
    masses
}

/// Squared Euclidean costs between grid-cell centers in normalized
/// [0,1]² coordinates, row-major `side²`×`side²`.
fn cost_matrix(width: usize, height: usize, side: usize) -> Vec<f64> {
    let cells = partition_grid(width, height, side).expect("validated grid side");
    let centers: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| {
            (
                (c.x as f64 + c.w as f64 * 0.5) / width as f64,
                (c.y as f64 + c.h as f64 * 0.5) / height as f64,
            )
        })
        .collect();
    let n = centers.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dx = centers[i].0 - centers[j].0;
            let dy = centers[i].1 - centers[j].1;
            cost[i * n + j] = dx * dx + dy * dy;
        }
    }
    cost
}

/// One forward pass of the alternating scalings. Returns the per-iteration
/// scaling history when `keep_history`, else only the final pair.
#[allow(clippy::type_complexity)]
fn sinkhorn_scalings(
    a: &[f64],
    b: &[f64],
    kernel: &[f64],
    iters: usize,
    keep_history: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut v = vec![1.0; n];
    for t in 0..iters {
        let r = matvec(kernel, &v);
        let u: Vec<f64> = a.iter().zip(&r).map(|(ai, ri)| ai / ri).collect();
        let s = matvec_t(kernel, &u);
        let vn: Vec<f64> = b.iter().zip(&s).map(|(bi, si)| bi / si).collect();
        if keep_history || t == iters - 1 {
            us.push(u);
            vs.push(vn.clone());
        }
        v = vn;
    }
    (us, vs)
}

/// Entropic transport cost between the images' pooled mass grids, with an
/// exact hand-derived adjoint through the fixed number of scaling
/// iterations (the chain runs backwards through every iteration, so the
/// gradient matches finite differences of the truncated scheme itself).
pub fn sinkhorn_ot<R: Real>(render: &Canvas<R>, target: &Canvas<f64>, cfg: &OTConfig) -> R {
    assert_eq!(
        (render.width, render.height),
        (target.width, target.height),
        "transport loss image size mismatch"
    );
    assert!(cfg.iterations >= 1, "need at least one scaling iteration");
    let side = grid_side(cfg, render.width, render.height);
    let a = mass_distribution(render, side);
    let b = mass_distribution::<f64>(target, side);
    let cost = cost_matrix(render.width, render.height, side);
    let kernel: Vec<f64> = cost.iter().map(|c| (-cfg.entropic_lambda * c).exp()).collect();
    let weighted: Vec<f64> = cost.iter().zip(&kernel).map(|(c, k)| c * k).collect();
    let iters = cfg.iterations;

    let mut eval = move |vals: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let n = vals.len();
        let (us, vs) = sinkhorn_scalings(vals, &b, &kernel, iters, want_grad);
        let u_last = us.last().expect("at least one iteration");
        let v_last = vs.last().expect("at least one iteration");
        let mv = matvec(&weighted, v_last);
        let value: f64 = u_last.iter().zip(&mv).map(|(u, m)| u * m).sum();
        if !want_grad {
            return (value, None);
        }
        // Reverse sweep. Within iteration t the forward order is
        //   r = K·v_{t-1},  u = a ⊘ r,  s = Kᵀ·u,  v = b ⊘ s,
        // so the adjoints run v → s → u → (a, r) → v_{t-1}. The recovered
        // identities r = a ⊘ u and s = b ⊘ v avoid storing r and s.
        let mut ubar = mv;
        let mut vbar = matvec_t(&weighted, u_last);
        let mut abar = vec![0.0; n];
        for t in (0..iters).rev() {
            let u = &us[t];
            let v = &vs[t];
            let sbar: Vec<f64> = vbar
                .iter()
                .zip(v)
                .zip(&b)
                .map(|((vb, vi), bi)| -vb * vi * vi / bi)
                .collect();
            let ks = matvec(&kernel, &sbar);
            for (ub, k) in ubar.iter_mut().zip(&ks) {
                *ub += k;
            }
            for i in 0..n {
                abar[i] += ubar[i] * u[i] / vals[i];
            }
            if t > 0 {
                let rbar: Vec<f64> = ubar
                    .iter()
                    .zip(u)
                    .zip(vals)
                    .map(|((ub, ui), ai)| -ub * ui * ui / ai)
                    .collect();
                vbar = matvec_t(&kernel, &rbar);
                ubar = vec![0.0; n];
            }
        }
        (value, Some(abar))
    };
    R::lift_custom(&a, &mut eval)
}

/// Plain-valued entropic transport plan between the two images' mass grids,
/// for diagnostics: returns the row-major `side²`×`side²` plan and `side`.
pub fn transport_plan(
    render: &Canvas<f64>,
    target: &Canvas<f64>,
    cfg: &OTConfig,
) -> (Vec<f64>, usize) {
    assert!(cfg.iterations >= 1, "need at least one scaling iteration");
    let side = grid_side(cfg, render.width, render.height);
    let a = mass_distribution::<f64>(render, side);
    let b = mass_distribution::<f64>(target, side);
    let cost = cost_matrix(render.width, render.height, side);
    let kernel: Vec<f64> = cost.iter().map(|c| (-cfg.entropic_lambda * c).exp()).collect();
    let (us, vs) = sinkhorn_scalings(&a, &b, &kernel, cfg.iterations, false);
    let (u, v) = (us.last().unwrap(), vs.last().unwrap());
    let n = a.len();
    let mut plan = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            plan[i * n + j] = u[i] * kernel[i * n + j] * v[j];
        }
    }
    (plan, side)
}

/// Shared per-stroke gradient-alignment aggregate: mean of
/// [`gradient_loss`] over all strokes, with stamp centers shifted into the
/// render window's local frame.
fn mean_gradient_loss<R: Real>(
    render: &Canvas<R>,
    target: &Canvas<f64>,
    window: CellRect,
    geoms: &[StrokeGeometry<R>],
    segments: usize,
    weights: &LossWeights,
) -> R {
    let ctx = render.data[0];
    if geoms.is_empty() {
        return ctx.lift(0.0);
    }
    let mut total = ctx.lift(0.0);
    for geom in geoms {
        let mut stamps = geom.sample_stamps(segments);
        for p in &mut stamps.positions {
            p[0] = p[0] - window.x as f64;
            p[1] = p[1] - window.y as f64;
        }
        total = total + gradient_loss(render, target, &stamps, weights.grad_alpha, weights.grad_beta);
    }
    total * (1.0 / geoms.len() as f64)
}

/// Full appearance objective over a render window: weighted sum of the
/// pixel, perceptual, gradient-alignment (averaged over strokes), segment
/// containment (averaged over strokes), transport, and stroke-size terms.
/// `render`/`target` are window-sized; stroke geometry and coverage masks
/// stay in canvas coordinates, as does the optional label map. Zero-weight
/// terms are skipped entirely.
#[allow(clippy::too_many_arguments)]
pub fn total_app_loss<R: Real, H: FeatureExtractor + ?Sized>(
    render: &Canvas<R>,
    target: &Canvas<f64>,
    window: CellRect,
    geoms: &[StrokeGeometry<R>],
    masks: &[CoverageMask<R>],
    labels: Option<&LabelMap>,
    segments: usize,
    weights: &LossWeights,
    ot: &OTConfig,
    hook: Option<&H>,
) -> R {
    let ctx = render.data[0];
    let mut total = pixel_loss(render, target) * weights.lambda_pixel;
    if weights.lambda_perc != 0.0 {
        total = total + perceptual_loss(ctx, render, target, hook) * weights.lambda_perc;
    }
    if weights.lambda_grad != 0.0 {
        total = total
            + mean_gradient_loss(render, target, window, geoms, segments, weights)
                * weights.lambda_grad;
    }
    if weights.lambda_seg != 0.0 && !masks.is_empty() {
        if let Some(labels) = labels {
            let mut seg = ctx.lift(0.0);
            for m in masks {
                seg = seg + seg_loss(ctx, m, labels);
            }
            total = total + seg * (weights.lambda_seg / masks.len() as f64);
        }
    }
    if weights.lambda_ot != 0.0 {
        total = total + sinkhorn_ot(render, target, ot) * weights.lambda_ot;
    }
    if weights.lambda_area != 0.0 && !masks.is_empty() {
        total = total + area_loss(ctx, masks, weights.area_eta) * weights.lambda_area;
    }
    total
}

/// Reduced objective for the texture pass: pixel, perceptual, and
/// gradient-alignment terms only.
pub fn style_loss<R: Real, H: FeatureExtractor + ?Sized>(
    render: &Canvas<R>,
    target: &Canvas<f64>,
    window: CellRect,
    geoms: &[StrokeGeometry<R>],
    segments: usize,
    weights: &LossWeights,
    hook: Option<&H>,
) -> R {
    let ctx = render.data[0];
    let mut total = pixel_loss(render, target) * weights.lambda_pixel;
    if weights.lambda_perc != 0.0 {
        total = total + perceptual_loss(ctx, render, target, hook) * weights.lambda_perc;
    }
    if weights.lambda_grad != 0.0 {
        total = total
            + mean_gradient_loss(render, target, window, geoms, segments, weights)
                * weights.lambda_grad;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{central_difference, gradcheck, Objective, ParamVector, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(w: usize, h: usize, rgb: [f64; 3]) -> Canvas<f64> {
        let mut c = Canvas::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                c.set_pixel(x, y, rgb);
            }
        }
        c
    }

    /// Gray canvas whose luminance rises along one axis with the given
    /// per-pixel slope; a slope of 1/8 gives unit Sobel response away from
    /// the clamped border.
    fn ramp(w: usize, h: usize, slope: f64, along_x: bool) -> Canvas<f64> {
        let mut c = Canvas::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let v = slope * if along_x { x as f64 } else { y as f64 };
                c.set_pixel(x, y, [v, v, v]);
            }
        }
        c
    }

    fn random_canvas(w: usize, h: usize, seed: u64) -> Canvas<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Canvas::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                c.set_pixel(x, y, [rng.gen(), rng.gen(), rng.gen()]);
            }
        }
        c
    }

    fn stamps_at(points: &[[f64; 2]]) -> StampSequence<f64> {
        StampSequence {
            positions: points.to_vec(),
            radii: vec![1.0; points.len()],
        }
    }

    #[test]
    fn pixel_loss_matches_hand_values() {
        let black = flat(6, 4, [0.0; 3]);
        let white = flat(6, 4, [1.0; 3]);
        assert_eq!(pixel_loss(&black, &black), 0.0);
        assert_eq!(pixel_loss(&white, &black), 1.0);
        let mut half = black.clone();
        for y in 0..4 {
            for x in 3..6 {
                half.set_pixel(x, y, [1.0; 3]);
            }
        }
        assert!((pixel_loss(&half, &black) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_loss_is_zero_on_matching_or_flat_images() {
        let r = ramp(9, 9, 0.05, true);
        let stamps = stamps_at(&[[3.5, 4.5], [4.5, 4.5]]);
        assert!(gradient_loss(&r, &r, &stamps, 1.0, 1.0).abs() < 1e-9);
        let f = flat(9, 9, [0.3; 3]);
        assert!(gradient_loss(&f, &f, &stamps, 1.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_loss_on_orthogonal_unit_fields() {
        // Unit Sobel magnitudes everywhere in the interior, orthogonal
        // directions: each sample pays min(1,1)·(1−cos 2·90°)/2 = 1 in the
        // direction term and |1−1| = 0 in the magnitude term. Two interior
        // samples over an arc of length one sum to 2.
        let r = ramp(9, 9, 1.0 / 8.0, true);
        let t = ramp(9, 9, 1.0 / 8.0, false);
        let stamps = stamps_at(&[[3.5, 4.5], [4.5, 4.5]]);
        let dir_only = gradient_loss(&r, &t, &stamps, 0.0, 1.0);
        assert!((dir_only - 2.0).abs() < 1e-9, "got {dir_only}");
        let mag_only = gradient_loss(&r, &t, &stamps, 1.0, 0.0);
        assert!(mag_only.abs() < 1e-9, "got {mag_only}");
    }

    #[test]
    fn gradient_loss_skips_offcanvas_samples_but_keeps_arc_length() {
        let r = ramp(9, 9, 1.0 / 8.0, true);
        let t = ramp(9, 9, 1.0 / 8.0, false);
        let inside = stamps_at(&[[3.5, 4.5], [4.5, 4.5]]);
        let with_outside = stamps_at(&[[3.5, 4.5], [4.5, 4.5], [-3.0, 4.5]]);
        let base = gradient_loss(&r, &t, &inside, 0.0, 1.0);
        let longer = gradient_loss(&r, &t, &with_outside, 0.0, 1.0);
        // same two in-canvas samples, arc length grows from 1 to 1 + 7.5
        assert!((base - 2.0).abs() < 1e-9);
        assert!((longer - 2.0 / 8.5).abs() < 1e-9, "got {longer}");
    }

    #[test]
    fn gradient_loss_zero_length_stroke_contributes_nothing() {
        let r = ramp(9, 9, 0.1, true);
        let t = ramp(9, 9, 0.1, false);
        let stamps = stamps_at(&[[4.5, 4.5], [4.5, 4.5]]);
        assert_eq!(gradient_loss(&r, &t, &stamps, 1.0, 1.0), 0.0);
    }

    fn two_region_labels(w: usize, h: usize) -> LabelMap {
        let raw: Vec<u32> = (0..w * h)
            .map(|i| if i % w < w / 2 { 7 } else { 9 })
            .collect();
        LabelMap::from_raw(w, h, &raw)
    }

    #[test]
    fn seg_loss_zero_inside_one_region_and_half_when_split() {
        let labels = two_region_labels(8, 4);
        let inside = CoverageMask {
            rect: CellRect { x: 0, y: 0, w: 4, h: 4 },
            values: vec![1.0; 16],
        };
        assert_eq!(seg_loss(1.0, &inside, &labels), 0.0);
        let split = CoverageMask {
            rect: CellRect { x: 2, y: 0, w: 4, h: 4 },
            values: vec![1.0; 16],
        };
        assert!((seg_loss(1.0, &split, &labels) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seg_loss_empty_mask_is_zero() {
        let labels = two_region_labels(8, 4);
        let empty = CoverageMask::<f64> {
            rect: CellRect { x: 0, y: 0, w: 0, h: 0 },
            values: Vec::new(),
        };
        assert_eq!(seg_loss(1.0, &empty, &labels), 0.0);
    }

    #[test]
    fn seg_loss_is_invariant_under_relabeling() {
        let w = 10;
        let h = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<u32> = (0..w * h).map(|_| rng.gen_range(0..3)).collect();
        // a permutation of the three ids
        let permuted: Vec<u32> = raw.iter().map(|&v| [5u32, 1, 3][v as usize]).collect();
        let a = LabelMap::from_raw(w, h, &raw);
        let b = LabelMap::from_raw(w, h, &permuted);
        let mask = CoverageMask {
            rect: CellRect { x: 1, y: 1, w: 7, h: 4 },
            values: (0..28).map(|i| 0.1 + 0.03 * i as f64).collect(),
        };
        let la = seg_loss(1.0, &mask, &a);
        let lb = seg_loss(1.0, &mask, &b);
        assert!((la - lb).abs() < 1e-12, "{la} vs {lb}");
    }

    fn mask_with_sum(total: f64) -> CoverageMask<f64> {
        CoverageMask {
            rect: CellRect { x: 0, y: 0, w: 4, h: 4 },
            values: vec![total / 16.0; 16],
        }
    }

    #[test]
    fn area_loss_matches_hand_values_and_decreases_with_size() {
        let eta = 64.0;
        assert!((area_loss(1.0, &[mask_with_sum(0.0)], eta) - 1.0).abs() < 1e-12);
        let at_eta = area_loss(1.0, &[mask_with_sum(64.0)], eta);
        assert!((at_eta - (-1.0f64).exp()).abs() < 1e-12);
        let pair = area_loss(1.0, &[mask_with_sum(0.0), mask_with_sum(64.0)], eta);
        assert!((pair - (1.0 + (-1.0f64).exp()) / 2.0).abs() < 1e-12);
        let small = area_loss(1.0, &[mask_with_sum(10.0)], eta);
        let large = area_loss(1.0, &[mask_with_sum(20.0)], eta);
        assert!(large < small);
    }

    #[test]
    fn transport_plan_marginals_match_the_pooled_masses() {
        let render = random_canvas(64, 64, 3);
        let target = random_canvas(64, 64, 4);
        let cfg = OTConfig::default();
        let (plan, side) = transport_plan(&render, &target, &cfg);
        let n = side * side;
        let a = mass_distribution::<f64>(&render, side);
        let b = mass_distribution::<f64>(&target, side);
        let mut worst_row = 0.0f64;
        let mut worst_col = 0.0f64;
        for i in 0..n {
            let row: f64 = plan[i * n..(i + 1) * n].iter().sum();
            worst_row = worst_row.max((row - a[i]).abs());
        }
        for j in 0..n {
            let col: f64 = (0..n).map(|i| plan[i * n + j]).sum();
            worst_col = worst_col.max((col - b[j]).abs());
        }
        assert!(worst_row < 1e-5, "row marginal error {worst_row}");
        assert!(worst_col < 1e-5, "column marginal error {worst_col}");
    }

    /// Dark ground with a few bright blobs, so the pooled mass grid carries
    /// real structure (uniform noise pools to a near-constant grid and the
    /// transport cost degenerates to its entropic floor).
    fn blobby_canvas(w: usize, h: usize, seed: u64) -> Canvas<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(0.0..w as f64),
                    rng.gen_range(0.0..h as f64),
                    rng.gen_range(2.0..5.0),
                    rng.gen_range(0.5..1.0),
                )
            })
            .collect();
        let mut c = Canvas::filled(w, h, [0.05; 3]);
        for y in 0..h {
            for x in 0..w {
                let mut v: f64 = 0.05;
                for &(bx, by, s, gain) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    v += gain * (-d2 / (2.0 * s * s)).exp();
                }
                let v = v.min(1.0);
                c.set_pixel(x, y, [v, v, v]);
            }
        }
        c
    }

    #[test]
    fn transport_cost_prefers_identical_images_over_shifted_ones() {
        let cfg = OTConfig {
            grid: 8,
            ..OTConfig::default()
        };
        for seed in 0..20 {
            let img = blobby_canvas(32, 32, 100 + seed);
            let mut shifted = img.clone();
            for y in 0..32 {
                for x in 0..32 {
                    shifted.set_pixel(x, y, img.pixel((x + 8) % 32, y));
                }
            }
            let same = sinkhorn_ot(&img, &img, &cfg);
            let moved = sinkhorn_ot(&img, &shifted, &cfg);
            assert!(same >= 0.0);
            assert!(same < moved, "seed {seed}: {same} vs {moved}");
        }
    }

    #[test]
    fn transport_cost_of_a_point_mass_against_itself_is_tiny() {
        // All mass in one grid cell on both sides: self-transport is free,
        // so the only cost comes from the 1e-6 probability floor spread at
        // bounded distance.
        let mut img = flat(16, 16, [0.0; 3]);
        for y in 0..4 {
            for x in 0..4 {
                img.set_pixel(x, y, [1.0; 3]);
            }
        }
        let cfg = OTConfig {
            grid: 4,
            ..OTConfig::default()
        };
        let cost = sinkhorn_ot(&img, &img, &cfg);
        assert!(cost >= 0.0);
        // measured ~8e-6: the floor mass (15 cells · 1e-6) moves at squared
        // distances up to ~0.5, so exact zero is not attainable
        assert!(cost < 1e-4, "got {cost}");
    }

    struct OTObjective {
        target: Canvas<f64>,
        cfg: OTConfig,
        w: usize,
        h: usize,
    }

    impl Objective for OTObjective {
        fn eval<R: Real>(&self, params: &[R]) -> R {
            let render = Canvas {
                width: self.w,
                height: self.h,
                data: params.to_vec(),
            };
            sinkhorn_ot(&render, &self.target, &self.cfg)
        }
    }

    #[test]
    fn transport_gradient_matches_finite_differences() {
        let (w, h) = (8, 8);
        let obj = OTObjective {
            target: random_canvas(w, h, 21),
            cfg: OTConfig {
                grid: 4,
                entropic_lambda: 10.0,
                iterations: 40,
            },
            w,
            h,
        };
        let render = random_canvas(w, h, 22);
        let names = (0..w * h * 3).map(|i| format!("px{i}")).collect();
        let params = ParamVector::new(names, render.data.clone());
        let report = gradcheck(&obj, &params, 1e-4, 1e-3);
        assert!(
            report.pass,
            "worst slot {:?} rel err {}",
            report.worst_slot(),
            report.max_rel_err
        );
    }

    #[test]
    fn transport_cost_is_deterministic() {
        let a = random_canvas(24, 20, 5);
        let b = random_canvas(24, 20, 6);
        let cfg = OTConfig {
            grid: 6,
            ..OTConfig::default()
        };
        let x = sinkhorn_ot(&a, &b, &cfg);
        let y = sinkhorn_ot(&a, &b, &cfg);
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn transport_gradient_agrees_between_tape_and_plain_value() {
        // the tape's forward value must equal the plain evaluation bit for bit
        let render = random_canvas(12, 12, 7);
        let target = random_canvas(12, 12, 8);
        let cfg = OTConfig {
            grid: 3,
            entropic_lambda: 10.0,
            iterations: 25,
        };
        let plain = sinkhorn_ot(&render, &target, &cfg);
        let tape = Tape::new();
        let vars: Vec<_> = render.data.iter().map(|&v| tape.leaf(v)).collect();
        let lifted = Canvas {
            width: 12,
            height: 12,
            data: vars,
        };
        let taped = sinkhorn_ot(&lifted, &target, &cfg);
        assert_eq!(plain.to_bits(), taped.val().to_bits());
    }

    struct MeanPool;

    impl FeatureExtractor for MeanPool {
        fn features<R: Real>(&self, img: &Canvas<R>) -> Vec<ScalarField<R>> {
            let lum = img.luminance();
            let (w, h) = (img.width / 2, img.height / 2);
            let mut out = ScalarField::filled(w, h, img.data[0].lift(0.0));
            for y in 0..h {
                for x in 0..w {
                    let s = lum.at(2 * x, 2 * y)
                        + lum.at(2 * x + 1, 2 * y)
                        + lum.at(2 * x, 2 * y + 1)
                        + lum.at(2 * x + 1, 2 * y + 1);
                    out.set(x, y, s * 0.25);
                }
            }
            vec![out]
        }
    }

    #[test]
    fn perceptual_loss_uses_the_hook_and_defaults_to_zero() {
        let a = random_canvas(8, 8, 31);
        let b = random_canvas(8, 8, 32);
        assert_eq!(perceptual_loss(1.0, &a, &b, no_features()), 0.0);
        let hook = MeanPool;
        assert_eq!(perceptual_loss(1.0, &a, &a, Some(&hook)), 0.0);
        assert!(perceptual_loss(1.0, &a, &b, Some(&hook)) > 0.0);
    }

    #[test]
    fn smudge_phase_weights_scale_the_right_knobs() {
        let w = LossWeights::default();
        let s = w.for_smudge_phase();
        assert_eq!(s.grad_alpha, w.grad_alpha * 5.0);
        assert_eq!(s.lambda_area, w.lambda_area * 5.0);
        assert_eq!(s.lambda_pixel, w.lambda_pixel);
        assert_eq!(s.grad_beta, w.grad_beta);
    }

    #[test]
    fn total_app_loss_is_the_weighted_sum_of_its_terms() {
        let w = 16;
        let h = 16;
        let render = random_canvas(w, h, 41);
        let target = random_canvas(w, h, 42);
        let window = CellRect { x: 0, y: 0, w, h };
        let geom = StrokeGeometry {
            start: [3.0, 3.0],
            ctrl: [8.0, 6.0],
            end: [12.0, 12.0],
            r_start: 2.0,
            r_end: 2.0,
        };
        let mask = CoverageMask {
            rect: CellRect { x: 2, y: 2, w: 6, h: 6 },
            values: vec![0.5; 36],
        };
        let raw: Vec<u32> = (0..w * h).map(|i| (i as u32) % 2).collect();
        let labels = LabelMap::from_raw(w, h, &raw);
        let weights = LossWeights::default();
        let ot = OTConfig {
            grid: 4,
            iterations: 30,
            ..OTConfig::default()
        };
        let segments = 6;

        let total = total_app_loss(
            &render,
            &target,
            window,
            std::slice::from_ref(&geom),
            std::slice::from_ref(&mask),
            Some(&labels),
            segments,
            &weights,
            &ot,
            no_features(),
        );

        let stamps = geom.sample_stamps(segments);
        let expected = pixel_loss(&render, &target) * weights.lambda_pixel
            + gradient_loss(&render, &target, &stamps, weights.grad_alpha, weights.grad_beta)
                * weights.lambda_grad
            + seg_loss(1.0, &mask, &labels) * weights.lambda_seg
            + sinkhorn_ot(&render, &target, &ot) * weights.lambda_ot
            + area_loss(1.0, std::slice::from_ref(&mask), weights.area_eta) * weights.lambda_area;
        assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");

        let style = style_loss(
            &render,
            &target,
            window,
            std::slice::from_ref(&geom),
            segments,
            &weights,
            no_features(),
        );
        let style_expected = pixel_loss(&render, &target) * weights.lambda_pixel
            + gradient_loss(&render, &target, &stamps, weights.grad_alpha, weights.grad_beta)
                * weights.lambda_grad;
        assert!((style - style_expected).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative_and_zero_at_the_target() {
        for seed in 0..5 {
            let img = random_canvas(12, 10, 60 + seed);
            assert_eq!(pixel_loss(&img, &img), 0.0);
            let cfg = OTConfig {
                grid: 3,
                iterations: 40,
                ..OTConfig::default()
            };
            let ot = sinkhorn_ot(&img, &img, &cfg);
            assert!(ot >= 0.0);
            let other = random_canvas(12, 10, 90 + seed);
            assert!(pixel_loss(&other, &img) > 0.0);
            assert!(sinkhorn_ot(&other, &img, &cfg) >= 0.0);
        }
    }

    #[test]
    fn gradient_loss_gradient_matches_finite_differences() {
        struct GradObjective {
            render: Canvas<f64>,
            target: Canvas<f64>,
        }
        impl Objective for GradObjective {
            fn eval<R: Real>(&self, params: &[R]) -> R {
                let ctx = params[0];
                let lifted = self.render.lift(ctx);
                let stamps = StampSequence {
                    positions: vec![[params[0], params[1]], [params[2], params[3]]],
                    radii: vec![ctx.lift(1.0), ctx.lift(1.0)],
                };
                gradient_loss(&lifted, &self.target, &stamps, 1.0, 1.0)
            }
        }
        let obj = GradObjective {
            render: random_canvas(16, 16, 71),
            target: random_canvas(16, 16, 72),
        };
        // positions chosen between pixel centers so the bilinear kink of the
        // finite-difference probe stays away
        let params = ParamVector::new(
            vec!["x0".into(), "y0".into(), "x1".into(), "y1".into()],
            vec![4.3, 5.2, 9.6, 8.7],
        );
        let report = gradcheck(&obj, &params, 1e-4, 1e-3);
        assert!(
            report.pass,
            "worst slot {:?} rel err {}",
            report.worst_slot(),
            report.max_rel_err
        );
        // spot-check against a plain two-sided difference as well
        let g = crate::diff::gradient_of(&obj, &params.values);
        let n = central_difference(&obj, &params.values, 1e-4);
        assert!((g[0] - n[0]).abs() / n[0].abs().max(1e-8) < 1e-3);
    }
}
