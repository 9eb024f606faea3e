//! Smudge strokes: a brush that deposits no pigment of its own but drags
//! the paint already on the canvas along its trajectory.
//!
//! At every stamp the brush holds a square patch of paint. Stepping along
//! the stroke, the brush blends part of itself onto the canvas under the
//! stamp and picks part of the canvas back up:
//!
//! ```text
//! canvas_k = alpha_c * brush_{k-1} + (1 - alpha_c) * canvas_under_stamp_k
//! brush_k  = alpha_s * brush_ref   + (1 - alpha_s) * canvas_k
//! ```
//!
//! Two choices of `brush_ref` give the two renderers:
//!
//! - **Stepwise** (the classic formulation): `brush_ref = brush_{k-1}`,
//!   a Markov chain initialized from the canvas under the first stamp.
//! - **One-shot**: the chain is cut by estimating every brush state up
//!   front as a beta-kernel-weighted average of the *pristine* canvas
//!   patches along the trajectory (eliminating the long multiplicative
//!   dependency, which both shortens the differentiation graph and matches
//!   the stepwise brush closely, since the exact unrolled chain is itself
//!   an exponentially-weighted average of past canvas patches).
//!
//! The beta kernel is parameterized by normalized cumulative arc length, so
//! its weights are invariant to stamp resampling density.
//!
//! Patches are `res x res` RGB buffers spanning the square circumscribing
//! the stamp disk (side `2 r_k`), resampled bilinearly. Writes blend
//! through a soft circular mask `sigmoid((r - d) / mask_tau)`.

use serde::{Deserialize, Serialize};

use crate::diff::Real;
use crate::geometry::SmudgeStroke;
use crate::image::{sample_rgb, Canvas, CellRect};

/// Smudge knobs, embedded in saved timelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmudgeParams {
    /// How much of the brush is deposited onto the canvas per stamp.
    pub alpha_c: f64,
    /// How much pigment the brush retains from its reference state.
    pub alpha_s: f64,
    /// Beta-kernel shape parameter over normalized arc length.
    pub beta_a: f64,
    /// Beta-kernel shape parameter (tail end).
    pub beta_b: f64,
    /// Brush patch resolution (patches are `patch_res` square).
    pub patch_res: usize,
    /// Bézier subdivision count; `segments + 1` stamps per stroke.
    pub segments: usize,
    /// Softness of the circular write mask, in pixels.
    pub mask_tau: f64,
    /// Skip writes farther than `margin * mask_tau` outside the stamp disk;
    /// `None` writes over the whole frame (for finite-difference checks).
    pub cull_margin: Option<f64>,
}

impl Default for SmudgeParams {
    fn default() -> Self {
        Self {
            alpha_c: 0.7,
            alpha_s: 0.3,
            beta_a: 1.0,
            beta_b: 1.0,
            patch_res: 64,
            segments: 16,
            mask_tau: 1.0,
            cull_margin: Some(12.0),
        }
    }
}

/// Which brush estimate drives the canvas updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmudgeMode {
    /// Markov-chain brush: each state blends from the previous one.
    Stepwise,
    /// Brush states precomputed from pristine canvas patches via the
    /// arc-length beta kernel.
    OneShot,
}

/// Clamp range for normalized arc positions, keeping `t^(a-1)` finite for
/// shape parameters below one.
const T_CLAMP: (f64, f64) = (1e-3, 1.0 - 1e-3);

/// Unnormalized beta weights `t^(a-1) (1-t)^(b-1)` over clamped positions.
pub fn beta_weights<R: Real>(ts: &[R], a: f64, b: f64) -> Vec<R> {
    ts.iter()
        .map(|&t| {
            let tc = t.clamp_c(T_CLAMP.0, T_CLAMP.1);
            tc.powf_const(a - 1.0) * tc.rsub(1.0).powf_const(b - 1.0)
        })
        .collect()
}

/// Full lower-triangular kernel: row `k` holds the weights of pristine
/// patches `0..=k` in the one-shot brush estimate for stamp `k`, normalized
/// to sum to one.
pub fn beta_kernel<R: Real>(ts: &[R], a: f64, b: f64) -> Vec<Vec<R>> {
    let w = beta_weights(ts, a, b);
    let mut rows = Vec::with_capacity(w.len());
    let mut denom = w[0].lift(0.0);
    for k in 0..w.len() {
        denom = denom + w[k];
        rows.push((0..=k).map(|i| w[i] / denom).collect());
    }
    rows
}

/// Normalized cumulative arc-length positions of a stamp sequence.
pub fn arc_positions<R: Real>(positions: &[[R; 2]]) -> Vec<R> {
    let zero = positions[0][0].lift(0.0);
    let mut cum = Vec::with_capacity(positions.len());
    let mut total = zero;
    cum.push(zero);
    for pair in positions.windows(2) {
        let dx = pair[1][0] - pair[0][0];
        let dy = pair[1][1] - pair[0][1];
        total = total + (dx * dx + dy * dy).sqrt();
        cum.push(total);
    }
    let denom = total.max2(zero.lift(1e-9));
    cum.into_iter().map(|l| l / denom).collect()
}

/// `w * a + (1 - w) * b` over two equally sized patches.
pub fn blend_patch<R: Real>(a: &Canvas<R>, b: &Canvas<R>, w: f64) -> Canvas<R> {
    assert_eq!((a.width, a.height), (b.width, b.height));
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x * w + y * (1.0 - w))
        .collect();
    Canvas {
        width: a.width,
        height: a.height,
        data,
    }
}

/// Extract the `res x res` patch spanning the square of side `2r` around
/// `(cx, cy)` (frame-local coordinates), sampled bilinearly.
pub fn extract_patch<R: Real>(
    canvas: &Canvas<R>,
    cx: R,
    cy: R,
    r: R,
    res: usize,
) -> Canvas<R> {
    assert!(res > 0);
    let mut data = Vec::with_capacity(res * res * 3);
    for v in 0..res {
        let oy = (v as f64 + 0.5) / res as f64 - 0.5;
        for u in 0..res {
            let ox = (u as f64 + 0.5) / res as f64 - 0.5;
            let x = cx + r * (2.0 * ox);
            let y = cy + r * (2.0 * oy);
            data.extend_from_slice(&sample_rgb(canvas, x, y));
        }
    }
    Canvas {
        width: res,
        height: res,
        data,
    }
}

/// Blend `patch` back onto the canvas over the stamp disk at `(cx, cy)`
/// (frame-local), weighting by the soft circular mask. Only pixels inside
/// `bounds` (frame-local) are touched.
pub fn write_patch<R: Real>(
    canvas: &mut Canvas<R>,
    cx: R,
    cy: R,
    r: R,
    patch: &Canvas<R>,
    mask_tau: f64,
    bounds: CellRect,
    cull_margin: Option<f64>,
) {
    let rv = r.val();
    if rv < 1e-3 {
        return;
    }
    let rect = match cull_margin {
        Some(m) => {
            let reach = rv + m * mask_tau;
            let x0 = ((cx.val() - reach - 1.0).floor()).max(bounds.x as f64) as usize;
            let y0 = ((cy.val() - reach - 1.0).floor()).max(bounds.y as f64) as usize;
            let x1 = ((cx.val() + reach + 1.0).ceil()).max(0.0) as usize;
            let y1 = ((cy.val() + reach + 1.0).ceil()).max(0.0) as usize;
            match (CellRect {
                x: x0,
                y: y0,
                w: x1.saturating_sub(x0),
                h: y1.saturating_sub(y0),
            })
            .intersect(bounds)
            {
                Some(r) => r,
                None => return,
            }
        }
        None => bounds,
    };
    let res = patch.width;
    for y in rect.y..rect.y + rect.h {
        let py = y as f64 + 0.5;
        for x in rect.x..rect.x + rect.w {
            let px = x as f64 + 0.5;
            let dx = cx.rsub(px);
            let dy = cy.rsub(py);
            let d = (dx * dx + dy * dy).sqrt();
            let m = ((r - d) / mask_tau).sigmoid();
            // map the canvas pixel into patch coordinates
            let inv = (r * 2.0).rdiv(1.0);
            let u = (dx * inv + 0.5) * res as f64;
            let v = (dy * inv + 0.5) * res as f64;
            let val = sample_rgb(patch, u, v);
            let keep = m.rsub(1.0);
            let prev = canvas.pixel(x, y);
            canvas.set_pixel(
                x,
                y,
                [
                    val[0] * m + keep * prev[0],
                    val[1] * m + keep * prev[1],
                    val[2] * m + keep * prev[2],
                ],
            );
        }
    }
}

/// Apply one smudge stroke to `canvas` in place.
///
/// `canvas` covers the canvas-space rectangle `frame`; stroke coordinates
/// are global. Reads may use the whole buffer, writes are clipped to
/// `write_bounds` (canvas-space).
pub fn smudge_stroke<R: Real>(
    canvas: &mut Canvas<R>,
    frame: CellRect,
    write_bounds: CellRect,
    stroke: &SmudgeStroke<R>,
    params: &SmudgeParams,
    mode: SmudgeMode,
) {
    assert_eq!((canvas.width, canvas.height), (frame.w, frame.h));
    let Some(wb) = write_bounds.intersect(frame) else {
        return;
    };
    let local_bounds = CellRect {
        x: wb.x - frame.x,
        y: wb.y - frame.y,
        w: wb.w,
        h: wb.h,
    };
    let stamps = stroke.geom.sample_stamps(params.segments);
    let n = stamps.positions.len();
    let res = params.patch_res;
    let (fx, fy) = (frame.x as f64, frame.y as f64);
    let local = |k: usize| {
        (
            stamps.positions[k][0] - fx,
            stamps.positions[k][1] - fy,
            stamps.radii[k],
        )
    };

    // Pristine patches (the canvas as it is before this stroke) feed the
    // one-shot brush estimates; the stepwise chain only needs the first.
    let pristine: Vec<Canvas<R>> = match mode {
        SmudgeMode::OneShot => {
            let snapshot = canvas.clone();
            (0..n)
                .map(|k| {
                    let (cx, cy, r) = local(k);
                    extract_patch(&snapshot, cx, cy, r, res)
                })
                .collect()
        }
        SmudgeMode::Stepwise => {
            let (cx, cy, r) = local(0);
            vec![extract_patch(canvas, cx, cy, r, res)]
        }
    };

    // One-shot brush estimates are running beta-weighted averages of the
    // pristine patches: row k of the kernel is the prefix of weights
    // normalized by its own sum.
    let ts = arc_positions(&stamps.positions);
    let weights = beta_weights(&ts, params.beta_a, params.beta_b);

    let mut brush = pristine[0].clone();
    let mut denom = weights[0];
    let mut numer: Canvas<R> = pristine[0].clone();
    for v in numer.data.iter_mut() {
        *v = *v * weights[0];
    }

    for k in 1..n {
        let (cx, cy, r) = local(k);
        let pre = extract_patch(canvas, cx, cy, r, res);
        let deposited = blend_patch(&brush, &pre, params.alpha_c);
        write_patch(
            canvas,
            cx,
            cy,
            r,
            &deposited,
            params.mask_tau,
            local_bounds,
            params.cull_margin,
        );
        brush = match mode {
            SmudgeMode::Stepwise => blend_patch(&brush, &deposited, params.alpha_s),
            SmudgeMode::OneShot => {
                denom = denom + weights[k];
                for (nv, pv) in numer.data.iter_mut().zip(&pristine[k].data) {
                    *nv = *nv + *pv * weights[k];
                }
                let inv = denom.rdiv(1.0);
                let estimate = Canvas {
                    width: res,
                    height: res,
                    data: numer.data.iter().map(|&v| v * inv).collect(),
                };
                blend_patch(&estimate, &deposited, params.alpha_s)
            }
        };
    }
}

/// Convenience: smudge strokes applied to a plain canvas in order.
pub fn render_smudge(
    background: &Canvas,
    strokes: &[SmudgeStroke<f64>],
    params: &SmudgeParams,
    mode: SmudgeMode,
) -> Canvas {
    let mut out = background.clone();
    let full = CellRect::full(out.width, out.height);
    for stroke in strokes {
        smudge_stroke(&mut out, full, full, stroke, params, mode);
    }
    out
}
