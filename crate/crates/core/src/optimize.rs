//! Optimizers, the learning-rate schedule, error-guided stroke placement,
//! and the coarse-to-fine controller that turns a target image into an
//! ordered stroke timeline.
//!
//! The controller walks grid levels 1..=n: at every level but the last,
//! each cell gets a paint pass, an optional texture pass, and a smudge
//! pass; the final level is paint-only. Every pass optimizes on the soft
//! renderers, then trial-commits through the same hard renderers replay
//! uses, keeping the committed result only when it does not increase the
//! cell's plain pixel distance to the target. That guard is what makes
//! the per-level pixel loss non-increasing.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{value_and_grad, Objective, Real};
use crate::geometry::{
    PaintStroke, SmudgeStroke, StrokeGeometry, LATENT_LEN, PAINT_CORE_SLOTS, SMUDGE_SLOTS,
};
use crate::image::{
    error_map, mean_l1, partition_grid, sobel_at, Canvas, CellRect, ImageError, LabelMap,
    ScalarField,
};
use crate::losses::{style_loss, total_app_loss, FeatureExtractor, LossWeights, OTConfig};
use crate::paint::{render_soft, stroke_mask, RenderConfig};
use crate::smudge::{smudge_stroke, SmudgeMode, SmudgeParams};
use crate::texture::ExternalTextures;
use crate::timeline::{apply_paint_commit, apply_smudge_commit, TextureMode, Timeline};

// --- optimizers ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    Rmsprop,
    Adam,
}

/// Per-slot moment accumulators for RMSprop or Adam.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptKind,
    pub lr: f64,
    /// Second-moment decay (RMSprop ρ, Adam β₂).
    pub rho: f64,
    /// First-moment decay (Adam β₁; unused by RMSprop).
    pub beta1: f64,
    pub eps: f64,
    pub step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    /// RMSprop with the stroke-fitting defaults: lr 0.003, ρ 0.99, ε 1e-8.
    pub fn rmsprop(slots: usize) -> Self {
        Self {
            kind: OptKind::Rmsprop,
            lr: 0.003,
            rho: 0.99,
            beta1: 0.0,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: vec![0.0; slots],
        }
    }

    /// Adam with β₁ 0.9, β₂ 0.999, ε 1e-8; the learning rate usually comes
    /// from a [`Schedule`] and is updated between steps.
    pub fn adam(slots: usize, lr: f64) -> Self {
        Self {
            kind: OptKind::Adam,
            lr,
            rho: 0.999,
            beta1: 0.9,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; slots],
            v: vec![0.0; slots],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptKind::Rmsprop => rmsprop_step(self, params, grads),
            OptKind::Adam => adam_step(self, params, grads),
        }
    }
}

/// One RMSprop update: `v ← ρv + (1−ρ)g²`, `p ← p − lr·g/(√v + ε)`.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), grads.len(), "param/grad length mismatch");
    assert_eq!(params.len(), state.v.len(), "optimizer sized for another vector");
    assert!(grads.iter().all(|g| g.is_finite()), "non-finite gradient");
    state.step += 1;
    for i in 0..params.len() {
        let g = grads[i];
        state.v[i] = state.rho * state.v[i] + (1.0 - state.rho) * g * g;
        params[i] -= state.lr * g / (state.v[i].sqrt() + state.eps);
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), grads.len(), "param/grad length mismatch");
    assert_eq!(params.len(), state.v.len(), "optimizer sized for another vector");
    assert!(grads.iter().all(|g| g.is_finite()), "non-finite gradient");
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.rho.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.rho * state.v[i] + (1.0 - state.rho) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

// --- learning-rate schedule ---------------------------------------------------

/// Warmup / constant / cosine-decay learning-rate curve: linear 0→peak over
/// the first `warmup_frac` of steps, flat at `peak_lr` through
/// `constant_frac`, cosine decay to exactly 0 over the final `decay_frac`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub total_steps: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub constant_frac: f64,
    pub decay_frac: f64,
}

impl Schedule {
    pub fn new(total_steps: usize) -> Self {
        let s = Self {
            total_steps,
            peak_lr: 0.01,
            warmup_frac: 0.05,
            constant_frac: 0.70,
            decay_frac: 0.25,
        };
        debug_assert!((s.warmup_frac + s.constant_frac + s.decay_frac - 1.0).abs() < 1e-12);
        s
    }

    pub fn lr(&self, step: usize) -> f64 {
        assert!(
            step <= self.total_steps,
            "step {step} past schedule end {}",
            self.total_steps
        );
        let total = self.total_steps as f64;
        let s = step as f64;
        let warm_end = self.warmup_frac * total;
        let flat_end = (self.warmup_frac + self.constant_frac) * total;
        if s <= warm_end {
            if warm_end == 0.0 {
                return self.peak_lr;
            }
            self.peak_lr * (s / warm_end)
        } else if s <= flat_end {
            self.peak_lr
        } else {
            let u = (s - flat_end) / (total - flat_end);
            self.peak_lr * 0.5 * (1.0 + (PI * u).cos())
        }
    }
}

// --- configuration --------------------------------------------------------------

/// Everything the reconstruction controller needs besides the images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    /// Finest grid side n: levels 1×1 through n×n are processed in order.
    pub levels: usize,
    /// Paint-stroke budget over the whole run, split evenly across levels
    /// and then across each level's cells.
    pub total_strokes: usize,
    /// Smudge strokes per cell at every level except the last (0 disables
    /// the smudge pass).
    pub smudge_strokes_per_cell: usize,
    pub paint_iters: usize,
    pub texture_iters: usize,
    pub smudge_iters: usize,
    /// Initial stamp radius is the cell diagonal / 8 clamped to this range.
    pub radius_range: [f64; 2],
    pub background: [f64; 3],
    pub seed: u64,
    pub texture: TextureMode,
    pub render: RenderConfig,
    pub smudge: SmudgeParams,
    pub weights: LossWeights,
    pub ot: OTConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            total_strokes: 192,
            smudge_strokes_per_cell: 2,
            paint_iters: 300,
            texture_iters: 100,
            smudge_iters: 200,
            radius_range: [1.0, 24.0],
            background: [1.0, 1.0, 1.0],
            seed: 0,
            texture: TextureMode::None,
            render: RenderConfig::default(),
            smudge: SmudgeParams::default(),
            weights: LossWeights::default(),
            ot: OTConfig::default(),
        }
    }
}

/// A rejected configuration field, reported by path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {msg}")]
pub struct ConfigError {
    pub field: &'static str,
    pub msg: String,
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        msg: msg.into(),
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.levels < 1 {
            return Err(invalid("levels", "must be at least 1"));
        }
        if self.total_strokes < 1 {
            return Err(invalid("total_strokes", "must be at least 1"));
        }
        if self.paint_iters < 1 {
            return Err(invalid("paint_iters", "must be at least 1"));
        }
        if self.texture_iters < 1 {
            return Err(invalid("texture_iters", "must be at least 1"));
        }
        if self.smudge_iters < 1 {
            return Err(invalid("smudge_iters", "must be at least 1"));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid(
                "radius_range",
                format!("needs 0 < min <= max, got [{lo}, {hi}]"),
            ));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("background", "channels must lie in [0, 1]"));
        }
        if self.render.segments < 1 {
            return Err(invalid("render.segments", "must be at least 1"));
        }
        if self.smudge.segments < 1 {
            return Err(invalid("smudge.segments", "must be at least 1"));
        }
        if self.smudge.patch_res < 2 {
            return Err(invalid("smudge.patch_res", "must be at least 2"));
        }
        if self.ot.grid < 1 {
            return Err(invalid("ot.grid", "must be at least 1"));
        }
        if self.ot.iterations < 1 {
            return Err(invalid("ot.iterations", "must be at least 1"));
        }
        Ok(())
    }

    /// Paint strokes per cell at `level`: the total budget split evenly
    /// across levels, then across that level's `level²` cells, with a
    /// floor of one stroke.
    pub fn paint_strokes_per_cell(&self, level: usize) -> usize {
        let per_level = (self.total_strokes / self.levels).max(1);
        (per_level / (level * level)).max(1)
    }
}

// --- stroke initialization ----------------------------------------------------

/// Cumulative error mass over a cell's pixels (row-major within the cell).
fn cell_cumulative(error: &ScalarField<f64>, cell: CellRect) -> (Vec<f64>, f64) {
    let mut cum = Vec::with_capacity(cell.area());
    let mut total = 0.0;
    for y in cell.y..cell.y + cell.h {
        for x in cell.x..cell.x + cell.w {
            total += error.at(x, y).max(0.0);
            cum.push(total);
        }
    }
    (cum, total)
}

/// One start point: a cell pixel drawn with probability proportional to
/// its error (uniform when the cell's error is all zero), jittered inside
/// the pixel.
fn draw_start(cum: &[f64], total: f64, cell: CellRect, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let idx = if total > 0.0 {
        let u = rng.gen::<f64>() * total;
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    } else {
        rng.gen_range(0..cum.len())
    };
    let px = cell.x + idx % cell.w;
    let py = cell.y + idx / cell.w;
    [px as f64 + rng.gen::<f64>(), py as f64 + rng.gen::<f64>()]
}

fn init_radius(cell: CellRect, radius_range: [f64; 2]) -> f64 {
    (cell.diagonal() / 8.0).clamp(radius_range[0], radius_range[1])
}

/// Seed paint strokes for one cell: starts follow the error map, the end
/// lands within two radii of the start, the control point is a jittered
/// midpoint, and both colors copy the target under the start.
pub fn init_strokes(
    error: &ScalarField<f64>,
    target: &Canvas<f64>,
    cell: CellRect,
    count: usize,
    radius_range: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Vec<PaintStroke<f64>> {
    assert!(count >= 1, "need at least one stroke");
    assert!(cell.area() > 0, "empty cell");
    assert_eq!(
        (error.width, error.height),
        (target.width, target.height),
        "error map and target disagree on size"
    );
    let r = init_radius(cell, radius_range);
    let (cum, total) = cell_cumulative(error, cell);
    (0..count)
        .map(|_| {
            let start = draw_start(&cum, total, cell, rng);
            let theta = rng.gen_range(0.0..TAU);
            let dist = rng.gen_range(0.0..2.0 * r);
            let end = [start[0] + dist * theta.cos(), start[1] + dist * theta.sin()];
            let ctrl = [
                0.5 * (start[0] + end[0]) + rng.gen_range(-0.5..0.5) * r,
                0.5 * (start[1] + end[1]) + rng.gen_range(-0.5..0.5) * r,
            ];
            let px = (start[0] as usize).min(target.width - 1);
            let py = (start[1] as usize).min(target.height - 1);
            let color = target.pixel(px, py);
            PaintStroke {
                geom: StrokeGeometry {
                    start,
                    ctrl,
                    end,
                    r_start: r,
                    r_end: r,
                },
                c_start: color,
                c_end: color,
                alpha: 0.8,
                latent: [0.0; LATENT_LEN],
            }
        })
        .collect()
}

/// Seed smudge strokes: starts follow the error map and the trajectory
/// runs along the target's local isophote (perpendicular to its Sobel
/// gradient), so smears follow edges instead of crossing them.
pub fn init_smudge_strokes(
    error: &ScalarField<f64>,
    target: &Canvas<f64>,
    cell: CellRect,
    count: usize,
    radius_range: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Vec<SmudgeStroke<f64>> {
    assert!(count >= 1, "need at least one stroke");
    assert!(cell.area() > 0, "empty cell");
    let r = init_radius(cell, radius_range);
    let (cum, total) = cell_cumulative(error, cell);
    (0..count)
        .map(|_| {
            let start = draw_start(&cum, total, cell, rng);
            let (gx, gy) = sobel_at(target, start[0] as isize, start[1] as isize);
            let mag = (gx * gx + gy * gy).sqrt();
            let dir = if mag > 1e-9 {
                [-gy / mag, gx / mag]
            } else {
                let t = rng.gen_range(0.0..TAU);
                [t.cos(), t.sin()]
            };
            let sign = if rng.gen::<f64>() < 0.5 { -1.0 } else { 1.0 };
            let len = rng.gen_range(1.0..3.0) * r;
            let end = [start[0] + sign * len * dir[0], start[1] + sign * len * dir[1]];
            let ctrl = [
                0.5 * (start[0] + end[0]) + rng.gen_range(-0.5..0.5) * r,
                0.5 * (start[1] + end[1]) + rng.gen_range(-0.5..0.5) * r,
            ];
            SmudgeStroke {
                geom: StrokeGeometry {
                    start,
                    ctrl,
                    end,
                    r_start: r,
                    r_end: r,
                },
            }
        })
        .collect()
}

// --- differentiable phase objectives -------------------------------------------

fn needs_masks(weights: &LossWeights, labels: Option<&LabelMap>) -> bool {
    weights.lambda_area != 0.0 || (weights.lambda_seg != 0.0 && labels.is_some())
}

/// Per-slot factors mapping the optimizer's normalized parameter space to
/// canvas units: positions scale with the window sides, radii with its
/// diagonal, colors and opacity are already order-one. Optimizing in
/// normalized units is what makes a single learning rate meaningful across
/// slot kinds — in raw pixels the gradient-normalizing optimizers would
/// move geometry by only ~lr pixels per step and it would never converge.
pub fn paint_slot_scales(window: CellRect) -> [f64; PAINT_CORE_SLOTS] {
    let w = window.w as f64;
    let h = window.h as f64;
    let d = window.diagonal();
    [
        w, h, w, h, w, h, d, d, //
        1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
    ]
}

/// Normalized-to-canvas factors for smudge slots; see [`paint_slot_scales`].
pub fn smudge_slot_scales(window: CellRect) -> [f64; SMUDGE_SLOTS] {
    let w = window.w as f64;
    let h = window.h as f64;
    let d = window.diagonal();
    [w, h, w, h, w, h, d, d]
}

fn normalize_slots(params: &mut [f64], scales: &[f64]) {
    for (i, p) in params.iter_mut().enumerate() {
        *p /= scales[i % scales.len()];
    }
}

fn denormalize_slots(params: &mut [f64], scales: &[f64]) {
    for (i, p) in params.iter_mut().enumerate() {
        *p *= scales[i % scales.len()];
    }
}

fn lift_geom<R: Real>(ctx: R, g: &StrokeGeometry<f64>) -> StrokeGeometry<R> {
    StrokeGeometry {
        start: [ctx.lift(g.start[0]), ctx.lift(g.start[1])],
        ctrl: [ctx.lift(g.ctrl[0]), ctx.lift(g.ctrl[1])],
        end: [ctx.lift(g.end[0]), ctx.lift(g.end[1])],
        r_start: ctx.lift(g.r_start),
        r_end: ctx.lift(g.r_end),
    }
}

fn lift_paint<R: Real>(ctx: R, s: &PaintStroke<f64>) -> PaintStroke<R> {
    PaintStroke {
        geom: lift_geom(ctx, &s.geom),
        c_start: s.c_start.map(|c| ctx.lift(c)),
        c_end: s.c_end.map(|c| ctx.lift(c)),
        alpha: ctx.lift(s.alpha),
        latent: s.latent.map(|w| ctx.lift(w)),
    }
}

/// Paint-pass objective: soft-render the packed strokes over the window
/// base and score with the combined appearance loss. Parameters are the
/// 15 core slots per stroke, concatenated, in the normalized units given
/// by `scales`; latents stay at zero.
pub struct PaintObjective<'a, H: FeatureExtractor + ?Sized> {
    pub base: &'a Canvas<f64>,
    pub target: &'a Canvas<f64>,
    pub window: CellRect,
    pub labels: Option<&'a LabelMap>,
    pub weights: LossWeights,
    pub ot: OTConfig,
    pub render: RenderConfig,
    pub textured: bool,
    pub scales: [f64; PAINT_CORE_SLOTS],
    pub hook: Option<&'a H>,
}

impl<H: FeatureExtractor + ?Sized> Objective for PaintObjective<'_, H> {
    fn eval<R: Real>(&self, params: &[R]) -> R {
        assert!(
            !params.is_empty() && params.len() % PAINT_CORE_SLOTS == 0,
            "expected a multiple of {PAINT_CORE_SLOTS} slots"
        );
        let raw: Vec<R> = params
            .iter()
            .enumerate()
            .map(|(i, &p)| p * self.scales[i % PAINT_CORE_SLOTS])
            .collect();
        let strokes: Vec<PaintStroke<R>> = raw
            .chunks_exact(PAINT_CORE_SLOTS)
            .map(PaintStroke::unpack)
            .collect();
        let render = render_soft(self.base, self.window, &strokes, &self.render, self.textured);
        let geoms: Vec<StrokeGeometry<R>> = strokes.iter().map(|s| s.geom).collect();
        let masks = if needs_masks(&self.weights, self.labels) {
            strokes
                .iter()
                .map(|s| stroke_mask(&s.geom, &self.render, self.window))
                .collect()
        } else {
            Vec::new()
        };
        total_app_loss(
            &render,
            self.target,
            self.window,
            &geoms,
            &masks,
            self.labels,
            self.render.segments,
            &self.weights,
            &self.ot,
            self.hook,
        )
    }
}

/// Texture-pass objective: only the latent vectors vary; geometry, colors,
/// and opacity are baked in as constants. Parameters are the latent slots
/// per stroke, concatenated.
pub struct TextureObjective<'a, H: FeatureExtractor + ?Sized> {
    pub base: &'a Canvas<f64>,
    pub target: &'a Canvas<f64>,
    pub window: CellRect,
    pub strokes: &'a [PaintStroke<f64>],
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub hook: Option<&'a H>,
}

impl<H: FeatureExtractor + ?Sized> Objective for TextureObjective<'_, H> {
    fn eval<R: Real>(&self, params: &[R]) -> R {
        assert_eq!(
            params.len(),
            self.strokes.len() * LATENT_LEN,
            "one latent vector per stroke"
        );
        let ctx = params[0];
        let strokes: Vec<PaintStroke<R>> = self
            .strokes
            .iter()
            .zip(params.chunks_exact(LATENT_LEN))
            .map(|(s, w)| {
                let mut lifted = lift_paint(ctx, s);
                lifted.latent.copy_from_slice(w);
                lifted
            })
            .collect();
        let render = render_soft(self.base, self.window, &strokes, &self.render, true);
        let geoms: Vec<StrokeGeometry<R>> = strokes.iter().map(|s| s.geom).collect();
        style_loss(
            &render,
            self.target,
            self.window,
            &geoms,
            self.render.segments,
            &self.weights,
            self.hook,
        )
    }
}

/// Smudge-pass objective: drag the window's pigment along the packed
/// trajectories (one-shot brush states) and score with the smudge-weighted
/// appearance loss. Parameters are 8 slots per stroke, concatenated, in
/// the normalized units given by `scales`.
pub struct SmudgeObjective<'a, H: FeatureExtractor + ?Sized> {
    pub base: &'a Canvas<f64>,
    pub target: &'a Canvas<f64>,
    pub window: CellRect,
    pub labels: Option<&'a LabelMap>,
    pub weights: LossWeights,
    pub ot: OTConfig,
    pub render: RenderConfig,
    pub smudge: SmudgeParams,
    pub scales: [f64; SMUDGE_SLOTS],
    pub hook: Option<&'a H>,
}

impl<H: FeatureExtractor + ?Sized> Objective for SmudgeObjective<'_, H> {
    fn eval<R: Real>(&self, params: &[R]) -> R {
        assert!(
            !params.is_empty() && params.len() % SMUDGE_SLOTS == 0,
            "expected a multiple of {SMUDGE_SLOTS} slots"
        );
        let raw: Vec<R> = params
            .iter()
            .enumerate()
            .map(|(i, &p)| p * self.scales[i % SMUDGE_SLOTS])
            .collect();
        let strokes: Vec<SmudgeStroke<R>> = raw
            .chunks_exact(SMUDGE_SLOTS)
            .map(SmudgeStroke::unpack)
            .collect();
        let ctx = raw[0];
        let mut canvas = self.base.lift(ctx);
        for s in &strokes {
            smudge_stroke(
                &mut canvas,
                self.window,
                self.window,
                s,
                &self.smudge,
                SmudgeMode::OneShot,
            );
        }
        let geoms: Vec<StrokeGeometry<R>> = strokes.iter().map(|s| s.geom).collect();
        let masks = if needs_masks(&self.weights, self.labels) {
            strokes
                .iter()
                .map(|s| stroke_mask(&s.geom, &self.render, self.window))
                .collect()
        } else {
            Vec::new()
        };
        total_app_loss(
            &canvas,
            self.target,
            self.window,
            &geoms,
            &masks,
            self.labels,
            self.render.segments,
            &self.weights,
            &self.ot,
            self.hook,
        )
    }
}

// --- optimization loop ----------------------------------------------------------

struct RunStats {
    initial_loss: f64,
    best_loss: f64,
}

/// Gradient-descend `params`, keeping the lowest-loss iterate seen (the
/// final iterate is also a candidate). `params` ends at the best iterate.
fn minimize<O: Objective + ?Sized>(
    obj: &O,
    params: &mut Vec<f64>,
    opt: &mut OptimizerState,
    iters: usize,
    schedule: Option<&Schedule>,
) -> RunStats {
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = f64::INFINITY;
    for it in 0..iters {
        if let Some(s) = schedule {
            opt.lr = s.lr(it);
        }
        let (loss, grad) = value_and_grad(obj, params);
        if it == 0 {
            initial_loss = loss;
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(params);
        }
        opt.apply(params, &grad);
    }
    let final_loss = obj.eval::<f64>(params);
    if iters == 0 {
        initial_loss = final_loss;
    }
    if final_loss < best_loss {
        best_loss = final_loss;
        best.copy_from_slice(params);
    }
    params.copy_from_slice(&best);
    RunStats {
        initial_loss,
        best_loss,
    }
}

/// What a pass did: the soft-loss endpoints of its run and whether its
/// trial commit survived the no-harm pixel check.
#[derive(Debug, Clone, Copy)]
pub struct PhaseOutcome {
    pub initial_loss: f64,
    pub best_loss: f64,
    pub committed: bool,
}

// --- phases ---------------------------------------------------------------------

/// Paint pass over one cell: seed strokes from the error map, jointly
/// optimize all their core parameters under the appearance loss, then
/// trial-commit with the hard renderer. Returns the committed strokes in
/// commit order (empty when the no-harm check rejected the batch).
#[allow(clippy::too_many_arguments)]
pub fn optimize_paint_phase<H: FeatureExtractor + ?Sized>(
    target: &Canvas<f64>,
    canvas: &mut Canvas<f64>,
    cell: CellRect,
    count: usize,
    cfg: &PhaseConfig,
    labels: Option<&LabelMap>,
    textures: Option<&ExternalTextures>,
    next_event_index: usize,
    hook: Option<&H>,
    rng: &mut ChaCha8Rng,
) -> (Vec<PaintStroke<f64>>, PhaseOutcome) {
    let err = error_map(canvas, target).expect("canvas and target share dimensions");
    let seeds = init_strokes(&err, target, cell, count, cfg.radius_range, rng);
    let scales = paint_slot_scales(cell);
    let mut params: Vec<f64> = seeds.iter().flat_map(|s| s.pack(false)).collect();
    normalize_slots(&mut params, &scales);
    let base = canvas.crop(cell);
    let tcrop = target.crop(cell);
    let obj = PaintObjective {
        base: &base,
        target: &tcrop,
        window: cell,
        labels,
        weights: cfg.weights.clone(),
        ot: cfg.ot.clone(),
        render: cfg.render.clone(),
        textured: cfg.texture == TextureMode::Procedural,
        scales,
        hook,
    };
    let mut opt = OptimizerState::rmsprop(params.len());
    let stats = minimize(&obj, &mut params, &mut opt, cfg.paint_iters, None);
    denormalize_slots(&mut params, &scales);
    let strokes: Vec<PaintStroke<f64>> = params
        .chunks_exact(PAINT_CORE_SLOTS)
        .map(PaintStroke::unpack)
        .collect();

    let mut scratch = canvas.clone();
    for (j, s) in strokes.iter().enumerate() {
        apply_paint_commit(
            &mut scratch,
            s,
            next_event_index + j,
            cell,
            cfg.texture,
            textures,
            &cfg.render,
        );
    }
    let before = mean_l1(&base, &tcrop).expect("same dims");
    let after = mean_l1(&scratch.crop(cell), &tcrop).expect("same dims");
    let committed = after <= before;
    let outcome = PhaseOutcome {
        initial_loss: stats.initial_loss,
        best_loss: stats.best_loss,
        committed,
    };
    if committed {
        *canvas = scratch;
        (strokes, outcome)
    } else {
        (Vec::new(), outcome)
    }
}

/// Texture pass over one cell: with procedural texturing, optimize only
/// the strokes' latent vectors under the style loss and re-commit the cell
/// from its pre-paint content. Geometry, colors, and opacity are never
/// touched. A no-op for other texture modes.
#[allow(clippy::too_many_arguments)]
pub fn optimize_texture_phase<H: FeatureExtractor + ?Sized>(
    target: &Canvas<f64>,
    canvas: &mut Canvas<f64>,
    cell: CellRect,
    strokes: &mut [PaintStroke<f64>],
    pre_paint: &Canvas<f64>,
    first_event_index: usize,
    cfg: &PhaseConfig,
    hook: Option<&H>,
) -> PhaseOutcome {
    if cfg.texture != TextureMode::Procedural || strokes.is_empty() {
        return PhaseOutcome {
            initial_loss: 0.0,
            best_loss: 0.0,
            committed: false,
        };
    }
    let tcrop = target.crop(cell);
    let mut params: Vec<f64> = strokes.iter().flat_map(|s| s.latent).collect();
    let obj = TextureObjective {
        base: pre_paint,
        target: &tcrop,
        window: cell,
        strokes,
        weights: cfg.weights.clone(),
        render: cfg.render.clone(),
        hook,
    };
    let schedule = Schedule::new(cfg.texture_iters);
    let mut opt = OptimizerState::adam(params.len(), schedule.lr(0));
    let stats = minimize(&obj, &mut params, &mut opt, cfg.texture_iters, Some(&schedule));
    for (s, w) in strokes.iter_mut().zip(params.chunks_exact(LATENT_LEN)) {
        s.latent.copy_from_slice(w);
    }

    // replace the cell with pre-paint content plus freshly textured commits
    let mut scratch = canvas.clone();
    scratch.blit(cell, pre_paint);
    for (j, s) in strokes.iter().enumerate() {
        apply_paint_commit(
            &mut scratch,
            s,
            first_event_index + j,
            cell,
            cfg.texture,
            None,
            &cfg.render,
        );
    }
    let before = mean_l1(&canvas.crop(cell), &tcrop).expect("same dims");
    let after = mean_l1(&scratch.crop(cell), &tcrop).expect("same dims");
    let committed = after <= before;
    if committed {
        *canvas = scratch;
    } else {
        // keep the paint-pass canvas; zeroed latents make the saved strokes
        // replay to exactly what is on it
        for s in strokes.iter_mut() {
            s.latent = [0.0; LATENT_LEN];
        }
    }
    PhaseOutcome {
        initial_loss: stats.initial_loss,
        best_loss: stats.best_loss,
        committed,
    }
}

/// Smudge pass over one cell: seed trajectories along target isophotes,
/// optimize them under the smudge-weighted appearance loss, trial-commit
/// with the one-shot brush. Returns committed strokes in commit order.
#[allow(clippy::too_many_arguments)]
pub fn optimize_smudge_phase<H: FeatureExtractor + ?Sized>(
    target: &Canvas<f64>,
    canvas: &mut Canvas<f64>,
    cell: CellRect,
    count: usize,
    cfg: &PhaseConfig,
    labels: Option<&LabelMap>,
    hook: Option<&H>,
    rng: &mut ChaCha8Rng,
) -> (Vec<SmudgeStroke<f64>>, PhaseOutcome) {
    let err = error_map(canvas, target).expect("canvas and target share dimensions");
    let seeds = init_smudge_strokes(&err, target, cell, count, cfg.radius_range, rng);
    let scales = smudge_slot_scales(cell);
    let mut params: Vec<f64> = seeds.iter().flat_map(|s| s.pack()).collect();
    normalize_slots(&mut params, &scales);
    let base = canvas.crop(cell);
    let tcrop = target.crop(cell);
    let obj = SmudgeObjective {
        base: &base,
        target: &tcrop,
        window: cell,
        labels,
        weights: cfg.weights.for_smudge_phase(),
        ot: cfg.ot.clone(),
        render: cfg.render.clone(),
        smudge: cfg.smudge.clone(),
        scales,
        hook,
    };
    let mut opt = OptimizerState::rmsprop(params.len());
    let stats = minimize(&obj, &mut params, &mut opt, cfg.smudge_iters, None);
    denormalize_slots(&mut params, &scales);
    let strokes: Vec<SmudgeStroke<f64>> = params
        .chunks_exact(SMUDGE_SLOTS)
        .map(SmudgeStroke::unpack)
        .collect();

    let mut scratch = canvas.clone();
    for s in &strokes {
        apply_smudge_commit(&mut scratch, s, cell, &cfg.smudge);
    }
    let before = mean_l1(&base, &tcrop).expect("same dims");
    let after = mean_l1(&scratch.crop(cell), &tcrop).expect("same dims");
    let committed = after <= before;
    let outcome = PhaseOutcome {
        initial_loss: stats.initial_loss,
        best_loss: stats.best_loss,
        committed,
    };
    if committed {
        *canvas = scratch;
        (strokes, outcome)
    } else {
        (Vec::new(), outcome)
    }
}

// --- controller -----------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("label map is {lw}x{lh} but the target is {tw}x{th}")]
    LabelSize {
        lw: usize,
        lh: usize,
        tw: usize,
        th: usize,
    },
    #[error("texture mode is external but no textures were provided")]
    MissingTextures,
    #[error("external texture stack has {have} entries; the run may need up to {need}")]
    TextureCount { have: usize, need: usize },
}

/// Upper bound on timeline events a run can commit, for sizing external
/// texture stacks (per-stroke textures are indexed by event position).
pub fn planned_events(cfg: &PhaseConfig) -> usize {
    (1..=cfg.levels)
        .map(|n| {
            let cells = n * n;
            let paint = cells * cfg.paint_strokes_per_cell(n);
            let smudge = if n < cfg.levels {
                cells * cfg.smudge_strokes_per_cell
            } else {
                0
            };
            paint + smudge
        })
        .sum()
}

fn cell_rng(seed: u64, level: usize, cell: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 32) ^ cell as u64);
    rng
}

/// A finished run: the event record, the canvas it renders to, and the
/// full-canvas pixel loss measured after each level.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub timeline: Timeline,
    pub canvas: Canvas<f64>,
    pub level_pixel_loss: Vec<f64>,
}

/// Coarse-to-fine reconstruction. Levels run from the 1×1 grid up to
/// `levels`×`levels`; every cell (row-major) gets paint → texture → smudge
/// passes, except the final level, which is paint-only. Each cell draws
/// from its own seeded RNG stream, so results do not depend on traversal
/// batching. Deterministic: identical inputs give a byte-identical
/// timeline.
pub fn reconstruct<H: FeatureExtractor + ?Sized>(
    target: &Canvas<f64>,
    labels: Option<&LabelMap>,
    cfg: &PhaseConfig,
    textures: Option<&ExternalTextures>,
    hook: Option<&H>,
) -> Result<Reconstruction, ReconstructError> {
    cfg.validate()?;
    if let Some(l) = labels {
        if (l.width, l.height) != (target.width, target.height) {
            return Err(ReconstructError::LabelSize {
                lw: l.width,
                lh: l.height,
                tw: target.width,
                th: target.height,
            });
        }
    }
    if cfg.texture == TextureMode::External {
        let need = planned_events(cfg);
        match textures {
            None => return Err(ReconstructError::MissingTextures),
            Some(t) if t.len() < need => {
                return Err(ReconstructError::TextureCount {
                    have: t.len(),
                    need,
                })
            }
            _ => {}
        }
    }

    let mut canvas = Canvas::filled(target.width, target.height, cfg.background);
    let mut timeline = Timeline::new(
        target.width,
        target.height,
        cfg.background,
        cfg.texture,
        cfg.render.clone(),
        cfg.smudge.clone(),
    );
    let mut level_pixel_loss = Vec::with_capacity(cfg.levels);
    for level in 1..=cfg.levels {
        let cells = partition_grid(target.width, target.height, level)?;
        let final_level = level == cfg.levels;
        let count = cfg.paint_strokes_per_cell(level);
        for (ci, &cell) in cells.iter().enumerate() {
            let mut rng = cell_rng(cfg.seed, level, ci);
            let first_event = timeline.events.len();
            let pre_paint = canvas.crop(cell);
            let (mut strokes, _) = optimize_paint_phase(
                target,
                &mut canvas,
                cell,
                count,
                cfg,
                labels,
                textures,
                first_event,
                hook,
                &mut rng,
            );
            if !final_level && !strokes.is_empty() {
                optimize_texture_phase(
                    target,
                    &mut canvas,
                    cell,
                    &mut strokes,
                    &pre_paint,
                    first_event,
                    cfg,
                    hook,
                );
            }
            for s in &strokes {
                timeline.push_paint(level, ci, s);
            }
            if !final_level && cfg.smudge_strokes_per_cell > 0 {
                let (smudges, _) = optimize_smudge_phase(
                    target,
                    &mut canvas,
                    cell,
                    cfg.smudge_strokes_per_cell,
                    cfg,
                    labels,
                    hook,
                    &mut rng,
                );
                for s in &smudges {
                    timeline.push_smudge(level, ci, s);
                }
            }
        }
        level_pixel_loss.push(mean_l1(&canvas, target).expect("same dims"));
    }
    Ok(Reconstruction {
        timeline,
        canvas,
        level_pixel_loss,
    })
}
