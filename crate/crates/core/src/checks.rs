//! Named gradient-check suites: every differentiable component is compared
//! against central differences over many randomized configurations.
//!
//! The renderers are smooth by construction, but the losses around them are
//! not smooth *everywhere*: absolute values kink where a residual crosses
//! zero, bilinear sampling kinks where a sample coordinate crosses its
//! lattice, and `min`/`max` picks kink where the branches tie. Finite
//! differences are meaningless across such seams, so every fixture below is
//! built to stay away from them — bounded-away targets, affine canvases
//! (bilinear resampling of affine data is exactly affine, hence seamless),
//! stamp positions pinned to safe fractional bands, and branch choices made
//! one-sided by construction. Within those bands the checks are strict:
//! random geometry, colors, opacities, and latents, all slots checked.
//!
//! Slots are checked in raw stroke units (pixels for positions and radii,
//! direct values for colors and opacity), not in the optimizer's normalized
//! space: normalizing multiplies third derivatives by the cube of the scale
//! factor but gradients only by the factor itself, which inflates the
//! finite-difference truncation error ~a hundredfold. The normalization is
//! a constant per-slot factor — exact under the chain rule — so raw-unit
//! checks validate the identical tape.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{gradcheck, GradReport, ParamVector};
use crate::geometry::{
    PaintStroke, SmudgeStroke, StrokeGeometry, LATENT_LEN, PAINT_CORE_SLOTS, SMUDGE_SLOTS,
};
use crate::image::{Canvas, CellRect, LabelMap};
use crate::losses::{no_features, LossWeights, OTConfig};
use crate::optimize::{PaintObjective, SmudgeObjective, TextureObjective};
use crate::paint::{soft_cov_color, RenderConfig};
use crate::smudge::SmudgeParams;

/// How a suite run is parameterized. `tau` is the boundary softness used by
/// every fixture; the default is smooth enough for finite differences, while
/// tiny values (say `1e-6`) turn the coverage boundary into a near-step and
/// make the position checks fail — a useful sanity test that the suite
/// actually detects non-smoothness rather than passing vacuously.
#[derive(Debug, Clone)]
pub struct CheckConfig {
    /// Random configurations per component.
    pub configs: usize,
    /// Central-difference step, in raw slot units.
    pub eps: f64,
    /// Maximum allowed relative error between tape and numeric gradients.
    pub tol: f64,
    /// Coverage boundary softness (render `tau` and smudge `mask_tau`).
    pub tau: f64,
    /// Base seed; each component and configuration gets its own stream.
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            configs: 200,
            eps: 1e-4,
            tol: 1e-3,
            tau: 1.0,
            seed: 7,
        }
    }
}

/// Slot with the largest relative error seen across a component's run.
#[derive(Debug, Clone)]
pub struct WorstSlot {
    pub config: usize,
    pub slot: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Aggregated verdict for one named component.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub configs: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
    pub worst: Option<WorstSlot>,
}

impl std::fmt::Display for ComponentReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<16} {:>4} configs  max rel err {:>10.3e}  (tol {:.1e})  {}",
            self.name,
            self.configs,
            self.max_rel_err,
            self.tol,
            if self.pass { "ok" } else { "FAIL" }
        )?;
        if !self.pass {
            if let Some(w) = &self.worst {
                write!(
                    f,
                    "\n    worst: config {} slot {} analytic {:+.6e} numeric {:+.6e}",
                    w.config, w.slot, w.analytic, w.numeric
                )?;
            }
        }
        Ok(())
    }
}

/// Canonical component order, matching [`run_all`].
pub const COMPONENT_NAMES: [&str; 7] = [
    "paint-pixel",
    "smudge-pixel",
    "gradient-align",
    "segmentation",
    "area",
    "transport",
    "texture-style",
];

/// Runs every component suite and returns the reports in canonical order.
pub fn run_all(cfg: &CheckConfig) -> Vec<ComponentReport> {
    vec![
        check_paint_pixel(cfg),
        check_smudge_pixel(cfg),
        check_gradient_align(cfg),
        check_segmentation(cfg),
        check_area(cfg),
        check_transport(cfg),
        check_texture_style(cfg),
    ]
}

// --- shared fixture helpers -----------------------------------------------------

pub fn paint_slot_names() -> [&'static str; PAINT_CORE_SLOTS] {
    [
        "start.x", "start.y", "ctrl.x", "ctrl.y", "end.x", "end.y", "r_start", "r_end",
        "c_start.r", "c_start.g", "c_start.b", "c_end.r", "c_end.g", "c_end.b", "alpha",
    ]
}

pub fn smudge_slot_names() -> [&'static str; SMUDGE_SLOTS] {
    [
        "start.x", "start.y", "ctrl.x", "ctrl.y", "end.x", "end.y", "r_start", "r_end",
    ]
}

pub fn latent_slot_names() -> [&'static str; LATENT_LEN] {
    ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"]
}

fn component_rng(cfg: &CheckConfig, component: u64, config: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((component << 32) | config as u64);
    rng
}

fn aggregate(
    name: &'static str,
    component: u64,
    cfg: &CheckConfig,
    run_one: impl Fn(&mut ChaCha8Rng) -> GradReport,
) -> ComponentReport {
    assert!(cfg.configs > 0, "need at least one configuration");
    let mut max_rel_err = 0.0f64;
    let mut worst: Option<WorstSlot> = None;
    for i in 0..cfg.configs {
        let mut rng = component_rng(cfg, component, i);
        let report = run_one(&mut rng);
        if worst.is_none() || report.max_rel_err > max_rel_err {
            max_rel_err = report.max_rel_err;
            worst = report.worst_slot().map(|s| WorstSlot {
                config: i,
                slot: s.name.clone(),
                analytic: s.analytic,
                numeric: s.numeric,
                rel_err: s.rel_err,
            });
        }
    }
    ComponentReport {
        name,
        configs: cfg.configs,
        max_rel_err,
        tol: cfg.tol,
        pass: max_rel_err <= cfg.tol,
        worst,
    }
}

fn soft_render_cfg(tau: f64, segments: usize) -> RenderConfig {
    RenderConfig {
        segments,
        tau,
        gamma: 2.0,
        // Cutoff culling creates jumps finite differences would see; check
        // the un-culled function the cull approximates.
        soft_cull_margin: None,
    }
}

fn zero_weights() -> LossWeights {
    LossWeights {
        lambda_pixel: 0.0,
        lambda_perc: 0.0,
        lambda_grad: 0.0,
        lambda_seg: 0.0,
        lambda_ot: 0.0,
        lambda_area: 0.0,
        ..LossWeights::default()
    }
}

fn flat_random_canvas(w: usize, h: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Canvas<f64> {
    Canvas::filled(
        w,
        h,
        [
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        ],
    )
}

fn speckled_canvas(w: usize, h: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Canvas<f64> {
    let mut c = Canvas::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            c.set_pixel(
                x,
                y,
                [
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                ],
            );
        }
    }
    c
}

/// Per-channel affine field `a + bx + cy`. Bilinear interpolation reproduces
/// an affine field exactly, so resampling it anywhere inside the canvas is
/// smooth — no lattice seams for finite differences to trip on.
fn affine_canvas(
    w: usize,
    h: usize,
    offset: [std::ops::Range<f64>; 1],
    slope: std::ops::Range<f64>,
    rng: &mut ChaCha8Rng,
) -> Canvas<f64> {
    let mut coeff = [[0.0f64; 3]; 3];
    for ch in 0..3 {
        coeff[ch] = [
            rng.gen_range(offset[0].clone()),
            rng.gen_range(slope.clone()),
            rng.gen_range(slope.clone()),
        ];
    }
    let mut c = Canvas::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let px = [
                coeff[0][0] + coeff[0][1] * x as f64 + coeff[0][2] * y as f64,
                coeff[1][0] + coeff[1][1] * x as f64 + coeff[1][2] * y as f64,
                coeff[2][0] + coeff[2][1] * x as f64 + coeff[2][2] * y as f64,
            ];
            c.set_pixel(x, y, px);
        }
    }
    c
}

fn point_in(rng: &mut ChaCha8Rng, range: std::ops::Range<f64>) -> [f64; 2] {
    [rng.gen_range(range.clone()), rng.gen_range(range)]
}

fn shade_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    ]
}

fn random_paint_stroke(rng: &mut ChaCha8Rng, pos: std::ops::Range<f64>) -> PaintStroke<f64> {
    PaintStroke {
        geom: StrokeGeometry {
            start: point_in(rng, pos.clone()),
            ctrl: point_in(rng, pos.clone()),
            end: point_in(rng, pos),
            r_start: rng.gen_range(1.6..3.2),
            r_end: rng.gen_range(1.6..3.2),
        },
        c_start: shade_in(rng, 0.35, 0.9),
        c_end: shade_in(rng, 0.35, 0.9),
        alpha: rng.gen_range(0.55..0.9),
        latent: [0.0; LATENT_LEN],
    }
}

fn paint_params(stroke: &PaintStroke<f64>) -> ParamVector {
    let names = paint_slot_names().iter().map(|n| n.to_string()).collect();
    ParamVector::new(names, stroke.pack(false))
}

/// Random stroke with `r_start` solved so that one pixel center sits exactly
/// on the coverage boundary (weighted signed distance zero), then jittered
/// by at most the smoothing temperature. At ordinary temperatures this parks
/// a pixel where the coverage sigmoid's derivative is largest — the most
/// informative point to compare against finite differences — and the jitter
/// keeps the radius genuinely random. Squeezed to a near-step, the jitter
/// collapses and the pixel stays on the cliff, so the difference stencil
/// must straddle it and the check must fail. The seeking is necessary:
/// a randomly placed hard boundary almost never passes within `eps` of a
/// pixel center, so without it non-smoothness would go undetected.
fn pinned_boundary_stroke(rng: &mut ChaCha8Rng, tau: f64) -> PaintStroke<f64> {
    let dist = |q: [f64; 2], p: [f64; 2]| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
    'attempt: for _ in 0..64 {
        let mut stroke = random_paint_stroke(rng, 2.5..9.5);
        let stamps = stroke.stamps(6);
        let p0 = stamps.positions[0];
        // Pixel centers near the first stamp's own boundary and strictly
        // outside every later stamp: there the coverage is governed by
        // r_start and crosses one half at some radius.
        let mut candidates = Vec::new();
        for y in 0..12usize {
            for x in 0..12usize {
                let q = [x as f64 + 0.5, y as f64 + 0.5];
                let d0 = dist(q, p0);
                if d0 < 1.8 || (d0 - stroke.geom.r_start).abs() > 0.9 {
                    continue;
                }
                let clear = stamps.positions[1..]
                    .iter()
                    .zip(&stamps.radii[1..])
                    .all(|(p, r)| dist(q, *p) - r >= 0.9);
                if clear {
                    candidates.push((q, d0));
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let (q, d0) = candidates[rng.gen_range(0..candidates.len())];
        let cov_at = |r: f64| {
            let mut probe = stroke.clone();
            probe.geom.r_start = r;
            soft_cov_color(&probe.stamps(6), q[0], q[1], tau, 2.0).0
        };
        // cov(lo) < 1/2 always: shrinking r_start leaves every stamp's
        // signed distance at q at or below -0.9, so their weighted mean is
        // negative. The upper end may need to outgrow the later stamps'
        // Boltzmann drag before coverage crosses one half.
        let (mut lo, mut hi) = (d0 - 1.2, d0 + 1.2);
        while cov_at(hi) <= 0.5 {
            hi += 0.6;
            if hi > d0 + 3.6 {
                continue 'attempt;
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cov_at(mid) > 0.5 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let kappa = tau.min(0.8);
        stroke.geom.r_start = (0.5 * (lo + hi) + rng.gen_range(-kappa..kappa)).max(0.55);
        return stroke;
    }
    unreachable!("no pixel center admits a coverage-boundary pin");
}

// --- the seven components -------------------------------------------------------

/// Soft paint render scored by the mean-absolute pixel loss; all 15 core
/// slots of one stroke. The target sits well below anything the render can
/// produce, so no per-pixel residual changes sign, and one pixel center is
/// pinned onto the coverage boundary so the check exercises the sigmoid
/// where its derivative lives — and fails honestly when that boundary is
/// artificially hardened.
pub fn check_paint_pixel(cfg: &CheckConfig) -> ComponentReport {
    aggregate("paint-pixel", 0, cfg, |rng| {
        let window = CellRect::full(12, 12);
        let base = flat_random_canvas(12, 12, 0.55, 0.75, rng);
        let target = speckled_canvas(12, 12, 0.02, 0.2, rng);
        let stroke = pinned_boundary_stroke(rng, cfg.tau);
        let obj = PaintObjective {
            base: &base,
            target: &target,
            window,
            labels: None,
            weights: LossWeights {
                lambda_pixel: 1.0,
                ..zero_weights()
            },
            ot: OTConfig::default(),
            render: soft_render_cfg(cfg.tau, 6),
            textured: false,
            scales: [1.0; PAINT_CORE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &paint_params(&stroke), cfg.eps, cfg.tol)
    })
}

/// One-shot smudge scored by the pixel loss; all 8 trajectory slots.
///
/// The first pickups read the pristine canvas, which is affine and hence
/// seamless under bilinear sampling — but later pickups and every write-back
/// resample content the stroke itself already deposited, and that content is
/// only piecewise-smooth across pixel boundaries. No step size makes finite
/// differences reliable across such a seam, so the fixture keeps every
/// resampling coordinate pinned a quarter pixel away from its lattice: the
/// radius sits at half the patch resolution (unit sample spacing), strokes
/// are straight with spans a whisker off a whole number of pixels per stamp,
/// and stamp centers keep fractional part ≈ 0.25. Pickup/deposit strengths
/// and the kernel shape stay fully random.
pub fn check_smudge_pixel(cfg: &CheckConfig) -> ComponentReport {
    aggregate("smudge-pixel", 1, cfg, |rng| {
        let (w, h) = (18usize, 18usize);
        let window = CellRect::full(w, h);
        let base = affine_canvas(w, h, [0.5..0.6], -0.009..0.009, rng);
        let target = affine_canvas(w, h, [0.04..0.10], 0.0..0.003, rng);
        let (mx, my) = loop {
            let m = (rng.gen_range(-1i32..=1), rng.gen_range(-1i32..=1));
            if m != (0, 0) {
                break m;
            }
        };
        fn axis(rng: &mut ChaCha8Rng, m: i32) -> (f64, f64) {
            let base_i = match m {
                1 => rng.gen_range(5..=7),
                0 => rng.gen_range(5..=12),
                _ => rng.gen_range(10..=12),
            } as f64;
            let s = base_i + 0.25 + rng.gen_range(-0.04..0.04);
            let e = s + 5.0 * (m as f64 + rng.gen_range(-0.01..0.01));
            (s, e)
        }
        let (sx0, ex0) = axis(rng, mx);
        let (sy0, ey0) = axis(rng, my);
        let stroke = SmudgeStroke {
            geom: StrokeGeometry {
                start: [sx0, sy0],
                ctrl: [(sx0 + ex0) / 2.0, (sy0 + ey0) / 2.0],
                end: [ex0, ey0],
                r_start: 4.0 + rng.gen_range(-0.03..0.03),
                r_end: 4.0 + rng.gen_range(-0.03..0.03),
            },
        };
        let smudge = SmudgeParams {
            alpha_c: rng.gen_range(0.55..0.85),
            alpha_s: rng.gen_range(0.55..0.85),
            beta_a: rng.gen_range(1.2..2.5),
            beta_b: rng.gen_range(1.2..2.5),
            patch_res: 8,
            segments: 5,
            mask_tau: cfg.tau,
            cull_margin: None,
        };
        let names = smudge_slot_names().iter().map(|n| n.to_string()).collect();
        let values = stroke.pack();
        let obj = SmudgeObjective {
            base: &base,
            target: &target,
            window,
            labels: None,
            weights: LossWeights {
                lambda_pixel: 1.0,
                ..zero_weights()
            },
            ot: OTConfig::default(),
            render: soft_render_cfg(cfg.tau, 5),
            smudge,
            scales: [1.0; SMUDGE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &ParamVector::new(names, values), cfg.eps, cfg.tol)
    })
}

/// Gradient-alignment loss sampled at stamp centers, through the full
/// render→Sobel→bilinear chain. Straight strokes with near-integer spans
/// keep every stamp's fractional position away from the bilinear lattice.
/// The rendered Sobel magnitude must stay bounded on both sides: strictly
/// below the target ramp's, so neither the magnitude gap nor the
/// weaker-of-the-two direction weight ever switches branch, and strictly
/// above zero, because the magnitude is a vector norm whose curvature
/// blows up at the origin even though it never branches.
fn gradient_align_fixture(
    rng: &mut ChaCha8Rng,
) -> (Canvas<f64>, Canvas<f64>, PaintStroke<f64>, CellRect) {
    let (w, h) = (16usize, 16usize);
    let window = CellRect::full(w, h);
    let a = rng.gen_range(0.45..0.55);
    let gray_ramp = |mag: f64, dir: f64| {
        let (gx, gy) = (mag * dir.cos(), mag * dir.sin());
        let mut c = Canvas::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let v = a + gx * (x as f64 - 7.5) + gy * (y as f64 - 7.5);
                c.set_pixel(x, y, [v, v, v]);
            }
        }
        (c, gx, gy)
    };
    let (target, _, _) =
        gray_ramp(rng.gen_range(0.034..0.042), rng.gen_range(0.0..std::f64::consts::TAU));
    // The base carries its own gentler ramp in an independent direction, and
    // the stroke's endpoint colors ride that ramp plus a uniform offset: the
    // rendered gradient then stays pinned near the base slope at every stamp
    // — including the caps, where a flat base would let the cover falloff
    // and the shade ramp cancel into a Sobel zero, whose square root finite
    // differences cannot handle.
    let (base, bgx, bgy) =
        gray_ramp(rng.gen_range(0.010..0.014), rng.gen_range(0.0..std::f64::consts::TAU));
    let ramp_at = move |p: [f64; 2]| a + bgx * (p[0] - 7.5) + bgy * (p[1] - 7.5);

    // Straight line whose span per axis is 6·(integer ± small): the six
    // subdivision stamps then share the start's fractional part to
    // within ±0.15, which the start pins near 0.25 — far from the 0.5
    // sampling lattice.
    let (mx, my) = loop {
        let m = (rng.gen_range(-1i32..=1), rng.gen_range(-1i32..=1));
        if m != (0, 0) {
            break m;
        }
    };
    fn axis(rng: &mut ChaCha8Rng, m: i32) -> (f64, f64) {
        let base_i = match m {
            1 => rng.gen_range(2..=7),
            0 => rng.gen_range(2..=13),
            _ => rng.gen_range(8..=13),
        } as f64;
        let s = base_i + 0.25 + rng.gen_range(-0.06..0.06);
        let e = s + 6.0 * (m as f64 + rng.gen_range(-0.015..0.015));
        (s, e)
    }
    let (sx0, ex0) = axis(rng, mx);
    let (sy0, ey0) = axis(rng, my);
    let start = [sx0, sy0];
    let end = [ex0, ey0];
    let ctrl = [(sx0 + ex0) / 2.0, (sy0 + ey0) / 2.0];
    let offset = rng.gen_range(0.05..0.09) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let tint = move |rng: &mut ChaCha8Rng, p: [f64; 2]| {
        let v = ramp_at(p) + offset;
        shade_in(rng, v - 0.01, v + 0.01)
    };
    let stroke = PaintStroke {
        geom: StrokeGeometry {
            start,
            ctrl,
            end,
            r_start: rng.gen_range(2.0..3.0),
            r_end: rng.gen_range(2.0..3.0),
        },
        c_start: tint(rng, start),
        c_end: tint(rng, end),
        alpha: rng.gen_range(0.24..0.32),
        latent: [0.0; LATENT_LEN],
    };
    (base, target, stroke, window)
}

pub fn check_gradient_align(cfg: &CheckConfig) -> ComponentReport {
    aggregate("gradient-align", 2, cfg, |rng| {
        let (base, target, stroke, window) = gradient_align_fixture(rng);
        let obj = PaintObjective {
            base: &base,
            target: &target,
            window,
            labels: None,
            weights: LossWeights {
                lambda_grad: 1.0,
                grad_alpha: 1.0,
                grad_beta: 1.0,
                ..zero_weights()
            },
            ot: OTConfig::default(),
            render: soft_render_cfg(cfg.tau, 6),
            textured: false,
            scales: [1.0; PAINT_CORE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &paint_params(&stroke), cfg.eps, cfg.tol)
    })
}

/// Spill loss against a two-region label map. The stroke lives inside one
/// region, so its dominant region never flips, and its coverage mass stays
/// far above the normalizer clamp.
pub fn check_segmentation(cfg: &CheckConfig) -> ComponentReport {
    aggregate("segmentation", 3, cfg, |rng| {
        let (w, h) = (12usize, 12usize);
        let window = CellRect::full(w, h);
        let raw: Vec<u32> = (0..w * h)
            .map(|i| if i % w < 6 { 0 } else { 1 })
            .collect();
        let labels = LabelMap::from_raw(w, h, &raw);
        let base = Canvas::filled(w, h, [0.6; 3]);
        let target = Canvas::filled(w, h, [0.1; 3]);
        fn in_region(rng: &mut ChaCha8Rng) -> [f64; 2] {
            [rng.gen_range(1.7..4.3), rng.gen_range(2.0..10.0)]
        }
        let stroke = PaintStroke {
            geom: StrokeGeometry {
                start: in_region(rng),
                ctrl: in_region(rng),
                end: in_region(rng),
                r_start: rng.gen_range(1.6..2.4),
                r_end: rng.gen_range(1.6..2.4),
            },
            c_start: shade_in(rng, 0.3, 0.9),
            c_end: shade_in(rng, 0.3, 0.9),
            alpha: rng.gen_range(0.5..0.9),
            latent: [0.0; LATENT_LEN],
        };
        let obj = PaintObjective {
            base: &base,
            target: &target,
            window,
            labels: Some(&labels),
            weights: LossWeights {
                lambda_seg: 1.0,
                ..zero_weights()
            },
            ot: OTConfig::default(),
            render: soft_render_cfg(cfg.tau, 6),
            textured: false,
            scales: [1.0; PAINT_CORE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &paint_params(&stroke), cfg.eps, cfg.tol)
    })
}

/// Vanishing-stroke penalty `exp(−area/η)` over the soft coverage mass.
pub fn check_area(cfg: &CheckConfig) -> ComponentReport {
    aggregate("area", 4, cfg, |rng| {
        let window = CellRect::full(12, 12);
        let base = Canvas::filled(12, 12, [0.6; 3]);
        let target = Canvas::filled(12, 12, [0.1; 3]);
        let mut stroke = random_paint_stroke(rng, 2.5..9.5);
        stroke.geom.r_start = rng.gen_range(1.5..3.0);
        stroke.geom.r_end = rng.gen_range(1.5..3.0);
        let obj = PaintObjective {
            base: &base,
            target: &target,
            window,
            labels: None,
            weights: LossWeights {
                lambda_area: 1.0,
                area_eta: 64.0,
                ..zero_weights()
            },
            ot: OTConfig::default(),
            render: soft_render_cfg(cfg.tau, 6),
            textured: false,
            scales: [1.0; PAINT_CORE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &paint_params(&stroke), cfg.eps, cfg.tol)
    })
}

/// Entropic transport between render and target mass, exercising the exact
/// unrolled adjoint inside the custom tape node: mass pooling, the floor
/// offset, normalization, and the scaling iterations are all smooth.
pub fn check_transport(cfg: &CheckConfig) -> ComponentReport {
    aggregate("transport", 5, cfg, |rng| {
        let (w, h) = (12usize, 12usize);
        let window = CellRect::full(w, h);
        let base = flat_random_canvas(w, h, 0.55, 0.75, rng);
        let (bx, by) = (rng.gen_range(3.0..9.0), rng.gen_range(3.0..9.0));
        let mut target = Canvas::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                let v = 0.08 + 0.8 * (-d2 / (2.0 * 2.5 * 2.5)).exp();
                target.set_pixel(x, y, [v, v, v]);
            }
        }
        let stroke = random_paint_stroke(rng, 2.5..9.5);
        let obj = PaintObjective {
            base: &base,
            target: &target,
            window,
            labels: None,
            weights: LossWeights {
                lambda_ot: 1.0,
                ..zero_weights()
            },
            ot: OTConfig {
                grid: 6,
                entropic_lambda: 10.0,
                iterations: 40,
            },
            render: soft_render_cfg(cfg.tau, 6),
            textured: false,
            scales: [1.0; PAINT_CORE_SLOTS],
            hook: no_features(),
        };
        gradcheck(&obj, &paint_params(&stroke), cfg.eps, cfg.tol)
    })
}

/// Style loss through the procedural texture: geometry is frozen, only the
/// latent slots vary. Latents stay in the range where neither the
/// modulation clamp nor the color clamp engages (slots beyond the two the
/// noise actually reads must come back with zero gradient from both sides).
pub fn check_texture_style(cfg: &CheckConfig) -> ComponentReport {
    aggregate("texture-style", 6, cfg, |rng| {
        let (w, h) = (12usize, 12usize);
        let window = CellRect::full(w, h);
        let base = flat_random_canvas(w, h, 0.6, 0.75, rng);
        let target = Canvas::filled(w, h, [rng.gen_range(0.03..0.08); 3]);
        let stroke = PaintStroke {
            geom: StrokeGeometry {
                start: point_in(rng, 3.5..5.0),
                ctrl: point_in(rng, 4.5..7.5),
                end: point_in(rng, 7.0..8.5),
                r_start: rng.gen_range(2.2..3.2),
                r_end: rng.gen_range(2.2..3.2),
            },
            c_start: shade_in(rng, 0.35, 0.6),
            c_end: shade_in(rng, 0.35, 0.6),
            alpha: rng.gen_range(0.6..0.9),
            latent: [0.0; LATENT_LEN],
        };
        let strokes = [stroke];
        let mut values = vec![rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)];
        values.extend((2..LATENT_LEN).map(|_| rng.gen_range(-1.0..1.0)));
        let names = latent_slot_names().iter().map(|n| n.to_string()).collect();
        let obj = TextureObjective {
            base: &base,
            target: &target,
            window,
            strokes: &strokes,
            weights: LossWeights {
                lambda_pixel: 1.0,
                lambda_perc: 0.1,
                lambda_grad: 0.1,
                grad_alpha: 1.0,
                grad_beta: 1.0,
                ..zero_weights()
            },
            render: soft_render_cfg(cfg.tau, 6),
            hook: no_features(),
        };
        gradcheck(&obj, &ParamVector::new(names, values), cfg.eps, cfg.tol)
    })
}
