//! Stroke geometry: quadratic Bézier centerlines with linearly interpolated
//! radii, plus the flattening into discrete stamp sequences used by every
//! renderer.
//!
//! All types are generic over [`Real`] so strokes can hold plain `f64`
//! values or tape variables during optimization. Stamp parameters `t_k`
//! are structural constants — gradients flow through control points, radii,
//! and colors, never through `t`.

use crate::diff::Real;

/// Quadratic Bézier centerline with per-endpoint radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeGeometry<R = f64> {
    pub start: [R; 2],
    pub ctrl: [R; 2],
    pub end: [R; 2],
    pub r_start: R,
    pub r_end: R,
}

/// Paint stroke: geometry plus endpoint colors, opacity, and a latent
/// vector controlling procedural texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaintStroke<R = f64> {
    pub geom: StrokeGeometry<R>,
    pub c_start: [R; 3],
    pub c_end: [R; 3],
    pub alpha: R,
    pub latent: [R; LATENT_LEN],
}

/// Smudge stroke: pure geometry; it moves paint already on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmudgeStroke<R = f64> {
    pub geom: StrokeGeometry<R>,
}

pub const LATENT_LEN: usize = 8;

/// Flattened stroke: `n + 1` stamps at `t_k = k / n`.
#[derive(Debug, Clone)]
pub struct StampSequence<R = f64> {
    pub positions: Vec<[R; 2]>,
    pub radii: Vec<R>,
}

/// Flattened paint stroke: stamp positions, radii, and interpolated colors.
#[derive(Debug, Clone)]
pub struct PaintStamps<R = f64> {
    pub positions: Vec<[R; 2]>,
    pub radii: Vec<R>,
    pub colors: Vec<[R; 3]>,
}

/// Point on the quadratic Bézier through `p0`, `p1`, `p2` at parameter `t`.
#[inline]
pub fn bezier_point<R: Real>(p0: [R; 2], p1: [R; 2], p2: [R; 2], t: f64) -> [R; 2] {
    let u = 1.0 - t;
    let (w0, w1, w2) = (u * u, 2.0 * u * t, t * t);
    [
        p0[0] * w0 + p1[0] * w1 + p2[0] * w2,
        p0[1] * w0 + p1[1] * w1 + p2[1] * w2,
    ]
}

#[inline]
fn lerp<R: Real>(a: R, b: R, t: f64) -> R {
    a * (1.0 - t) + b * t
}

impl<R: Real> StrokeGeometry<R> {
    /// Sample `n + 1` stamps at uniform parameters `t_k = k / n`.
    pub fn sample_stamps(&self, n: usize) -> StampSequence<R> {
        assert!(n >= 1, "need at least one segment");
        let mut positions = Vec::with_capacity(n + 1);
        let mut radii = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            positions.push(bezier_point(self.start, self.ctrl, self.end, t));
            radii.push(lerp(self.r_start, self.r_end, t));
        }
        StampSequence { positions, radii }
    }

    /// Polyline approximation of the centerline length using `n` segments.
    pub fn arc_length(&self, n: usize) -> R {
        let stamps = self.sample_stamps(n);
        let mut total: Option<R> = None;
        for pair in stamps.positions.windows(2) {
            let dx = pair[1][0] - pair[0][0];
            let dy = pair[1][1] - pair[0][1];
            let seg = (dx * dx + dy * dy).sqrt();
            total = Some(match total {
                Some(t) => t + seg,
                None => seg,
            });
        }
        total.expect("n >= 1 guarantees at least one segment")
    }
}

impl<R: Real> PaintStroke<R> {
    /// Flatten into stamps with colors interpolated along the centerline.
    pub fn stamps(&self, n: usize) -> PaintStamps<R> {
        let StampSequence { positions, radii } = self.geom.sample_stamps(n);
        let colors = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                [
                    lerp(self.c_start[0], self.c_end[0], t),
                    lerp(self.c_start[1], self.c_end[1], t),
                    lerp(self.c_start[2], self.c_end[2], t),
                ]
            })
            .collect();
        PaintStamps {
            positions,
            radii,
            colors,
        }
    }
}

// --- parameter packing -------------------------------------------------------

/// Slots in a packed paint stroke, excluding the texture latent.
pub const PAINT_CORE_SLOTS: usize = 15;
/// Slots in a packed paint stroke including the texture latent.
pub const PAINT_FULL_SLOTS: usize = PAINT_CORE_SLOTS + LATENT_LEN;
/// Slots in a packed smudge stroke.
pub const SMUDGE_SLOTS: usize = 8;

/// Names for the packed paint-stroke slots, `prefix`-qualified.
pub fn paint_param_names(prefix: &str, with_latent: bool) -> Vec<String> {
    let mut names: Vec<String> = [
        "sx", "sy", "cx", "cy", "ex", "ey", "rs", "re", //
        "col_s.r", "col_s.g", "col_s.b", "col_e.r", "col_e.g", "col_e.b", "alpha",
    ]
    .iter()
    .map(|s| format!("{prefix}.{s}"))
    .collect();
    if with_latent {
        for i in 0..LATENT_LEN {
            names.push(format!("{prefix}.w{i}"));
        }
    }
    names
}

/// Names for the packed smudge-stroke slots, `prefix`-qualified.
pub fn smudge_param_names(prefix: &str) -> Vec<String> {
    ["sx", "sy", "cx", "cy", "ex", "ey", "rs", "re"]
        .iter()
        .map(|s| format!("{prefix}.{s}"))
        .collect()
}

impl PaintStroke<f64> {
    pub fn pack(&self, with_latent: bool) -> Vec<f64> {
        let g = &self.geom;
        let mut out = vec![
            g.start[0], g.start[1], g.ctrl[0], g.ctrl[1], g.end[0], g.end[1], g.r_start, g.r_end,
            self.c_start[0], self.c_start[1], self.c_start[2], self.c_end[0], self.c_end[1],
            self.c_end[2], self.alpha,
        ];
        if with_latent {
            out.extend_from_slice(&self.latent);
        }
        out
    }
}

impl<R: Real> PaintStroke<R> {
    /// Rebuild from packed slots. Accepts either the core 15 slots (latent
    /// defaults to zero) or all 23.
    pub fn unpack(slots: &[R]) -> Self {
        assert!(
            slots.len() == PAINT_CORE_SLOTS || slots.len() == PAINT_FULL_SLOTS,
            "expected {PAINT_CORE_SLOTS} or {PAINT_FULL_SLOTS} slots, got {}",
            slots.len()
        );
        let zero = slots[0].lift(0.0);
        let mut latent = [zero; LATENT_LEN];
        if slots.len() == PAINT_FULL_SLOTS {
            latent.copy_from_slice(&slots[PAINT_CORE_SLOTS..]);
        }
        PaintStroke {
            geom: StrokeGeometry {
                start: [slots[0], slots[1]],
                ctrl: [slots[2], slots[3]],
                end: [slots[4], slots[5]],
                r_start: slots[6],
                r_end: slots[7],
            },
            c_start: [slots[8], slots[9], slots[10]],
            c_end: [slots[11], slots[12], slots[13]],
            alpha: slots[14],
            latent,
        }
    }
}

impl SmudgeStroke<f64> {
    pub fn pack(&self) -> Vec<f64> {
        let g = &self.geom;
        vec![
            g.start[0], g.start[1], g.ctrl[0], g.ctrl[1], g.end[0], g.end[1], g.r_start, g.r_end,
        ]
    }
}

impl<R: Real> SmudgeStroke<R> {
    pub fn unpack(slots: &[R]) -> Self {
        assert_eq!(slots.len(), SMUDGE_SLOTS, "expected {SMUDGE_SLOTS} slots");
        SmudgeStroke {
            geom: StrokeGeometry {
                start: [slots[0], slots[1]],
                ctrl: [slots[2], slots[3]],
                end: [slots[4], slots[5]],
                r_start: slots[6],
                r_end: slots[7],
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(
        start: [f64; 2],
        ctrl: [f64; 2],
        end: [f64; 2],
        r_start: f64,
        r_end: f64,
    ) -> StrokeGeometry {
        StrokeGeometry {
            start,
            ctrl,
            end,
            r_start,
            r_end,
        }
    }

    #[test]
    fn endpoints_hit_control_points_exactly() {
        let p = bezier_point([1.0, 2.0], [5.0, -3.0], [9.0, 4.0], 0.0);
        assert_eq!(p, [1.0, 2.0]);
        let q = bezier_point([1.0, 2.0], [5.0, -3.0], [9.0, 4.0], 1.0);
        assert_eq!(q, [9.0, 4.0]);
    }

    #[test]
    fn midpoint_weights_are_quarter_half_quarter() {
        let p = bezier_point([0.0, 0.0], [4.0, 8.0], [8.0, 0.0], 0.5);
        assert!((p[0] - (0.25 * 0.0 + 0.5 * 4.0 + 0.25 * 8.0)).abs() < 1e-12);
        assert!((p[1] - (0.5 * 8.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_de_casteljau_everywhere() {
        let (p0, p1, p2) = ([2.0, -1.0], [7.0, 5.0], [-3.0, 9.0]);
        for i in 0..=40 {
            let t = i as f64 / 40.0;
            let a = [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])];
            let b = [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1])];
            let dc = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let direct = bezier_point(p0, p1, p2, t);
            assert!((dc[0] - direct[0]).abs() < 1e-12);
            assert!((dc[1] - direct[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn stamp_count_is_segments_plus_one() {
        let g = geom([0.0, 0.0], [1.0, 1.0], [2.0, 0.0], 1.0, 3.0);
        for n in [1, 2, 7, 16] {
            let s = g.sample_stamps(n);
            assert_eq!(s.positions.len(), n + 1);
            assert_eq!(s.radii.len(), n + 1);
        }
    }

    #[test]
    fn radii_interpolate_linearly_along_the_stroke() {
        let g = geom([0.0, 0.0], [1.0, 0.0], [2.0, 0.0], 2.0, 6.0);
        let s = g.sample_stamps(4);
        assert_eq!(s.radii, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn colors_interpolate_linearly_along_the_stroke() {
        let stroke = PaintStroke {
            geom: geom([0.0, 0.0], [1.0, 0.0], [2.0, 0.0], 1.0, 1.0),
            c_start: [0.0, 1.0, 0.2],
            c_end: [1.0, 0.0, 0.6],
            alpha: 0.8,
            latent: [0.0; LATENT_LEN],
        };
        let s = stroke.stamps(2);
        assert_eq!(s.colors[0], [0.0, 1.0, 0.2]);
        assert_eq!(s.colors[1], [0.5, 0.5, 0.4]);
        assert_eq!(s.colors[2], [1.0, 0.0, 0.6]);
    }

    #[test]
    fn degenerate_control_point_gives_straight_line_length() {
        let g = geom([1.0, 1.0], [3.0, 4.0], [5.0, 7.0], 1.0, 1.0);
        let len: f64 = g.arc_length(32);
        let exact = ((5.0f64 - 1.0).powi(2) + (7.0f64 - 1.0).powi(2)).sqrt();
        assert!((len - exact).abs() < 1e-9, "{len} vs {exact}");
    }

    #[test]
    fn paint_pack_unpack_round_trips() {
        let stroke = PaintStroke {
            geom: geom([1.0, 2.0], [3.0, 4.0], [5.0, 6.0], 7.0, 8.0),
            c_start: [0.1, 0.2, 0.3],
            c_end: [0.4, 0.5, 0.6],
            alpha: 0.7,
            latent: [0.1, -0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8],
        };
        let core = stroke.pack(false);
        assert_eq!(core.len(), PAINT_CORE_SLOTS);
        let back = PaintStroke::<f64>::unpack(&core);
        assert_eq!(back.geom, stroke.geom);
        assert_eq!(back.alpha, stroke.alpha);
        assert_eq!(back.latent, [0.0; LATENT_LEN]);

        let full = stroke.pack(true);
        assert_eq!(full.len(), PAINT_FULL_SLOTS);
        assert_eq!(PaintStroke::<f64>::unpack(&full), stroke);
        assert_eq!(paint_param_names("s0", true).len(), PAINT_FULL_SLOTS);
    }

    #[test]
    fn smudge_pack_unpack_round_trips() {
        let stroke = SmudgeStroke {
            geom: geom([1.0, 2.0], [3.0, 4.0], [5.0, 6.0], 7.0, 8.0),
        };
        let packed = stroke.pack();
        assert_eq!(packed.len(), SMUDGE_SLOTS);
        assert_eq!(SmudgeStroke::<f64>::unpack(&packed), stroke);
        assert_eq!(smudge_param_names("m3").len(), SMUDGE_SLOTS);
    }

    proptest! {
        /// Bézier evaluation commutes with affine maps of the control points.
        #[test]
        fn bezier_is_affine_equivariant(
            px in proptest::array::uniform6(-50.0f64..50.0),
            m in proptest::array::uniform6(-2.0f64..2.0),
            t in 0.0f64..=1.0,
        ) {
            let p0 = [px[0], px[1]];
            let p1 = [px[2], px[3]];
            let p2 = [px[4], px[5]];
            let apply = |p: [f64; 2]| {
                [m[0] * p[0] + m[1] * p[1] + m[4], m[2] * p[0] + m[3] * p[1] + m[5]]
            };
            let before = apply(bezier_point(p0, p1, p2, t));
            let after = bezier_point(apply(p0), apply(p1), apply(p2), t);
            prop_assert!((before[0] - after[0]).abs() < 1e-9);
            prop_assert!((before[1] - after[1]).abs() < 1e-9);
        }

        /// Stamps of a straight-line stroke stay on the segment.
        #[test]
        fn straight_stroke_stamps_stay_collinear(
            x0 in -20.0f64..20.0, y0 in -20.0f64..20.0,
            x1 in -20.0f64..20.0, y1 in -20.0f64..20.0,
            n in 1usize..12,
        ) {
            let mid = [(x0 + x1) / 2.0, (y0 + y1) / 2.0];
            let g = geom([x0, y0], mid, [x1, y1], 1.0, 1.0);
            let s = g.sample_stamps(n);
            for p in &s.positions {
                let cross = (p[0] - x0) * (y1 - y0) - (p[1] - y0) * (x1 - x0);
                prop_assert!(cross.abs() < 1e-6);
            }
        }
    }
}
