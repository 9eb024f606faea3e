//! Forward-renderer benchmark: times the reference renderer against its
//! reorderable counterpart on identical stroke sets and reports how far the
//! two outputs drift. Paint compares per-stamp sequential compositing with
//! the order-free nearest-stamp pass; smudge compares the stepwise brush
//! chain with its one-shot initialization.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use painterly::geometry::{PaintStroke, SmudgeStroke, StrokeGeometry, LATENT_LEN};
use painterly::image::{mean_l1, save_image, Canvas};
use painterly::paint::{render_parallel, render_sequential, RenderConfig};
use painterly::smudge::{render_smudge, SmudgeMode, SmudgeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Paint,
    Smudge,
}

impl BenchKind {
    /// Column labels: (reference renderer, compared renderer).
    pub fn labels(self) -> (&'static str, &'static str) {
        match self {
            BenchKind::Paint => ("sequential", "parallel"),
            BenchKind::Smudge => ("stepwise", "oneshot"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub kind: BenchKind,
    pub sizes: Vec<usize>,
    pub stamps: Vec<usize>,
    pub strokes: usize,
    pub radius: f64,
    pub repeats: usize,
    pub seed: u64,
    /// Write amplified |reference − compared| images here when set.
    pub diff_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub size: usize,
    pub stamps: usize,
    /// Mean and sample standard deviation over the repeats, milliseconds.
    pub ref_ms: (f64, f64),
    pub cmp_ms: (f64, f64),
    pub speedup: f64,
    pub l1: f64,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn gradient_backdrop(size: usize) -> Canvas {
    let mut c = Canvas::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let t = x as f64 / (size - 1).max(1) as f64;
            let s = y as f64 / (size - 1).max(1) as f64;
            c.set_pixel(x, y, [0.15 + 0.7 * t, 0.2 + 0.6 * s, 0.85 - 0.6 * t]);
        }
    }
    c
}

/// Constant-color strokes of a fixed radius, spread over the canvas.
fn paint_strokes(rng: &mut ChaCha8Rng, n: usize, size: usize, radius: f64) -> Vec<PaintStroke<f64>> {
    let margin = (radius * 0.5).min(size as f64 / 4.0);
    let lo = margin;
    let hi = size as f64 - margin;
    (0..n)
        .map(|_| {
            let mut p = [[0.0; 2]; 3];
            for q in &mut p {
                *q = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            }
            let color = [
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ];
            PaintStroke {
                geom: StrokeGeometry {
                    start: p[0],
                    ctrl: p[1],
                    end: p[2],
                    r_start: radius,
                    r_end: radius,
                },
                c_start: color,
                c_end: color,
                alpha: rng.gen_range(0.6..0.95),
                latent: [0.0; LATENT_LEN],
            }
        })
        .collect()
}

/// Smudge trajectories, alternating straight and curved.
fn smudge_strokes(rng: &mut ChaCha8Rng, n: usize, size: usize, radius: f64) -> Vec<SmudgeStroke<f64>> {
    let margin = (radius * 0.5).min(size as f64 / 4.0);
    let lo = margin;
    let hi = size as f64 - margin;
    (0..n)
        .map(|i| {
            let start = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            let end = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            let mid = [(start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0];
            let ctrl = if i % 2 == 0 {
                mid
            } else {
                [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
            };
            SmudgeStroke {
                geom: StrokeGeometry {
                    start,
                    ctrl,
                    end,
                    r_start: radius,
                    r_end: radius,
                },
            }
        })
        .collect()
}

/// Scene a smudge pass can visibly drag: the gradient backdrop with a few
/// opaque strokes on top.
fn smudge_scene(size: usize, seed: u64) -> Canvas {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strokes = paint_strokes(&mut rng, 6, size, size as f64 / 10.0);
    let cfg = RenderConfig::default();
    render_sequential(&gradient_backdrop(size), &strokes, &cfg, None)
}

fn time_repeats(repeats: usize, mut f: impl FnMut() -> Canvas) -> (Vec<f64>, Canvas) {
    let mut out = f(); // warmup, also materializes the result buffer shape
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        out = f();
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    (times, out)
}

fn write_diff(dir: &PathBuf, name: String, a: &Canvas, b: &Canvas) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut diff = Canvas::filled(a.width, a.height, [0.0; 3]);
    for i in 0..diff.data.len() {
        diff.data[i] = ((a.data[i] - b.data[i]).abs() * 20.0).min(1.0);
    }
    save_image(&diff, dir.join(name))?;
    Ok(())
}

pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.sizes.is_empty() || spec.sizes.contains(&0) {
        bail!("bench sizes must be positive, got {:?}", spec.sizes);
    }
    if spec.stamps.is_empty() || spec.stamps.iter().any(|&n| n < 2) {
        bail!("bench stamp counts need at least 2 stamps, got {:?}", spec.stamps);
    }
    if spec.repeats < 1 {
        bail!("bench repeats must be at least 1");
    }
    if spec.strokes < 1 {
        bail!("bench needs at least one stroke");
    }
    if !(spec.radius > 0.0) {
        bail!("bench radius must be positive, got {}", spec.radius);
    }

    let mut rows = Vec::new();
    for &size in &spec.sizes {
        for &stamps in &spec.stamps {
            let segments = stamps - 1;
            let row = match spec.kind {
                BenchKind::Paint => {
                    let bg = gradient_backdrop(size);
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    let strokes = paint_strokes(&mut rng, spec.strokes, size, spec.radius);
                    let cfg = RenderConfig {
                        segments,
                        ..RenderConfig::default()
                    };
                    let (t_ref, out_ref) =
                        time_repeats(spec.repeats, || render_sequential(&bg, &strokes, &cfg, None));
                    let (t_cmp, out_cmp) =
                        time_repeats(spec.repeats, || render_parallel(&bg, &strokes, &cfg, None));
                    finish_row(spec, size, stamps, t_ref, t_cmp, &out_ref, &out_cmp)?
                }
                BenchKind::Smudge => {
                    let scene = smudge_scene(size, spec.seed ^ 0x5eed);
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    let strokes = smudge_strokes(&mut rng, spec.strokes, size, spec.radius);
                    let params = SmudgeParams {
                        segments,
                        ..SmudgeParams::default()
                    };
                    let (t_ref, out_ref) = time_repeats(spec.repeats, || {
                        render_smudge(&scene, &strokes, &params, SmudgeMode::Stepwise)
                    });
                    let (t_cmp, out_cmp) = time_repeats(spec.repeats, || {
                        render_smudge(&scene, &strokes, &params, SmudgeMode::OneShot)
                    });
                    finish_row(spec, size, stamps, t_ref, t_cmp, &out_ref, &out_cmp)?
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

fn finish_row(
    spec: &BenchSpec,
    size: usize,
    stamps: usize,
    t_ref: Vec<f64>,
    t_cmp: Vec<f64>,
    out_ref: &Canvas,
    out_cmp: &Canvas,
) -> Result<BenchRow> {
    let ref_ms = mean_std(&t_ref);
    let cmp_ms = mean_std(&t_cmp);
    if let Some(dir) = &spec.diff_dir {
        write_diff(dir, format!("diff_{size}px_{stamps}stamps.png"), out_ref, out_cmp)?;
    }
    Ok(BenchRow {
        size,
        stamps,
        ref_ms,
        cmp_ms,
        speedup: ref_ms.0 / cmp_ms.0,
        l1: mean_l1(out_ref, out_cmp)?,
    })
}

pub fn render_table(kind: BenchKind, rows: &[BenchRow]) -> String {
    let (a, b) = kind.labels();
    let mut out = format!(
        "{:>6} {:>7} {:>20} {:>20} {:>8} {:>10}\n",
        "size",
        "stamps",
        format!("{a} (ms)"),
        format!("{b} (ms)"),
        "speedup",
        "L1/px"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>6} {:>7} {:>20} {:>20} {:>8.2} {:>10.6}\n",
            r.size,
            r.stamps,
            format!("{:.2} ± {:.2}", r.ref_ms.0, r.ref_ms.1),
            format!("{:.2} ± {:.2}", r.cmp_ms.0, r.cmp_ms.1),
            r.speedup,
            r.l1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_specs() {
        let base = BenchSpec {
            kind: BenchKind::Paint,
            sizes: vec![32],
            stamps: vec![4],
            strokes: 2,
            radius: 6.0,
            repeats: 1,
            seed: 1,
            diff_dir: None,
        };
        for bad in [
            BenchSpec { sizes: vec![0], ..base.clone() },
            BenchSpec { sizes: vec![], ..base.clone() },
            BenchSpec { stamps: vec![1], ..base.clone() },
            BenchSpec { repeats: 0, ..base.clone() },
            BenchSpec { strokes: 0, ..base.clone() },
            BenchSpec { radius: 0.0, ..base.clone() },
        ] {
            assert!(run_bench(&bad).is_err());
        }
    }

    #[test]
    fn small_run_produces_sane_rows() {
        let spec = BenchSpec {
            kind: BenchKind::Paint,
            sizes: vec![48],
            stamps: vec![4, 8],
            strokes: 3,
            radius: 7.0,
            repeats: 2,
            seed: 3,
            diff_dir: None,
        };
        let rows = run_bench(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.ref_ms.0 > 0.0 && r.cmp_ms.0 > 0.0);
            assert!(r.l1.is_finite() && r.l1 >= 0.0);
        }
        let table = render_table(BenchKind::Paint, &rows);
        assert!(table.contains("sequential"));
        assert!(table.contains("speedup"));
        assert_eq!(table.lines().count(), 3);
    }
}
