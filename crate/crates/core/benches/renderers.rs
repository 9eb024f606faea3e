//! Forward-renderer timings: sequential vs tiled paint compositing, and the
//! stepwise smudge chain vs its one-shot approximation. Build with and
//! without the `parallel` feature to compare the rayon tile loop against the
//! same code running on one thread.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use painterly::geometry::{PaintStroke, SmudgeStroke, StrokeGeometry};
use painterly::image::Canvas;
use painterly::paint::{render_parallel, render_sequential, RenderConfig};
use painterly::smudge::{render_smudge, SmudgeMode, SmudgeParams};

fn backdrop(size: usize) -> Canvas {
    let mut c = Canvas::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let t = x as f64 / (size - 1) as f64;
            let s = y as f64 / (size - 1) as f64;
            c.set_pixel(x, y, [0.2 + 0.6 * t, 0.5, 0.8 - 0.6 * s]);
        }
    }
    c
}

fn geometry(rng: &mut ChaCha8Rng, size: usize, r_lo: f64, r_hi: f64) -> StrokeGeometry<f64> {
    let lo = 10.0;
    let hi = size as f64 - 10.0;
    let mut p = || [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
    let (start, ctrl, end) = (p(), p(), p());
    StrokeGeometry {
        start,
        ctrl,
        end,
        r_start: rng.gen_range(r_lo..r_hi),
        r_end: rng.gen_range(r_lo..r_hi),
    }
}

fn paint_strokes(seed: u64, n: usize, size: usize) -> Vec<PaintStroke<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| PaintStroke {
            geom: geometry(&mut rng, size, 3.0, 9.0),
            c_start: [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ],
            c_end: [
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ],
            alpha: rng.gen_range(0.4..0.95),
            latent: [0.0; painterly::geometry::LATENT_LEN],
        })
        .collect()
}

fn smudge_strokes(seed: u64, n: usize, size: usize) -> Vec<SmudgeStroke<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SmudgeStroke {
            geom: geometry(&mut rng, size, 6.0, 12.0),
        })
        .collect()
}

fn paint_renderers(c: &mut Criterion) {
    let size = 256;
    let bg = backdrop(size);
    let strokes = paint_strokes(11, 24, size);
    let mut group = c.benchmark_group("paint");
    group.sample_size(20);
    for stamps in [10usize, 100] {
        let cfg = RenderConfig {
            segments: stamps - 1,
            ..RenderConfig::default()
        };
        group.bench_with_input(
            BenchmarkId::new("sequential", stamps),
            &cfg,
            |b, cfg| b.iter(|| render_sequential(&bg, &strokes, cfg, None)),
        );
        group.bench_with_input(
            BenchmarkId::new("parallel", stamps),
            &cfg,
            |b, cfg| b.iter(|| render_parallel(&bg, &strokes, cfg, None)),
        );
    }
    group.finish();
}

fn smudge_renderers(c: &mut Criterion) {
    let size = 256;
    let bg = backdrop(size);
    let strokes = smudge_strokes(13, 12, size);
    let params = SmudgeParams::default();
    let mut group = c.benchmark_group("smudge");
    group.sample_size(20);
    for (label, mode) in [
        ("stepwise", SmudgeMode::Stepwise),
        ("oneshot", SmudgeMode::OneShot),
    ] {
        group.bench_function(label, |b| {
            b.iter(|| render_smudge(&bg, &strokes, &params, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, paint_renderers, smudge_renderers);
criterion_main!(benches);
