use birf_core::binarize::pack_bits;
use birf_core::render::{composite, CompositeSample};
use birf_core::sampler::{march_ray, MarchParams};
use birf_core::train::{stream_rng, INIT_STREAM};
use birf_core::{FieldConfig, FieldModel, GridConfig, HybridGrid, OccupancyConfig, OccupancyGrid, Ray};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
}

fn grid_encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid_encode");
    let pts = points(4096, 1);
    for (name, config) in [
        ("desk_f2", GridConfig::desk(2).unwrap()),
        ("base_f2", GridConfig::base(2).unwrap()),
    ] {
        let grid = HybridGrid::random(config.clone(), &mut stream_rng(0, INIT_STREAM)).unwrap();
        let mut out = vec![0.0; config.feature_width()];
        group.throughput(Throughput::Elements(pts.len() as u64));
        group.bench_function(name, |b| {
            b.iter(|| {
                for p in &pts {
                    grid.encode(*p, &mut out);
                }
                black_box(&out);
            })
        });
    }
    group.finish();
}

fn field_forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("field");
    let pts = points(2048, 2);
    let dirs: Vec<[f32; 3]> = points(2048, 3).iter().map(|p| [p[0] - 0.5, p[1] - 0.5, p[2] - 0.5]).collect();
    let rows: Vec<usize> = (0..pts.len()).collect();
    let mut model = FieldModel::new(
        FieldConfig::new(GridConfig::desk(2).unwrap()),
        &mut stream_rng(0, INIT_STREAM),
    )
    .unwrap();
    group.throughput(Throughput::Elements(pts.len() as u64));
    group.bench_function("forward", |b| {
        b.iter(|| {
            let d = model.forward_density(&pts).unwrap();
            black_box(model.forward_color(&d, &rows, &dirs).unwrap());
        })
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let d = model.forward_density(&pts).unwrap();
            let col = model.forward_color(&d, &rows, &dirs).unwrap();
            let ds = vec![1e-3; pts.len()];
            let dc = vec![[1e-3; 3]; pts.len()];
            model.backward(&d, &col, &ds, &dc).unwrap();
        })
    });
    group.finish();
}

fn march_and_composite(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    let occ = OccupancyGrid::new(OccupancyConfig::default(), birf_core::sampler::DEFAULT_STEP).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rays: Vec<Ray> = (0..256)
        .map(|_| {
            let d: [f32; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -1.0];
            let n = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
            Ray {
                origin: [0.5, 0.5, 2.0],
                dir: d.map(|v| v / n),
            }
        })
        .collect();
    let params = MarchParams::default();
    group.throughput(Throughput::Elements(rays.len() as u64));
    group.bench_function("march_all_occupied", |b| {
        b.iter(|| {
            for r in &rays {
                black_box(march_ray(&occ, r, &params).unwrap());
            }
        })
    });
    let samples: Vec<CompositeSample> = (0..1024)
        .map(|i| CompositeSample {
            sigma: (i % 7) as f64,
            color: [0.5; 3],
            delta: 1.7e-3,
        })
        .collect();
    group.bench_function("composite_1024", |b| b.iter(|| black_box(composite(&samples, [1.0; 3], 0.0))));
    group.finish();
}

fn packing(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let signs: Vec<f32> = (0..1 << 20).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mut group = c.benchmark_group("pack");
    group.throughput(Throughput::Elements(signs.len() as u64));
    group.bench_function("pack_1m", |b| {
        b.iter_batched(|| signs.clone(), |s| black_box(pack_bits(&s).unwrap()), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, grid_encode, field_forward_backward, march_and_composite, packing);
criterion_main!(benches);
