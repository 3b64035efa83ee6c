use catbev_bench::{random, Workload};
use catbev_core::frustum::{drop_overflow_bin, lift, lift_backward, softmax_normalize};
use catbev_core::grid_transform::{collapse_to_bev, frustum_sample_coords, trilinear_sample, trilinear_sample_backward};
use catbev_core::geometry::voxel_centers;
use catbev_core::{Pipeline, VoxelSampler};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_lift(c: &mut Criterion) {
    let w = Workload::desk(1);
    let dist = drop_overflow_bin(&softmax_normalize(&w.logits).unwrap(), w.disc.num_bins()).unwrap();
    let frustum = lift(&dist, &w.features).unwrap();
    let mut g = c.benchmark_group("lift");
    g.bench_function("softmax", |b| b.iter(|| softmax_normalize(&w.logits).unwrap()));
    g.bench_function("forward", |b| b.iter(|| lift(&dist, &w.features).unwrap()));
    g.bench_function("backward", |b| {
        b.iter(|| lift_backward(&dist, &w.features, frustum.values()).unwrap())
    });
    g.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let w = Workload::desk(2);
    let centers = voxel_centers::<f64>(&w.grid);
    let sampler = VoxelSampler::new(&w.calib, &w.disc, &w.grid).unwrap();
    let dist = drop_overflow_bin(&softmax_normalize(&w.logits).unwrap(), w.disc.num_bins()).unwrap();
    let frustum = lift(&dist, &w.features).unwrap();
    let voxels = sampler.forward(&frustum).unwrap();
    let dims = frustum.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let upstream = random(&mut rng, voxels.values().shape(), -1.0, 1.0);

    let mut g = c.benchmark_group("grid_transform");
    g.bench_function("sample_coords", |b| {
        b.iter(|| frustum_sample_coords(&w.calib, &w.disc, &centers).unwrap())
    });
    g.bench_function("trilinear_sample", |b| {
        b.iter(|| trilinear_sample(&frustum, sampler.points()).unwrap())
    });
    g.bench_function("trilinear_scatter", |b| {
        b.iter(|| trilinear_sample_backward(dims, sampler.points(), &upstream).unwrap())
    });
    g.bench_function("collapse", |b| {
        b.iter_batched(|| voxels.clone(), |v| collapse_to_bev(&v).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

fn bench_pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for (name, w) in [("desk_grid", Workload::desk(4)), ("kitti_grid", Workload::kitti_grid(4))] {
        let p = Pipeline::new(&w.calib, &w.disc, &w.grid, None).unwrap();
        g.bench_function(name, |b| b.iter(|| p.run(&w.features, &w.logits, false).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_lift, bench_sampling, bench_pipeline);
criterion_main!(benches);
