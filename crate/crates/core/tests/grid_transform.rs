use catbev_core::frustum::{lift, DepthDistribution, FrustumGrid};
use catbev_core::geometry::{voxel_centers, CameraCalibration, GridSpec, KittiCalibFile};
use catbev_core::grid_transform::{
    channel_reduce, collapse_to_bev, frustum_sample_coords, frustum_to_voxel, trilinear_sample,
    trilinear_sample_backward, BevGrid, SamplePoints, VoxelGrid, VoxelSampler,
};
use catbev_core::synth::{desk_camera, desk_grid};
use catbev_core::{DiscretizationMode, DiscretizationSpec, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KITTI_CALIB: &str = include_str!("data/kitti_000000_calib.txt");

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).unwrap()
}

fn points(coords: Vec<[f64; 3]>) -> SamplePoints {
    SamplePoints {
        mask: vec![true; coords.len()],
        coords: Tensor::new(vec![coords.len(), 3], coords.concat()).unwrap(),
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 3]) -> SamplePoints {
    points(
        (0..n)
            .map(|_| std::array::from_fn(|a| rng.gen_range(-0.5..dims[a] as f64 - 0.5)))
            .collect(),
    )
}

#[test]
fn kitti_sample_coords_match_compose_oracle() {
    let file = KittiCalibFile::parse(KITTI_CALIB);
    let p = file.matrix_3x4("P2").unwrap();
    let t = file.velo_to_rect().unwrap();
    let ds = 4.0;
    let calib = CameraCalibration::new(p, 1240, 372, 4).unwrap().with_grid_to_camera(t).unwrap();
    let disc = DiscretizationSpec::kitti_lid(80).unwrap().with_overflow_bin(false);
    let grid = GridSpec::kitti();
    let pts = frustum_sample_coords(&calib, &disc, &voxel_centers::<f64>(&grid)).unwrap();

    let bins = 80usize;
    let edge = |i: usize| 2.0 + 44.8 * (i * (i + 1)) as f64 / (bins * (bins + 1)) as f64;
    let centers: Vec<f64> = (0..bins).map(|i| 0.5 * (edge(i) + edge(i + 1))).collect();
    let (wf, hf) = (310.0, 93.0);
    let mut valid = 0usize;
    let mut n = 0usize;
    for i in 0..280 {
        for j in 0..376 {
            for k in 0..25 {
                let x = [2.08 + 0.16 * i as f64, -30.0 + 0.16 * j as f64, -2.92 + 0.16 * k as f64, 1.0];
                let cam: Vec<f64> = (0..4).map(|r| (0..4).map(|c| t[r][c] * x[c]).sum()).collect();
                let h: Vec<f64> = (0..3).map(|r| (0..4).map(|c| p[r][c] * cam[c]).sum()).collect();
                let expect = (h[2] > 1e-6).then(|| (h[0] / h[2] / ds, h[1] / h[2] / ds, h[2])).and_then(|(u, v, d)| {
                    let inside = (0.0..=wf - 1.0).contains(&u) && (0.0..=hf - 1.0).contains(&v);
                    (inside && (2.0..=46.8).contains(&d)).then(|| {
                        let s = centers.partition_point(|&c| c <= d);
                        let r = if s == 0 {
                            0.0
                        } else if s == bins {
                            (bins - 1) as f64
                        } else {
                            (s - 1) as f64 + (d - centers[s - 1]) / (centers[s] - centers[s - 1])
                        };
                        [u, v, r]
                    })
                });
                match expect {
                    Some(e) => {
                        assert!(pts.mask[n], "voxel ({i}, {j}, {k}) should be valid");
                        let got = pts.point(n);
                        for a in 0..3 {
                            assert!((got[a] - e[a]).abs() < 1e-4, "voxel ({i}, {j}, {k}): {got:?} vs {e:?}");
                        }
                        valid += 1;
                    }
                    None => assert!(!pts.mask[n], "voxel ({i}, {j}, {k}) should be masked"),
                }
                n += 1;
            }
        }
    }
    assert!(valid > 100_000, "only {valid} voxels in view");
}

#[test]
fn kitti_voxel_shape() {
    let file = KittiCalibFile::parse(KITTI_CALIB);
    let calib = CameraCalibration::new(file.matrix_3x4("P2").unwrap(), 1240, 372, 4)
        .unwrap()
        .with_grid_to_camera(file.velo_to_rect().unwrap())
        .unwrap();
    let disc = DiscretizationSpec::kitti_lid(80).unwrap();
    let frustum = FrustumGrid::new(Tensor::filled(&[310, 93, 80, 2], 1.0f32).unwrap()).unwrap();
    let vox = frustum_to_voxel(&frustum, &calib, &disc, &GridSpec::kitti()).unwrap();
    assert_eq!(vox.values().shape(), &[280, 376, 25, 2]);
    assert!(vox.values().data().iter().all(|&v| v == 0.0 || (v - 1.0).abs() < 1e-6));
}

#[test]
fn optical_axis_point_lands_on_bin_center() {
    let disc = DiscretizationSpec::new(DiscretizationMode::Uniform, 2.0, 42.0, 10, false).unwrap();
    let calib = CameraCalibration::new(
        [[100.0, 0.0, 40.0, 0.0], [0.0, 100.0, 24.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        80,
        48,
        4,
    )
    .unwrap();
    let c = Tensor::new(vec![2, 3], vec![0.0, 0.0, disc.bin_center(3).unwrap(), 0.0, 0.0, -5.0]).unwrap();
    let pts = frustum_sample_coords(&calib, &disc, &c).unwrap();
    assert_eq!(pts.mask, vec![true, false]);
    let p = pts.point(0);
    assert!((p[0] - 10.0).abs() < 1e-12 && (p[1] - 6.0).abs() < 1e-12 && (p[2] - 3.0).abs() < 1e-12);
}

#[test]
fn single_bright_pixel_reaches_only_nearby_voxels() {
    let calib = desk_camera();
    let grid = desk_grid();
    let disc = DiscretizationSpec::kitti_lid(16).unwrap().with_overflow_bin(false);
    let (wf, hf, d) = (calib.feature_width(), calib.feature_height(), 16);
    let (u0, v0, k0) = (90usize, 30usize, 9usize);

    let mut hot = Tensor::<f64>::zeros(&[wf, hf, d]).unwrap();
    hot.set(&[u0, v0, k0], 1.0);
    let mut feat = Tensor::<f64>::zeros(&[wf, hf, 1]).unwrap();
    feat.set(&[u0, v0, 0], 1.0);
    let frustum = lift(&DepthDistribution::new(hot).unwrap(), &feat).unwrap();
    let vox = frustum_to_voxel(&frustum, &calib, &disc, &grid).unwrap();

    let edge = |i: usize| 2.0 + 44.8 * (i * (i + 1)) as f64 / (d * (d + 1)) as f64;
    let centers: Vec<f64> = (0..d).map(|i| 0.5 * (edge(i) + edge(i + 1))).collect();
    let [nx, ny, nz] = grid.dims();
    let mut lit = 0;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let [x, y, z] = grid.voxel_center(i, j, k);
                // grid frame (x fwd, y left, z up) to camera (x right, y down, z fwd)
                let (cx, cy, cz) = (-y, -z, x);
                let (u, v) = ((360.0 * cx / cz + 320.0) / 4.0, (360.0 * cy / cz + 96.0) / 4.0);
                let r = if cz < centers[0] {
                    0.0
                } else {
                    let s = centers.partition_point(|&c| c <= cz).min(d - 1);
                    (s - 1) as f64 + (cz - centers[s - 1]) / (centers[s] - centers[s - 1])
                };
                let near = (u - u0 as f64).abs() < 1.0
                    && (v - v0 as f64).abs() < 1.0
                    && (r - k0 as f64).abs() < 1.0
                    && (2.0..=46.8).contains(&cz);
                let value = vox.values().get(&[i, j, k, 0]);
                assert_eq!(value != 0.0, near, "voxel ({i}, {j}, {k}) u={u} v={v} r={r} value={value}");
                lit += near as usize;
            }
        }
    }
    assert!(lit > 0);
}

#[test]
fn zero_frustum_gives_zero_voxels() {
    let disc = DiscretizationSpec::kitti_lid(8).unwrap();
    let calib = desk_camera();
    let frustum = FrustumGrid::new(Tensor::<f32>::zeros(&[160, 48, 8, 3]).unwrap()).unwrap();
    let vox = frustum_to_voxel(&frustum, &calib, &disc, &desk_grid()).unwrap();
    assert!(vox.values().data().iter().all(|&v| v == 0.0));
}

#[test]
fn masked_points_sample_zero_and_scatter_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let g = FrustumGrid::new(random(&mut rng, &[3, 3, 3, 2], 1.0, 2.0)).unwrap();
    let mut pts = points(vec![[1.0, 1.0, 1.0], [0.5, 0.5, 0.5]]);
    pts.mask[1] = false;
    let out = trilinear_sample(&g, &pts).unwrap();
    assert_eq!(&out.data()[2..], &[0.0, 0.0]);
    let up = Tensor::new(vec![2, 2], vec![0.0, 0.0, 5.0, 5.0]).unwrap();
    let grad = trilinear_sample_backward([3, 3, 3, 2], &pts, &up).unwrap();
    assert!(grad.data().iter().all(|&v| v == 0.0));
    assert!(trilinear_sample_backward([3, 3, 3, 2], &pts, &Tensor::<f64>::zeros(&[3, 2]).unwrap()).is_err());
}

#[test]
fn node_gradient_is_concentrated() {
    let pts = points(vec![[1.0, 2.0, 0.0]]);
    let up = Tensor::new(vec![1, 2], vec![0.5, -1.5]).unwrap();
    let grad = trilinear_sample_backward([3, 4, 2, 2], &pts, &up).unwrap();
    assert_eq!(grad.get(&[1, 2, 0, 0]), 0.5);
    assert_eq!(grad.get(&[1, 2, 0, 1]), -1.5);
    assert_eq!(grad.data().iter().filter(|&&v| v != 0.0).count(), 2);
}

#[test]
fn scatter_is_thread_count_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dims = [6usize, 5, 7];
    let pts = random_points(&mut rng, 20_000, dims);
    let up = random(&mut rng, &[20_000, 3], -1.0, 1.0);
    let run = || trilinear_sample_backward([6, 5, 7, 3], &pts, &up).unwrap();
    let reference = run();
    for threads in [1, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other = pool.install(run);
        let same = reference.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{threads} threads");
    }
}

#[test]
fn collapse_orders_heights_before_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let grid = GridSpec::new([0.0, 1.2], [0.0, 0.8], [0.0, 1.2], [0.4, 0.4, 0.4]).unwrap();
    let (x, y, z, c) = (3, 2, 3, 4);
    let v = random(&mut rng, &[x, y, z, c], -1.0, 1.0);
    let bev = collapse_to_bev(&VoxelGrid::new(v.clone(), grid).unwrap()).unwrap();
    assert_eq!(bev.values().shape(), &[x, y, z * c]);
    for i in 0..x {
        for j in 0..y {
            for k in 0..z {
                for ch in 0..c {
                    assert_eq!(bev.values().get(&[i, j, k * c + ch]), v.get(&[i, j, k, ch]));
                }
            }
        }
    }
    let mut sorted_in = v.data().to_vec();
    let mut sorted_out = bev.values().data().to_vec();
    sorted_in.sort_by(f64::total_cmp);
    sorted_out.sort_by(f64::total_cmp);
    assert_eq!(sorted_in, sorted_out);
}

#[test]
fn channel_reduce_matches_affine_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (x, y, cin, cout) = (5, 4, 6, 3);
    let bev = BevGrid::new(random(&mut rng, &[x, y, cin], -1.0, 1.0)).unwrap();
    let w = random(&mut rng, &[cin, cout], -1.0, 1.0);
    let b = random(&mut rng, &[cout], -0.5, 0.5);
    let out = channel_reduce(&bev, &w, &b).unwrap();
    assert_eq!(out.values().shape(), &[x, y, cout]);
    for i in 0..x {
        for j in 0..y {
            for o in 0..cout {
                let mut acc = b.data()[o];
                for ic in 0..cin {
                    acc += w.get(&[ic, o]) * bev.values().get(&[i, j, ic]);
                }
                assert!((out.values().get(&[i, j, o]) - acc.max(0.0)).abs() < 1e-5);
            }
        }
    }
    assert!(channel_reduce(&bev, &random(&mut rng, &[cin + 1, cout], 0.0, 1.0), &b).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weights_are_a_partition_of_unity(seed in any::<u64>(), w in 1usize..6, h in 1usize..6, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 200, [w, h, d]);
        let ones = FrustumGrid::new(Tensor::filled(&[w, h, d, 1], 1.0f64).unwrap()).unwrap();
        for v in trilinear_sample(&ones, &pts).unwrap().data() {
            prop_assert!((v - 1.0).abs() <= 1e-12);
        }
        let pos = FrustumGrid::new(random(&mut rng, &[w, h, d, 2], 0.0, 1.0)).unwrap();
        let out = trilinear_sample(&pos, &pts).unwrap();
        prop_assert!(out.data().iter().all(|&v| v >= 0.0));
        prop_assert!(out.max_abs() <= pos.values().max_abs());
    }

    #[test]
    fn scatter_is_the_adjoint(seed in any::<u64>(), w in 1usize..6, h in 1usize..6, d in 1usize..6, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 300, [w, h, d]);
        let g = random(&mut rng, &[w, h, d, c], -1.0, 1.0);
        let u = random(&mut rng, &[300, c], -1.0, 1.0);
        let sampled = trilinear_sample(&FrustumGrid::new(g.clone()).unwrap(), &pts).unwrap();
        let scattered = trilinear_sample_backward([w, h, d, c], &pts, &u).unwrap();
        let lhs: f64 = sampled.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.data().iter().zip(scattered.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn frustum_to_voxel_is_linear(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let calib = desk_camera();
        let disc = DiscretizationSpec::kitti_lid(6).unwrap();
        let sampler = VoxelSampler::new(&calib, &disc, &desk_grid()).unwrap();
        let shape = [160, 48, 6, 2];
        let (g1, g2) = (random(&mut rng, &shape, -1.0, 1.0), random(&mut rng, &shape, -1.0, 1.0));
        let mix = Tensor::from_fn(&shape, |i| a * g1.data()[i] + b * g2.data()[i]).unwrap();
        let f = |g: Tensor<f64>| sampler.forward(&FrustumGrid::new(g).unwrap()).unwrap().into_values();
        let (vm, v1, v2) = (f(mix), f(g1), f(g2));
        for i in 0..vm.len() {
            prop_assert!((vm.data()[i] - (a * v1.data()[i] + b * v2.data()[i])).abs() <= 1e-5);
        }
    }
}
