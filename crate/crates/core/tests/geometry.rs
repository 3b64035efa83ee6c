use catbev_core::geometry::{
    image_to_feature_coords, project_point, voxel_centers, CameraCalibration, GridSpec, KittiCalibFile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KITTI_CALIB: &str = include_str!("data/kitti_000000_calib.txt");

fn kitti_p2() -> [[f64; 4]; 3] {
    KittiCalibFile::parse(KITTI_CALIB).matrix_3x4("P2").unwrap()
}

fn kitti_camera() -> CameraCalibration {
    CameraCalibration::new(kitti_p2(), 1240, 372, 4).unwrap()
}

#[test]
fn parses_every_kitti_key() {
    let file = KittiCalibFile::parse(KITTI_CALIB);
    let keys: Vec<&str> = file.keys().collect();
    for k in ["P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    assert_eq!(file.values("R0_rect").unwrap().len(), 9);
    let p3 = file.matrix_3x4("P3").unwrap();
    assert_eq!(p3[0][3], -334.1081);
    assert_eq!(p3[2][3], 0.003201153);
}

#[test]
fn kitti_projection_matches_matrix_oracle() {
    let p = kitti_p2();
    let calib = kitti_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..2000 {
        let x = [rng.gen_range(-20.0..20.0), rng.gen_range(-3.0..3.0), rng.gen_range(2.0..46.0)];
        let h: Vec<f64> = (0..3).map(|r| p[r][0] * x[0] + p[r][1] * x[1] + p[r][2] * x[2] + p[r][3]).collect();
        let got = project_point(&calib, x).unwrap();
        assert!((got[0] - h[0] / h[2]).abs() < 1e-5);
        assert!((got[1] - h[1] / h[2]).abs() < 1e-5);
        assert!((got[2] - h[2]).abs() < 1e-5);
    }
}

#[test]
fn kitti_grid_layout() {
    let g = GridSpec::kitti();
    assert_eq!(g.dims(), [280, 376, 25]);
    let c = voxel_centers::<f64>(&g);
    assert_eq!(c.shape(), &[280, 376, 25, 3]);
    let first = g.voxel_center(0, 0, 0);
    for (a, want) in first.iter().zip([2.08, -30.0, -2.92]) {
        assert!((a - want).abs() < 1e-9, "{first:?}");
    }
}

#[test]
fn voxel_centers_strictly_inside_ranges() {
    for g in [GridSpec::kitti(), GridSpec::waymo()] {
        let c = voxel_centers::<f64>(&g);
        let ranges = [g.x_range, g.y_range, g.z_range];
        for p in c.data().chunks(3) {
            for a in 0..3 {
                assert!(p[a] > ranges[a][0] && p[a] < ranges[a][1]);
            }
        }
    }
}

#[test]
fn feature_coords_example() {
    assert_eq!(image_to_feature_coords(10.0, 6.0, 4.0), (2.5, 1.5));
}

proptest! {
    #[test]
    fn projection_is_scale_invariant(
        x in -20.0..20.0f64, y in -3.0..3.0f64, z in 2.0..46.0f64, s in 0.01..100.0f64,
    ) {
        let calib = kitti_camera();
        let a = project_point(&calib, [x, y, z]).unwrap();
        let b = project_point(&calib.scaled(s), [x, y, z]).unwrap();
        prop_assert!((a[0] - b[0]).abs() <= 1e-6);
        prop_assert!((a[1] - b[1]).abs() <= 1e-6);
        prop_assert!((b[2] - s * a[2]).abs() <= 1e-9 * b[2].abs().max(1.0));
    }

    #[test]
    fn feature_coords_undo_image_scaling(uf in 0.0..400.0f64, vf in 0.0..200.0f64, ds in 1usize..16) {
        let d = ds as f64;
        let (u, v) = image_to_feature_coords(uf * d, vf * d, d);
        prop_assert!((u - uf).abs() <= 1e-12 * uf.max(1.0));
        prop_assert!((v - vf).abs() <= 1e-12 * vf.max(1.0));
    }

    #[test]
    fn points_behind_camera_are_rejected(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -40.0..-0.01f64) {
        let calib = CameraCalibration::new(
            [[500.0, 0.0, 300.0, 0.0], [0.0, 500.0, 100.0, 0.0], [0.0, 0.0, 1.0, 0.0]], 600, 200, 1,
        ).unwrap();
        prop_assert!(project_point(&calib, [x, y, z]).is_err());
    }
}
