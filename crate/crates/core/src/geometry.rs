//! Camera calibration, point projection and voxel grid geometry.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Minimum homogeneous depth for a point to count as in front of the camera.
pub const MIN_PROJECTIVE_DEPTH: f64 = 1e-6;

/// Tolerance, in meters, for a grid range to be an integer number of voxels.
const GRID_RECONSTRUCTION_TOL: f64 = 1e-6;

/// A pinhole camera described by a 3x4 projection matrix.
///
/// `projection` maps camera-frame points to pixels. `grid_to_camera` is the
/// rigid transform applied to voxel-grid points before projection, identity
/// when the grid already lives in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    projection: Matrix3x4<f64>,
    grid_to_camera: Matrix4<f64>,
    image_width: usize,
    image_height: usize,
    feature_downsample: usize,
}

impl CameraCalibration {
    pub fn new(
        projection: [[f64; 4]; 3],
        image_width: usize,
        image_height: usize,
        feature_downsample: usize,
    ) -> Result<Self> {
        let projection = Matrix3x4::from_fn(|r, c| projection[r][c]);
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "projection matrix has non-finite entries".into(),
            ));
        }
        if projection[(2, 2)] == 0.0 {
            return Err(Error::InvalidConfig(
                "projection matrix P[2,2] must be nonzero".into(),
            ));
        }
        if feature_downsample == 0 {
            return Err(Error::InvalidConfig("feature downsample must be >= 1".into()));
        }
        if image_width == 0
            || image_height == 0
            || image_width % feature_downsample != 0
            || image_height % feature_downsample != 0
        {
            return Err(Error::InvalidConfig(format!(
                "image size {image_width}x{image_height} must be positive and divisible by {feature_downsample}"
            )));
        }
        Ok(Self {
            projection,
            grid_to_camera: Matrix4::identity(),
            image_width,
            image_height,
            feature_downsample,
        })
    }

    /// Sets the grid-to-camera transform (row-major 4x4).
    pub fn with_grid_to_camera(mut self, transform: [[f64; 4]; 4]) -> Result<Self> {
        let m = Matrix4::from_fn(|r, c| transform[r][c]);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "grid-to-camera transform has non-finite entries".into(),
            ));
        }
        self.grid_to_camera = m;
        Ok(self)
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn grid_to_camera(&self) -> &Matrix4<f64> {
        &self.grid_to_camera
    }

    pub fn image_width(&self) -> usize {
        self.image_width
    }

    pub fn image_height(&self) -> usize {
        self.image_height
    }

    pub fn feature_downsample(&self) -> usize {
        self.feature_downsample
    }

    pub fn feature_width(&self) -> usize {
        self.image_width / self.feature_downsample
    }

    pub fn feature_height(&self) -> usize {
        self.image_height / self.feature_downsample
    }

    /// Returns a copy with the projection matrix multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.projection *= s;
        out
    }
}

/// Axis permutation from a LiDAR-style frame (x forward, y left, z up) to a
/// camera frame (x right, y down, z forward).
pub const LIDAR_TO_CAMERA_AXES: [[f64; 4]; 4] = [
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Projects a camera-frame point to `(u, v, d_c)`.
pub fn project_point(calib: &CameraCalibration, p: [f64; 3]) -> Result<[f64; 3]> {
    let h = calib.projection * Vector4::new(p[0], p[1], p[2], 1.0);
    if !(h[2] > MIN_PROJECTIVE_DEPTH) {
        return Err(Error::NonPositiveDepth(h[2]));
    }
    Ok([h[0] / h[2], h[1] / h[2], h[2]])
}

/// Applies the grid-to-camera transform, then projects.
pub fn project_grid_point(calib: &CameraCalibration, p: [f64; 3]) -> Result<[f64; 3]> {
    let c = calib.grid_to_camera * Vector4::new(p[0], p[1], p[2], 1.0);
    project_point(calib, [c[0], c[1], c[2]])
}

pub fn image_to_feature_coords(u: f64, v: f64, downsample: f64) -> (f64, f64) {
    (u / downsample, v / downsample)
}

/// Axis-aligned voxel grid: per-axis `[min, max]` ranges and voxel sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub voxel_size: [f64; 3],
    dims: [usize; 3],
}

impl GridSpec {
    pub fn new(
        x_range: [f64; 2],
        y_range: [f64; 2],
        z_range: [f64; 2],
        voxel_size: [f64; 3],
    ) -> Result<Self> {
        let ranges = [x_range, y_range, z_range];
        let mut dims = [0usize; 3];
        for axis in 0..3 {
            let [lo, hi] = ranges[axis];
            let size = voxel_size[axis];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidConfig(format!(
                    "grid range for axis {axis} must satisfy max > min, got [{lo}, {hi}]"
                )));
            }
            if !(size.is_finite() && size > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "voxel size for axis {axis} must be positive, got {size}"
                )));
            }
            let n = ((hi - lo) / size).round();
            if n < 1.0 || ((n * size) - (hi - lo)).abs() > GRID_RECONSTRUCTION_TOL {
                return Err(Error::InvalidConfig(format!(
                    "range [{lo}, {hi}] is not a whole number of {size} m voxels"
                )));
            }
            dims[axis] = n as usize;
        }
        Ok(Self {
            x_range,
            y_range,
            z_range,
            voxel_size,
            dims,
        })
    }

    /// KITTI front-camera grid: [2, 46.8] x [-30.08, 30.08] x [-3, 1] m at 0.16 m.
    pub fn kitti() -> Self {
        Self::new([2.0, 46.8], [-30.08, 30.08], [-3.0, 1.0], [0.16; 3])
            .expect("KITTI grid is consistent")
    }

    /// Waymo front-camera grid: [2, 55.76] x [-25.6, 25.6] x [-4, 4] m at 0.16 m.
    pub fn waymo() -> Self {
        Self::new([2.0, 55.76], [-25.6, 25.6], [-4.0, 4.0], [0.16; 3])
            .expect("Waymo grid is consistent")
    }

    /// `[X, Y, Z]` voxel counts.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.x_range[0] + (i as f64 + 0.5) * self.voxel_size[0],
            self.y_range[0] + (j as f64 + 0.5) * self.voxel_size[1],
            self.z_range[0] + (k as f64 + 0.5) * self.voxel_size[2],
        ]
    }

    /// BEV cell `(i, j)` containing a point, if inside the x/y range.
    pub fn bev_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = (x - self.x_range[0]) / self.voxel_size[0];
        let fj = (y - self.y_range[0]) / self.voxel_size[1];
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi.floor() as usize, fj.floor() as usize);
        (i < self.dims[0] && j < self.dims[1]).then_some((i, j))
    }
}

/// Voxel centers as an `X x Y x Z x 3` tensor in meters.
pub fn voxel_centers<T: Scalar>(grid: &GridSpec) -> Tensor<T> {
    let [nx, ny, nz] = grid.dims();
    let mut data = Vec::with_capacity(nx * ny * nz * 3);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                data.extend(grid.voxel_center(i, j, k).map(T::from_f64));
            }
        }
    }
    Tensor::new(vec![nx, ny, nz, 3], data).expect("dims are positive")
}

/// Contents of a KITTI-style calibration text file: `KEY: v v v ...` lines.
///
/// Values are kept as text and parsed on demand, so unrelated entries that
/// are not numeric (e.g. `calib_time`) do not break loading.
#[derive(Debug, Clone, Default)]
pub struct KittiCalibFile {
    entries: BTreeMap<String, String>,
}

impl KittiCalibFile {
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|line| {
                let (key, rest) = line.split_once(':')?;
                let key = key.trim();
                (!key.is_empty()).then(|| (key.to_string(), rest.trim().to_string()))
            })
            .collect();
        Self { entries }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn values(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Format(format!("calibration key `{key}` not found")))?;
        raw.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{tok}` under `{key}`")))
            })
            .collect()
    }

    fn fixed<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let vals = self.values(key)?;
        vals.as_slice().try_into().map_err(|_| {
            Error::Format(format!("`{key}` has {} values, expected {N}", vals.len()))
        })
    }

    /// The 3x4 matrix stored under `key`, row-major.
    pub fn matrix_3x4(&self, key: &str) -> Result<[[f64; 4]; 3]> {
        let v: [f64; 12] = self.fixed(key)?;
        Ok(std::array::from_fn(|r| std::array::from_fn(|c| v[r * 4 + c])))
    }

    /// Rectified-camera transform from the LiDAR frame: `R0_rect * Tr_velo_to_cam`.
    pub fn velo_to_rect(&self) -> Result<[[f64; 4]; 4]> {
        let r: [f64; 9] = self.fixed("R0_rect")?;
        let t = self.matrix_3x4("Tr_velo_to_cam")?;
        let mut rect = Matrix4::identity();
        rect.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::from_row_slice(&r));
        let velo = Matrix4::from_fn(|row, col| if row < 3 { t[row][col] } else if col == 3 { 1.0 } else { 0.0 });
        let m = rect * velo;
        Ok(std::array::from_fn(|row| std::array::from_fn(|col| m[(row, col)])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) const KITTI_000000: &str = "\
P0: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 0.000000000000e+00 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 -3.797842000000e+02 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 4.575831000000e+01 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 -3.454157000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 4.981016000000e-03
P3: 7.070493000000e+02 0.000000000000e+00 6.040814000000e+02 -3.341081000000e+02 0.000000000000e+00 7.070493000000e+02 1.805066000000e+02 2.330660000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 3.201153000000e-03
R0_rect: 9.999128000000e-01 1.017945000000e-02 -8.522790000000e-03 -1.012833000000e-02 9.999241000000e-01 6.003364000000e-03 8.583290000000e-03 -5.916586000000e-03 9.999456000000e-01
Tr_velo_to_cam: 6.927964000000e-03 -9.999722000000e-01 -2.757829000000e-03 -2.457729000000e-02 -1.162982000000e-03 2.749836000000e-03 -9.999955000000e-01 -6.127237000000e-02 9.999753000000e-01 6.931141000000e-03 -1.143899000000e-03 -3.321029000000e-01
Tr_imu_to_velo: 9.999976000000e-01 7.553071000000e-04 -2.035826000000e-03 -8.086759000000e-01 -7.854027000000e-04 9.998898000000e-01 -1.482298000000e-02 3.195559000000e-01 2.024406000000e-03 1.482454000000e-02 9.998881000000e-01 -7.997231000000e-01
";

    fn identity_calib() -> CameraCalibration {
        CameraCalibration::new(
            [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            8,
            8,
            1,
        )
        .unwrap()
    }

    #[test]
    fn canonical_pinhole_on_axis() {
        let out = project_point(&identity_calib(), [0.0, 0.0, 5.0]).unwrap();
        assert_eq!(out, [0.0, 0.0, 5.0]);
    }

    #[test]
    fn principal_point_symmetry() {
        for (f, cu, cv, z) in [(700.0, 600.0, 180.0, 3.0), (50.0, 10.0, 7.5, 41.0)] {
            let calib = CameraCalibration::new(
                [[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]],
                1240,
                376,
                4,
            )
            .unwrap();
            let [u, v, d] = project_point(&calib, [0.0, 0.0, z]).unwrap();
            assert_relative_eq!(u, cu, epsilon = 1e-12);
            assert_relative_eq!(v, cv, epsilon = 1e-12);
            assert_relative_eq!(d, z, epsilon = 1e-12);
        }
    }

    #[test]
    fn behind_camera_is_rejected() {
        let calib = identity_calib();
        assert!(matches!(
            project_point(&calib, [1.0, 1.0, -2.0]),
            Err(Error::NonPositiveDepth(_))
        ));
        assert!(project_point(&calib, [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn calibration_invariants() {
        let p = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!(CameraCalibration::new(p, 8, 8, 1).is_err());
        let p = [[f64::NAN, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        assert!(CameraCalibration::new(p, 8, 8, 1).is_err());
        let p = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        assert!(CameraCalibration::new(p, 10, 8, 4).is_err());
        assert!(CameraCalibration::new(p, 8, 8, 0).is_err());
    }

    #[test]
    fn feature_coordinates() {
        assert_eq!(image_to_feature_coords(8.0, 12.0, 4.0), (2.0, 3.0));
        assert_eq!(image_to_feature_coords(0.0, 0.0, 4.0), (0.0, 0.0));
        assert_eq!(image_to_feature_coords(10.0, 6.0, 4.0), (2.5, 1.5));
    }

    #[test]
    fn unit_grid_center() {
        let g = GridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [1.0; 3]).unwrap();
        assert_eq!(g.dims(), [1, 1, 1]);
        let c = voxel_centers::<f64>(&g);
        assert_eq!(c.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn kitti_grid_shape_and_first_center() {
        let g = GridSpec::kitti();
        assert_eq!(g.dims(), [280, 376, 25]);
        let c = voxel_centers::<f32>(&g);
        assert_eq!(c.shape(), &[280, 376, 25, 3]);
        let first = g.voxel_center(0, 0, 0);
        assert_relative_eq!(first[0], 2.08, epsilon = 1e-9);
        assert_relative_eq!(first[1], -30.00, epsilon = 1e-9);
        assert_relative_eq!(first[2], -2.92, epsilon = 1e-9);
        assert_eq!(GridSpec::waymo().dims(), [336, 320, 50]);
    }

    #[test]
    fn rejects_non_integral_ranges() {
        assert!(GridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.05], [0.1; 3]).is_err());
        assert!(GridSpec::new([1.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.1; 3]).is_err());
        assert!(GridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.1, 0.1]).is_err());
    }

    #[test]
    fn centers_lie_strictly_inside() {
        let g = GridSpec::new([2.0, 46.8], [-30.08, 30.08], [-3.0, 1.0], [0.64, 0.64, 0.8]).unwrap();
        let c = voxel_centers::<f64>(&g);
        let ranges = [g.x_range, g.y_range, g.z_range];
        for p in c.data().chunks(3) {
            for a in 0..3 {
                assert!(p[a] > ranges[a][0] && p[a] < ranges[a][1]);
            }
        }
    }

    #[test]
    fn kitti_file_parsing() {
        let file = KittiCalibFile::parse(KITTI_000000);
        let p2 = file.matrix_3x4("P2").unwrap();
        assert_eq!(p2[0], [707.0493, 0.0, 604.0814, 45.75831]);
        assert_eq!(p2[1][3], -0.3454157);
        assert_eq!(p2[2], [0.0, 0.0, 1.0, 0.004981016]);
        assert!(file.matrix_3x4("P9").is_err());
        assert!(file.matrix_3x4("R0_rect").is_err());
        let m = file.velo_to_rect().unwrap();
        assert_eq!(m[3], [0.0, 0.0, 0.0, 1.0]);
        // LiDAR forward axis maps (almost) onto camera depth.
        assert!(m[2][0] > 0.99);
    }

    #[test]
    fn kitti_file_ignores_non_numeric_entries() {
        let text = format!("calib_time: 09-Jan-2012 13:57:47\n{KITTI_000000}");
        let file = KittiCalibFile::parse(&text);
        assert!(file.matrix_3x4("P2").is_ok());
        assert!(file.values("calib_time").is_err());
    }
}
