//! Synthetic scenes: axis-aligned boxes in front of a fronto-parallel
//! background, rendered by casting one camera ray per feature pixel.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::Rng;

use crate::discretization::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::geometry::{project_grid_point, CameraCalibration, GridSpec, LIDAR_TO_CAMERA_AXES};
use crate::labels::{Box2D, DepthMap, PointCloud};
use crate::tensor::Tensor;

/// Minimum sharpness denominator; `sigma` below this is treated as this.
const MIN_SIGMA: f64 = 1e-3;

/// An axis-aligned box in the grid frame with a constant feature signature.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub extents: [f64; 3],
    pub signature: Vec<f32>,
}

impl SceneBox {
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.center[a] - 0.5 * self.extents[a]);
        let hi = std::array::from_fn(|a| self.center[a] + 0.5 * self.extents[a]);
        (lo, hi)
    }

    fn corners(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        let (lo, hi) = self.bounds();
        (0..8).map(move |m| std::array::from_fn(|a| if m >> a & 1 == 0 { lo[a] } else { hi[a] }))
    }

    /// Ray parameter of the first entry into the box, if ahead of the origin.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (lo, hi) = self.bounds();
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let (ta, tb) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t1 >= t0 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub boxes: Vec<SceneBox>,
    /// Camera depth of the featureless background plane.
    pub background_depth: f64,
    pub calib: CameraCalibration,
    /// Distribution sharpness: logits are `1 / max(sigma, 1e-3)` at the true bin.
    pub sigma: f64,
    /// Image-pixel stride of the rendered point cloud lattice.
    pub cloud_stride: usize,
}

/// Rendered scene at feature resolution, plus an image-lattice point cloud.
#[derive(Debug, Clone)]
pub struct SceneRender {
    /// `W_F x H_F x C`.
    pub features: Tensor<f32>,
    /// `W_F x H_F x K` with `K` the output bin count of the discretization.
    pub logits: Tensor<f32>,
    /// Ray depth at each feature pixel.
    pub depth: DepthMap,
    pub fg_mask: Vec<bool>,
    /// Point cloud in the camera frame.
    pub cloud: PointCloud,
    /// Image-space extent of each visible box.
    pub boxes_2d: Vec<Box2D>,
}

/// Desk-scale camera: 640 x 192 image, focal 360 px, 4x feature downsampling,
/// mounted at the grid origin looking along grid +x.
pub fn desk_camera() -> CameraCalibration {
    CameraCalibration::new(
        [[360.0, 0.0, 320.0, 0.0], [0.0, 360.0, 96.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        640,
        192,
        4,
    )
    .and_then(|c| c.with_grid_to_camera(LIDAR_TO_CAMERA_AXES))
    .expect("desk camera is valid")
}

/// KITTI ranges at 4x the voxel footprint in x/y: 70 x 94 x 5 voxels.
pub fn desk_grid() -> GridSpec {
    GridSpec::new([2.0, 46.8], [-30.08, 30.08], [-3.0, 1.0], [0.64, 0.64, 0.8]).expect("desk grid is valid")
}

struct RayCaster {
    origin: Vector3<f64>,
    inv_m: Matrix3<f64>,
    cam_to_grid: Matrix4<f64>,
}

impl RayCaster {
    fn new(calib: &CameraCalibration) -> Result<Self> {
        let p = calib.projection();
        let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
        let inv_m = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("projection has a singular 3x3 block".into()))?;
        let cam_center = -(inv_m * p.column(3));
        let cam_to_grid = calib
            .grid_to_camera()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("grid-to-camera transform is singular".into()))?;
        let o = cam_to_grid * Vector4::new(cam_center[0], cam_center[1], cam_center[2], 1.0);
        Ok(Self {
            origin: o.xyz(),
            inv_m,
            cam_to_grid,
        })
    }

    /// Camera-frame ray through image point `(u, v)`, parameterized by depth.
    fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.inv_m * Vector3::new(u, v, 1.0)
    }

    fn grid_dir(&self, cam_dir: &Vector3<f64>) -> Vector3<f64> {
        self.cam_to_grid.fixed_view::<3, 3>(0, 0) * cam_dir
    }

    /// First hit: `(depth, box index)`; the background reports `None` as index.
    fn cast(&self, boxes: &[SceneBox], background: f64, u: f64, v: f64) -> (f64, Option<usize>, Vector3<f64>) {
        let cam_dir = self.camera_ray(u, v);
        let dir = self.grid_dir(&cam_dir);
        let mut best = (background, None);
        for (i, b) in boxes.iter().enumerate() {
            if let Some(t) = b.intersect(&self.origin, &dir) {
                if t < best.0 {
                    best = (t, Some(i));
                }
            }
        }
        (best.0, best.1, cam_dir)
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.background_depth > 0.0 && self.background_depth.is_finite()) {
            return Err(Error::InvalidConfig("background depth must be positive".into()));
        }
        if self.cloud_stride == 0 {
            return Err(Error::InvalidConfig("cloud stride must be >= 1".into()));
        }
        let channels = self.boxes.first().map(|b| b.signature.len()).unwrap_or(0);
        for b in &self.boxes {
            if b.extents.iter().any(|&e| !(e > 0.0)) || b.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig(format!("degenerate scene box {b:?}")));
            }
            if b.signature.is_empty() || b.signature.len() != channels {
                return Err(Error::InvalidConfig("box signatures must share a nonzero length".into()));
            }
        }
        Ok(())
    }

    /// Checks every box lies inside the grid range.
    pub fn check_within(&self, grid: &GridSpec) -> Result<()> {
        let ranges = [grid.x_range, grid.y_range, grid.z_range];
        for b in &self.boxes {
            let (lo, hi) = b.bounds();
            if (0..3).any(|a| lo[a] < ranges[a][0] || hi[a] > ranges[a][1]) {
                return Err(Error::InvalidConfig(format!("scene box {b:?} leaves the grid")));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.boxes.first().map_or(0, |b| b.signature.len())
    }

    pub fn render(&self, disc: &DiscretizationSpec) -> Result<SceneRender> {
        self.validate()?;
        if self.boxes.is_empty() {
            return Err(Error::DegenerateScene);
        }
        let calib = &self.calib;
        let caster = RayCaster::new(calib)?;
        let (wf, hf, c, k) = (calib.feature_width(), calib.feature_height(), self.channels(), disc.num_output_bins());
        let ds = calib.feature_downsample() as f64;
        let scale = 1.0 / self.sigma.max(MIN_SIGMA);

        let mut features = Tensor::<f32>::zeros(&[wf, hf, c])?;
        let mut logits = Tensor::<f32>::zeros(&[wf, hf, k])?;
        let mut depth = DepthMap::empty(wf, hf);
        let mut fg_mask = vec![false; wf * hf];
        for u in 0..wf {
            for v in 0..hf {
                // Feature pixel (u, v) sits at image point (u * ds, v * ds).
                let (d, hit, _) = caster.cast(&self.boxes, self.background_depth, u as f64 * ds, v as f64 * ds);
                let p = u * hf + v;
                depth.write_nearest(u, v, d);
                if let Some(i) = hit {
                    fg_mask[p] = true;
                    features.data_mut()[p * c..(p + 1) * c].copy_from_slice(&self.boxes[i].signature);
                }
                let bin = disc.depth_to_bin(d)?;
                logits.data_mut()[p * k + bin] = scale as f32;
            }
        }
        if !fg_mask.iter().any(|&m| m) {
            return Err(Error::DegenerateScene);
        }

        let mut points = Vec::new();
        let stride = self.cloud_stride;
        for iu in (0..calib.image_width()).step_by(stride) {
            for iv in (0..calib.image_height()).step_by(stride) {
                let (u, v) = (iu as f64 + 0.5, iv as f64 + 0.5);
                let (d, hit, dir) = caster.cast(&self.boxes, self.background_depth, u, v);
                let cam = caster.inv_m * -calib.projection().column(3) + dir * d;
                points.push([cam[0] as f32, cam[1] as f32, cam[2] as f32, if hit.is_some() { 1.0 } else { 0.2 }]);
            }
        }

        let boxes_2d = self.boxes.iter().filter_map(|b| self.image_box(b)).collect();
        Ok(SceneRender {
            features,
            logits,
            depth,
            fg_mask,
            cloud: PointCloud::new(points)?,
            boxes_2d,
        })
    }

    /// Bounding rectangle of the projected box corners, clamped to the image.
    fn image_box(&self, b: &SceneBox) -> Option<Box2D> {
        let (w, h) = (self.calib.image_width() as f64, self.calib.image_height() as f64);
        let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for corner in b.corners() {
            let [u, v, _] = project_grid_point(&self.calib, corner).ok()?;
            r = [r[0].min(u), r[1].min(v), r[2].max(u), r[3].max(v)];
        }
        let (u0, v0, u1, v1) = (r[0].clamp(0.0, w), r[1].clamp(0.0, h), r[2].clamp(0.0, w), r[3].clamp(0.0, h));
        Box2D::new("box", u0, v0, u1, v1).ok()
    }
}

/// A random small box whose front face sits at the center of a depth bin,
/// viewed by [`desk_camera`]. The box occupies less than one BEV cell of
/// [`desk_grid`] in x and y, is centered on a voxel column laterally and spans
/// the full grid height.
pub fn random_single_box_scene(
    rng: &mut impl Rng,
    disc: &DiscretizationSpec,
    channels: usize,
    sigma: f64,
) -> Result<SyntheticScene> {
    let calib = desk_camera();
    let (lo, hi) = (5.0, 30.0);
    let bins: Vec<usize> = (0..disc.num_bins())
        .filter(|&k| disc.bin_center(k).map_or(false, |c| (lo..=hi).contains(&c)))
        .collect();
    if bins.is_empty() {
        return Err(Error::InvalidConfig(format!("no depth bin center within [{lo}, {hi}] m")));
    }
    let k = bins[rng.gen_range(0..bins.len())];
    let front = disc.bin_center(k)?;
    let ex = rng.gen_range(0.2..0.4);
    let ey = rng.gen_range(0.4..0.6);
    let grid = desk_grid();
    let columns: Vec<f64> = (0..grid.dims()[1])
        .map(|j| grid.voxel_center(0, j, 0)[1])
        .filter(|y| y.abs() <= 0.4 * front)
        .collect();
    let y = columns[rng.gen_range(0..columns.len())];
    let signature = (0..channels).map(|_| rng.gen_range(0.5f32..1.5)).collect();
    Ok(SyntheticScene {
        boxes: vec![SceneBox {
            center: [front + 0.5 * ex, y, -1.0],
            extents: [ex, ey, 4.0],
            signature,
        }],
        background_depth: disc.d_max() * 2.0,
        calib,
        sigma,
        cloud_stride: 4,
    })
}
