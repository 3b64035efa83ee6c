//! Frustum-to-voxel resampling, BEV collapse and channel reduction.
//!
//! Each voxel center is moved into the camera frame, projected to feature
//! pixel coordinates `(u_f, v_f)` and mapped to a continuous depth-bin
//! coordinate `r`. The frustum grid is then sampled at `(u_f, v_f, r)` with
//! trilinear interpolation. Voxels that do not land inside the frustum read
//! zeros.

use rayon::prelude::*;

use crate::discretization::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::frustum::FrustumGrid;
use crate::geometry::{image_to_feature_coords, project_grid_point, voxel_centers, CameraCalibration, GridSpec};
use crate::tensor::{Scalar, Tensor};

/// Voxel features, shape `X x Y x Z x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T = f32> {
    values: Tensor<T>,
    grid: GridSpec,
}

impl<T: Scalar> VoxelGrid<T> {
    pub fn new(values: Tensor<T>, grid: GridSpec) -> Result<Self> {
        values.expect_rank(4, "voxel grid")?;
        if values.shape()[..3] != grid.dims() {
            return Err(Error::ShapeMismatch(format!(
                "voxel tensor {:?} does not match grid dims {:?}",
                values.shape(),
                grid.dims()
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

/// Bird's-eye-view features, shape `X x Y x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid<T = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> BevGrid<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        values.expect_rank(3, "BEV grid")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Continuous frustum coordinates `(u_f, v_f, r)` with a validity mask.
///
/// `coords` has shape `[.., 3]`; `mask` has one entry per point.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoints {
    pub coords: Tensor<f64>,
    pub mask: Vec<bool>,
}

impl SamplePoints {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn point(&self, n: usize) -> [f64; 3] {
        let c = &self.coords.data()[n * 3..n * 3 + 3];
        [c[0], c[1], c[2]]
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Projects points (`[.., 3]`, grid frame, meters) into frustum coordinates.
///
/// A point is masked out when it is behind the camera, falls outside
/// `[0, W_F - 1] x [0, H_F - 1]` in feature pixels, or has depth outside
/// `[d_min, d_max]`.
pub fn frustum_sample_coords<T: Scalar>(
    calib: &CameraCalibration,
    disc: &DiscretizationSpec,
    centers: &Tensor<T>,
) -> Result<SamplePoints> {
    if centers.shape().last() != Some(&3) {
        return Err(Error::ShapeMismatch(format!(
            "sample centers must end in an axis of 3, got {:?}",
            centers.shape()
        )));
    }
    let n = centers.len() / 3;
    let ds = calib.feature_downsample() as f64;
    let (wf, hf) = (calib.feature_width() as f64, calib.feature_height() as f64);
    let results: Vec<Option<[f64; 3]>> = centers
        .data()
        .par_chunks(3)
        .map(|p| {
            let p = [p[0].to_f64(), p[1].to_f64(), p[2].to_f64()];
            let [u, v, depth] = project_grid_point(calib, p).ok()?;
            let (uf, vf) = image_to_feature_coords(u, v, ds);
            let inside = (0.0..=wf - 1.0).contains(&uf) && (0.0..=hf - 1.0).contains(&vf);
            if !inside {
                return None;
            }
            let r = disc.depth_to_fractional_bin(depth).ok()?;
            Some([uf, vf, r])
        })
        .collect();
    let mut data = Vec::with_capacity(n * 3);
    let mut mask = Vec::with_capacity(n);
    for r in results {
        data.extend(r.unwrap_or([0.0; 3]));
        mask.push(r.is_some());
    }
    Ok(SamplePoints {
        coords: Tensor::new(centers.shape().to_vec(), data)?,
        mask,
    })
}

/// Lower lattice index, upper lattice index and upper weight along one axis.
///
/// Coordinates within half a cell outside `[0, n - 1]` clamp to the border;
/// anything further out is rejected.
fn axis_weights(x: f64, n: usize) -> Option<(usize, usize, f64)> {
    let top = (n - 1) as f64;
    if !(x >= -0.5 && x <= top + 0.5) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let x = x.clamp(0.0, top);
    let i0 = (x.floor() as usize).min(n - 2);
    Some((i0, i0 + 1, x - i0 as f64))
}

/// The 8 `(cell, weight)` pairs for a point in a `[W, H, D]` lattice, where
/// `cell` is the flat `(u * H + v) * D + d` index.
pub(crate) fn trilinear_corners(p: [f64; 3], dims: [usize; 3]) -> Option<[(usize, f64); 8]> {
    let (u0, u1, tu) = axis_weights(p[0], dims[0])?;
    let (v0, v1, tv) = axis_weights(p[1], dims[1])?;
    let (d0, d1, td) = axis_weights(p[2], dims[2])?;
    let cell = |u: usize, v: usize, d: usize| (u * dims[1] + v) * dims[2] + d;
    Some([
        (cell(u0, v0, d0), (1.0 - tu) * (1.0 - tv) * (1.0 - td)),
        (cell(u0, v0, d1), (1.0 - tu) * (1.0 - tv) * td),
        (cell(u0, v1, d0), (1.0 - tu) * tv * (1.0 - td)),
        (cell(u0, v1, d1), (1.0 - tu) * tv * td),
        (cell(u1, v0, d0), tu * (1.0 - tv) * (1.0 - td)),
        (cell(u1, v0, d1), tu * (1.0 - tv) * td),
        (cell(u1, v1, d0), tu * tv * (1.0 - td)),
        (cell(u1, v1, d1), tu * tv * td),
    ])
}

fn check_points(points: &SamplePoints) -> Result<()> {
    let c = &points.coords;
    if c.shape().last() != Some(&3) || c.len() / 3 != points.mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "coords {:?} and mask of length {} disagree",
            c.shape(),
            points.mask.len()
        )));
    }
    Ok(())
}

/// Samples `C`-vectors from the frustum at each point. Masked points read zeros.
///
/// The output shape is the coordinate shape with its trailing 3 replaced by `C`.
pub fn trilinear_sample<T: Scalar>(frustum: &FrustumGrid<T>, points: &SamplePoints) -> Result<Tensor<T>> {
    check_points(points)?;
    let [w, h, d, c] = frustum.dims();
    let g = frustum.values().data();
    let mut out = vec![T::default(); points.len() * c];
    out.par_chunks_mut(c).enumerate().for_each(|(n, dst)| {
        if !points.mask[n] {
            return;
        }
        let Some(corners) = trilinear_corners(points.point(n), [w, h, d]) else {
            return;
        };
        let mut acc = vec![0.0f64; c];
        for (cell, wgt) in corners {
            if wgt == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(&g[cell * c..cell * c + c]) {
                *a += wgt * v.to_f64();
            }
        }
        for (o, a) in dst.iter_mut().zip(acc) {
            *o = T::from_f64(a);
        }
    });
    let mut shape = points.coords.shape().to_vec();
    *shape.last_mut().unwrap() = c;
    Tensor::new(shape, out)
}

/// Adjoint of [`trilinear_sample`] with respect to the frustum values.
///
/// Contributions are bucketed per frustum cell in point order and summed in
/// that order, so the result does not depend on the thread count.
pub fn trilinear_sample_backward<T: Scalar>(
    frustum_dims: [usize; 4],
    points: &SamplePoints,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_points(points)?;
    let [w, h, d, c] = frustum_dims;
    if upstream.len() != points.len() * c || upstream.shape().last() != Some(&c) {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} does not match {} points x {c} channels",
            upstream.shape(),
            points.len()
        )));
    }
    let cells = w * h * d;
    let corners: Vec<Option<[(usize, f64); 8]>> = (0..points.len())
        .into_par_iter()
        .map(|n| {
            if points.mask[n] {
                trilinear_corners(points.point(n), [w, h, d])
            } else {
                None
            }
        })
        .collect();

    // Counting sort of (point, weight) contributions by target cell.
    let mut offsets = vec![0usize; cells + 1];
    for cs in corners.iter().flatten() {
        for &(cell, wgt) in cs {
            if wgt != 0.0 {
                offsets[cell + 1] += 1;
            }
        }
    }
    for i in 0..cells {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut entries = vec![(0usize, 0.0f64); offsets[cells]];
    for (n, cs) in corners.iter().enumerate() {
        let Some(cs) = cs else { continue };
        for &(cell, wgt) in cs {
            if wgt != 0.0 {
                entries[cursor[cell]] = (n, wgt);
                cursor[cell] += 1;
            }
        }
    }

    let up = upstream.data();
    let mut grad = vec![T::default(); cells * c];
    grad.par_chunks_mut(c).enumerate().for_each(|(cell, dst)| {
        let bucket = &entries[offsets[cell]..offsets[cell + 1]];
        if bucket.is_empty() {
            return;
        }
        let mut acc = vec![0.0f64; c];
        for &(n, wgt) in bucket {
            for (a, g) in acc.iter_mut().zip(&up[n * c..n * c + c]) {
                *a += wgt * g.to_f64();
            }
        }
        for (o, a) in dst.iter_mut().zip(acc) {
            *o = T::from_f64(a);
        }
    });
    Tensor::new(frustum_dims.to_vec(), grad)
}

/// Precomputed frustum sampling points for every voxel of a grid.
///
/// The coordinates depend only on calibration, discretization and grid, so
/// they can be reused across forward and backward passes.
#[derive(Debug, Clone)]
pub struct VoxelSampler {
    grid: GridSpec,
    frustum_pixels: [usize; 3],
    points: SamplePoints,
}

impl VoxelSampler {
    pub fn new(calib: &CameraCalibration, disc: &DiscretizationSpec, grid: &GridSpec) -> Result<Self> {
        let centers = voxel_centers::<f64>(grid);
        let points = frustum_sample_coords(calib, disc, &centers)?;
        Ok(Self {
            grid: *grid,
            frustum_pixels: [calib.feature_width(), calib.feature_height(), disc.num_bins()],
            points,
        })
    }

    pub fn points(&self) -> &SamplePoints {
        &self.points
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn check_frustum(&self, dims: [usize; 4]) -> Result<()> {
        if dims[..3] != self.frustum_pixels {
            return Err(Error::ShapeMismatch(format!(
                "frustum {:?} does not match calibration/discretization {:?}",
                dims, self.frustum_pixels
            )));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, frustum: &FrustumGrid<T>) -> Result<VoxelGrid<T>> {
        self.check_frustum(frustum.dims())?;
        let sampled = trilinear_sample(frustum, &self.points)?;
        VoxelGrid::new(sampled, self.grid)
    }

    /// Gradient with respect to the frustum given a voxel-space gradient.
    pub fn backward<T: Scalar>(&self, channels: usize, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let [w, h, d] = self.frustum_pixels;
        let [x, y, z] = self.grid.dims();
        if upstream.shape() != [x, y, z, channels] {
            return Err(Error::ShapeMismatch(format!(
                "voxel upstream {:?}, expected {:?}",
                upstream.shape(),
                [x, y, z, channels]
            )));
        }
        trilinear_sample_backward([w, h, d, channels], &self.points, upstream)
    }
}

/// Resamples a frustum grid onto the voxel grid.
pub fn frustum_to_voxel<T: Scalar>(
    frustum: &FrustumGrid<T>,
    calib: &CameraCalibration,
    disc: &DiscretizationSpec,
    grid: &GridSpec,
) -> Result<VoxelGrid<T>> {
    VoxelSampler::new(calib, disc, grid)?.forward(frustum)
}

/// Stacks height slices along channels: `out[x, y, k * C + c] = V[x, y, k, c]`.
pub fn collapse_to_bev<T: Scalar>(voxels: &VoxelGrid<T>) -> Result<BevGrid<T>> {
    let s = voxels.values().shape();
    let shape = vec![s[0], s[1], s[2] * s[3]];
    BevGrid::new(voxels.values().clone().reshape(shape)?)
}

/// Pointwise affine map plus rectifier: `out = max(0, W^T in + b)`.
///
/// `weights` is `C_in x C_out`; `bias` has `C_out` entries.
pub fn channel_reduce<T: Scalar>(bev: &BevGrid<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<BevGrid<T>> {
    weights.expect_rank(2, "channel reduce weights")?;
    let (cin, cout) = (weights.shape()[0], weights.shape()[1]);
    if cin != bev.channels() || bias.len() != cout {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} and bias {:?} do not fit {} input channels",
            weights.shape(),
            bias.shape(),
            bev.channels()
        )));
    }
    let s = bev.values().shape();
    let wt = weights.data();
    let b = bias.data();
    let mut out = vec![T::default(); s[0] * s[1] * cout];
    out.par_chunks_mut(cout)
        .zip(bev.values().data().par_chunks(cin))
        .for_each(|(dst, src)| {
            for (o, oc) in dst.iter_mut().zip(0..cout) {
                let mut acc = b[oc].to_f64();
                for (ic, x) in src.iter().enumerate() {
                    acc += wt[ic * cout + oc].to_f64() * x.to_f64();
                }
                *o = T::from_f64(acc.max(0.0));
            }
        });
    BevGrid::new(Tensor::new(vec![s[0], s[1], cout], out)?)
}
