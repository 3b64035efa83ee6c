//! Depth label generation from LiDAR point clouds and 2D boxes.
//!
//! Points are projected into a sparse image-resolution depth map (nearest
//! point wins), filled by iterative 3x3 min-dilation, reduced to feature
//! resolution by block minimum and finally one-hot encoded over the depth bins.

use std::io::Read;

use serde::Deserialize;

use crate::discretization::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraCalibration};
use crate::tensor::{Scalar, Tensor};

/// `(x, y, z, reflectance)` points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Result<Self> {
        if points.iter().any(|p| p[..3].iter().any(|v| !v.is_finite())) {
            return Err(Error::Format("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    /// Decodes little-endian `f32` quadruplets (KITTI velodyne layout).
    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 16 != 0 {
            return Err(Error::Format(format!(
                "point cloud payload of {} bytes is not a multiple of 16",
                bytes.len()
            )));
        }
        let points = bytes
            .chunks_exact(16)
            .map(|rec| std::array::from_fn(|i| f32::read_le(&rec[i * 4..])))
            .collect();
        Self::new(points)
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_le_bytes(&bytes)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for &v in p {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Applies a row-major 4x4 rigid transform to the xyz coordinates.
    pub fn transformed(&self, m: &[[f64; 4]; 4]) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let x = [p[0] as f64, p[1] as f64, p[2] as f64, 1.0];
                let row = |r: usize| (0..4).map(|c| m[r][c] * x[c]).sum::<f64>() as f32;
                [row(0), row(1), row(2), p[3]]
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Parses 16 whitespace-separated numbers as a row-major 4x4 matrix.
pub fn parse_transform(text: &str) -> Result<[[f64; 4]; 4]> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad number `{t}` in transform"))))
        .collect::<Result<_>>()?;
    if vals.len() != 16 {
        return Err(Error::Format(format!("transform needs 16 values, got {}", vals.len())));
    }
    Ok(std::array::from_fn(|r| std::array::from_fn(|c| vals[r * 4 + c])))
}

/// `W x H` depth map in meters with per-pixel validity, indexed `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// A fully valid map from a `W x H` tensor. Entries must be positive and finite.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        t.expect_rank(2, "depth map")?;
        let values: Vec<f64> = t.data().iter().map(|v| v.to_f64()).collect();
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Format(format!("depth map entry {bad} is not a positive depth")));
        }
        Ok(Self {
            width: t.shape()[0],
            height: t.shape()[1],
            valid: vec![true; values.len()],
            values,
        })
    }

    /// Dense tensor view; invalid pixels read 0.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(&d, &ok)| T::from_f64(if ok { d } else { 0.0 }))
            .collect();
        Tensor::new(vec![self.width, self.height], data).expect("depth map has positive extents")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn idx(&self, u: usize, v: usize) -> usize {
        u * self.height + v
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.idx(u, v);
        self.valid[i].then_some(self.values[i])
    }

    /// Writes `depth` at `(u, v)` unless a nearer depth is already stored.
    pub fn write_nearest(&mut self, u: usize, v: usize, depth: f64) {
        let i = self.idx(u, v);
        if !self.valid[i] || depth < self.values[i] {
            self.values[i] = depth;
            self.valid[i] = true;
        }
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_dense(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn valid_depths(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(&d, _)| d)
    }
}

/// Projects camera-frame points into a sparse `W_I x H_I` depth map.
///
/// Points behind the camera or outside the image are dropped; when several
/// points hit a pixel the smallest depth is kept.
pub fn project_cloud(calib: &CameraCalibration, cloud: &PointCloud) -> DepthMap {
    let (w, h) = (calib.image_width(), calib.image_height());
    let mut map = DepthMap::empty(w, h);
    for p in &cloud.points {
        let Ok([u, v, depth]) = project_point(calib, [p[0] as f64, p[1] as f64, p[2] as f64]) else {
            continue;
        };
        if !(u >= 0.0 && v >= 0.0) {
            continue;
        }
        let (pu, pv) = (u.floor() as usize, v.floor() as usize);
        if pu < w && pv < h {
            map.write_nearest(pu, pv, depth);
        }
    }
    map
}

/// Fills invalid pixels by repeated 3x3 min-dilation until the map is dense.
///
/// Each pass reads only the previous pass, so the result is independent of
/// scan order. Valid input pixels are never modified.
pub fn complete_depth(sparse: &DepthMap) -> Result<DepthMap> {
    if sparse.num_valid() == 0 {
        return Err(Error::EmptyDepthMap);
    }
    let (w, h) = (sparse.width, sparse.height);
    let mut cur = sparse.clone();
    while !cur.is_dense() {
        let prev = cur.clone();
        for u in 0..w {
            for v in 0..h {
                if prev.valid[prev.idx(u, v)] {
                    continue;
                }
                let mut best: Option<f64> = None;
                for nu in u.saturating_sub(1)..=(u + 1).min(w - 1) {
                    for nv in v.saturating_sub(1)..=(v + 1).min(h - 1) {
                        if let Some(d) = prev.get(nu, nv) {
                            best = Some(best.map_or(d, |b| b.min(d)));
                        }
                    }
                }
                if let Some(d) = best {
                    let i = cur.idx(u, v);
                    cur.values[i] = d;
                    cur.valid[i] = true;
                }
            }
        }
    }
    Ok(cur)
}

/// Block-minimum downsampling by an integer factor.
///
/// Only valid pixels take part; a block with none stays invalid.
pub fn downsample_depth(dense: &DepthMap, factor: usize) -> Result<DepthMap> {
    let (w, h) = (dense.width, dense.height);
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::IndivisibleDimensions {
            width: w,
            height: h,
            factor,
        });
    }
    let mut out = DepthMap::empty(w / factor, h / factor);
    for u in 0..w {
        for v in 0..h {
            if let Some(d) = dense.get(u, v) {
                out.write_nearest(u / factor, v / factor, d);
            }
        }
    }
    Ok(out)
}

/// One-hot depth labels, `W x H x K`, stored as hot-bin indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthLabel {
    width: usize,
    height: usize,
    num_bins: usize,
    hot: Vec<usize>,
}

impl DepthLabel {
    pub fn from_indices(width: usize, height: usize, num_bins: usize, hot: Vec<usize>) -> Result<Self> {
        if hot.len() != width * height || width == 0 || height == 0 || num_bins == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} label indices for a {width}x{height} map",
                hot.len()
            )));
        }
        if let Some(&bad) = hot.iter().find(|&&k| k >= num_bins) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                max: num_bins - 1,
            });
        }
        Ok(Self {
            width,
            height,
            num_bins,
            hot,
        })
    }

    /// Reads a one-hot tensor; every pixel must hold exactly one 1 and zeros elsewhere.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        t.expect_rank(3, "depth label")?;
        let k = t.shape()[2];
        let mut hot = Vec::with_capacity(t.len() / k);
        for (p, px) in t.data().chunks(k).enumerate() {
            let mut found = None;
            for (i, v) in px.iter().enumerate() {
                match v.to_f64() {
                    x if x == 1.0 && found.is_none() => found = Some(i),
                    x if x == 0.0 => {}
                    _ => return Err(Error::Format(format!("label pixel {p} is not one-hot"))),
                }
            }
            hot.push(found.ok_or_else(|| Error::Format(format!("label pixel {p} has no hot bin")))?);
        }
        Self::from_indices(t.shape()[0], t.shape()[1], k, hot)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(&[self.width, self.height, self.num_bins]).expect("positive extents");
        let k = self.num_bins;
        for (p, &h) in self.hot.iter().enumerate() {
            t.data_mut()[p * k + h] = T::from_f64(1.0);
        }
        t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Hot bin per pixel in `(u, v)` row-major order.
    pub fn hot_indices(&self) -> &[usize] {
        &self.hot
    }
}

/// One-hot encodes a dense depth map. Out-of-range depths go to the overflow bin.
pub fn one_hot_labels(depth: &DepthMap, disc: &DiscretizationSpec) -> Result<DepthLabel> {
    if !depth.is_dense() {
        return Err(Error::SparseDepthMap);
    }
    let hot = depth
        .values
        .iter()
        .map(|&d| disc.depth_to_bin(d))
        .collect::<Result<Vec<_>>>()?;
    DepthLabel::from_indices(depth.width, depth.height, disc.num_output_bins(), hot)
}

/// Image-space 2D box, `[u_min, u_max) x [v_min, v_max)` pixels.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Box2D {
    pub label: String,
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(label: impl Into<String>, u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self> {
        let b = Self {
            label: label.into(),
            u_min,
            v_min,
            u_max,
            v_max,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.u_min, self.v_min, self.u_max, self.v_max].iter().all(|v| v.is_finite());
        if !finite || self.u_min >= self.u_max || self.v_min >= self.v_max {
            return Err(Error::Format(format!("degenerate box {self:?}")));
        }
        Ok(())
    }
}

/// Reads boxes from CSV with header `label,u_min,v_min,u_max,v_max`.
pub fn read_boxes_csv(reader: impl Read) -> Result<Vec<Box2D>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .map(|rec| {
            let b: Box2D = rec.map_err(|e| Error::Format(format!("box CSV: {e}")))?;
            b.validate()?;
            Ok(b)
        })
        .collect()
}

/// Foreground mask at feature resolution, `W_F x H_F` in `(u, v)` order.
///
/// A feature pixel is foreground when the center of its image block lies
/// inside at least one box (boxes are clamped to the image first).
pub fn foreground_mask(boxes: &[Box2D], image_width: usize, image_height: usize, downsample: usize) -> Result<Vec<bool>> {
    if downsample == 0 || image_width % downsample != 0 || image_height % downsample != 0 {
        return Err(Error::IndivisibleDimensions {
            width: image_width,
            height: image_height,
            factor: downsample,
        });
    }
    let (wf, hf) = (image_width / downsample, image_height / downsample);
    let ds = downsample as f64;
    let mut mask = vec![false; wf * hf];
    for b in boxes {
        let u0 = b.u_min.clamp(0.0, image_width as f64) / ds;
        let u1 = b.u_max.clamp(0.0, image_width as f64) / ds;
        let v0 = b.v_min.clamp(0.0, image_height as f64) / ds;
        let v1 = b.v_max.clamp(0.0, image_height as f64) / ds;
        for u in 0..wf {
            let cu = u as f64 + 0.5;
            if cu < u0 || cu >= u1 {
                continue;
            }
            for v in 0..hf {
                let cv = v as f64 + 0.5;
                if cv >= v0 && cv < v1 {
                    mask[u * hf + v] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Mask as a `W_F x H_F` tensor of 0/1 values.
pub fn mask_to_tensor<T: Scalar>(mask: &[bool], width: usize, height: usize) -> Result<Tensor<T>> {
    Tensor::new(
        vec![width, height],
        mask.iter().map(|&m| T::from_f64(if m { 1.0 } else { 0.0 })).collect(),
    )
}

/// Reads a 0/1 mask tensor; any nonzero entry counts as foreground.
pub fn mask_from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<bool>> {
    t.expect_rank(2, "mask")?;
    Ok(t.data().iter().map(|v| v.to_f64() != 0.0).collect())
}
