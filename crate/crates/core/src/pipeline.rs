//! End-to-end composition: softmax, overflow removal, lift, frustum-to-voxel,
//! BEV collapse and optional channel reduction.

use crate::discretization::DiscretizationSpec;
use crate::error::{Error, Result};
use crate::frustum::{drop_overflow_bin, lift, softmax_normalize, FrustumGrid};
use crate::geometry::{CameraCalibration, GridSpec};
use crate::grid_transform::{channel_reduce, collapse_to_bev, BevGrid, VoxelGrid, VoxelSampler};
use crate::tensor::{Scalar, Tensor};

/// Supplied 1x1 channel map: `C_in x C_out` weights and `C_out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReduce<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Pipeline<T = f32> {
    disc: DiscretizationSpec,
    sampler: VoxelSampler,
    reduce: Option<ChannelReduce<T>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T = f32> {
    pub bev: BevGrid<T>,
    pub frustum: Option<FrustumGrid<T>>,
    pub voxels: Option<VoxelGrid<T>>,
    /// BEV before channel reduction.
    pub bev_collapsed: Option<BevGrid<T>>,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(
        calib: &CameraCalibration,
        disc: &DiscretizationSpec,
        grid: &GridSpec,
        reduce: Option<ChannelReduce<T>>,
    ) -> Result<Self> {
        Ok(Self {
            disc: *disc,
            sampler: VoxelSampler::new(calib, disc, grid)?,
            reduce,
        })
    }

    pub fn sampler(&self) -> &VoxelSampler {
        &self.sampler
    }

    /// Runs the whole chain. With `keep_intermediates`, the frustum, voxel
    /// and collapsed BEV tensors are returned as well.
    pub fn run(&self, features: &Tensor<T>, logits: &Tensor<T>, keep_intermediates: bool) -> Result<PipelineOutput<T>> {
        let expected = self.disc.num_output_bins();
        if logits.ndim() != 3 || logits.shape()[2] != expected {
            return Err(Error::WrongBinCount {
                expected,
                found: logits.shape().last().copied().unwrap_or(0),
            });
        }
        let dist = softmax_normalize(logits)?;
        let dist = if self.disc.has_overflow_bin() {
            drop_overflow_bin(&dist, self.disc.num_bins())?
        } else {
            dist
        };
        let frustum = lift(&dist, features)?;
        let voxels = self.sampler.forward(&frustum)?;
        let collapsed = collapse_to_bev(&voxels)?;
        let bev = match &self.reduce {
            Some(r) => channel_reduce(&collapsed, &r.weights, &r.bias)?,
            None => collapsed.clone(),
        };
        Ok(if keep_intermediates {
            PipelineOutput {
                bev,
                frustum: Some(frustum),
                voxels: Some(voxels),
                bev_collapsed: Some(collapsed),
            }
        } else {
            PipelineOutput {
                bev,
                frustum: None,
                voxels: None,
                bev_collapsed: None,
            }
        })
    }
}
