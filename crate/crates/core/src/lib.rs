//! Categorical depth distributions and the image-to-bird's-eye-view transform.
//!
//! The crate turns per-pixel depth logits and image features into a
//! bird's-eye-view feature grid:
//!
//! ```text
//! logits --softmax--> distribution --drop overflow--> lift (outer product) --> frustum grid
//! frustum grid --project voxel centers + trilinear sampling--> voxel grid --collapse z--> BEV --1x1 affine + ReLU--> BEV
//! ```
//!
//! Every differentiable stage has an analytic backward pass, checked against
//! central finite differences in [`diagnostics::gradcheck`]. Depth labels are
//! generated from LiDAR point clouds in [`labels`]; the focal depth loss lives
//! in [`losses`].
//!
//! Numerics run in `f64` internally. Tensors are stored as `f32` by default,
//! with `f64` tensors available for gradient verification.

pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod frustum;
pub mod geometry;
pub mod grid_transform;
pub mod labels;
pub mod losses;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod tensor_file;

mod reduce;

pub use discretization::{DiscretizationMode, DiscretizationSpec};
pub use error::{Error, ErrorKind, Result};
pub use frustum::{DepthDistribution, FrustumGrid};
pub use geometry::{CameraCalibration, GridSpec};
pub use grid_transform::{BevGrid, SamplePoints, VoxelGrid, VoxelSampler};
pub use labels::{Box2D, DepthLabel, DepthMap, PointCloud};
pub use losses::LossWeights;
pub use pipeline::{ChannelReduce, Pipeline, PipelineOutput};

pub use tensor::{DType, Scalar, Tensor};
