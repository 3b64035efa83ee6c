//! Seeded inputs at the desk camera scale shared by the benchmarks.

use catbev_core::synth::{desk_camera, desk_grid};
use catbev_core::{CameraCalibration, DiscretizationSpec, GridSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHANNELS: usize = 8;
pub const BINS: usize = 16;

pub struct Workload {
    pub calib: CameraCalibration,
    pub disc: DiscretizationSpec,
    pub grid: GridSpec,
    /// `W_F x H_F x (D + 1)`.
    pub logits: Tensor<f32>,
    /// `W_F x H_F x C`.
    pub features: Tensor<f32>,
}

impl Workload {
    pub fn desk(seed: u64) -> Self {
        let calib = desk_camera();
        let disc = DiscretizationSpec::kitti_lid(BINS).expect("valid bins");
        let (w, h) = (calib.feature_width(), calib.feature_height());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random(&mut rng, &[w, h, disc.num_output_bins()], -4.0, 4.0);
        let features = random(&mut rng, &[w, h, CHANNELS], -1.0, 1.0);
        Self {
            calib,
            disc,
            grid: desk_grid(),
            logits,
            features,
        }
    }

    /// Same camera and bins over the full 0.16 m KITTI grid.
    pub fn kitti_grid(seed: u64) -> Self {
        Self {
            grid: GridSpec::kitti(),
            ..Self::desk(seed)
        }
    }
}

pub fn random(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).expect("positive extents")
}
