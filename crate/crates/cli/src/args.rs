//! Argument groups shared by several subcommands.

use std::path::PathBuf;
use std::str::FromStr;

use catbev_core::geometry::{KittiCalibFile, LIDAR_TO_CAMERA_AXES};
use catbev_core::synth::desk_camera;
use catbev_core::{CameraCalibration, DiscretizationMode, DiscretizationSpec, GridSpec};
use clap::Args;

use crate::config::Config;
use crate::error::{CliError, CliResult};

/// `lo,hi` pair in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range2(pub [f64; 2]);

impl FromStr for Range2 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts = parse_floats(s)?;
        match parts[..] {
            [lo, hi] => Ok(Range2([lo, hi])),
            _ => Err(format!("expected `min,max`, got `{s}`")),
        }
    }
}

/// One edge length for cubic voxels, or `x,y,z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelSize(pub [f64; 3]);

impl FromStr for VoxelSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts = parse_floats(s)?;
        match parts[..] {
            [v] => Ok(VoxelSize([v; 3])),
            [x, y, z] => Ok(VoxelSize([x, y, z])),
            _ => Err(format!("expected one or three sizes, got `{s}`")),
        }
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

/// Grid-to-camera transform applied before projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrinsic {
    Identity,
    /// Axis swap from a forward-left-up frame to camera axes.
    Lidar,
    /// `R0_rect * Tr_velo_to_cam` from the calibration file.
    Kitti,
}

impl FromStr for Extrinsic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "lidar" => Ok(Self::Lidar),
            "kitti" => Ok(Self::Kitti),
            _ => Err(format!("unknown extrinsic `{s}` (expected identity, lidar or kitti)")),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct DiscArgs {
    /// Bin spacing: ud, sid or lid [default: lid].
    #[arg(long)]
    pub mode: Option<DiscretizationMode>,
    /// Nearest binned depth in meters [default: 2].
    #[arg(long)]
    pub d_min: Option<f64>,
    /// Farthest binned depth in meters [default: 46.8].
    #[arg(long)]
    pub d_max: Option<f64>,
    /// Number of depth bins D [default: 16].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Append a bin for depths outside the range [default: true].
    #[arg(long)]
    pub overflow_bin: Option<bool>,
}

impl DiscArgs {
    pub fn resolve(&self, cfg: &Config) -> CliResult<DiscretizationSpec> {
        Ok(DiscretizationSpec::new(
            cfg.pick(self.mode, "mode", DiscretizationMode::LinearIncreasing)?,
            cfg.pick(self.d_min, "d_min", 2.0)?,
            cfg.pick(self.d_max, "d_max", 46.8)?,
            cfg.pick(self.bins, "bins", 16)?,
            cfg.pick(self.overflow_bin, "overflow_bin", true)?,
        )?)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Forward range `min,max` in meters [default: 2,46.8].
    #[arg(long)]
    pub x_range: Option<Range2>,
    /// Lateral range [default: -30.08,30.08].
    #[arg(long, allow_hyphen_values = true)]
    pub y_range: Option<Range2>,
    /// Vertical range [default: -3,1].
    #[arg(long, allow_hyphen_values = true)]
    pub z_range: Option<Range2>,
    /// Voxel edge length, or `x,y,z` [default: 0.16].
    #[arg(long)]
    pub voxel_size: Option<VoxelSize>,
}

impl GridArgs {
    pub fn resolve(&self, cfg: &Config) -> CliResult<GridSpec> {
        let k = GridSpec::kitti();
        Ok(GridSpec::new(
            cfg.pick(self.x_range, "x_range", Range2(k.x_range))?.0,
            cfg.pick(self.y_range, "y_range", Range2(k.y_range))?.0,
            cfg.pick(self.z_range, "z_range", Range2(k.z_range))?.0,
            cfg.pick(self.voxel_size, "voxel_size", VoxelSize(k.voxel_size))?.0,
        )?)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct CalibArgs {
    /// KITTI calibration file; without it the built-in 640x192 desk camera is used.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Projection matrix key in the calibration file [default: P2].
    #[arg(long)]
    pub calib_key: Option<String>,
    /// Image width in pixels [default: 1240 with a file, 640 without].
    #[arg(long)]
    pub image_width: Option<usize>,
    /// Image height in pixels [default: 372 with a file, 192 without].
    #[arg(long)]
    pub image_height: Option<usize>,
    /// Image-to-feature downsampling factor [default: 4].
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Grid-to-camera transform: identity, lidar or kitti [default: kitti with a file, lidar without].
    #[arg(long)]
    pub extrinsic: Option<Extrinsic>,
}

impl CalibArgs {
    pub fn resolve(&self, cfg: &Config) -> CliResult<CameraCalibration> {
        let path = cfg.pick_opt(self.calib.clone(), "calib")?;
        let file = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::from(e).at(p))?;
                Some(KittiCalibFile::parse(&text))
            }
            None => None,
        };
        let (projection, w, h, ext) = match &file {
            Some(f) => {
                let key = cfg.pick(self.calib_key.clone(), "calib_key", "P2".to_string())?;
                (f.matrix_3x4(&key)?, 1240, 372, Extrinsic::Kitti)
            }
            None => {
                let p = desk_camera().projection().clone();
                (std::array::from_fn(|r| std::array::from_fn(|c| p[(r, c)])), 640, 192, Extrinsic::Lidar)
            }
        };
        let transform = match cfg.pick(self.extrinsic, "extrinsic", ext)? {
            Extrinsic::Identity => IDENTITY,
            Extrinsic::Lidar => LIDAR_TO_CAMERA_AXES,
            Extrinsic::Kitti => match &file {
                Some(f) => f.velo_to_rect()?,
                None => return Err(CliError::Config("the kitti extrinsic needs --calib".into())),
            },
        };
        let calib = CameraCalibration::new(
            projection,
            cfg.pick(self.image_width, "image_width", w)?,
            cfg.pick(self.image_height, "image_height", h)?,
            cfg.pick(self.downsample, "downsample", 4)?,
        )?;
        Ok(calib.with_grid_to_camera(transform)?)
    }
}

pub const IDENTITY: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];
