use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod commands;
mod config;
mod error;

use args::{CalibArgs, DiscArgs, GridArgs};
use config::Config;

/// Categorical depth distributions and image-to-BEV transforms at desk scale.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
/// failure.
#[derive(Parser, Debug)]
#[command(name = "catbev", version)]
struct Cli {
    /// `key = value` file consulted for any flag not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the depth bins as CSV: index, edge, center, width.
    Discretize {
        #[command(flatten)]
        disc: DiscArgs,
        /// Output CSV; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Softmax the logits and lift features into a frustum grid.
    Lift {
        /// `W x H x K` logits with K = D, or D + 1 with an overflow bin.
        #[arg(long)]
        logits: PathBuf,
        /// `W x H x C` image features.
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        disc: DiscArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Sample a frustum grid into voxels, optionally collapsing to BEV.
    Transform {
        /// `W x H x D x C` frustum grid.
        #[arg(long)]
        frustum: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        disc: DiscArgs,
        /// Stack the vertical axis into channels.
        #[arg(long)]
        collapse: bool,
        /// `(Z*C) x C_out` channel weights; implies --collapse.
        #[arg(long)]
        reduce: Option<PathBuf>,
        /// `C_out` bias for --reduce [default: zeros].
        #[arg(long, requires = "reduce")]
        bias: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Build one-hot depth labels from a point cloud.
    Labels {
        /// KITTI velodyne binary of (x, y, z, reflectance) f32 quadruplets.
        #[arg(long)]
        cloud: PathBuf,
        /// Row-major 4x4 rigid transform applied to the cloud first.
        #[arg(long)]
        transform: Option<PathBuf>,
        /// Also apply the calibration extrinsic, for clouds in the grid frame.
        #[arg(long)]
        grid_frame: bool,
        /// CSV of 2D boxes `label,u_min,v_min,u_max,v_max` for the foreground mask.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        disc: DiscArgs,
        /// One-hot label tensor `W_F x H_F x K`.
        #[arg(long, short)]
        output: PathBuf,
        /// Dense depth map at feature resolution.
        #[arg(long)]
        depth_output: Option<PathBuf>,
        /// Foreground mask `W_F x H_F`; needs --boxes.
        #[arg(long, requires = "boxes")]
        mask_output: Option<PathBuf>,
    },
    /// Print the focal depth loss, or the total loss when detection terms are given.
    Loss {
        /// `W x H x K` depth distribution.
        #[arg(long)]
        dist: PathBuf,
        /// One-hot labels of the same shape.
        #[arg(long)]
        labels: PathBuf,
        /// `W x H` foreground mask.
        #[arg(long)]
        mask: PathBuf,
        /// Foreground weight [default: 3.25].
        #[arg(long)]
        alpha_fg: Option<f64>,
        /// Background weight [default: 0.25].
        #[arg(long)]
        alpha_bg: Option<f64>,
        /// Focusing exponent [default: 2].
        #[arg(long)]
        gamma: Option<f64>,
        /// [default: 3]
        #[arg(long)]
        lambda_depth: Option<f64>,
        /// [default: 1]
        #[arg(long)]
        lambda_cls: Option<f64>,
        /// [default: 2]
        #[arg(long)]
        lambda_reg: Option<f64>,
        /// [default: 0.2]
        #[arg(long)]
        lambda_dir: Option<f64>,
        /// Classification loss value.
        #[arg(long)]
        l_cls: Option<f64>,
        /// Box regression loss value.
        #[arg(long)]
        l_reg: Option<f64>,
        /// Direction loss value.
        #[arg(long)]
        l_dir: Option<f64>,
    },
    /// Write per-bin entropy statistics for foreground and background pixels.
    Entropy {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check every backward pass against central differences.
    Gradcheck {
        /// [default: 0]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a random single-box scene in front of the desk camera.
    Synth {
        /// Directory for the scene files.
        #[arg(long)]
        out_dir: PathBuf,
        /// [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// Distribution blur; 0 gives near one-hot logits [default: 0].
        #[arg(long)]
        sigma: Option<f64>,
        /// Feature channels C [default: 8].
        #[arg(long)]
        channels: Option<usize>,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Run logits and features through to the BEV grid.
    Pipeline {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        #[command(flatten)]
        calib: CalibArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        disc: DiscArgs,
        /// `(Z*C) x C_out` channel weights.
        #[arg(long)]
        reduce: Option<PathBuf>,
        /// `C_out` bias for --reduce [default: zeros].
        #[arg(long, requires = "reduce")]
        bias: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// Also write the frustum grid.
        #[arg(long)]
        dump_frustum: Option<PathBuf>,
        /// Also write the voxel grid.
        #[arg(long)]
        dump_voxels: Option<PathBuf>,
        /// Also write the BEV grid before channel reduction.
        #[arg(long)]
        dump_bev: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> error::CliResult<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Discretize { disc, output } => commands::discretize(&cfg, &disc, output.as_deref()),
        Command::Lift {
            logits,
            features,
            disc,
            output,
        } => commands::lift(&cfg, &logits, &features, &disc, &output),
        Command::Transform {
            frustum,
            calib,
            grid,
            disc,
            collapse,
            reduce,
            bias,
            output,
        } => commands::transform(
            &cfg,
            &frustum,
            &calib,
            &grid,
            &disc,
            collapse,
            commands::ReducePaths::new(reduce, bias),
            &output,
        ),
        Command::Labels {
            cloud,
            transform,
            grid_frame,
            boxes,
            calib,
            disc,
            output,
            depth_output,
            mask_output,
        } => commands::labels(
            &cfg,
            &commands::LabelsJob {
                cloud,
                transform,
                grid_frame,
                boxes,
                output,
                depth_output,
                mask_output,
            },
            &calib,
            &disc,
        ),
        Command::Loss {
            dist,
            labels,
            mask,
            alpha_fg,
            alpha_bg,
            gamma,
            lambda_depth,
            lambda_cls,
            lambda_reg,
            lambda_dir,
            l_cls,
            l_reg,
            l_dir,
        } => {
            let d = catbev_core::LossWeights::default();
            let weights = catbev_core::LossWeights {
                alpha_fg: cfg.pick(alpha_fg, "alpha_fg", d.alpha_fg)?,
                alpha_bg: cfg.pick(alpha_bg, "alpha_bg", d.alpha_bg)?,
                gamma: cfg.pick(gamma, "gamma", d.gamma)?,
                lambda_depth: cfg.pick(lambda_depth, "lambda_depth", d.lambda_depth)?,
                lambda_cls: cfg.pick(lambda_cls, "lambda_cls", d.lambda_cls)?,
                lambda_reg: cfg.pick(lambda_reg, "lambda_reg", d.lambda_reg)?,
                lambda_dir: cfg.pick(lambda_dir, "lambda_dir", d.lambda_dir)?,
            };
            let detection = [l_cls, l_reg, l_dir];
            let detection = detection.iter().any(Option::is_some).then(|| detection.map(|v| v.unwrap_or(0.0)));
            commands::loss(&dist, &labels, &mask, &weights, detection)
        }
        Command::Entropy {
            dist,
            labels,
            mask,
            output,
        } => commands::entropy(&dist, &labels, &mask, output.as_deref()),
        Command::Gradcheck { seed } => commands::gradcheck(cfg.pick(seed, "seed", 0)?),
        Command::Synth {
            out_dir,
            seed,
            sigma,
            channels,
            disc,
        } => commands::synth(
            &out_dir,
            cfg.pick(seed, "seed", 0)?,
            cfg.pick(sigma, "sigma", 0.0)?,
            cfg.pick(channels, "channels", 8)?,
            &disc.resolve(&cfg)?,
        ),
        Command::Pipeline {
            features,
            logits,
            calib,
            grid,
            disc,
            reduce,
            bias,
            output,
            dump_frustum,
            dump_voxels,
            dump_bev,
        } => commands::pipeline(
            &cfg,
            &features,
            &logits,
            (&calib, &grid, &disc),
            commands::ReducePaths::new(reduce, bias),
            &output,
            [dump_frustum, dump_voxels, dump_bev],
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("catbev: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
