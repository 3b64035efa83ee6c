use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use catbev_core::diagnostics::{entropy_report, gradcheck_suite};
use catbev_core::frustum::{drop_overflow_bin, softmax_normalize};
use catbev_core::grid_transform::{channel_reduce, collapse_to_bev};
use catbev_core::labels::{
    complete_depth, downsample_depth, foreground_mask, mask_from_tensor, mask_to_tensor, one_hot_labels,
    parse_transform, project_cloud, read_boxes_csv,
};
use catbev_core::losses::{depth_loss, total_loss};
use catbev_core::synth::random_single_box_scene;
use catbev_core::tensor_file::{self, AnyTensor};
use catbev_core::{
    ChannelReduce, DepthDistribution, DepthLabel, DiscretizationSpec, FrustumGrid, LossWeights, Pipeline,
    PointCloud, Scalar, Tensor, VoxelSampler,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{CalibArgs, DiscArgs, GridArgs};
use crate::config::Config;
use crate::error::{CliError, CliResult};

fn read_tensor(path: &Path) -> CliResult<AnyTensor> {
    tensor_file::load(path).map_err(|e| CliError::from(e).at(path))
}

fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> CliResult<()> {
    if let Some(i) = t.data().iter().position(|v| !v.to_f64().is_finite()) {
        return Err(CliError::Numeric(format!("non-finite output at flat index {i}")).at(path));
    }
    tensor_file::save(path, t).map_err(|e| CliError::from(e).at(path))
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::from(e).at(p)),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

/// Decimal rendering with nine significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{:.8}", v.abs());
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding can carry into a new leading digit, e.g. 9.999999999 -> 10.00000000.
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    if decimals > 0 && digits.trim_start_matches('0').len() > 9 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

pub fn discretize(cfg: &Config, disc: &DiscArgs, output: Option<&Path>) -> CliResult<()> {
    let disc = disc.resolve(cfg)?;
    let mut csv = String::from("index,edge,center,width\n");
    for i in 0..disc.num_bins() {
        let _ = writeln!(
            csv,
            "{i},{},{},{}",
            disc.bin_edge(i)?,
            disc.bin_center(i)?,
            disc.bin_width(i)?
        );
    }
    write_text(output, &csv)
}

fn distribution<T: Scalar>(logits: &Tensor<T>, disc: &DiscretizationSpec) -> CliResult<DepthDistribution<T>> {
    let found = logits.shape().last().copied().unwrap_or(0);
    if logits.ndim() != 3 || found != disc.num_output_bins() {
        return Err(catbev_core::Error::WrongBinCount {
            expected: disc.num_output_bins(),
            found,
        }
        .into());
    }
    let dist = softmax_normalize(logits)?;
    Ok(if disc.has_overflow_bin() {
        drop_overflow_bin(&dist, disc.num_bins())?
    } else {
        dist
    })
}

pub fn lift(cfg: &Config, logits: &Path, features: &Path, disc: &DiscArgs, output: &Path) -> CliResult<()> {
    fn run<T: Scalar>(logits: Tensor<T>, features: Tensor<T>, disc: &DiscretizationSpec, output: &Path) -> CliResult<()> {
        let g = catbev_core::frustum::lift(&distribution(&logits, disc)?, &features)?;
        write_tensor(output, g.values())
    }
    let disc = disc.resolve(cfg)?;
    let features = read_tensor(features)?;
    match read_tensor(logits)? {
        AnyTensor::F32(l) => run(l, features.into_tensor(), &disc, output),
        AnyTensor::F64(l) => run(l, features.into_tensor(), &disc, output),
    }
}

/// Weight and optional bias files for the BEV channel map.
pub struct ReducePaths(Option<(PathBuf, Option<PathBuf>)>);

impl ReducePaths {
    pub fn new(weights: Option<PathBuf>, bias: Option<PathBuf>) -> Self {
        Self(weights.map(|w| (w, bias)))
    }

    fn load<T: Scalar>(&self) -> CliResult<Option<ChannelReduce<T>>> {
        let Some((w, b)) = &self.0 else {
            return Ok(None);
        };
        let weights: Tensor<T> = read_tensor(w)?.into_tensor();
        let bias = match b {
            Some(b) => read_tensor(b)?.into_tensor(),
            None => Tensor::zeros(&[weights.shape().last().copied().unwrap_or(0)])?,
        };
        Ok(Some(ChannelReduce { weights, bias }))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn transform(
    cfg: &Config,
    frustum: &Path,
    calib: &CalibArgs,
    grid: &GridArgs,
    disc: &DiscArgs,
    collapse: bool,
    reduce: ReducePaths,
    output: &Path,
) -> CliResult<()> {
    fn run<T: Scalar>(
        frustum: Tensor<T>,
        sampler: &VoxelSampler,
        collapse: bool,
        reduce: &ReducePaths,
        output: &Path,
    ) -> CliResult<()> {
        let reduce = reduce.load::<T>()?;
        let voxels = sampler.forward(&FrustumGrid::new(frustum)?)?;
        if !collapse && reduce.is_none() {
            return write_tensor(output, voxels.values());
        }
        let bev = collapse_to_bev(&voxels)?;
        let bev = match reduce {
            Some(r) => channel_reduce(&bev, &r.weights, &r.bias)?,
            None => bev,
        };
        write_tensor(output, bev.values())
    }
    let sampler = VoxelSampler::new(&calib.resolve(cfg)?, &disc.resolve(cfg)?, &grid.resolve(cfg)?)?;
    match read_tensor(frustum)? {
        AnyTensor::F32(f) => run(f, &sampler, collapse, &reduce, output),
        AnyTensor::F64(f) => run(f, &sampler, collapse, &reduce, output),
    }
}

pub struct LabelsJob {
    pub cloud: PathBuf,
    pub transform: Option<PathBuf>,
    pub grid_frame: bool,
    pub boxes: Option<PathBuf>,
    pub output: PathBuf,
    pub depth_output: Option<PathBuf>,
    pub mask_output: Option<PathBuf>,
}

pub fn labels(cfg: &Config, job: &LabelsJob, calib: &CalibArgs, disc: &DiscArgs) -> CliResult<()> {
    let calib = calib.resolve(cfg)?;
    let disc = disc.resolve(cfg)?;
    let file = File::open(&job.cloud).map_err(|e| CliError::from(e).at(&job.cloud))?;
    let mut cloud = PointCloud::read_from(BufReader::new(file)).map_err(|e| CliError::from(e).at(&job.cloud))?;
    if let Some(t) = &job.transform {
        let text = std::fs::read_to_string(t).map_err(|e| CliError::from(e).at(t))?;
        cloud = cloud.transformed(&parse_transform(&text).map_err(|e| CliError::from(e).at(t))?);
    }
    if job.grid_frame {
        let m = calib.grid_to_camera();
        cloud = cloud.transformed(&std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])));
    }
    let sparse = project_cloud(&calib, &cloud);
    let dense = downsample_depth(&complete_depth(&sparse)?, calib.feature_downsample())?;
    let labels = one_hot_labels(&dense, &disc)?;
    write_tensor(&job.output, &labels.to_tensor::<f32>())?;
    if let Some(p) = &job.depth_output {
        write_tensor(p, &dense.to_tensor::<f32>())?;
    }
    if let (Some(b), Some(p)) = (&job.boxes, &job.mask_output) {
        let file = File::open(b).map_err(|e| CliError::from(e).at(b))?;
        let boxes = read_boxes_csv(BufReader::new(file)).map_err(|e| CliError::from(e).at(b))?;
        let mask = foreground_mask(&boxes, calib.image_width(), calib.image_height(), calib.feature_downsample())?;
        write_tensor(p, &mask_to_tensor::<f32>(&mask, calib.feature_width(), calib.feature_height())?)?;
    }
    Ok(())
}

fn scored_inputs(dist: &Path, labels: &Path, mask: &Path) -> CliResult<(DepthDistribution<f64>, DepthLabel, Vec<bool>)> {
    let d = DepthDistribution::new(read_tensor(dist)?.into_tensor::<f64>()).map_err(|e| CliError::from(e).at(dist))?;
    let l = DepthLabel::from_tensor(&read_tensor(labels)?.into_tensor::<f64>()).map_err(|e| CliError::from(e).at(labels))?;
    let m = mask_from_tensor(&read_tensor(mask)?.into_tensor::<f64>()).map_err(|e| CliError::from(e).at(mask))?;
    Ok((d, l, m))
}

pub fn loss(dist: &Path, labels: &Path, mask: &Path, weights: &LossWeights, detection: Option<[f64; 3]>) -> CliResult<()> {
    weights.validate()?;
    let (d, l, m) = scored_inputs(dist, labels, mask)?;
    let mut value = depth_loss(&d, &l, &m, weights)?;
    if let Some([cls, reg, dir]) = detection {
        value = total_loss(value, cls, reg, dir, weights)?;
    }
    if !value.is_finite() {
        return Err(CliError::Numeric(format!("loss evaluated to {value}")));
    }
    println!("{}", format_sig9(value));
    Ok(())
}

pub fn entropy(dist: &Path, labels: &Path, mask: &Path, output: Option<&Path>) -> CliResult<()> {
    let (d, l, m) = scored_inputs(dist, labels, mask)?;
    write_text(output, &entropy_report(&d, &l, &m)?.to_csv())
}

pub fn gradcheck(seed: u64) -> CliResult<()> {
    let rows = gradcheck_suite(seed)?;
    let width = rows.iter().map(|r| r.op.len()).max().unwrap_or(2).max(2);
    println!("{:width$}  {:>13}  status", "op", "max_rel_error");
    for r in &rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{:width$}  {:>13.3e}  {status}", r.op, r.max_rel_error);
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} of {} gradient checks failed", rows.len())));
    }
    Ok(())
}

pub fn synth(out_dir: &Path, seed: u64, sigma: f64, channels: usize, disc: &DiscretizationSpec) -> CliResult<()> {
    if channels == 0 {
        return Err(CliError::Config("channels must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_single_box_scene(&mut rng, disc, channels, sigma)?;
    let r = scene.render(disc)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::from(e).at(out_dir))?;
    let calib = &scene.calib;
    let (wf, hf) = (calib.feature_width(), calib.feature_height());
    write_tensor(&out_dir.join("features.tensor"), &r.features)?;
    write_tensor(&out_dir.join("logits.tensor"), &r.logits)?;
    write_tensor(&out_dir.join("depth.tensor"), &r.depth.to_tensor::<f32>())?;
    write_tensor(&out_dir.join("mask.tensor"), &mask_to_tensor::<f32>(&r.fg_mask, wf, hf)?)?;
    write_tensor(&out_dir.join("labels.tensor"), &one_hot_labels(&r.depth, disc)?.to_tensor::<f32>())?;
    let cloud_path = out_dir.join("cloud.bin");
    std::fs::write(&cloud_path, r.cloud.to_le_bytes()).map_err(|e| CliError::from(e).at(&cloud_path))?;
    let mut csv = String::from("label,u_min,v_min,u_max,v_max\n");
    for b in &r.boxes_2d {
        let _ = writeln!(csv, "{},{},{},{},{}", b.label, b.u_min, b.v_min, b.u_max, b.v_max);
    }
    write_text(Some(&out_dir.join("boxes.csv")), &csv)?;
    let b = &scene.boxes[0];
    println!(
        "box center ({:.3}, {:.3}, {:.3}) m, extents ({:.3}, {:.3}, {:.3}) m",
        b.center[0], b.center[1], b.center[2], b.extents[0], b.extents[1], b.extents[2]
    );
    Ok(())
}

pub fn pipeline(
    cfg: &Config,
    features: &Path,
    logits: &Path,
    (calib, grid, disc): (&CalibArgs, &GridArgs, &DiscArgs),
    reduce: ReducePaths,
    output: &Path,
    dumps: [Option<PathBuf>; 3],
) -> CliResult<()> {
    fn run<T: Scalar>(
        logits: Tensor<T>,
        features: Tensor<T>,
        calib: &catbev_core::CameraCalibration,
        grid: &catbev_core::GridSpec,
        disc: &DiscretizationSpec,
        reduce: &ReducePaths,
        output: &Path,
        dumps: &[Option<PathBuf>; 3],
    ) -> CliResult<()> {
        let p = Pipeline::new(calib, disc, grid, reduce.load::<T>()?)?;
        let out = p.run(&features, &logits, dumps.iter().any(Option::is_some))?;
        write_tensor(output, out.bev.values())?;
        let [g, v, b] = dumps;
        if let (Some(path), Some(t)) = (g, &out.frustum) {
            write_tensor(path, t.values())?;
        }
        if let (Some(path), Some(t)) = (v, &out.voxels) {
            write_tensor(path, t.values())?;
        }
        if let (Some(path), Some(t)) = (b, &out.bev_collapsed) {
            write_tensor(path, t.values())?;
        }
        Ok(())
    }
    let (calib, grid, disc) = (calib.resolve(cfg)?, grid.resolve(cfg)?, disc.resolve(cfg)?);
    let features = read_tensor(features)?;
    match read_tensor(logits)? {
        AnyTensor::F32(l) => run(l, features.into_tensor(), &calib, &grid, &disc, &reduce, output, &dumps),
        AnyTensor::F64(l) => run(l, features.into_tensor(), &calib, &grid, &disc, &reduce, output, &dumps),
    }
}

#[cfg(test)]
mod tests {
    use super::format_sig9;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(6.2), "6.20000000");
        assert_eq!(format_sig9(0.0433216987), "0.0433216987");
        assert_eq!(format_sig9(1234.5678912), "1234.56789");
        assert_eq!(format_sig9(9.9999999999), "10.0000000");
        assert_eq!(format_sig9(-0.0), "0.00000000");
        assert_eq!(format_sig9(-2.5e-4), "-0.000250000000");
    }
}
