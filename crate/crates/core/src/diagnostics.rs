//! Distribution entropy statistics and finite-difference gradient checks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretization::{DiscretizationMode, DiscretizationSpec};
use crate::error::{Error, Result};
use crate::frustum::{drop_overflow_bin, drop_overflow_bin_backward, lift, lift_backward, softmax_backward, softmax_normalize, DepthDistribution, FrustumGrid};
use crate::geometry::{CameraCalibration, GridSpec};
use crate::grid_transform::{collapse_to_bev, trilinear_sample, trilinear_sample_backward, SamplePoints, VoxelSampler};
use crate::labels::DepthLabel;
use crate::losses::{depth_loss, depth_loss_backward, LossWeights};
use crate::tensor::{Scalar, Tensor};

const NORMALIZATION_TOL: f64 = 1e-3;

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn shannon_entropy<T: Scalar>(dist: &[T]) -> Result<f64> {
    let mut sum = 0.0;
    let mut h = 0.0;
    for &p in dist {
        let p = p.to_f64();
        if !(p >= 0.0) {
            return Err(Error::NotNormalized(p));
        }
        sum += p;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(sum));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PixelGroup {
    Background,
    Foreground,
}

impl PixelGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            PixelGroup::Background => "background",
            PixelGroup::Foreground => "foreground",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub gt_bin: usize,
    pub group: PixelGroup,
    pub count: usize,
    pub mean_entropy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Entropy statistics grouped by ground-truth bin and foreground flag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntropyReport {
    pub rows: Vec<EntropyRow>,
}

impl EntropyReport {
    pub fn total_count(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gt_bin,group,count,mean_entropy,ci_low,ci_high\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.gt_bin,
                r.group.as_str(),
                r.count,
                r.mean_entropy,
                r.ci_low,
                r.ci_high
            );
        }
        out
    }
}

/// Mean entropy with a normal-approximation 95% interval per (bin, group).
///
/// Groups with fewer than two pixels report an interval collapsed on the mean.
pub fn entropy_report<T: Scalar>(
    dists: &DepthDistribution<T>,
    labels: &DepthLabel,
    fg: &[bool],
) -> Result<EntropyReport> {
    let shape = [labels.width(), labels.height(), labels.num_bins()];
    if dists.values().shape() != shape || fg.len() != labels.width() * labels.height() {
        return Err(Error::ShapeMismatch(format!(
            "distributions {:?}, labels {:?}, mask of {} pixels",
            dists.values().shape(),
            shape,
            fg.len()
        )));
    }
    let k = labels.num_bins();
    let mut groups: BTreeMap<(usize, PixelGroup), Vec<f64>> = BTreeMap::new();
    for (p, (&hot, &is_fg)) in labels.hot_indices().iter().zip(fg).enumerate() {
        let h = shannon_entropy(&dists.values().data()[p * k..(p + 1) * k])?;
        let group = if is_fg { PixelGroup::Foreground } else { PixelGroup::Background };
        groups.entry((hot, group)).or_default().push(h);
    }
    let rows = groups
        .into_iter()
        .map(|((gt_bin, group), hs)| {
            let n = hs.len() as f64;
            let mean = hs.iter().sum::<f64>() / n;
            let half = if hs.len() < 2 {
                0.0
            } else {
                let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0);
                1.96 * var.sqrt() / n.sqrt()
            };
            EntropyRow {
                gt_bin,
                group,
                count: hs.len(),
                mean_entropy: mean,
                ci_low: mean - half,
                ci_high: mean + half,
            }
        })
        .collect();
    Ok(EntropyReport { rows })
}

/// Relative step used by the gradient checks.
pub const GRADCHECK_EPS: f64 = 1e-3;
/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Floor on the coordinate scale in the step size.
pub const GRADCHECK_MIN_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// Coordinate `i` is perturbed by `eps * max(|x_i|, GRADCHECK_MIN_SCALE)`. The
/// error at each coordinate is `|g_num - g_an| / max(|g_num|, |g_an|, 1e-8)`.
pub fn gradcheck(
    f: impl Fn(&Tensor<f64>) -> Result<f64>,
    analytic: &Tensor<f64>,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<GradCheck> {
    if analytic.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "analytic gradient {:?} vs input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    let mut probe = x.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..x.len() {
        let xi = x.data()[i];
        let h = eps * xi.abs().max(GRADCHECK_MIN_SCALE);
        probe.data_mut()[i] = xi + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = xi - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = xi;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteEvaluation(i));
        }
        let numeric = (up - down) / (2.0 * h);
        let an = analytic.data()[i];
        let err = (numeric - an).abs() / numeric.abs().max(an.abs()).max(1e-8);
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).expect("positive extents")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn as_dist(t: &Tensor<f64>) -> Result<DepthDistribution<f64>> {
    DepthDistribution::new(t.clone())
}

fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out
}

/// Runs every backward operation against central differences on random
/// `3 x 3` pixel inputs with `D = 4` bins and `C = 2` channels.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, d, c) = (3usize, 3usize, 4usize, 2usize);
    let k = d + 1;
    let eps = GRADCHECK_EPS;
    let mut rows = Vec::new();
    let mut push = |op: &'static str, r: GradCheck| {
        rows.push(GradCheckRow {
            op,
            max_rel_error: r.max_rel_error,
            passed: r.max_rel_error <= GRADCHECK_TOL,
        })
    };

    // softmax
    let logits = random_tensor(&mut rng, &[w, h, k], -2.0, 2.0);
    let up_k = random_tensor(&mut rng, &[w, h, k], -1.0, 1.0);
    let p = softmax_normalize(&logits)?;
    let an = softmax_backward(&p, &up_k)?;
    push(
        "softmax_backward",
        gradcheck(|x| Ok(dot(softmax_normalize(x)?.values(), &up_k)), &an, &logits, eps)?,
    );

    // lift, both inputs
    let dist = random_tensor(&mut rng, &[w, h, d], 0.05, 0.95);
    let feats = random_tensor(&mut rng, &[w, h, c], -1.5, 1.5);
    let up_g = random_tensor(&mut rng, &[w, h, d, c], -1.0, 1.0);
    let (gd, gf) = lift_backward(&as_dist(&dist)?, &feats, &up_g)?;
    push(
        "lift_backward[dist]",
        gradcheck(|x| Ok(dot(lift(&as_dist(x)?, &feats)?.values(), &up_g)), &gd, &dist, eps)?,
    );
    push(
        "lift_backward[features]",
        gradcheck(|x| Ok(dot(lift(&as_dist(&dist)?, x)?.values(), &up_g)), &gf, &feats, eps)?,
    );

    // trilinear sampling w.r.t. frustum values
    let frustum = random_tensor(&mut rng, &[w, h, d, c], -1.0, 1.0);
    let n = 24;
    let coords: Vec<f64> = (0..n)
        .flat_map(|_| {
            [
                rng.gen_range(-0.4..w as f64 - 0.6),
                rng.gen_range(-0.4..h as f64 - 0.6),
                rng.gen_range(-0.4..d as f64 - 0.6),
            ]
        })
        .collect();
    let mask = (0..n).map(|i| i % 5 != 4).collect();
    let points = SamplePoints {
        coords: Tensor::new(vec![n, 3], coords)?,
        mask,
    };
    let up_s = random_tensor(&mut rng, &[n, c], -1.0, 1.0);
    let an = trilinear_sample_backward([w, h, d, c], &points, &up_s)?;
    push(
        "trilinear_sample_backward",
        gradcheck(
            |x| Ok(dot(&trilinear_sample(&FrustumGrid::new(x.clone())?, &points)?, &up_s)),
            &an,
            &frustum,
            eps,
        )?,
    );

    // focal depth loss
    let weights = LossWeights::default();
    // The focal gradient vanishes like (1 - p) as p -> 1 while the central
    // difference error does not, so predictions stay below 0.9.
    let pred = random_tensor(&mut rng, &[w, h, k], 0.05, 0.9);
    let hot: Vec<usize> = (0..w * h).map(|_| rng.gen_range(0..k)).collect();
    let labels = DepthLabel::from_indices(w, h, k, hot)?;
    let fg: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
    let an = depth_loss_backward(&as_dist(&pred)?, &labels, &fg, &weights)?;
    push(
        "depth_loss_backward",
        gradcheck(|x| depth_loss(&as_dist(x)?, &labels, &fg, &weights), &an, &pred, eps)?,
    );

    // depth_loss(softmax(l)) + <lift(drop(softmax(l)), F), U>
    let composed = |l: &Tensor<f64>, f: &Tensor<f64>| -> Result<f64> {
        let p = softmax_normalize(l)?;
        let g = lift(&drop_overflow_bin(&p, d)?, f)?;
        Ok(depth_loss(&p, &labels, &fg, &weights)? + dot(g.values(), &up_g))
    };
    let composed_grad = |l: &Tensor<f64>, f: &Tensor<f64>, up: &Tensor<f64>| -> Result<(Tensor<f64>, Tensor<f64>)> {
        let p = softmax_normalize(l)?;
        let dropped = drop_overflow_bin(&p, d)?;
        let (g_dist, g_feat) = lift_backward(&dropped, f, up)?;
        let g_p = add(&depth_loss_backward(&p, &labels, &fg, &weights)?, &drop_overflow_bin_backward(&g_dist)?);
        Ok((softmax_backward(&p, &g_p)?, g_feat))
    };
    let (gl, gf) = composed_grad(&logits, &feats, &up_g)?;
    push("pipeline[logits]", gradcheck(|x| composed(x, &feats), &gl, &logits, eps)?);
    push("pipeline[features]", gradcheck(|x| composed(&logits, x), &gf, &feats, eps)?);

    // Same composition continued through frustum-to-voxel and BEV collapse.
    let calib = CameraCalibration::new(
        [[2.0, 0.0, 3.0, 0.0], [0.0, 2.0, 3.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        6,
        6,
        2,
    )?;
    let disc = DiscretizationSpec::new(DiscretizationMode::LinearIncreasing, 2.0, 10.0, d, false)?;
    let grid = GridSpec::new([-2.0, 2.0], [-2.0, 2.0], [2.0, 10.0], [1.0, 1.0, 1.0])?;
    let sampler = VoxelSampler::new(&calib, &disc, &grid)?;
    let [gx, gy, gz] = grid.dims();
    let up_bev = random_tensor(&mut rng, &[gx, gy, gz * c], -1.0, 1.0);
    let bev_objective = |l: &Tensor<f64>, f: &Tensor<f64>| -> Result<f64> {
        let p = softmax_normalize(l)?;
        let g = lift(&drop_overflow_bin(&p, d)?, f)?;
        let bev = collapse_to_bev(&sampler.forward(&g)?)?;
        Ok(depth_loss(&p, &labels, &fg, &weights)? + dot(bev.values(), &up_bev))
    };
    let up_vox = up_bev.clone().reshape(vec![gx, gy, gz, c])?;
    let up_frustum = sampler.backward(c, &up_vox)?;
    let (gl, gf) = composed_grad(&logits, &feats, &up_frustum)?;
    push("bev_pipeline[logits]", gradcheck(|x| bev_objective(x, &feats), &gl, &logits, eps)?);
    push("bev_pipeline[features]", gradcheck(|x| bev_objective(&logits, x), &gf, &feats, eps)?);

    Ok(rows)
}

/// Fraction of valid voxel pairs whose nearest frustum node coincides, i.e.
/// pairs that read identical features under nearest-node sampling.
pub fn shared_node_pair_fraction(points: &SamplePoints) -> f64 {
    let mut counts: HashMap<[i64; 3], u64> = HashMap::new();
    let mut valid = 0u64;
    for n in 0..points.len() {
        if !points.mask[n] {
            continue;
        }
        valid += 1;
        let node = points.point(n).map(|x| x.round() as i64);
        *counts.entry(node).or_default() += 1;
    }
    if valid < 2 {
        return 0.0;
    }
    let shared: u64 = counts.values().map(|&m| m * (m - 1)).sum();
    shared as f64 / (valid * (valid - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn entropy_reference_values() {
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(shannon_entropy(&[0.125f64; 8]).unwrap(), 8f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(shannon_entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.0397207708399179, epsilon = 1e-12);
        assert!(matches!(shannon_entropy(&[0.5, 0.4]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn gradcheck_on_simple_functions() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.5, 7.0]).unwrap();
        let ones = Tensor::filled(&[4], 1.0).unwrap();
        let r = gradcheck(|t| Ok(t.data().iter().sum()), &ones, &x, 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-10);
        let r = gradcheck(|t| Ok(0.5 * t.data().iter().map(|v| v * v).sum::<f64>()), &x, &x, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-8);
        let wrong = Tensor::filled(&[4], 2.0).unwrap();
        assert!(gradcheck(|t| Ok(t.data().iter().sum()), &wrong, &x, 1e-3).unwrap().max_rel_error > 0.4);
    }

    #[test]
    fn gradcheck_flags_non_finite() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        let res = gradcheck(|t| Ok(1.0 / t.data()[0].max(0.0)), &g, &x, 1e-3);
        assert!(matches!(res, Err(Error::NonFiniteEvaluation(0))));
    }

    #[test]
    fn suite_passes() {
        for row in gradcheck_suite(7).unwrap() {
            assert!(row.passed, "{row:?}");
        }
    }

    #[test]
    fn shared_node_fraction_counts_pairs() {
        let pts = SamplePoints {
            coords: Tensor::new(vec![4, 3], vec![0.1, 0.0, 0.0, -0.2, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap(),
            mask: vec![true, true, true, false],
        };
        assert_relative_eq!(shared_node_pair_fraction(&pts), 2.0 / 6.0);
    }
}
