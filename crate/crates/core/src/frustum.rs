//! Depth distributions and frustum feature lifting.
//!
//! A frustum grid is the per-pixel outer product of a depth distribution
//! (`W x H x D`) and an image feature map (`W x H x C`), giving `W x H x D x C`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel categorical depth distribution, shape `W x H x K`.
///
/// Softmax output sums to one per pixel. After the overflow bin is dropped
/// the per-pixel mass may be below one.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution<T = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> DepthDistribution<T> {
    /// Wraps a rank-3 tensor without checking normalization.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        values.expect_rank(3, "depth distribution")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn width(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn num_bins(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn pixel(&self, u: usize, v: usize) -> &[T] {
        let k = self.num_bins();
        let start = (u * self.height() + v) * k;
        &self.values.data()[start..start + k]
    }

    /// Checks every entry is in `[0, 1]` and each pixel sums to one within `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for pixel in self.values.data().chunks(self.num_bins()) {
            let mut sum = 0.0;
            for &p in pixel {
                let p = p.to_f64();
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::NotNormalized(p));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotNormalized(sum));
            }
        }
        Ok(())
    }
}

/// Frustum feature grid, shape `W x H x D x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumGrid<T = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> FrustumGrid<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        values.expect_rank(4, "frustum grid")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    /// `[W, H, D, C]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.values.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

fn check_pixels(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a[..2] != b[..2] {
        return Err(Error::ShapeMismatch(format!(
            "{what}: pixel grids {:?} and {:?} differ",
            &a[..2],
            &b[..2]
        )));
    }
    Ok(())
}

/// Max-stabilized per-pixel softmax over the last axis of `W x H x K` logits.
pub fn softmax_normalize<T: Scalar>(logits: &Tensor<T>) -> Result<DepthDistribution<T>> {
    logits.expect_rank(3, "logits")?;
    if let Some(bad) = logits.data().iter().find(|v| !v.to_f64().is_finite()) {
        return Err(Error::NonFiniteInput(format!("logit {bad:?}")));
    }
    let k = logits.shape()[2];
    let mut out = vec![T::default(); logits.len()];
    out.par_chunks_mut(k)
        .zip(logits.data().par_chunks(k))
        .for_each(|(dst, src)| {
            let m = src.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = src.iter().map(|v| (v.to_f64() - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (d, e) in dst.iter_mut().zip(exps) {
                *d = T::from_f64(e / z);
            }
        });
    DepthDistribution::new(Tensor::new(logits.shape().to_vec(), out)?)
}

/// Vector-Jacobian product of the softmax:
/// `grad[k] = p[k] * (g[k] - sum_j g[j] p[j])` per pixel.
pub fn softmax_backward<T: Scalar>(
    dist: &DepthDistribution<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    if upstream.shape() != dist.values().shape() {
        return Err(Error::ShapeMismatch(format!(
            "softmax upstream {:?} vs distribution {:?}",
            upstream.shape(),
            dist.values().shape()
        )));
    }
    let k = dist.num_bins();
    let mut out = vec![T::default(); upstream.len()];
    out.par_chunks_mut(k)
        .zip(dist.values().data().par_chunks(k))
        .zip(upstream.data().par_chunks(k))
        .for_each(|((dst, p), g)| {
            let dot: f64 = p.iter().zip(g).map(|(p, g)| p.to_f64() * g.to_f64()).sum();
            for ((d, p), g) in dst.iter_mut().zip(p).zip(g) {
                *d = T::from_f64(p.to_f64() * (g.to_f64() - dot));
            }
        });
    Tensor::new(upstream.shape().to_vec(), out)
}

/// Removes the trailing overflow bin without renormalizing.
///
/// `num_bins` is the in-range bin count `D`; the input must have `D + 1` bins.
pub fn drop_overflow_bin<T: Scalar>(
    dist: &DepthDistribution<T>,
    num_bins: usize,
) -> Result<DepthDistribution<T>> {
    let k = dist.num_bins();
    if k != num_bins + 1 || num_bins == 0 {
        return Err(Error::WrongBinCount {
            expected: num_bins + 1,
            found: k,
        });
    }
    let data = dist
        .values()
        .data()
        .chunks(k)
        .flat_map(|px| px[..num_bins].iter().copied())
        .collect();
    DepthDistribution::new(Tensor::new(
        vec![dist.width(), dist.height(), num_bins],
        data,
    )?)
}

/// Adjoint of [`drop_overflow_bin`]: pads a zero gradient for the overflow bin.
pub fn drop_overflow_bin_backward<T: Scalar>(upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.expect_rank(3, "overflow upstream")?;
    let s = upstream.shape();
    let data = upstream
        .data()
        .chunks(s[2])
        .flat_map(|px| px.iter().copied().chain(std::iter::once(T::default())))
        .collect();
    Tensor::new(vec![s[0], s[1], s[2] + 1], data)
}

/// `G[u, v, d, c] = dist[u, v, d] * features[u, v, c]`.
pub fn lift<T: Scalar>(dist: &DepthDistribution<T>, features: &Tensor<T>) -> Result<FrustumGrid<T>> {
    features.expect_rank(3, "features")?;
    check_pixels(dist.values().shape(), features.shape(), "lift")?;
    let (d, c) = (dist.num_bins(), features.shape()[2]);
    let mut out = vec![T::default(); dist.width() * dist.height() * d * c];
    out.par_chunks_mut(d * c)
        .zip(dist.values().data().par_chunks(d))
        .zip(features.data().par_chunks(c))
        .for_each(|((dst, p), f)| {
            for (row, &pd) in dst.chunks_mut(c).zip(p) {
                let pd = pd.to_f64();
                for (o, &fc) in row.iter_mut().zip(f) {
                    *o = T::from_f64(pd * fc.to_f64());
                }
            }
        });
    FrustumGrid::new(Tensor::new(vec![dist.width(), dist.height(), d, c], out)?)
}

/// Gradients of [`lift`] with respect to the distribution and the features.
pub fn lift_backward<T: Scalar>(
    dist: &DepthDistribution<T>,
    features: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    features.expect_rank(3, "features")?;
    check_pixels(dist.values().shape(), features.shape(), "lift_backward")?;
    let (w, h, d, c) = (dist.width(), dist.height(), dist.num_bins(), features.shape()[2]);
    if upstream.shape() != [w, h, d, c] {
        return Err(Error::ShapeMismatch(format!(
            "lift upstream {:?}, expected {:?}",
            upstream.shape(),
            [w, h, d, c]
        )));
    }
    let mut grad_dist = vec![T::default(); w * h * d];
    let mut grad_feat = vec![T::default(); w * h * c];
    grad_dist
        .par_chunks_mut(d)
        .zip(grad_feat.par_chunks_mut(c))
        .zip(dist.values().data().par_chunks(d))
        .zip(features.data().par_chunks(c))
        .zip(upstream.data().par_chunks(d * c))
        .for_each(|((((gd, gf), p), f), g)| {
            let mut acc = vec![0.0f64; c];
            for (di, row) in g.chunks(c).enumerate() {
                let pd = p[di].to_f64();
                let mut s = 0.0;
                for ci in 0..c {
                    let gv = row[ci].to_f64();
                    s += gv * f[ci].to_f64();
                    acc[ci] += gv * pd;
                }
                gd[di] = T::from_f64(s);
            }
            for (o, a) in gf.iter_mut().zip(acc) {
                *o = T::from_f64(a);
            }
        });
    Ok((
        Tensor::new(vec![w, h, d], grad_dist)?,
        Tensor::new(vec![w, h, c], grad_feat)?,
    ))
}
