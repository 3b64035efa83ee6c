//! Focal depth-distribution loss and the weighted total loss.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frustum::DepthDistribution;
use crate::labels::DepthLabel;
use crate::reduce::pairwise_sum;
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to at least this before taking the logarithm.
pub const PROB_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_fg: f64,
    pub alpha_bg: f64,
    pub gamma: f64,
    pub lambda_depth: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_fg: 3.25,
            alpha_bg: 0.25,
            gamma: 2.0,
            lambda_depth: 3.0,
            lambda_cls: 1.0,
            lambda_reg: 2.0,
            lambda_dir: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_fg,
            self.alpha_bg,
            self.gamma,
            self.lambda_depth,
            self.lambda_cls,
            self.lambda_reg,
            self.lambda_dir,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// `-alpha * (1 - p)^gamma * ln(max(p, eps))`.
pub fn focal_term(p_t: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p_t.max(PROB_EPS);
    let modulator = (1.0 - p_t).max(0.0).powf(gamma);
    -alpha * modulator * p.ln()
}

/// Derivative of [`focal_term`] with respect to `p_t`.
pub fn focal_term_grad(p_t: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p_t.max(PROB_EPS);
    let ln_p = p.ln();
    let one_minus = (1.0 - p_t).max(0.0);
    let modulator_grad = if gamma == 0.0 || ln_p == 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0) * ln_p
    };
    let log_grad = if p_t >= PROB_EPS { one_minus.powf(gamma) / p_t } else { 0.0 };
    alpha * (modulator_grad - log_grad)
}

fn check_inputs<T: Scalar>(dist: &DepthDistribution<T>, labels: &DepthLabel, fg: &[bool]) -> Result<()> {
    let shape = [labels.width(), labels.height(), labels.num_bins()];
    if dist.values().shape() != shape || fg.len() != labels.width() * labels.height() {
        return Err(Error::ShapeMismatch(format!(
            "distribution {:?}, labels {:?}, mask of {} pixels",
            dist.values().shape(),
            shape,
            fg.len()
        )));
    }
    Ok(())
}

/// Per-pixel `(p_t, alpha)` pairs.
fn pixel_terms<'a, T: Scalar>(
    dist: &'a DepthDistribution<T>,
    labels: &'a DepthLabel,
    fg: &'a [bool],
    w: &'a LossWeights,
) -> impl IndexedParallelIterator<Item = (usize, f64, f64)> + 'a {
    let k = labels.num_bins();
    let data = dist.values().data();
    labels
        .hot_indices()
        .par_iter()
        .zip(fg.par_iter())
        .enumerate()
        .map(move |(p, (&hot, &is_fg))| {
            let alpha = if is_fg { w.alpha_fg } else { w.alpha_bg };
            (p * k + hot, data[p * k + hot].to_f64(), alpha)
        })
}

/// Mean focal loss over all `W_F * H_F` pixels, overflow bin included.
pub fn depth_loss<T: Scalar>(
    dist: &DepthDistribution<T>,
    labels: &DepthLabel,
    fg: &[bool],
    w: &LossWeights,
) -> Result<f64> {
    check_inputs(dist, labels, fg)?;
    let terms: Vec<f64> = pixel_terms(dist, labels, fg, w)
        .map(|(_, p, alpha)| focal_term(p, alpha, w.gamma))
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Gradient of [`depth_loss`] with respect to the distribution values.
pub fn depth_loss_backward<T: Scalar>(
    dist: &DepthDistribution<T>,
    labels: &DepthLabel,
    fg: &[bool],
    w: &LossWeights,
) -> Result<Tensor<T>> {
    check_inputs(dist, labels, fg)?;
    let n = (labels.width() * labels.height()) as f64;
    let mut grad = Tensor::zeros(dist.values().shape())?;
    let hot: Vec<(usize, f64)> = pixel_terms(dist, labels, fg, w)
        .map(|(idx, p, alpha)| (idx, focal_term_grad(p, alpha, w.gamma) / n))
        .collect();
    for (idx, g) in hot {
        grad.data_mut()[idx] = T::from_f64(g);
    }
    Ok(grad)
}

/// `lambda_depth * l_depth + lambda_cls * l_cls + lambda_reg * l_reg + lambda_dir * l_dir`.
pub fn total_loss(l_depth: f64, l_cls: f64, l_reg: f64, l_dir: f64, w: &LossWeights) -> Result<f64> {
    let parts = [l_depth, l_cls, l_reg, l_dir];
    if let Some(bad) = parts.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("loss component {bad}")));
    }
    Ok(w.lambda_depth * l_depth + w.lambda_cls * l_cls + w.lambda_reg * l_reg + w.lambda_dir * l_dir)
}
