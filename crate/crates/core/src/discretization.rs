//! Mapping between continuous depth and categorical depth bins.
//!
//! Three spacing schemes are supported. With `D` bins over `[d_min, d_max]`
//! and `i` in `0..=D`, edge `i` is:
//!
//! * uniform (UD): `d_min + (d_max - d_min) * i / D`
//! * spacing-increasing (SID): `exp(ln d_min + ln(d_max / d_min) * i / D)`
//! * linear-increasing (LID): `d_min + (d_max - d_min) * i * (i + 1) / (D * (D + 1))`
//!
//! Bin `i` covers `[edge(i), edge(i + 1))`; its center is the edge midpoint.
//! An optional overflow bin with index `D` absorbs depths outside the range.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscretizationMode {
    Uniform,
    SpacingIncreasing,
    LinearIncreasing,
}

impl FromStr for DiscretizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ud" | "uniform" => Ok(Self::Uniform),
            "sid" => Ok(Self::SpacingIncreasing),
            "lid" => Ok(Self::LinearIncreasing),
            other => Err(Error::InvalidConfig(format!(
                "unknown discretization mode `{other}` (expected ud, sid or lid)"
            ))),
        }
    }
}

impl fmt::Display for DiscretizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "ud",
            Self::SpacingIncreasing => "sid",
            Self::LinearIncreasing => "lid",
        })
    }
}

/// Number of depth bins used when none is configured.
pub const DEFAULT_NUM_BINS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationSpec {
    mode: DiscretizationMode,
    d_min: f64,
    d_max: f64,
    num_bins: usize,
    overflow_bin: bool,
}

impl DiscretizationSpec {
    pub fn new(
        mode: DiscretizationMode,
        d_min: f64,
        d_max: f64,
        num_bins: usize,
        overflow_bin: bool,
    ) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && d_min >= 0.0 && d_max > d_min) {
            return Err(Error::InvalidConfig(format!(
                "depth range must satisfy 0 <= d_min < d_max, got [{d_min}, {d_max}]"
            )));
        }
        if mode == DiscretizationMode::SpacingIncreasing && d_min <= 0.0 {
            return Err(Error::InvalidConfig("SID requires d_min > 0".into()));
        }
        if num_bins == 0 {
            return Err(Error::InvalidConfig("number of depth bins must be >= 1".into()));
        }
        Ok(Self {
            mode,
            d_min,
            d_max,
            num_bins,
            overflow_bin,
        })
    }

    /// LID over the KITTI depth range `[2, 46.8]` m with an overflow bin.
    pub fn kitti_lid(num_bins: usize) -> Result<Self> {
        Self::new(DiscretizationMode::LinearIncreasing, 2.0, 46.8, num_bins, true)
    }

    pub fn mode(&self) -> DiscretizationMode {
        self.mode
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Number of in-range bins `D`.
    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn has_overflow_bin(&self) -> bool {
        self.overflow_bin
    }

    /// Bins in a predicted distribution: `D + 1` with the overflow bin, else `D`.
    pub fn num_output_bins(&self) -> usize {
        self.num_bins + usize::from(self.overflow_bin)
    }

    pub fn with_overflow_bin(mut self, overflow_bin: bool) -> Self {
        self.overflow_bin = overflow_bin;
        self
    }

    pub fn bin_edge(&self, i: usize) -> Result<f64> {
        if i > self.num_bins {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.num_bins,
            });
        }
        Ok(self.edge_unchecked(i))
    }

    fn edge_unchecked(&self, i: usize) -> f64 {
        let d = self.num_bins as f64;
        // Endpoints are returned exactly rather than through the formula.
        if i == 0 {
            return self.d_min;
        }
        if i == self.num_bins {
            return self.d_max;
        }
        let fi = i as f64;
        let span = self.d_max - self.d_min;
        match self.mode {
            DiscretizationMode::Uniform => self.d_min + span * fi / d,
            DiscretizationMode::SpacingIncreasing => {
                (self.d_min.ln() + (self.d_max / self.d_min).ln() * fi / d).exp()
            }
            DiscretizationMode::LinearIncreasing => {
                self.d_min + span * fi * (fi + 1.0) / (d * (d + 1.0))
            }
        }
    }

    /// All `D + 1` edges.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.num_bins).map(|i| self.edge_unchecked(i)).collect()
    }

    pub fn bin_center(&self, i: usize) -> Result<f64> {
        if i >= self.num_bins {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.num_bins - 1,
            });
        }
        Ok(0.5 * (self.edge_unchecked(i) + self.edge_unchecked(i + 1)))
    }

    pub fn bin_width(&self, i: usize) -> Result<f64> {
        if i >= self.num_bins {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.num_bins - 1,
            });
        }
        Ok(self.edge_unchecked(i + 1) - self.edge_unchecked(i))
    }

    /// Closed-form inverse of the edge formula, before edge correction.
    fn approximate_bin(&self, depth: f64) -> f64 {
        let d = self.num_bins as f64;
        let t = (depth - self.d_min) / (self.d_max - self.d_min);
        match self.mode {
            DiscretizationMode::Uniform => t * d,
            DiscretizationMode::SpacingIncreasing => {
                (depth / self.d_min).ln() / (self.d_max / self.d_min).ln() * d
            }
            DiscretizationMode::LinearIncreasing => {
                let q = t * d * (d + 1.0);
                0.5 * ((1.0 + 4.0 * q).sqrt() - 1.0)
            }
        }
    }

    /// Index `i` with `edge(i) <= depth < edge(i + 1)`.
    ///
    /// Depths outside `[d_min, d_max)` map to the overflow bin `D` when the
    /// spec has one and are an error otherwise.
    pub fn depth_to_bin(&self, depth: f64) -> Result<usize> {
        if !depth.is_finite() {
            return Err(Error::NonFiniteInput(format!("depth {depth}")));
        }
        if depth < self.d_min || depth >= self.d_max {
            return if self.overflow_bin {
                Ok(self.num_bins)
            } else {
                Err(Error::OutOfRange {
                    depth,
                    min: self.d_min,
                    max: self.d_max,
                })
            };
        }
        let last = self.num_bins - 1;
        let mut i = (self.approximate_bin(depth).floor().max(0.0) as usize).min(last);
        // Snap to the edges actually returned by `bin_edge`.
        while i > 0 && depth < self.edge_unchecked(i) {
            i -= 1;
        }
        while i < last && depth >= self.edge_unchecked(i + 1) {
            i += 1;
        }
        Ok(i)
    }

    /// Continuous bin coordinate `r`, linear in depth between adjacent bin
    /// centers and clamped to `[0, D - 1]`.
    pub fn depth_to_fractional_bin(&self, depth: f64) -> Result<f64> {
        if !(depth >= self.d_min && depth <= self.d_max) {
            return Err(Error::OutOfRange {
                depth,
                min: self.d_min,
                max: self.d_max,
            });
        }
        let last = self.num_bins - 1;
        let center = |k: usize| 0.5 * (self.edge_unchecked(k) + self.edge_unchecked(k + 1));
        if depth <= center(0) {
            return Ok(0.0);
        }
        if depth >= center(last) {
            return Ok(last as f64);
        }
        // center(k) <= depth < center(k + 1) with k the bin of `depth` or the one below.
        let bin = self.depth_to_bin(depth).unwrap_or(last);
        let k = if depth < center(bin) { bin - 1 } else { bin };
        let (lo, hi) = (center(k), center(k + 1));
        Ok(k as f64 + (depth - lo) / (hi - lo))
    }
}
