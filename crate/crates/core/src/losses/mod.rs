//! The self-supervised objective: photometric image loss, edge-aware
//! smoothness, directional depth consistency and the explainability
//! regulariser, each with value and gradient.

mod ssim;
mod terms;
mod total;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use ssim::ssim_map;
pub use terms::{
    consistency_loss, explainability_loss, image_loss, l1_loss, smoothness_loss,
};
pub(crate) use terms::{
    consistency_loss_grad, explainability_log_grad, image_loss_grad, smoothness_loss_grad,
};
pub use total::{
    total_loss, total_loss_value, Direction, LossBreakdown, ScaleBreakdown, SceneGrads,
    ScenePyramid, DIRECTIONS,
};

/// Per-term weights and the SSIM mixing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_image: f64,
    pub w_ds: f64,
    pub w_lr: f64,
    pub w_exp: f64,
    /// SSIM share of the photometric loss.
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_image: 1.0,
            w_ds: 1.0,
            w_lr: 1.0,
            w_exp: 1.0,
            alpha: 0.85,
            c1: 0.01,
            c2: 0.03,
        }
    }
}

impl LossWeights {
    /// All four term weights set to zero.
    pub fn zero() -> Self {
        Self {
            w_image: 0.0,
            w_ds: 0.0,
            w_lr: 0.0,
            w_exp: 0.0,
            ..Self::default()
        }
    }

    /// The stabilisers `(0.01 L)^2, (0.03 L)^2` for dynamic range `L = 1`.
    pub fn with_squared_ssim_constants(self) -> Self {
        Self {
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_image", self.w_image),
            ("w_ds", self.w_ds),
            ("w_lr", self.w_lr),
            ("w_exp", self.w_exp),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite non-negative weight, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.c1 > 0.0) || !(self.c2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "SSIM constants must be positive, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// A mean over observed pixels. `count == 0` flags an empty support, in
/// which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMean {
    pub value: f64,
    pub count: usize,
}

impl MaskedMean {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Per-pixel confidence that a target pixel is explained by the warp,
/// stored as logits; probabilities are `sigmoid(logit)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainabilityMask {
    pub logits: Image,
}

impl ExplainabilityMask {
    pub fn constant(width: usize, height: usize, logit: f64) -> Self {
        Self {
            logits: Image::filled(width, height, 1, logit),
        }
    }

    pub fn from_logits(logits: Image) -> Result<Self> {
        if logits.channels() != 1 {
            return Err(Error::dims("1 channel", logits.channels()));
        }
        Ok(Self { logits })
    }

    pub fn width(&self) -> usize {
        self.logits.width()
    }

    pub fn height(&self) -> usize {
        self.logits.height()
    }

    pub fn probabilities(&self) -> Image {
        self.logits.map(sigmoid)
    }

    /// `log E = -softplus(-logit)`, finite for every finite logit.
    pub fn log_probabilities(&self) -> Image {
        self.logits.map(|l| -softplus(-l))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.c1, w.c2), (0.85, 0.01, 0.03));
        assert_eq!((w.w_image, w.w_ds, w.w_lr, w.w_exp), (1.0, 1.0, 1.0, 1.0));
        assert!(w.validate().is_ok());
        let sq = w.with_squared_ssim_constants();
        assert!((sq.c1 - 1e-4).abs() < 1e-18 && (sq.c2 - 9e-4).abs() < 1e-18);
        assert!(LossWeights { alpha: 1.5, ..w }.validate().is_err());
        assert!(LossWeights { w_lr: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn stable_logistics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(-20.0) - 2.061_153_6e-9).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0).is_finite());
        let m = ExplainabilityMask::constant(2, 2, -1000.0);
        assert!(m.log_probabilities().data().iter().all(|v| v.is_finite()));
    }
}
