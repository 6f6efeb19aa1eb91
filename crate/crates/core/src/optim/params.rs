use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose6};
use crate::image::Image;
use crate::losses::{sigmoid, ExplainabilityMask};

/// Upper bound of the normalised disparity, as a fraction of image width.
pub const DEFAULT_DMAX: f64 = 0.3;

/// Logits are kept inside `[-LOGIT_LIMIT, LOGIT_LIMIT]` so that the derived
/// disparity stays strictly inside `(0, dmax)` in floating point.
pub const LOGIT_LIMIT: f64 = 30.0;

/// The four views of a stereo pair observed at two instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Left = 0,
    Right = 1,
    NextLeft = 2,
    NextRight = 3,
}

impl View {
    pub const ALL: [View; 4] = [View::Left, View::Right, View::NextLeft, View::NextRight];

    pub fn index(self) -> usize {
        self as usize
    }

    /// File-name tag: `l`, `r`, `l1`, `r1`.
    pub fn tag(self) -> &'static str {
        match self {
            View::Left => "l",
            View::Right => "r",
            View::NextLeft => "l1",
            View::NextRight => "r1",
        }
    }
}

/// Sigmoid-parameterised disparity map: `s = dmax * sigmoid(logit)`, with
/// `s` the disparity as a fraction of the image width.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    pub logits: Image,
    pub dmax: f64,
}

impl DisparityField {
    pub fn constant(width: usize, height: usize, logit: f64, dmax: f64) -> Self {
        Self {
            logits: Image::filled(width, height, 1, logit),
            dmax,
        }
    }

    pub fn from_logits(logits: Image, dmax: f64) -> Result<Self> {
        if logits.channels() != 1 {
            return Err(Error::dims("1 channel", logits.channels()));
        }
        if !(dmax > 0.0) {
            return Err(Error::InvalidArgument(format!("dmax must be > 0, got {dmax}")));
        }
        Ok(Self { logits, dmax })
    }

    /// Inverse parameterisation from normalised disparities in `(0, dmax)`.
    pub fn from_normalized(s: &Image, dmax: f64) -> Result<Self> {
        if let Some(v) = s.data().iter().find(|&&v| !(v > 0.0 && v < dmax)) {
            return Err(Error::InvalidArgument(format!(
                "normalised disparity {v} outside (0, {dmax})"
            )));
        }
        Self::from_logits(s.map(|v| (v / (dmax - v)).ln()), dmax)
    }

    pub fn width(&self) -> usize {
        self.logits.width()
    }

    pub fn height(&self) -> usize {
        self.logits.height()
    }

    /// Normalised disparity `s` in `(0, dmax)`.
    pub fn normalized(&self) -> Image {
        let d = self.dmax;
        self.logits
            .map(|l| d * sigmoid(l.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)))
    }

    /// Disparity in pixels, `s * W`.
    pub fn pixels(&self) -> Image {
        let w = self.width() as f64;
        self.normalized().map(|s| s * w)
    }

    /// Metric depth `fx * B / (s * W)`.
    pub fn depth(&self, k: &Intrinsics, baseline: f64) -> Result<Image> {
        self.logits.check_size(k.width, k.height)?;
        let f = k.fx * baseline / k.width as f64;
        Ok(self.normalized().map(|s| f / s))
    }
}

/// `depth = fx * baseline / (s * W)` for a normalised disparity `s`.
pub fn disparity_to_depth(s: f64, k: &Intrinsics, baseline: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disparity must be positive, got {s}"
        )));
    }
    Ok(k.fx * baseline / (s * k.width as f64))
}

/// Inverse of [`disparity_to_depth`].
pub fn depth_to_disparity(depth: f64, k: &Intrinsics, baseline: f64) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth must be positive, got {depth}"
        )));
    }
    Ok(k.fx * baseline / (depth * k.width as f64))
}

/// Everything the objective is differentiated with respect to.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Indexed by [`View::index`].
    pub disparity: [DisparityField; 4],
    /// Right camera relative to the left one.
    pub stereo: Pose6,
    /// Next left frame relative to the current left frame.
    pub temporal: Pose6,
    pub mask: ExplainabilityMask,
}

impl SceneParams {
    /// Initial state: disparity logits 0, poses zero except the stereo
    /// translation `(baseline, 0, 0)`, mask logits +3.
    pub fn initial(width: usize, height: usize, baseline: f64, dmax: f64) -> Self {
        let field = DisparityField::constant(width, height, 0.0, dmax);
        Self {
            disparity: [field.clone(), field.clone(), field.clone(), field],
            stereo: Pose6::translation(baseline, 0.0, 0.0),
            temporal: Pose6::IDENTITY,
            mask: ExplainabilityMask::constant(width, height, 3.0),
        }
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn field(&self, v: View) -> &DisparityField {
        &self.disparity[v.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        for f in &self.disparity {
            f.logits.check_size(w, h)?;
        }
        Ok(())
    }

    /// Bilinear resize of every per-pixel block (poses carried over).
    pub fn resized(&self, width: usize, height: usize) -> SceneParams {
        let r = |f: &DisparityField| DisparityField {
            logits: f.logits.resize_bilinear(width, height),
            dmax: f.dmax,
        };
        SceneParams {
            disparity: [
                r(&self.disparity[0]),
                r(&self.disparity[1]),
                r(&self.disparity[2]),
                r(&self.disparity[3]),
            ],
            stereo: self.stereo,
            temporal: self.temporal,
            mask: ExplainabilityMask {
                logits: self.mask.logits.resize_bilinear(width, height),
            },
        }
    }
}
