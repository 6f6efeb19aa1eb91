//! Depth and disparity error metrics and flip-merge post-processing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::{DisparityField, SceneParams, View};

/// Depths are clamped to at least this many metres before division and logs.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Percentage of disparity outliers, when disparities were evaluated.
    pub d1_all: Option<f64>,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub count: usize,
    pub cap: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3";

    /// One CSV row in [`Self::CSV_HEADER`] order; a missing D1-all is empty.
    pub fn csv_row(&self) -> String {
        let d1 = self.d1_all.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, d1, self.delta1, self.delta2, self.delta3
        )
    }

    /// `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        if let Some(d1) = self.d1_all {
            let _ = writeln!(s, "d1_all={d1}");
        }
        for (k, v) in [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "cap={}", self.cap);
        s
    }
}

fn check_inputs(pred: &Image, gt: &Image, valid: &[bool]) -> Result<()> {
    pred.check_same_shape(gt)?;
    if pred.channels() != 1 {
        return Err(Error::dims("1 channel", pred.channels()));
    }
    if valid.len() != gt.pixel_count() {
        return Err(Error::dims(gt.pixel_count(), valid.len()));
    }
    Ok(())
}

/// Eigen et al. depth metrics over `valid` pixels, both maps clamped to
/// `[MIN_DEPTH, cap]`.
pub fn eigen_metrics(pred: &Image, gt: &Image, valid: &[bool], cap: f64) -> Result<MetricReport> {
    check_inputs(pred, gt, valid)?;
    if !(cap > MIN_DEPTH) {
        return Err(Error::InvalidArgument(format!("cap must exceed {MIN_DEPTH}, got {cap}")));
    }
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    let mut count = 0usize;
    for ((&p, &g), _) in pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(valid)
        .filter(|(_, &v)| v)
    {
        let p = p.clamp(MIN_DEPTH, cap);
        let g = g.clamp(MIN_DEPTH, cap);
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        sq += d * d;
        let l = p.ln() - g.ln();
        sq_log += l * l;
        let ratio = (p / g).max(g / p);
        for (k, w) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *w += 1;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("depth metrics".into()));
    }
    let n = count as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        d1_all: None,
        delta1: within[0] as f64 / n,
        delta2: within[1] as f64 / n,
        delta3: within[2] as f64 / n,
        count,
        cap,
    })
}

/// KITTI D1-all: percentage of valid pixels whose disparity error exceeds
/// both 3 px and 5% of the ground truth.
pub fn d1_all(pred: &Image, gt: &Image, valid: &[bool]) -> Result<f64> {
    check_inputs(pred, gt, valid)?;
    let mut bad = 0usize;
    let mut count = 0usize;
    for ((&p, &g), _) in pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(valid)
        .filter(|(_, &v)| v)
    {
        let e = (p - g).abs();
        if e > 3.0 && e > 0.05 * g.abs() {
            bad += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("D1-all".into()));
    }
    Ok(100.0 * bad as f64 / count as f64)
}

/// Weight of the flipped-input map at column `x`: 1 at the left edge,
/// falling linearly to 1/2 over the first 5% of the width, 1/2 in the
/// middle, and falling to 0 over the last 5%.
pub fn flip_weight(x: usize, width: usize) -> f64 {
    let r = 0.05 * width as f64;
    if r <= 0.0 {
        return 0.5;
    }
    let left = (x as f64 / r).min(1.0);
    let right = ((width - 1 - x) as f64 / r).min(1.0);
    if left < 1.0 {
        1.0 - 0.5 * left
    } else {
        0.5 * right
    }
}

/// Blends a disparity map with the map computed from the flipped input
/// (already flipped back): `w * flipped + (1 - w) * disp`.
pub fn flip_merge(disp: &Image, disp_from_flipped: &Image) -> Result<Image> {
    disp.check_same_shape(disp_from_flipped)?;
    let (w, c) = (disp.width(), disp.channels());
    let mut out = disp.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let x = (i / c) % w;
        let wf = flip_weight(x, w);
        *o = wf * disp_from_flipped.data()[i] + (1.0 - wf) * disp.data()[i];
    }
    Ok(out)
}

/// The map scored in evaluation: the right-view disparity, or the left one
/// when `use_left` is set.
pub fn select_eval_map(params: &SceneParams, use_left: bool) -> &DisparityField {
    params.field(if use_left { View::Left } else { View::Right })
}
