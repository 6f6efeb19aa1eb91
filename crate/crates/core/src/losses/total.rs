//! Multi-scale total objective and its gradient with respect to every
//! parameter block of a [`SceneParams`].

use crate::error::{Error, Result};
use crate::geometry::{
    compose_small, warp_coordinates, warp_coordinates_vjp, Intrinsics, Pose6,
};
use crate::image::Image;
use crate::optim::{SceneParams, View, LOGIT_LIMIT};
use crate::par;
use crate::sampler::{bilinear_sample, sample_vjp};

use super::{
    consistency_loss_grad, explainability_log_grad, image_loss_grad, sigmoid,
    smoothness_loss_grad, LossWeights,
};

/// Images and intrinsics at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLevel {
    /// Indexed by [`View::index`].
    pub images: [Image; 4],
    pub intrinsics: Intrinsics,
}

/// Box-filtered image pyramid of a stereo/temporal quadruple; level 0 is
/// the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePyramid {
    pub levels: Vec<SceneLevel>,
    pub baseline: f64,
}

impl ScenePyramid {
    /// Builds up to `max_levels` levels, stopping before any side would drop
    /// below 2 pixels.
    pub fn build(
        images: &[Image; 4],
        intrinsics: Intrinsics,
        baseline: f64,
        max_levels: usize,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if !(baseline > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "baseline must be > 0, got {baseline}"
            )));
        }
        for img in images {
            img.check_size(intrinsics.width, intrinsics.height)?;
            img.check_same_shape(&images[0])?;
        }
        if max_levels == 0 {
            return Err(Error::InvalidArgument("at least one scale is required".into()));
        }
        let mut levels = vec![SceneLevel {
            images: images.clone(),
            intrinsics,
        }];
        while levels.len() < max_levels {
            let last = levels.last().expect("non-empty");
            let k = last.intrinsics;
            if k.width / 2 < 2 || k.height / 2 < 2 {
                break;
            }
            let images = [
                last.images[0].downsample2(),
                last.images[1].downsample2(),
                last.images[2].downsample2(),
                last.images[3].downsample2(),
            ];
            levels.push(SceneLevel {
                images,
                intrinsics: k.half(),
            });
        }
        Ok(Self { levels, baseline })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Which pose a reconstruction direction uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseKind {
    Stereo,
    Temporal,
    /// Stereo and temporal summed componentwise.
    Combined,
}

/// A reconstruction direction anchored at the left view: the target view
/// is rebuilt by sampling the left image (and, for consistency, the left
/// depth map).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Direction {
    pub target: View,
    pub pose: PoseKind,
}

pub const DIRECTIONS: [Direction; 3] = [
    Direction {
        target: View::Right,
        pose: PoseKind::Stereo,
    },
    Direction {
        target: View::NextLeft,
        pose: PoseKind::Temporal,
    },
    Direction {
        target: View::NextRight,
        pose: PoseKind::Combined,
    },
];

/// Unweighted term sums at one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScaleBreakdown {
    pub level: usize,
    pub image: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub explainability: f64,
    /// Weighted total of this level.
    pub total: f64,
}

/// Term sums over all scales and directions, and their weighted total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub image: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub explainability: f64,
    pub total: f64,
    pub per_scale: Vec<ScaleBreakdown>,
    /// Number of masked means that had no observed pixels.
    pub empty_terms: usize,
}

impl LossBreakdown {
    /// Name of the first non-finite entry, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("image", self.image),
            ("smooth", self.smooth),
            ("consistency", self.consistency),
            ("explainability", self.explainability),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Gradient of the total loss, block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrads {
    /// Gradients on the disparity logits, indexed by [`View::index`].
    pub disparity: [Vec<f64>; 4],
    pub stereo: [f64; 6],
    pub temporal: [f64; 6],
    /// Gradient on the mask logits.
    pub mask: Vec<f64>,
}

impl SceneGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            disparity: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            stereo: [0.0; 6],
            temporal: [0.0; 6],
            mask: vec![0.0; n],
        }
    }

    /// `(name, values)` for each block in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("disparity_l", &self.disparity[0][..]),
            ("disparity_r", &self.disparity[1][..]),
            ("disparity_l1", &self.disparity[2][..]),
            ("disparity_r1", &self.disparity[3][..]),
            ("pose_stereo", &self.stereo[..]),
            ("pose_temporal", &self.temporal[..]),
            ("mask", &self.mask[..]),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

fn add_into(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += scale * b;
    }
}

fn add_pose(acc: &mut [f64; 6], g: &[f64; 6], scale: f64) {
    for a in 0..6 {
        acc[a] += scale * g[a];
    }
}

/// Log of the 2x2 block mean of `exp(log_e)`, computed stably.
fn downsample_log_mean(log_e: &Image) -> Image {
    let (w2, h2) = (log_e.width() / 2, log_e.height() / 2);
    Image::from_fn(w2, h2, 1, |x, y, _| {
        let v = [
            log_e.get(2 * x, 2 * y, 0),
            log_e.get(2 * x + 1, 2 * y, 0),
            log_e.get(2 * x, 2 * y + 1, 0),
            log_e.get(2 * x + 1, 2 * y + 1, 0),
        ];
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = v.iter().map(|a| (a - m).exp()).sum();
        m + s.ln() - 4f64.ln()
    })
}

struct DirectionPoses {
    stereo: Pose6,
    temporal: Pose6,
    combined: Pose6,
}

impl DirectionPoses {
    fn get(&self, kind: PoseKind) -> &Pose6 {
        match kind {
            PoseKind::Stereo => &self.stereo,
            PoseKind::Temporal => &self.temporal,
            PoseKind::Combined => &self.combined,
        }
    }
}

/// Adds a pose gradient to the blocks that produced the pose.
fn route_pose_grad(grads: &mut SceneGrads, kind: PoseKind, g: &[f64; 6], scale: f64) {
    match kind {
        PoseKind::Stereo => add_pose(&mut grads.stereo, g, scale),
        PoseKind::Temporal => add_pose(&mut grads.temporal, g, scale),
        PoseKind::Combined => {
            add_pose(&mut grads.stereo, g, scale);
            add_pose(&mut grads.temporal, g, scale);
        }
    }
}

/// Loss value only.
pub fn total_loss_value(
    params: &SceneParams,
    pyramid: &ScenePyramid,
    start_level: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(evaluate(params, pyramid, start_level, weights, false)?.0)
}

/// Total loss summed over every pyramid level from `start_level` down to
/// the coarsest, with equal level weights, and its gradient with respect to
/// every parameter block. `params` must have the resolution of
/// `pyramid.levels[start_level]`.
///
/// Per level: photometric loss for the three directions of [`DIRECTIONS`],
/// smoothness of all four disparity fields against their own images, depth
/// consistency from the left depth map towards each target view, and the
/// explainability regulariser. Disparity and mask probabilities are box
/// downsampled from the parameter resolution.
pub fn total_loss(
    params: &SceneParams,
    pyramid: &ScenePyramid,
    start_level: usize,
    weights: &LossWeights,
) -> Result<(LossBreakdown, SceneGrads)> {
    let (b, g) = evaluate(params, pyramid, start_level, weights, true)?;
    Ok((b, g.expect("gradient requested")))
}

fn evaluate(
    params: &SceneParams,
    pyramid: &ScenePyramid,
    start_level: usize,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<SceneGrads>)> {
    weights.validate()?;
    params.validate()?;
    if start_level >= pyramid.len() {
        return Err(Error::InvalidArgument(format!(
            "start level {start_level} beyond pyramid of {} levels",
            pyramid.len()
        )));
    }
    let levels = &pyramid.levels[start_level..];
    let k0 = levels[0].intrinsics;
    params.mask.logits.check_size(k0.width, k0.height)?;
    params.disparity[0].logits.check_size(k0.width, k0.height)?;

    let nl = levels.len();
    let baseline = pyramid.baseline;
    let poses = DirectionPoses {
        stereo: params.stereo,
        temporal: params.temporal,
        combined: compose_small(&params.stereo, &params.temporal),
    };

    // Forward pyramids of normalised disparity and log mask probability.
    let mut disp: Vec<[Image; 4]> = Vec::with_capacity(nl);
    disp.push([
        params.disparity[0].normalized(),
        params.disparity[1].normalized(),
        params.disparity[2].normalized(),
        params.disparity[3].normalized(),
    ]);
    let mut log_e: Vec<Image> = vec![params.mask.log_probabilities()];
    for l in 1..nl {
        let prev = &disp[l - 1];
        let next = [
            prev[0].downsample2(),
            prev[1].downsample2(),
            prev[2].downsample2(),
            prev[3].downsample2(),
        ];
        disp.push(next);
        log_e.push(downsample_log_mean(&log_e[l - 1]));
    }

    let mut breakdown = LossBreakdown::default();
    let mut g_disp: Vec<[Vec<f64>; 4]> = Vec::new();
    let mut g_log_e: Vec<Vec<f64>> = Vec::new();
    let mut grads = SceneGrads::zeros(0);

    for (l, level) in levels.iter().enumerate() {
        let k = level.intrinsics;
        let n = k.width * k.height;
        let f = k.fx * baseline / k.width as f64;
        let depth: Vec<Image> = disp[l].iter().map(|s| s.map(|v| f / v)).collect();
        let e_prob = log_e[l].map(f64::exp);
        let mut scale = ScaleBreakdown {
            level: start_level + l,
            ..Default::default()
        };
        let mut gd: [Vec<f64>; 4] = Default::default();
        let mut gs: [Vec<f64>; 4] = Default::default();
        let mut ge = Vec::new();
        if want_grad {
            gd = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            gs = gd.clone();
            ge = vec![0.0; n];
        }
        let left = &level.images[View::Left.index()];

        if weights.w_image > 0.0 {
            // Directions are independent; evaluate them side by side.
            let results = par::map_range(DIRECTIONS.len(), |i| -> Result<_> {
                let dir = DIRECTIONS[i];
                let t = dir.target.index();
                let pose = poses.get(dir.pose);
                let grid = warp_coordinates(&depth[t], pose, &k)?;
                let recon = bilinear_sample(left, &grid)?;
                let target = &level.images[t];
                let (m, g_recon, g_e) =
                    image_loss_grad(&recon, target, e_prob.data(), weights, want_grad)?;
                if !want_grad {
                    return Ok((m, None));
                }
                let up = Image::new(k.width, k.height, target.channels(), g_recon)?;
                let sg = sample_vjp(left, &grid, &up, false)?;
                let (g_depth, g_pose) =
                    warp_coordinates_vjp(&depth[t], pose, &k, &grid, &sg.u, &sg.v)?;
                Ok((m, Some((g_depth, g_pose, g_e))))
            });
            for (dir, r) in DIRECTIONS.iter().zip(results) {
                let (m, g) = r?;
                scale.image += m.value;
                breakdown.empty_terms += usize::from(m.is_empty());
                if let Some((g_depth, g_pose, g_e)) = g {
                    let w = weights.w_image;
                    add_into(&mut gd[dir.target.index()], &g_depth, w);
                    route_pose_grad(&mut grads, dir.pose, &g_pose, w);
                    for i in 0..n {
                        // d/dlogE = d/dE * E
                        ge[i] += w * g_e[i] * e_prob.data()[i];
                    }
                }
            }
        }

        if weights.w_ds > 0.0 {
            for v in View::ALL {
                let (val, g) =
                    smoothness_loss_grad(&disp[l][v.index()], &level.images[v.index()], want_grad)?;
                scale.smooth += val;
                if want_grad {
                    add_into(&mut gs[v.index()], &g, weights.w_ds);
                }
            }
        }

        if weights.w_lr > 0.0 {
            let l_idx = View::Left.index();
            for dir in DIRECTIONS {
                let t = dir.target.index();
                let (m, g1, g2, gp) = consistency_loss_grad(
                    &depth[l_idx],
                    &depth[t],
                    poses.get(dir.pose),
                    &k,
                    want_grad,
                )?;
                scale.consistency += m.value;
                breakdown.empty_terms += usize::from(m.is_empty());
                if want_grad {
                    let w = weights.w_lr;
                    add_into(&mut gd[l_idx], &g1, w);
                    add_into(&mut gd[t], &g2, w);
                    route_pose_grad(&mut grads, dir.pose, &gp, w);
                }
            }
        }

        if weights.w_exp > 0.0 {
            let (val, g) = explainability_log_grad(log_e[l].data());
            scale.explainability += val;
            if want_grad {
                add_into(&mut ge, &g, weights.w_exp);
            }
        }

        scale.total = weights.w_image * scale.image
            + weights.w_ds * scale.smooth
            + weights.w_lr * scale.consistency
            + weights.w_exp * scale.explainability;
        breakdown.image += scale.image;
        breakdown.smooth += scale.smooth;
        breakdown.consistency += scale.consistency;
        breakdown.explainability += scale.explainability;
        breakdown.per_scale.push(scale);

        if want_grad {
            // depth = f / s  =>  d depth / d s = -depth / s
            for v in 0..4 {
                let (dd, ss) = (depth[v].data(), disp[l][v].data());
                for i in 0..n {
                    gs[v][i] -= gd[v][i] * dd[i] / ss[i];
                }
            }
            g_disp.push(gs);
            g_log_e.push(ge);
        }
    }
    breakdown.total = weights.w_image * breakdown.image
        + weights.w_ds * breakdown.smooth
        + weights.w_lr * breakdown.consistency
        + weights.w_exp * breakdown.explainability;

    if !want_grad {
        return Ok((breakdown, None));
    }

    // Back through the downsampling chains to the parameter resolution.
    for l in (1..nl).rev() {
        let k = levels[l - 1].intrinsics;
        let (w, h) = (k.width, k.height);
        let (cw, ch) = (levels[l].intrinsics.width, levels[l].intrinsics.height);
        let coarse_disp = std::mem::take(&mut g_disp[l]);
        for (v, g) in coarse_disp.into_iter().enumerate() {
            let up = Image::from_field(cw, ch, g)?.downsample2_adjoint(w, h);
            add_into(&mut g_disp[l - 1][v], up.data(), 1.0);
        }
        let coarse_e = std::mem::take(&mut g_log_e[l]);
        let (fine, coarse) = (&log_e[l - 1], &log_e[l]);
        let target = &mut g_log_e[l - 1];
        let ln4 = 4f64.ln();
        for y in 0..ch {
            for x in 0..cw {
                let g = coarse_e[y * cw + x];
                if g == 0.0 {
                    continue;
                }
                let lc = coarse.get(x, y, 0);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (fx, fy) = (2 * x + dx, 2 * y + dy);
                    let share = (fine.get(fx, fy, 0) - ln4 - lc).exp();
                    target[fy * w + fx] += g * share;
                }
            }
        }
    }

    let n0 = k0.width * k0.height;
    let mut out = SceneGrads::zeros(n0);
    out.stereo = grads.stereo;
    out.temporal = grads.temporal;
    let g0 = std::mem::take(&mut g_disp[0]);
    for (v, g) in g0.into_iter().enumerate() {
        let field = &params.disparity[v];
        for (i, (&logit, gv)) in field.logits.data().iter().zip(g).enumerate() {
            if logit.abs() >= LOGIT_LIMIT {
                continue;
            }
            let sg = sigmoid(logit);
            out.disparity[v][i] = gv * field.dmax * sg * (1.0 - sg);
        }
    }
    for (i, (&logit, g)) in params
        .mask
        .logits
        .data()
        .iter()
        .zip(&g_log_e[0])
        .enumerate()
    {
        // d log(sigmoid(x)) / dx = 1 - sigmoid(x)
        out.mask[i] = g * sigmoid(-logit);
    }
    Ok((breakdown, Some(out)))
}
