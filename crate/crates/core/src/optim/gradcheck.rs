//! Central finite-difference check of the analytic loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{synth_scene, PlaneSpec, SceneSample, SceneSpec};
use crate::error::Result;
use crate::geometry::Pose6;
use crate::image::Image;
use crate::losses::{total_loss, total_loss_value, LossWeights, SceneGrads, ScenePyramid};
use crate::par;

use super::params::{DisparityField, SceneParams, DEFAULT_DMAX};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: &'static str,
    /// `max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)`,
    /// 0 when both are zero.
    pub rel_error: f64,
    pub max_abs_diff: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Compares two gradients block by block.
    pub fn compare(analytic: &SceneGrads, numeric: &SceneGrads) -> Self {
        let blocks = analytic
            .blocks()
            .into_iter()
            .zip(numeric.blocks())
            .map(|((name, a), (_, n))| {
                let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let scale = inf(a).max(inf(n));
                let diff = a
                    .iter()
                    .zip(n)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                let rel_error = if scale == 0.0 { diff } else { diff / scale };
                BlockError {
                    block: name,
                    rel_error,
                    max_abs_diff: diff,
                    scale,
                }
            })
            .collect();
        Self { blocks }
    }
}

fn numeric_gradient(
    params: &SceneParams,
    pyramid: &ScenePyramid,
    start_level: usize,
    weights: &LossWeights,
    eps: f64,
) -> Result<SceneGrads> {
    let n = params.width() * params.height();
    let f = |p: &SceneParams| total_loss_value(p, pyramid, start_level, weights).map(|b| b.total);
    let central = |perturb: &dyn Fn(&mut SceneParams, f64)| -> Result<f64> {
        let mut hi = params.clone();
        perturb(&mut hi, eps);
        let mut lo = params.clone();
        perturb(&mut lo, -eps);
        Ok((f(&hi)? - f(&lo)?) / (2.0 * eps))
    };
    let mut g = SceneGrads::zeros(n);
    for v in 0..4 {
        let col = par::map_range(n, |i| {
            central(&|p: &mut SceneParams, h| p.disparity[v].logits.data_mut()[i] += h)
        });
        for (i, r) in col.into_iter().enumerate() {
            g.disparity[v][i] = r?;
        }
    }
    for j in 0..6 {
        g.stereo[j] = central(&|p: &mut SceneParams, h| {
            let mut a = p.stereo.to_array();
            a[j] += h;
            p.stereo = Pose6::from_array(a);
        })?;
        g.temporal[j] = central(&|p: &mut SceneParams, h| {
            let mut a = p.temporal.to_array();
            a[j] += h;
            p.temporal = Pose6::from_array(a);
        })?;
    }
    let col = par::map_range(n, |i| {
        central(&|p: &mut SceneParams, h| p.mask.logits.data_mut()[i] += h)
    });
    for (i, r) in col.into_iter().enumerate() {
        g.mask[i] = r?;
    }
    Ok(g)
}

/// Analytic versus central-difference gradient of the total loss at
/// `params`, which must match `pyramid.levels[start_level]`.
pub fn gradcheck(
    params: &SceneParams,
    pyramid: &ScenePyramid,
    start_level: usize,
    weights: &LossWeights,
    eps: f64,
) -> Result<GradcheckReport> {
    let (_, analytic) = total_loss(params, pyramid, start_level, weights)?;
    let numeric = numeric_gradient(params, pyramid, start_level, weights, eps)?;
    Ok(GradcheckReport::compare(&analytic, &numeric))
}

/// A small rendered scene and a parameter state perturbed away from its
/// ground truth.
pub fn random_state(seed: u64, size: usize) -> Result<(SceneSample, SceneParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SceneSpec {
        width: size,
        height: size,
        baseline: rng.gen_range(0.3..0.7),
        temporal: Pose6::new(
            [0.0; 3].map(|_| rng.gen_range(-0.05..0.05)),
            [0.0; 3].map(|_| rng.gen_range(-0.02..0.02)),
        ),
        planes: vec![PlaneSpec {
            depth: rng.gen_range(1.5..4.0),
            slope_x: rng.gen_range(-0.2..0.2),
            slope_y: rng.gen_range(-0.2..0.2),
            extent: None,
            texture_seed: rng.gen(),
        }],
        frequency: 0.5,
        octaves: 2,
        seed: rng.gen(),
        ..SceneSpec::default()
    };
    let sample = synth_scene(&spec)?;
    let gt = sample.ground_truth.as_ref().expect("rendered scene");
    let k = sample.intrinsics;
    let fb = k.fx * sample.baseline / k.width as f64;
    let fields = [0, 1, 2, 3].map(|v| {
        let logits = gt.depths[v].map(|d| {
            let s = (fb / d).clamp(1e-3, DEFAULT_DMAX - 1e-3);
            (s / (DEFAULT_DMAX - s)).ln()
        });
        let noisy = Image::from_fn(size, size, 1, |x, y, _| {
            logits.get(x, y, 0) + rng.gen_range(-0.3..0.3)
        });
        DisparityField {
            logits: noisy,
            dmax: DEFAULT_DMAX,
        }
    });
    let jitter = |p: &Pose6, rng: &mut ChaCha8Rng| {
        Pose6::from_array(p.to_array().map(|a| a + rng.gen_range(-0.01..0.01)))
    };
    let stereo = jitter(&gt.stereo, &mut rng);
    let temporal = jitter(&gt.temporal, &mut rng);
    let mut params = SceneParams::initial(size, size, sample.baseline, DEFAULT_DMAX);
    params.disparity = fields;
    params.stereo = stereo;
    params.temporal = temporal;
    params.mask.logits = Image::from_fn(size, size, 1, |_, _, _| rng.gen_range(-1.0..4.0));
    Ok((sample, params))
}

/// Gradient check over `count` seeded scenes of `size x size` pixels using
/// every available pyramid level. `sign_flip` negates one analytic block
/// (by index into [`SceneGrads::blocks`]) to exercise the harness itself.
pub fn gradcheck_suite(
    base_seed: u64,
    count: usize,
    size: usize,
    weights: &LossWeights,
    eps: f64,
    sign_flip: Option<usize>,
) -> Result<Vec<(u64, GradcheckReport)>> {
    let runs = par::map_range(count, |i| -> Result<(u64, GradcheckReport)> {
        let seed = base_seed + i as u64;
        let (sample, params) = random_state(seed, size)?;
        let pyramid = ScenePyramid::build(&sample.images, sample.intrinsics, sample.baseline, 4)?;
        let (_, mut analytic) = total_loss(&params, &pyramid, 0, weights)?;
        if let Some(b) = sign_flip {
            flip_block(&mut analytic, b);
        }
        let numeric = numeric_gradient(&params, &pyramid, 0, weights, eps)?;
        Ok((seed, GradcheckReport::compare(&analytic, &numeric)))
    });
    runs.into_iter().collect()
}

fn flip_block(g: &mut SceneGrads, block: usize) {
    let neg = |v: &mut [f64]| v.iter_mut().for_each(|x| *x = -*x);
    match block {
        0..=3 => neg(&mut g.disparity[block]),
        4 => neg(&mut g.stereo),
        5 => neg(&mut g.temporal),
        _ => neg(&mut g.mask),
    }
}
