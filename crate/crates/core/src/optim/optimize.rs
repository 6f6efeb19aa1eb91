use serde::{Deserialize, Serialize};

use crate::dataio::SceneSample;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossWeights, ScenePyramid};
use crate::par;

use super::adam::{adam_step, AdamConfig, AdamMoments};
use super::params::{SceneParams, DEFAULT_DMAX, LOGIT_LIMIT};
use super::schedule::{lr_schedule, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Adam steps per scale.
    pub iterations: usize,
    pub scales: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub dmax: f64,
    pub seed: u64,
    /// Run every reduction on the calling thread.
    pub deterministic: bool,
    pub freeze_stereo_pose: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            scales: 4,
            lr: 1e-4,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            dmax: DEFAULT_DMAX,
            seed: 0,
            deterministic: false,
            freeze_stereo_pose: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::InvalidArgument("scales must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.dmax > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dmax must be > 0, got {}",
                self.dmax
            )));
        }
        self.schedule.validate()?;
        self.adam.validate()?;
        self.weights.validate()
    }
}

/// Parameters plus optimiser state. Moment buffers are ordered like
/// [`crate::losses::SceneGrads::blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub params: SceneParams,
    pub moments: Vec<AdamMoments>,
    /// Adam steps taken at the current scale.
    pub step: u64,
}

impl SceneState {
    pub fn new(params: SceneParams) -> Self {
        let n = params.width() * params.height();
        let mut moments = vec![AdamMoments::zeros(n); 4];
        moments.push(AdamMoments::zeros(6));
        moments.push(AdamMoments::zeros(6));
        moments.push(AdamMoments::zeros(n));
        Self {
            params,
            moments,
            step: 0,
        }
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Global iteration index across all scales.
    pub iteration: usize,
    /// Pyramid level being optimised, 0 = finest.
    pub scale: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Coarse-to-fine direct minimisation of the total loss for one scene.
///
/// Starts at the coarsest pyramid level from the initial state of
/// [`SceneParams::initial`], runs `iterations` Adam steps per level with
/// fresh moments, then bilinearly upsamples the per-pixel blocks to seed the
/// next finer level. The returned state is at full resolution.
pub fn optimize_scene(
    sample: &SceneSample,
    config: &OptimizeConfig,
) -> Result<(SceneState, Vec<TraceRow>)> {
    config.validate()?;
    if config.deterministic {
        par::serial(|| run(sample, config))
    } else {
        run(sample, config)
    }
}

fn run(sample: &SceneSample, config: &OptimizeConfig) -> Result<(SceneState, Vec<TraceRow>)> {
    let pyramid = ScenePyramid::build(
        &sample.images,
        sample.intrinsics,
        sample.baseline,
        config.scales,
    )?;
    let coarsest = pyramid.len() - 1;
    let kc = pyramid.levels[coarsest].intrinsics;
    let mut params = SceneParams::initial(kc.width, kc.height, sample.baseline, config.dmax);
    let mut trace = Vec::with_capacity(config.iterations * pyramid.len());
    let mut state = SceneState::new(params.clone());

    for level in (0..=coarsest).rev() {
        let k = pyramid.levels[level].intrinsics;
        if params.width() != k.width || params.height() != k.height {
            params = params.resized(k.width, k.height);
        }
        state = SceneState::new(params);
        for it in 0..config.iterations {
            let iteration = trace.len();
            let lr = lr_schedule(it, config.iterations, config.lr, &config.schedule);
            let (loss, mut grads) =
                total_loss(&state.params, &pyramid, level, &config.weights)?;
            if let Some(term) = loss.non_finite_term() {
                return Err(Error::NonFinite {
                    iteration,
                    term: term.to_string(),
                });
            }
            if let Some((name, _)) = grads
                .blocks()
                .into_iter()
                .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFinite {
                    iteration,
                    term: format!("gradient of {name}"),
                });
            }
            if it == 0 && loss.empty_terms > 0 {
                log::warn!(
                    "level {level}: {} loss terms have no valid pixels",
                    loss.empty_terms
                );
            }
            if config.freeze_stereo_pose {
                grads.stereo = [0.0; 6];
            }
            state.step += 1;
            step_all(&mut state, &grads, lr, sample.baseline, config)?;
            trace.push(TraceRow {
                iteration,
                scale: level,
                lr,
                loss,
            });
        }
        log::debug!(
            "level {level} ({}x{}) done, loss {:?}",
            k.width,
            k.height,
            trace.last().map(|r| r.loss.total)
        );
        params = state.params.clone();
    }
    Ok((state, trace))
}

fn step_all(
    state: &mut SceneState,
    grads: &crate::losses::SceneGrads,
    lr: f64,
    baseline: f64,
    config: &OptimizeConfig,
) -> Result<()> {
    let t = state.step;
    let cfg = &config.adam;
    let p = &mut state.params;
    let [m0, m1, m2, m3, ms, mt, mm] = &mut state.moments[..] else {
        return Err(Error::Invariant("moment buffers out of shape".into()));
    };
    for (field, (g, m)) in p
        .disparity
        .iter_mut()
        .zip(grads.disparity.iter().zip([m0, m1, m2, m3]))
    {
        let data = field.logits.data_mut();
        adam_step(data, g, m, t, lr, cfg)?;
        for l in data.iter_mut() {
            *l = l.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
        }
    }
    if !config.freeze_stereo_pose {
        let mut s = p.stereo.to_array();
        adam_step(&mut s, &grads.stereo, ms, t, lr, cfg)?;
        // Metric scale is unobservable from images alone; the calibrated
        // baseline fixes it.
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        if norm > 0.0 {
            for v in &mut s[..3] {
                *v *= baseline / norm;
            }
        }
        p.stereo = crate::geometry::Pose6::from_array(s);
    }
    let mut tp = p.temporal.to_array();
    adam_step(&mut tp, &grads.temporal, mt, t, lr, cfg)?;
    p.temporal = crate::geometry::Pose6::from_array(tp);
    adam_step(p.mask.logits.data_mut(), &grads.mask, mm, t, lr, cfg)
}
