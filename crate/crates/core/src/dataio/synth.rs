//! Ray-traced textured planes seen by a stereo rig at two instants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose6, RigidTransform, Vec3};
use crate::image::Image;
use crate::par;

use super::{GroundTruth, SceneSample};

/// A plane `Z = depth + slope_x * X + slope_y * Y` in left-camera
/// coordinates, optionally limited to a rectangle of `(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneSpec {
    pub depth: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    /// `[x_min, x_max, y_min, y_max]` in metres.
    pub extent: Option<[f64; 4]>,
    pub texture_seed: u64,
}

impl Default for PlaneSpec {
    fn default() -> Self {
        Self {
            depth: 2.5,
            slope_x: 0.0,
            slope_y: 0.0,
            extent: None,
            texture_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal lengths as a fraction of the width; principal point at the
    /// image centre unless given.
    pub focal: f64,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub baseline: f64,
    /// Next left camera relative to the current left camera.
    pub temporal: Pose6,
    pub planes: Vec<PlaneSpec>,
    /// Texture cycles per metre of the base octave.
    pub frequency: f64,
    pub octaves: u32,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            focal: 0.58,
            cx: None,
            cy: None,
            baseline: 0.54,
            temporal: Pose6::translation(0.0, 0.0, 0.05),
            planes: vec![PlaneSpec::default()],
            frequency: 4.0,
            octaves: 3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// One slanted plane receding to the right.
    pub fn slanted() -> Self {
        Self {
            planes: vec![PlaneSpec {
                depth: 2.5,
                slope_x: 0.4,
                slope_y: 0.1,
                ..PlaneSpec::default()
            }],
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let f = self.focal * self.width as f64;
        Intrinsics::new(
            f,
            f,
            self.cx.unwrap_or((self.width as f64 - 1.0) / 2.0),
            self.cy.unwrap_or((self.height as f64 - 1.0) / 2.0),
            self.width,
            self.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics()?;
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "baseline must be > 0, got {}",
                self.baseline
            )));
        }
        if self.planes.is_empty() {
            return Err(Error::InvalidArgument("scene has no planes".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            if !(p.depth > 0.0) || !p.depth.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "plane {i}: depth must be > 0, got {}",
                    p.depth
                )));
            }
            if let Some(e) = p.extent {
                if !(e[0] < e[1] && e[2] < e[3]) {
                    return Err(Error::InvalidArgument(format!("plane {i}: empty extent {e:?}")));
                }
            }
        }
        if !(self.frequency > 0.0) || self.octaves == 0 {
            return Err(Error::InvalidArgument(
                "texture needs a positive frequency and at least one octave".into(),
            ));
        }
        Ok(())
    }
}

/// Camera-to-left transforms of the four views.
pub fn camera_poses(stereo: &Pose6, temporal: &Pose6) -> [RigidTransform; 4] {
    let s = stereo.to_transform();
    let t = temporal.to_transform();
    [RigidTransform::IDENTITY, s, t, t.compose(&s)]
}

fn hash(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 29;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinear value noise with quintic fade, in `[0, 1)`.
fn value_noise(seed: u64, p: Vec3) -> f64 {
    let cell = p.map(f64::floor);
    let f = [p[0] - cell[0], p[1] - cell[1], p[2] - cell[2]].map(fade);
    let (x, y, z) = (cell[0] as i64, cell[1] as i64, cell[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                acc += w * hash(seed, x + dx, y + dy, z + dz);
            }
        }
    }
    acc
}

/// Multi-octave colour texture of a world point, each channel in `(0, 1)`.
pub fn texture(seed: u64, frequency: f64, octaves: u32, p: Vec3) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut amp = 1.0;
        let mut freq = frequency;
        let mut sum = 0.0;
        let mut norm = 0.0;
        for oct in 0..octaves {
            let s = seed
                .wrapping_mul(31)
                .wrapping_add(c as u64 * 1_000_003 + oct as u64 * 7919);
            sum += amp * value_noise(s, [p[0] * freq, p[1] * freq, p[2] * freq]);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        let n = sum / norm;
        *o = 0.5 + 0.5 * (4.0 * (n - 0.5)).tanh();
    }
    out
}

struct Hit {
    depth: f64,
    color: [f64; 3],
}

fn trace(spec: &SceneSpec, cam: &RigidTransform, ray: Vec3) -> Option<Hit> {
    let o = cam.translation;
    let d = cam.apply(ray);
    let d = [d[0] - o[0], d[1] - o[1], d[2] - o[2]];
    let mut best: Option<(f64, usize, Vec3)> = None;
    for (i, pl) in spec.planes.iter().enumerate() {
        let denom = d[2] - pl.slope_x * d[0] - pl.slope_y * d[1];
        if denom.abs() < 1e-15 {
            continue;
        }
        let lambda = (pl.depth + pl.slope_x * o[0] + pl.slope_y * o[1] - o[2]) / denom;
        if !(lambda > 0.0) {
            continue;
        }
        let x = [o[0] + lambda * d[0], o[1] + lambda * d[1], o[2] + lambda * d[2]];
        if let Some(e) = pl.extent {
            if x[0] < e[0] || x[0] > e[1] || x[1] < e[2] || x[1] > e[3] {
                continue;
            }
        }
        if best.is_none_or(|(l, _, _)| lambda < l) {
            best = Some((lambda, i, x));
        }
    }
    best.map(|(lambda, i, x)| Hit {
        // the camera ray has unit z, so lambda is the z-depth
        depth: lambda,
        color: texture(
            spec.seed ^ spec.planes[i].texture_seed.wrapping_mul(0x2545_f491_4f6c_dd1d),
            spec.frequency,
            spec.octaves,
            x,
        ),
    })
}

fn render(spec: &SceneSpec, k: &Intrinsics, cam: &RigidTransform) -> Result<(Image, Image)> {
    let (w, h) = (k.width, k.height);
    let rows = par::map_range(h, |y| {
        let mut color = Vec::with_capacity(w * 3);
        let mut depth = Vec::with_capacity(w);
        for x in 0..w {
            let hit = trace(spec, cam, k.ray(x as f64, y as f64))
                .ok_or_else(|| Error::InvalidArgument(format!("pixel ({x}, {y}) sees no plane")))?;
            color.extend_from_slice(&hit.color);
            depth.push(hit.depth);
        }
        Ok::<_, Error>((color, depth))
    });
    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for r in rows {
        let (c, d) = r?;
        color.extend(c);
        depth.extend(d);
    }
    Ok((Image::new(w, h, 3, color)?, Image::new(w, h, 1, depth)?))
}

/// Renders the four views with ground-truth depth. The right camera sits at
/// `(baseline, 0, 0)`; the next-frame cameras follow `spec.temporal`; every
/// pixel must see a plane in front of its camera.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneSample> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let stereo = Pose6::translation(spec.baseline, 0.0, 0.0);
    let cams = camera_poses(&stereo, &spec.temporal);
    let mut images = Vec::with_capacity(4);
    let mut depths = Vec::with_capacity(4);
    for cam in &cams {
        let (img, d) = render(spec, &k, cam)?;
        images.push(img);
        depths.push(d);
    }
    let images: [Image; 4] = images.try_into().expect("four views");
    let depths: [Image; 4] = depths.try_into().expect("four views");
    Ok(SceneSample {
        images,
        intrinsics: k,
        baseline: spec.baseline,
        ground_truth: Some(GroundTruth {
            depths,
            stereo,
            temporal: spec.temporal,
        }),
    })
}
