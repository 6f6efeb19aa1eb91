//! Photometric augmentation (gamma, brightness, per-channel colour) and the
//! stereo-consistent horizontal flip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, Pose6, RigidTransform};
use crate::image::Image;

use super::{GroundTruth, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub gamma: f64,
    pub brightness: f64,
    pub color: [f64; 3],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        gamma: 1.0,
        brightness: 1.0,
        color: [1.0; 3],
    };

    /// Gamma in [0.8, 1.2], brightness in [0.5, 2], colour factors in
    /// [0.8, 1.2], flip with probability 1/2.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            flip: rng.gen_bool(0.5),
            gamma: rng.gen_range(0.8..=1.2),
            brightness: rng.gen_range(0.5..=2.0),
            color: [
                rng.gen_range(0.8..=1.2),
                rng.gen_range(0.8..=1.2),
                rng.gen_range(0.8..=1.2),
            ],
        }
    }
}

/// `clamp(in^gamma * brightness * color_c, 0, 1)`, after the optional flip.
/// Single-channel images use the first colour factor.
pub fn augment(img: &Image, p: &AugmentParams) -> Image {
    let mut out = if p.flip {
        img.flip_horizontal()
    } else {
        img.clone()
    };
    let c = out.channels();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let f = p.color[if c == 3 { i % 3 } else { 0 }];
        *v = (v.max(0.0).powf(p.gamma) * p.brightness * f).clamp(0.0, 1.0);
    }
    out
}

const MIRROR: RigidTransform = RigidTransform {
    rotation: [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    translation: [0.0; 3],
};

/// Stereo and temporal poses of the horizontally mirrored rig, in which the
/// mirrored right camera becomes the left one. Applying it twice gives the
/// input back.
pub fn mirror_poses(stereo: &Pose6, temporal: &Pose6) -> (Pose6, Pose6) {
    let s = stereo.to_transform();
    let t = temporal.to_transform();
    // new left motion: S^-1 T S seen in the mirror
    let motion = s.inverse().compose(&t).compose(&s);
    (
        MIRROR.compose(&s.inverse()).compose(&MIRROR).to_pose(),
        MIRROR.compose(&motion).compose(&MIRROR).to_pose(),
    )
}

/// Applies the same parameters to all four images. A flip mirrors the
/// scene, which turns the right camera into the left one, so the views are
/// swapped pairwise, the principal point is mirrored and ground truth is
/// carried along.
pub fn augment_sample(sample: &SceneSample, p: &AugmentParams) -> SceneSample {
    let [l, r, l1, r1] = &sample.images;
    let images = if p.flip {
        [r, l, r1, l1].map(|i| augment(i, p))
    } else {
        [l, r, l1, r1].map(|i| augment(i, p))
    };
    if !p.flip {
        return SceneSample {
            images,
            ..sample.clone()
        };
    }
    let k = sample.intrinsics;
    let intrinsics = Intrinsics {
        cx: k.width as f64 - 1.0 - k.cx,
        ..k
    };
    let ground_truth = sample.ground_truth.as_ref().map(|gt| {
        let [dl, dr, dl1, dr1] = &gt.depths;
        let depths = [dr, dl, dr1, dl1].map(Image::flip_horizontal);
        let (stereo, temporal) = mirror_poses(&gt.stereo, &gt.temporal);
        GroundTruth {
            depths,
            stereo,
            temporal,
        }
    });
    SceneSample {
        images,
        intrinsics,
        baseline: sample.baseline,
        ground_truth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_scene, SceneSpec};
    use crate::geometry::warp_coordinates;
    use crate::sampler::bilinear_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Image::from_fn(7, 3, 3, |_, _, _| rng.gen_range(0.0..1.0));
        assert_eq!(augment(&img, &AugmentParams::IDENTITY), img);
        let flip = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment(&augment(&img, &flip), &flip), img);
    }

    #[test]
    fn brightness_clamps() {
        let img = Image::filled(1, 1, 3, 0.5);
        let p = AugmentParams {
            brightness: 2.0,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment(&img, &p).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn random_params_keep_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Image::from_fn(9, 4, 3, |_, _, _| rng.gen_range(0.0..=1.0));
        for _ in 0..200 {
            let p = AugmentParams::random(&mut rng);
            assert!((0.8..=1.2).contains(&p.gamma) && (0.5..=2.0).contains(&p.brightness));
            assert!(p.color.iter().all(|c| (0.8..=1.2).contains(c)));
            let out = augment(&img, &p);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn flipped_sample_is_a_valid_stereo_scene() {
        let spec = SceneSpec {
            width: 256,
            height: 128,
            ..SceneSpec::slanted()
        };
        let s = synth_scene(&spec).unwrap();
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        let f = augment_sample(&s, &p);
        let gt = f.ground_truth.as_ref().unwrap();
        assert!((gt.stereo.t[0] - spec.baseline).abs() < 1e-12);
        assert!(gt.stereo.t[1].abs() < 1e-12 && gt.stereo.t[2].abs() < 1e-12);
        let grid = warp_coordinates(&gt.depths[1], &gt.stereo, &f.intrinsics).unwrap();
        let rec = bilinear_sample(&f.images[0], &grid).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..grid.len() {
            if rec.valid[i] {
                sum += (rec.image.data()[i * 3] - f.images[1].data()[i * 3]).abs();
                n += 1;
            }
        }
        assert!(sum / (n as f64) < 0.02, "{}", sum / n as f64);
        assert_eq!(augment_sample(&f, &p), s);
    }
}
