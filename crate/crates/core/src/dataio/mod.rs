//! File formats, scene manifests, the synthetic scene renderer and data
//! augmentation.

mod augment;
mod calib;
mod netpbm;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose6};
use crate::image::Image;
use crate::optim::View;

pub use augment::{augment, augment_sample, mirror_poses, AugmentParams};
pub use calib::{format_calibration, parse_calibration, parse_calibration_str, save_calibration};
pub use netpbm::{
    decode_pgm16, decode_pgm8, decode_ppm, encode_pgm16, encode_pgm8, encode_ppm,
    load_depth_pgm16, load_pgm8, load_ppm, save_depth_pgm16, save_pgm8, save_ppm, Map16,
};
pub use synth::{camera_poses, synth_scene, texture, PlaneSpec, SceneSpec};

/// Known depths and poses of a rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Indexed by [`View::index`].
    pub depths: [Image; 4],
    pub stereo: Pose6,
    pub temporal: Pose6,
}

/// Two stereo frames at consecutive instants with their calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `I_l, I_r, I_{l+1}, I_{r+1}`.
    pub images: [Image; 4],
    pub intrinsics: Intrinsics,
    pub baseline: f64,
    pub ground_truth: Option<GroundTruth>,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.baseline > 0.0) {
            return Err(Error::Invariant(format!(
                "baseline must be > 0, got {}",
                self.baseline
            )));
        }
        for img in &self.images {
            img.check_size(self.intrinsics.width, self.intrinsics.height)?;
            img.check_same_shape(&self.images[0])?;
        }
        Ok(())
    }

    pub fn image(&self, v: View) -> &Image {
        &self.images[v.index()]
    }
}

/// Paths named by a manifest, resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub calibration: PathBuf,
    /// `l, r, l1, r1`.
    pub images: [PathBuf; 4],
}

/// Five non-comment lines: calibration, then the images in the order
/// l, r, l+1, r+1. Relative paths are taken relative to the manifest.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if entries.len() != 5 {
        return Err(Error::InvalidArgument(format!(
            "{}: manifest needs 5 entries (calibration, l, r, l1, r1), found {}",
            path.display(),
            entries.len()
        )));
    }
    let mut it = entries.into_iter();
    let calibration = it.next().expect("five entries");
    let images = [(); 4].map(|_| it.next().expect("five entries"));
    Ok(Manifest {
        calibration,
        images,
    })
}

/// Loads the calibration and the four images named by a manifest.
pub fn load_sample(manifest: impl AsRef<Path>) -> Result<SceneSample> {
    let m = parse_manifest(manifest)?;
    let (intrinsics, baseline) = parse_calibration(&m.calibration)?;
    let mut images = Vec::with_capacity(4);
    for p in &m.images {
        images.push(load_ppm(p)?);
    }
    let sample = SceneSample {
        images: images.try_into().expect("four images"),
        intrinsics,
        baseline,
        ground_truth: None,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes `calib.txt`, `{l,r,l1,r1}.ppm`, ground-truth depth maps
/// `gt_depth_*.pgm` and poses, and `scene.txt`; returns the manifest path.
pub fn save_sample(sample: &SceneSample, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_calibration(&sample.intrinsics, sample.baseline, dir.join("calib.txt"))?;
    let mut manifest = String::from("calib.txt\n");
    for v in View::ALL {
        let name = format!("{}.ppm", v.tag());
        save_ppm(sample.image(v), dir.join(&name))?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    if let Some(gt) = &sample.ground_truth {
        for v in View::ALL {
            save_depth_pgm16(
                &gt.depths[v.index()],
                None,
                dir.join(format!("gt_depth_{}.pgm", v.tag())),
            )?;
        }
        write_pose(&gt.stereo, dir.join("gt_pose_stereo.txt"))?;
        write_pose(&gt.temporal, dir.join("gt_pose_temporal.txt"))?;
    }
    let path = dir.join("scene.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// `tx ty tz rx ry rz` on one line.
pub fn format_pose(p: &Pose6) -> String {
    let a = p.to_array();
    format!("{} {} {} {} {} {}\n", a[0], a[1], a[2], a[3], a[4], a[5])
}

pub fn parse_pose(text: &str) -> Result<Pose6> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("pose component `{t}` is not a number")))
        })
        .collect::<Result<_>>()?;
    Pose6::from_slice(&vals)
}

pub fn write_pose(p: &Pose6, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pose(p)).map_err(|e| Error::io(path, e))
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose6> {
    let path = path.as_ref();
    parse_pose(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
