//! `key=value` calibration files with the keys fx, fy, cx, cy, width,
//! height and baseline. Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

const KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "baseline"];

pub fn parse_calibration_str(text: &str) -> Result<(Intrinsics, f64)> {
    let mut map = BTreeMap::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(Error::Parse {
                offset: start,
                message: format!("expected key=value, got `{content}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Parse {
                offset: start,
                message: format!("unknown key `{k}`"),
            });
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse {
                offset: start,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    let get = |key: &str| -> Result<f64> {
        let v = map.get(key).ok_or_else(|| Error::MissingKey(key.into()))?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::NonNumeric {
                key: key.into(),
                value: v.clone(),
            })
    };
    let size = |key: &str| -> Result<usize> {
        let v = get(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Invariant(format!("{key} must be a whole number, got {v}")));
        }
        Ok(v as usize)
    };
    let k = Intrinsics::new(
        get("fx")?,
        get("fy")?,
        get("cx")?,
        get("cy")?,
        size("width")?,
        size("height")?,
    )?;
    let baseline = get("baseline")?;
    if !(baseline > 0.0) {
        return Err(Error::Invariant(format!("baseline must be > 0, got {baseline}")));
    }
    Ok((k, baseline))
}

pub fn parse_calibration(path: impl AsRef<Path>) -> Result<(Intrinsics, f64)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration_str(&text)
}

/// Round-trippable text form; floats use the shortest exact representation.
pub fn format_calibration(k: &Intrinsics, baseline: f64) -> String {
    format!(
        "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\nbaseline={}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height, baseline
    )
}

pub fn save_calibration(k: &Intrinsics, baseline: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_calibration(k, baseline)).map_err(|e| Error::io(path, e))
}
