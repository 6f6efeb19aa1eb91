//! Pinhole camera, rigid motions and the per-pixel inverse-warp coordinates.
//!
//! Poses map target-camera coordinates into source-camera coordinates. With
//! the left camera as reference, the right camera sits at `+baseline` on the
//! x axis, so the stereo pose is `t = (B, 0, 0)` and a right-image pixel
//! samples the left image `fx * B / depth` pixels further right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Points closer to the image plane than this are treated as unprojectable.
pub const MIN_PROJECT_DEPTH: f64 = 1e-12;

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

/// Pinhole intrinsics in pixels. Pixel `(x, y)` has its centre at the
/// continuous coordinate `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invariant("intrinsics must be finite".into()));
        }
        if !(self.fx > 0.0) {
            return Err(Error::Invariant(format!("fx must be > 0, got {}", self.fx)));
        }
        if !(self.fy > 0.0) {
            return Err(Error::Invariant(format!("fy must be > 0, got {}", self.fy)));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Invariant(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx) {
            return Err(Error::Invariant(format!(
                "cx must lie in [0, {}), got {}",
                self.width, self.cx
            )));
        }
        if !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Invariant(format!(
                "cy must lie in [0, {}), got {}",
                self.height, self.cy
            )));
        }
        Ok(())
    }

    /// Intrinsics of the 2x2 box-downsampled image.
    pub fn half(&self) -> Intrinsics {
        Intrinsics {
            fx: 0.5 * self.fx,
            fy: 0.5 * self.fy,
            cx: 0.5 * (self.cx + 0.5) - 0.5,
            cy: 0.5 * (self.cy + 0.5) - 0.5,
            width: self.width / 2,
            height: self.height / 2,
        }
    }

    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Camera-frame point for pixel `(u, v)` observed at `depth` metres.
pub fn backproject(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "backprojection depth must be positive and finite, got {depth}"
        )));
    }
    Ok([
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub valid: bool,
}

/// Pinhole projection. Points with `z <= 1e-12` come back flagged invalid
/// with `(u, v)` set to zero.
pub fn project(p: Vec3, k: &Intrinsics) -> Projection {
    let z = p[2];
    if !(z > MIN_PROJECT_DEPTH) {
        return Projection {
            u: 0.0,
            v: 0.0,
            z,
            valid: false,
        };
    }
    Projection {
        u: k.fx * p[0] / z + k.cx,
        v: k.fy * p[1] / z + k.cy,
        z,
        valid: true,
    }
}

/// Six-parameter rigid motion: translation in metres and an axis-angle
/// rotation vector in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub t: Vec3,
    pub r: Vec3,
}

impl Pose6 {
    pub const IDENTITY: Pose6 = Pose6 {
        t: [0.0; 3],
        r: [0.0; 3],
    };

    pub fn new(t: Vec3, r: Vec3) -> Self {
        Self { t, r }
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            t: [tx, ty, tz],
            r: [0.0; 3],
        }
    }

    /// `[tx, ty, tz, rx, ry, rz]`
    pub fn to_array(&self) -> [f64; 6] {
        [self.t[0], self.t[1], self.t[2], self.r[0], self.r[1], self.r[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            t: [a[0], a[1], a[2]],
            r: [a[3], a[4], a[5]],
        }
    }

    pub fn from_slice(a: &[f64]) -> Result<Self> {
        let arr: [f64; 6] = a.try_into().map_err(|_| {
            Error::InvalidArgument(format!("a pose has 6 components, got {}", a.len()))
        })?;
        Ok(Self::from_array(arr))
    }

    pub fn rotation_angle(&self) -> f64 {
        norm(self.r)
    }

    /// Whether the rotation vector lies in the canonical range `|r| < pi`.
    pub fn is_canonical(&self) -> bool {
        self.rotation_angle() < std::f64::consts::PI
    }

    pub fn to_transform(&self) -> RigidTransform {
        pose_to_transform(self)
    }
}

/// Rotation block plus translation of a 4x4 homogeneous transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let q = mat_vec(&self.rotation, p);
        [
            q[0] + self.translation[0],
            q[1] + self.translation[1],
            q[2] + self.translation[2],
        ]
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = mat_mul(&self.rotation, &other.rotation);
        let translation = self.apply(other.translation);
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, self.translation);
        RigidTransform {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn rotation_det(&self) -> f64 {
        let r = &self.rotation;
        dot(r[0], cross(r[1], r[2]))
    }

    /// Back to axis-angle (logarithm map), `|r| <= pi`.
    pub fn to_pose(&self) -> Pose6 {
        Pose6 {
            t: self.translation,
            r: rotation_log(&self.rotation),
        }
    }

    /// Largest absolute entry difference to another transform.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let a = self.to_matrix4();
        let b = other.to_matrix4();
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// `sin(t)/t` and `(1 - cos t)/t^2` for the Rodrigues formula.
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < 1e-8 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    }
}

/// `a'(t)/t` and `b'(t)/t` for the coefficients above.
fn rodrigues_coeff_derivs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-2 {
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// Rotation matrix from an axis-angle vector (exponential map).
pub fn rotation_exp(r: Vec3) -> Mat3 {
    let (a, b) = rodrigues_coeffs(norm(r));
    let k: Mat3 = [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]];
    let k2 = mat_mul(&k, &k);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            m[i][j] = id + a * k[i][j] + b * k2[i][j];
        }
    }
    m
}

/// Axis-angle vector of a rotation matrix (logarithm map).
pub fn rotation_log(m: &Mat3) -> Vec3 {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = [m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]];
    if theta < 1e-6 {
        // sin(t)/t ~ 1 - t^2/6
        let f = 0.5 * (1.0 + theta * theta / 6.0);
        return [w[0] * f, w[1] * f, w[2] * f];
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the antisymmetric part vanishes; read the axis off R + I.
        let mut best = 0;
        for i in 1..3 {
            if m[i][i] > m[best][best] {
                best = i;
            }
        }
        let mut axis = [0.0; 3];
        for (i, a) in axis.iter_mut().enumerate() {
            let id = if i == best { 1.0 } else { 0.0 };
            *a = m[i][best] + id;
        }
        let n = norm(axis);
        let mut axis = [axis[0] / n, axis[1] / n, axis[2] / n];
        if dot(axis, w) < 0.0 {
            axis = [-axis[0], -axis[1], -axis[2]];
        }
        return [axis[0] * theta, axis[1] * theta, axis[2] * theta];
    }
    let f = theta / (2.0 * theta.sin());
    [w[0] * f, w[1] * f, w[2] * f]
}

/// Rotates `p` by `r` and returns the Jacobian columns `d(R p)/d r_i`.
pub fn rotate_with_jacobian(r: Vec3, p: Vec3) -> (Vec3, [Vec3; 3]) {
    let theta = norm(r);
    let (a, b) = rodrigues_coeffs(theta);
    let (da, db) = rodrigues_coeff_derivs(theta);
    let rxp = cross(r, p);
    let rxrxp = cross(r, rxp);
    let rp = [
        p[0] + a * rxp[0] + b * rxrxp[0],
        p[1] + a * rxp[1] + b * rxrxp[1],
        p[2] + a * rxp[2] + b * rxrxp[2],
    ];
    let mut jac = [[0.0; 3]; 3];
    for (i, col) in jac.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let exp = cross(e, p);
        let e_rxp = cross(e, rxp);
        let r_exp = cross(r, exp);
        for k in 0..3 {
            col[k] = da * r[i] * rxp[k]
                + a * exp[k]
                + db * r[i] * rxrxp[k]
                + b * (e_rxp[k] + r_exp[k]);
        }
    }
    (rp, jac)
}

/// Homogeneous transform of a 6-DoF pose via the exponential map.
pub fn pose_to_transform(p: &Pose6) -> RigidTransform {
    RigidTransform {
        rotation: rotation_exp(p.r),
        translation: p.t,
    }
}

/// Small-rotation composition: the componentwise sum of both 6-vectors.
pub fn compose_small(a: &Pose6, b: &Pose6) -> Pose6 {
    let (x, y) = (a.to_array(), b.to_array());
    let mut s = [0.0; 6];
    for i in 0..6 {
        s[i] = x[i] + y[i];
    }
    Pose6::from_array(s)
}

/// Per-pixel continuous source coordinates of an inverse warp.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CoordGrid {
    /// The pixel grid itself, every entry valid.
    pub fn identity(width: usize, height: usize) -> Self {
        let n = width * height;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Self {
            width,
            height,
            u,
            v,
            valid: vec![true; n],
        }
    }

    /// Builds a grid from raw coordinates; validity is the in-bounds test
    /// against a `src_width x src_height` source.
    pub fn from_coords(
        width: usize,
        height: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        src_width: usize,
        src_height: usize,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::dims(
                format!("{n} coordinates"),
                format!("{}/{}", u.len(), v.len()),
            ));
        }
        let valid = u
            .iter()
            .zip(&v)
            .map(|(&a, &b)| in_bounds(a, b, src_width, src_height))
            .collect();
        Ok(Self {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[inline]
pub(crate) fn in_bounds(u: f64, v: f64, width: usize, height: usize) -> bool {
    u >= 0.0 && u <= (width - 1) as f64 && v >= 0.0 && v <= (height - 1) as f64
}

fn check_depth_map(depth: &Image, k: &Intrinsics) -> Result<()> {
    if depth.channels() != 1 {
        return Err(Error::dims("1 channel", depth.channels()));
    }
    depth.check_size(k.width, k.height)?;
    if let Some(i) = depth.data().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "depth must be positive, got {} at index {i}",
            depth.data()[i]
        )));
    }
    Ok(())
}

/// Direction of the transformed ray scaled by inverse depth:
/// `w = R * ray + t / d`, so the source point is `d * w`.
#[inline]
fn scaled_point(rot: &Mat3, ray: Vec3, inv_depth: f64, t: Vec3) -> Vec3 {
    let q = mat_vec(rot, ray);
    [
        q[0] + inv_depth * t[0],
        q[1] + inv_depth * t[1],
        q[2] + inv_depth * t[2],
    ]
}

/// Inverse warp: for every target pixel, back-project with the target-view
/// depth, move the point into the source camera with `pose`, and project.
///
/// Coordinates are accumulated as `x + fx * (w_x / w_z - ray_x)`, so an
/// identity pose reproduces the pixel grid bit-exactly.
pub fn warp_coordinates(depth: &Image, pose: &Pose6, k: &Intrinsics) -> Result<CoordGrid> {
    check_depth_map(depth, k)?;
    let (w, h) = (k.width, k.height);
    let rot = rotation_exp(pose.r);
    let t = pose.t;
    let d = depth.data();
    let rows = par::map_range(h, |y| {
        let mut out = Vec::with_capacity(w);
        for x in 0..w {
            let ray = k.ray(x as f64, y as f64);
            let depth = d[y * w + x];
            let p = scaled_point(&rot, ray, 1.0 / depth, t);
            let z = depth * p[2];
            if !(z > MIN_PROJECT_DEPTH) {
                out.push((0.0, 0.0, false));
                continue;
            }
            let u = x as f64 + k.fx * (p[0] / p[2] - ray[0]);
            let v = y as f64 + k.fy * (p[1] / p[2] - ray[1]);
            out.push((u, v, in_bounds(u, v, w, h)));
        }
        out
    });
    let mut grid = CoordGrid {
        width: w,
        height: h,
        u: Vec::with_capacity(w * h),
        v: Vec::with_capacity(w * h),
        valid: Vec::with_capacity(w * h),
    };
    for (u, v, ok) in rows.into_iter().flatten() {
        grid.u.push(u);
        grid.v.push(v);
        grid.valid.push(ok);
    }
    Ok(grid)
}

/// Vector-Jacobian product of [`warp_coordinates`]: pulls cotangents on the
/// `(u, v)` coordinates back onto the depth map and the six pose parameters.
/// Invalid pixels contribute nothing.
pub fn warp_coordinates_vjp(
    depth: &Image,
    pose: &Pose6,
    k: &Intrinsics,
    grid: &CoordGrid,
    grad_u: &[f64],
    grad_v: &[f64],
) -> Result<(Vec<f64>, [f64; 6])> {
    check_depth_map(depth, k)?;
    let (w, h) = (k.width, k.height);
    if grid.len() != w * h || grad_u.len() != w * h || grad_v.len() != w * h {
        return Err(Error::dims(format!("{} entries", w * h), grid.len()));
    }
    let t = pose.t;
    let d = depth.data();
    // R p and its Jacobian are linear in p; tabulate them on the unit axes.
    let basis = [0, 1, 2].map(|j| {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        rotate_with_jacobian(pose.r, e)
    });
    let rotate = |p: Vec3| {
        let mut rp = [0.0; 3];
        let mut jac = [[0.0; 3]; 3];
        for (j, (col, dcol)) in basis.iter().enumerate() {
            for b in 0..3 {
                rp[b] += p[j] * col[b];
                for (ja, da) in jac.iter_mut().zip(dcol) {
                    ja[b] += p[j] * da[b];
                }
            }
        }
        (rp, jac)
    };
    let rows = par::map_range(h, |y| {
        let mut g_depth = vec![0.0; w];
        let mut g_pose = [0.0; 6];
        for x in 0..w {
            let i = y * w + x;
            if !grid.valid[i] {
                continue;
            }
            let (gu, gv) = (grad_u[i], grad_v[i]);
            if gu == 0.0 && gv == 0.0 {
                continue;
            }
            let ray = k.ray(x as f64, y as f64);
            let rho = 1.0 / d[i];
            let (rray, jac) = rotate(ray);
            let p = [
                rray[0] + rho * t[0],
                rray[1] + rho * t[1],
                rray[2] + rho * t[2],
            ];
            let iz = 1.0 / p[2];
            // cotangent on the scaled point p
            let gp = [
                gu * k.fx * iz,
                gv * k.fy * iz,
                -(gu * k.fx * p[0] + gv * k.fy * p[1]) * iz * iz,
            ];
            g_depth[x] = -dot(gp, t) * rho * rho;
            for a in 0..3 {
                g_pose[a] += gp[a] * rho;
                g_pose[3 + a] += dot(gp, jac[a]);
            }
        }
        (g_depth, g_pose)
    });
    let mut grad_depth = Vec::with_capacity(w * h);
    let mut grad_pose = [0.0; 6];
    for (gd, gp) in rows {
        grad_depth.extend(gd);
        for a in 0..6 {
            grad_pose[a] += gp[a];
        }
    }
    Ok((grad_depth, grad_pose))
}
