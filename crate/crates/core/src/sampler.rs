//! Differentiable bilinear sampling of an image at continuous coordinates.

use crate::error::{Error, Result};
use crate::geometry::CoordGrid;
use crate::image::Image;
use crate::par;

/// Output of [`bilinear_sample`]: sampled values plus the validity inherited
/// from the coordinate grid. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledImage {
    pub image: Image,
    pub valid: Vec<bool>,
}

impl SampledImage {
    /// Wraps a fully observed image.
    pub fn all_valid(image: Image) -> Self {
        let n = image.pixel_count();
        Self {
            image,
            valid: vec![true; n],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// The four taps and fractional offsets for a coordinate. At the last
/// column/row the cell is shifted one step back with a fraction of 1, so
/// the derivative there is the backward difference and every other
/// integer coordinate uses the forward (right/lower) neighbour.
#[inline]
fn cell(p: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let f = p.floor();
    let mut i0 = f as usize;
    let mut t = p - f;
    if i0 >= n - 1 {
        i0 = n - 2;
        t = p - i0 as f64;
    }
    (i0, i0 + 1, t)
}

fn check(src: &Image, grid: &CoordGrid) -> Result<()> {
    if grid.u.len() != grid.len() || grid.v.len() != grid.len() || grid.valid.len() != grid.len()
    {
        return Err(Error::dims(
            format!("{} grid entries", grid.len()),
            format!("{}/{}/{}", grid.u.len(), grid.v.len(), grid.valid.len()),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty coordinate grid".into()));
    }
    for i in 0..grid.len() {
        if grid.valid[i] {
            let (u, v) = (grid.u[i], grid.v[i]);
            if !crate::geometry::in_bounds(u, v, src.width(), src.height()) {
                return Err(Error::InvalidArgument(format!(
                    "grid entry {i} ({u}, {v}) is flagged valid but lies outside {}x{}",
                    src.width(),
                    src.height()
                )));
            }
        }
    }
    Ok(())
}

/// Samples `src` at every grid coordinate with bilinear interpolation.
pub fn bilinear_sample(src: &Image, grid: &CoordGrid) -> Result<SampledImage> {
    check(src, grid)?;
    let (w, h, c) = (grid.width, grid.height, src.channels());
    let (sw, sh) = (src.width(), src.height());
    let sdata = src.data();
    let mut out = vec![0.0; w * h * c];
    par::for_each_chunk_mut(&mut out, w * c, |y, row| {
        for x in 0..w {
            let i = y * w + x;
            if !grid.valid[i] {
                continue;
            }
            let (x0, x1, tx) = cell(grid.u[i], sw);
            let (y0, y1, ty) = cell(grid.v[i], sh);
            let w00 = (1.0 - tx) * (1.0 - ty);
            let w10 = tx * (1.0 - ty);
            let w01 = (1.0 - tx) * ty;
            let w11 = tx * ty;
            let (a, b) = ((y0 * sw + x0) * c, (y0 * sw + x1) * c);
            let (d, e) = ((y1 * sw + x0) * c, (y1 * sw + x1) * c);
            for k in 0..c {
                row[x * c + k] = w00 * sdata[a + k]
                    + w10 * sdata[b + k]
                    + w01 * sdata[d + k]
                    + w11 * sdata[e + k];
            }
        }
    });
    Ok(SampledImage {
        image: Image::new(w, h, c, out)?,
        valid: grid.valid.clone(),
    })
}

/// Gradients of a bilinear sample with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    /// Same shape as the source image; `None` when not requested.
    pub src: Option<Image>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Vector-Jacobian product of [`bilinear_sample`]. `upstream` has the shape
/// of the sampled output. Invalid pixels receive zero gradient.
pub fn bilinear_sample_vjp(
    src: &Image,
    grid: &CoordGrid,
    upstream: &Image,
) -> Result<(Image, Vec<f64>, Vec<f64>)> {
    let g = sample_vjp(src, grid, upstream, true)?;
    Ok((g.src.expect("requested"), g.u, g.v))
}

pub(crate) fn sample_vjp(
    src: &Image,
    grid: &CoordGrid,
    upstream: &Image,
    want_src: bool,
) -> Result<SampleGrad> {
    check(src, grid)?;
    let (w, h, c) = (grid.width, grid.height, src.channels());
    if upstream.width() != w || upstream.height() != h || upstream.channels() != c {
        return Err(Error::dims(
            format!("{w}x{h}x{c}"),
            upstream.shape_string(),
        ));
    }
    let (sw, sh) = (src.width(), src.height());
    let sdata = src.data();
    let up = upstream.data();
    let rows = par::map_range(h, |y| {
        let mut gu = vec![0.0; w];
        let mut gv = vec![0.0; w];
        for x in 0..w {
            let i = y * w + x;
            if !grid.valid[i] {
                continue;
            }
            let (x0, x1, tx) = cell(grid.u[i], sw);
            let (y0, y1, ty) = cell(grid.v[i], sh);
            let (a, b) = ((y0 * sw + x0) * c, (y0 * sw + x1) * c);
            let (d, e) = ((y1 * sw + x0) * c, (y1 * sw + x1) * c);
            let (mut su, mut sv) = (0.0, 0.0);
            for k in 0..c {
                let g = up[i * c + k];
                let (i00, i10, i01, i11) = (sdata[a + k], sdata[b + k], sdata[d + k], sdata[e + k]);
                if x1 != x0 {
                    su += g * ((1.0 - ty) * (i10 - i00) + ty * (i11 - i01));
                }
                if y1 != y0 {
                    sv += g * ((1.0 - tx) * (i01 - i00) + tx * (i11 - i10));
                }
            }
            gu[x] = su;
            gv[x] = sv;
        }
        (gu, gv)
    });
    let mut gu = Vec::with_capacity(w * h);
    let mut gv = Vec::with_capacity(w * h);
    for (a, b) in rows {
        gu.extend(a);
        gv.extend(b);
    }

    let src_grad = if want_src {
        // Scatter in row-major order so the accumulation is reproducible.
        let mut gs = Image::zeros(sw, sh, c);
        let out = gs.data_mut();
        for i in 0..w * h {
            if !grid.valid[i] {
                continue;
            }
            let (x0, x1, tx) = cell(grid.u[i], sw);
            let (y0, y1, ty) = cell(grid.v[i], sh);
            let taps = [
                ((y0 * sw + x0) * c, (1.0 - tx) * (1.0 - ty)),
                ((y0 * sw + x1) * c, tx * (1.0 - ty)),
                ((y1 * sw + x0) * c, (1.0 - tx) * ty),
                ((y1 * sw + x1) * c, tx * ty),
            ];
            for k in 0..c {
                let g = up[i * c + k];
                if g == 0.0 {
                    continue;
                }
                for &(base, wgt) in &taps {
                    out[base + k] += wgt * g;
                }
            }
        }
        Some(gs)
    } else {
        None
    };
    Ok(SampleGrad {
        src: src_grad,
        u: gu,
        v: gv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..1.0))
    }

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> CoordGrid {
        let n = w * h;
        let u = (0..n).map(|_| rng.gen_range(-1.0..w as f64)).collect();
        let v = (0..n).map(|_| rng.gen_range(-1.0..h as f64)).collect();
        CoordGrid::from_coords(w, h, u, v, w, h).unwrap()
    }

    /// Direct four-neighbour formula, written independently of `cell`.
    fn scalar_oracle(src: &Image, u: f64, v: f64, k: usize) -> f64 {
        let (w, h) = (src.width() as f64, src.height() as f64);
        let x0 = u.floor().min(w - 2.0);
        let y0 = v.floor().min(h - 2.0);
        let (a, b) = (u - x0, v - y0);
        let at = |x: f64, y: f64| src.get(x as usize, y as usize, k);
        (1.0 - a) * (1.0 - b) * at(x0, y0)
            + a * (1.0 - b) * at(x0 + 1.0, y0)
            + (1.0 - a) * b * at(x0, y0 + 1.0)
            + a * b * at(x0 + 1.0, y0 + 1.0)
    }

    #[test]
    fn integer_grid_reproduces_source_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_image(&mut rng, 9, 6, 3);
        let s = bilinear_sample(&src, &CoordGrid::identity(9, 6)).unwrap();
        assert_eq!(s.image, src);
        assert!(s.valid.iter().all(|&v| v));
    }

    #[test]
    fn midpoint_is_average() {
        let src = Image::from_field(2, 2, vec![0.2, 0.6, 0.0, 0.0]).unwrap();
        let g = CoordGrid::from_coords(1, 1, vec![0.5], vec![0.0], 2, 2).unwrap();
        let s = bilinear_sample(&src, &g).unwrap();
        assert!((s.image.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_oracle_and_masks_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let src = random_image(&mut rng, 8, 8, 3);
            let grid = random_grid(&mut rng, 8, 8);
            let s = bilinear_sample(&src, &grid).unwrap();
            for i in 0..64 {
                for k in 0..3 {
                    let got = s.image.data()[i * 3 + k];
                    if grid.valid[i] {
                        let want = scalar_oracle(&src, grid.u[i], grid.v[i], k);
                        assert!((got - want).abs() < 1e-14);
                    } else {
                        assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_image(&mut rng, 8, 8, 1);
        let grid = random_grid(&mut rng, 8, 8);
        let (gs, gu, gv) = bilinear_sample_vjp(&src, &grid, &Image::zeros(8, 8, 1)).unwrap();
        assert!(gs.data().iter().all(|&v| v == 0.0));
        assert!(gu.iter().chain(&gv).all(|&v| v == 0.0));
    }

    #[test]
    fn integer_grid_gradients_are_forward_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_image(&mut rng, 6, 5, 1);
        let up = random_image(&mut rng, 6, 5, 1);
        let (gs, gu, gv) = bilinear_sample_vjp(&src, &CoordGrid::identity(6, 5), &up).unwrap();
        assert_eq!(gs, up);
        for y in 0..5 {
            for x in 0..6 {
                let i = y * 6 + x;
                let g = up.data()[i];
                let dx = if x + 1 < 6 {
                    src.get(x + 1, y, 0) - src.get(x, y, 0)
                } else {
                    src.get(x, y, 0) - src.get(x - 1, y, 0)
                };
                let dy = if y + 1 < 5 {
                    src.get(x, y + 1, 0) - src.get(x, y, 0)
                } else {
                    src.get(x, y, 0) - src.get(x, y - 1, 0)
                };
                assert!((gu[i] - g * dx).abs() < 1e-15);
                assert!((gv[i] - g * dy).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let src = random_image(&mut rng, 8, 8, 3);
            let n = 64;
            // interior coordinates away from cell boundaries
            let u: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0..7) as f64 + rng.gen_range(0.05..0.95))
                .collect();
            let v: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0..7) as f64 + rng.gen_range(0.05..0.95))
                .collect();
            let grid = CoordGrid::from_coords(8, 8, u, v, 8, 8).unwrap();
            let up = random_image(&mut rng, 8, 8, 3);
            let (gs, gu, gv) = bilinear_sample_vjp(&src, &grid, &up).unwrap();
            let loss = |s: &Image, g: &CoordGrid| -> f64 {
                let out = bilinear_sample(s, g).unwrap();
                out.image.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-4;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            for i in 0..n {
                let mut gp = grid.clone();
                gp.u[i] += h;
                let mut gm = grid.clone();
                gm.u[i] -= h;
                let fd = (loss(&src, &gp) - loss(&src, &gm)) / (2.0 * h);
                assert!(rel(fd, gu[i]) < 1e-4, "seed {seed} u{i}");
                let mut gp = grid.clone();
                gp.v[i] += h;
                let mut gm = grid.clone();
                gm.v[i] -= h;
                let fd = (loss(&src, &gp) - loss(&src, &gm)) / (2.0 * h);
                assert!(rel(fd, gv[i]) < 1e-4, "seed {seed} v{i}");
            }
            for j in 0..src.data().len() {
                let mut sp = src.clone();
                sp.data_mut()[j] += h;
                let mut sm = src.clone();
                sm.data_mut()[j] -= h;
                let fd = (loss(&sp, &grid) - loss(&sm, &grid)) / (2.0 * h);
                assert!((fd - gs.data()[j]).abs() < 1e-9 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn rejects_valid_flag_outside_source() {
        let src = Image::zeros(4, 4, 1);
        let mut g = CoordGrid::identity(4, 4);
        g.u[0] = 3.5;
        assert!(bilinear_sample(&src, &g).is_err());
    }
}
