//! Single-scale SSIM over 3x3 uniform windows.
//!
//! Windows are cropped to the pixels that exist and are observed, so every
//! observed pixel gets a value; a window holding a single pixel degenerates
//! to the luminance term.

use crate::error::Result;
use crate::image::Image;
use crate::par;

/// Per-pixel, per-channel SSIM plus the coefficients of its derivative with
/// respect to the second image: `dS_p/dy_k = a + b * x_k + g * y_k` for every
/// pixel `k` in the window of `p`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SsimTap {
    pub s: f64,
    pub a: f64,
    pub b: f64,
    pub g: f64,
}

/// Sums every 3x3 neighbourhood (cropped at the border) of a `w x h x c`
/// interleaved field, rows first then columns.
fn box3(field: &[f64], w: usize, h: usize, c: usize) -> Vec<f64> {
    let stride = w * c;
    let mut rows = vec![0.0; field.len()];
    par::for_each_chunk_mut(&mut rows, stride, |y, out| {
        let src = &field[y * stride..(y + 1) * stride];
        out.copy_from_slice(src);
        if w > 1 {
            for (o, s) in out[c..].iter_mut().zip(&src[..stride - c]) {
                *o += s;
            }
            for (o, s) in out[..stride - c].iter_mut().zip(&src[c..]) {
                *o += s;
            }
        }
    });
    let mut out = vec![0.0; field.len()];
    par::for_each_chunk_mut(&mut out, stride, |y, o| {
        o.copy_from_slice(&rows[y * stride..(y + 1) * stride]);
        if y > 0 {
            for (a, b) in o.iter_mut().zip(&rows[(y - 1) * stride..y * stride]) {
                *a += b;
            }
        }
        if y + 1 < h {
            for (a, b) in o.iter_mut().zip(&rows[(y + 1) * stride..(y + 2) * stride]) {
                *a += b;
            }
        }
    });
    out
}

/// SSIM and derivative coefficients from window sums.
#[inline]
fn tap(n: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64, c1: f64, c2: f64) -> SsimTap {
    let inv_n = 1.0 / n;
    let mx = sx * inv_n;
    let my = sy * inv_n;
    let vx = sxx * inv_n - mx * mx;
    let vy = syy * inv_n - my * my;
    let cov = sxy * inv_n - mx * my;
    let a_ = 2.0 * mx * my + c1;
    let b_ = 2.0 * cov + c2;
    let c_ = mx * mx + my * my + c1;
    let d_ = vx + vy + c2;
    let cd = c_ * d_;
    let inv_cd = 1.0 / cd;
    let s = a_ * b_ / cd;
    let k = 2.0 * inv_n * inv_cd;
    SsimTap {
        s,
        a: k * (mx * b_ - a_ * mx - s * my * d_ + s * c_ * my),
        b: k * a_,
        g: -2.0 * s * inv_n / d_,
    }
}

/// SSIM of `x` against `y` at every pixel and channel, 3x3 windows cropped
/// at the border.
pub fn ssim_map(x: &Image, y: &Image, c1: f64, c2: f64) -> Result<Image> {
    x.check_same_shape(y)?;
    let taps = ssim_taps(x, y, None, c1, c2);
    Image::new(
        x.width(),
        x.height(),
        x.channels(),
        taps.into_iter().map(|t| t.s).collect(),
    )
}

/// SSIM restricted to observed pixels; unobserved centres get a default tap.
pub(crate) fn ssim_taps(
    x: &Image,
    y: &Image,
    valid: Option<&[bool]>,
    c1: f64,
    c2: f64,
) -> Vec<SsimTap> {
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let is_valid = |p: usize| valid.is_none_or(|v| v[p]);
    let len = w * h * c;
    let (xd, yd) = (x.data(), y.data());
    let mut fields: [Vec<f64>; 5] = Default::default();
    for f in fields.iter_mut() {
        f.resize(len, 0.0);
    }
    let mut count = vec![0.0; w * h];
    for p in 0..w * h {
        if !is_valid(p) {
            continue;
        }
        count[p] = 1.0;
        for ch in 0..c {
            let i = p * c + ch;
            let (a, b) = (xd[i], yd[i]);
            fields[0][i] = a;
            fields[1][i] = b;
            fields[2][i] = a * a;
            fields[3][i] = b * b;
            fields[4][i] = a * b;
        }
    }
    let n = box3(&count, w, h, 1);
    let sums = fields.map(|f| box3(&f, w, h, c));
    let mut out = vec![SsimTap::default(); len];
    par::for_each_chunk_mut(&mut out, w * c, |row, taps| {
        for col in 0..w {
            let p = row * w + col;
            if !is_valid(p) {
                continue;
            }
            for ch in 0..c {
                let i = p * c + ch;
                taps[col * c + ch] = tap(
                    n[p], sums[0][i], sums[1][i], sums[2][i], sums[3][i], sums[4][i], c1, c2,
                );
            }
        }
    });
    out
}

/// Pulls per-centre cotangents `upstream[p, ch]` on SSIM values back onto
/// the pixels of `y`: each pixel gathers `u_p (a_p + b_p x_k + g_p y_k)`
/// over the observed windows containing it.
pub(crate) fn ssim_vjp_y(
    x: &Image,
    y: &Image,
    valid: Option<&[bool]>,
    taps: &[SsimTap],
    upstream: &[f64],
) -> Vec<f64> {
    let (w, h, c) = (x.width(), x.height(), x.channels());
    let is_valid = |p: usize| valid.is_none_or(|v| v[p]);
    let len = w * h * c;
    let mut ua = vec![0.0; len];
    let mut ub = vec![0.0; len];
    let mut ug = vec![0.0; len];
    for p in 0..w * h {
        if !is_valid(p) {
            continue;
        }
        for ch in 0..c {
            let i = p * c + ch;
            let (u, t) = (upstream[i], &taps[i]);
            ua[i] = u * t.a;
            ub[i] = u * t.b;
            ug[i] = u * t.g;
        }
    }
    let (sa, sb, sg) = (box3(&ua, w, h, c), box3(&ub, w, h, c), box3(&ug, w, h, c));
    let (xd, yd) = (x.data(), y.data());
    (0..len)
        .map(|i| {
            if is_valid(i / c) {
                sa[i] + sb[i] * xd[i] + sg[i] * yd[i]
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force windowed SSIM using centred moments.
    fn oracle(x: &Image, y: &Image, px: usize, py: usize, ch: usize, c1: f64, c2: f64) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (qx, qy) = (px as i64 + dx, py as i64 + dy);
                if qx < 0 || qy < 0 || qx >= x.width() as i64 || qy >= x.height() as i64 {
                    continue;
                }
                xs.push(x.get(qx as usize, qy as usize, ch));
                ys.push(y.get(qx as usize, qy as usize, ch));
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let vx = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n;
        let cov = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }

    fn random(rng: &mut ChaCha8Rng, c: usize) -> Image {
        Image::from_fn(8, 8, c, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let x = random(&mut rng, 3);
            let s = ssim_map(&x, &x, 0.01, 0.03).unwrap();
            assert!(s.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn constant_one_versus_zero() {
        let x = Image::filled(5, 4, 1, 1.0);
        let y = Image::filled(5, 4, 1, 0.0);
        let s = ssim_map(&x, &y, 0.01, 0.03).unwrap();
        for &v in s.data() {
            assert!((v - 0.01 / 1.01).abs() < 1e-15);
            assert!((v - 0.009901).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random(&mut rng, 3);
            let y = random(&mut rng, 3);
            let s = ssim_map(&x, &y, 0.01, 0.03).unwrap();
            let t = ssim_map(&y, &x, 0.01, 0.03).unwrap();
            for py in 0..8 {
                for px in 0..8 {
                    for ch in 0..3 {
                        let got = s.get(px, py, ch);
                        assert!((got - oracle(&x, &y, px, py, ch, 0.01, 0.03)).abs() < 1e-10);
                        assert!((got - t.get(px, py, ch)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn masked_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = random(&mut rng, 2);
            let y = random(&mut rng, 2);
            let valid: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.8)).collect();
            let up: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |y: &Image| -> f64 {
                let t = ssim_taps(&x, y, Some(&valid), 0.01, 0.03);
                (0..128)
                    .filter(|i| valid[i / 2])
                    .map(|i| t[i].s * up[i])
                    .sum()
            };
            let taps = ssim_taps(&x, &y, Some(&valid), 0.01, 0.03);
            let g = ssim_vjp_y(&x, &y, Some(&valid), &taps, &up);
            let h = 1e-6;
            for i in 0..128 {
                let mut yp = y.clone();
                yp.data_mut()[i] += h;
                let mut ym = y.clone();
                ym.data_mut()[i] -= h;
                let fd = (f(&yp) - f(&ym)) / (2.0 * h);
                if !valid[i / 2] {
                    assert_eq!(g[i], 0.0);
                    assert!(fd.abs() < 1e-9);
                } else {
                    assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{i}: {fd} {}", g[i]);
                }
            }
        }
    }
}
