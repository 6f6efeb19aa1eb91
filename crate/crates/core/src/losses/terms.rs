use crate::error::{Error, Result};
use crate::geometry::{warp_coordinates, warp_coordinates_vjp, Intrinsics, Pose6};
use crate::image::Image;
use crate::sampler::{bilinear_sample, sample_vjp, SampledImage};

use super::ssim::{ssim_taps, ssim_vjp_y};
use super::{sign, softplus, ExplainabilityMask, LossWeights, MaskedMean};

fn check_pair(recon: &SampledImage, target: &Image) -> Result<()> {
    recon.image.check_same_shape(target)?;
    if recon.valid.len() != target.pixel_count() {
        return Err(Error::dims(target.pixel_count(), recon.valid.len()));
    }
    Ok(())
}

/// Mean absolute difference over observed pixels and all channels.
pub fn l1_loss(recon: &SampledImage, target: &Image) -> Result<MaskedMean> {
    check_pair(recon, target)?;
    let c = target.channels();
    let (r, t) = (recon.image.data(), target.data());
    let mut sum = 0.0;
    let mut count = 0;
    for (p, &ok) in recon.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        count += 1;
        for k in 0..c {
            sum += (r[p * c + k] - t[p * c + k]).abs();
        }
    }
    if count == 0 {
        log::debug!("l1 loss over an empty support");
        return Ok(MaskedMean { value: 0.0, count });
    }
    Ok(MaskedMean {
        value: sum / (count * c) as f64,
        count,
    })
}

/// Explainability-weighted mix of SSIM and L1 dissimilarity:
/// `(1/N) sum_p E_p (alpha (1 - SSIM_p) / 2 + (1 - alpha) |r_p - t_p|)`
/// over the `N` observed pixels, both terms averaged over channels.
pub fn image_loss(
    recon: &SampledImage,
    target: &Image,
    mask: &ExplainabilityMask,
    weights: &LossWeights,
) -> Result<MaskedMean> {
    let e = mask.probabilities();
    e.check_size(target.width(), target.height())?;
    let (m, _, _) = image_loss_grad(recon, target, e.data(), weights, false)?;
    Ok(m)
}

/// [`image_loss`] with gradients on the reconstruction values and on the
/// mask probabilities.
pub(crate) fn image_loss_grad(
    recon: &SampledImage,
    target: &Image,
    e: &[f64],
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(MaskedMean, Vec<f64>, Vec<f64>)> {
    check_pair(recon, target)?;
    let (n_px, c) = (target.pixel_count(), target.channels());
    if e.len() != n_px {
        return Err(Error::dims(n_px, e.len()));
    }
    let count = recon.valid.iter().filter(|&&v| v).count();
    if count == 0 {
        log::debug!("image loss over an empty support");
        let (gr, ge) = if want_grad {
            (vec![0.0; n_px * c], vec![0.0; n_px])
        } else {
            (Vec::new(), Vec::new())
        };
        return Ok((MaskedMean { value: 0.0, count }, gr, ge));
    }
    let alpha = weights.alpha;
    let y = &recon.image;
    let valid = Some(recon.valid.as_slice());
    let taps = if alpha != 0.0 {
        ssim_taps(target, y, valid, weights.c1, weights.c2)
    } else {
        Vec::new()
    };
    let (r, t) = (y.data(), target.data());
    let inv_n = 1.0 / count as f64;
    let inv_c = 1.0 / c as f64;

    let mut per_pixel = vec![0.0; n_px];
    let mut sum = 0.0;
    for p in 0..n_px {
        if !recon.valid[p] {
            continue;
        }
        let mut l1 = 0.0;
        let mut ds = 0.0;
        for k in 0..c {
            l1 += (r[p * c + k] - t[p * c + k]).abs();
            if alpha != 0.0 {
                ds += 0.5 * (1.0 - taps[p * c + k].s);
            }
        }
        let l = alpha * ds * inv_c + (1.0 - alpha) * l1 * inv_c;
        per_pixel[p] = l;
        sum += e[p] * l;
    }
    let value = sum * inv_n;
    if !want_grad {
        return Ok((MaskedMean { value, count }, Vec::new(), Vec::new()));
    }

    let grad_e: Vec<f64> = per_pixel.iter().map(|l| l * inv_n).collect();
    let mut grad_r = vec![0.0; n_px * c];
    if alpha != 0.0 {
        let mut up = vec![0.0; n_px * c];
        for p in 0..n_px {
            if recon.valid[p] {
                let g = -0.5 * alpha * e[p] * inv_n * inv_c;
                up[p * c..(p + 1) * c].iter_mut().for_each(|u| *u = g);
            }
        }
        grad_r = ssim_vjp_y(target, y, valid, &taps, &up);
    }
    if alpha != 1.0 {
        for p in 0..n_px {
            if !recon.valid[p] {
                continue;
            }
            let g = (1.0 - alpha) * e[p] * inv_n * inv_c;
            for k in 0..c {
                let i = p * c + k;
                grad_r[i] += g * sign(r[i] - t[i]);
            }
        }
    }
    Ok((MaskedMean { value, count }, grad_r, grad_e))
}

/// Edge-aware smoothness of a single-channel field `disp` guided by `img`:
/// `(1/N) sum |d(x,y) - d(x+1,y)| e^{-gx} + |d(x,y) - d(x,y+1)| e^{-gy}`
/// where `gx`, `gy` are the channel-averaged absolute image differences and
/// `N = W * H`.
pub fn smoothness_loss(disp: &Image, img: &Image) -> Result<f64> {
    Ok(smoothness_loss_grad(disp, img, false)?.0)
}

pub(crate) fn smoothness_loss_grad(
    disp: &Image,
    img: &Image,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if disp.channels() != 1 {
        return Err(Error::dims("1 channel", disp.channels()));
    }
    disp.check_size(img.width(), img.height())?;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let d = disp.data();
    let n = (w * h) as f64;
    let edge = |a: usize, b: usize| -> f64 {
        let mut g = 0.0;
        for k in 0..c {
            g += (img.data()[a * c + k] - img.data()[b * c + k]).abs();
        }
        (-(g / c as f64)).exp()
    };
    let mut sum = 0.0;
    let mut grad = if want_grad { vec![0.0; w * h] } else { Vec::new() };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let j = i + 1;
                let diff = d[i] - d[j];
                let wgt = edge(i, j);
                sum += diff.abs() * wgt;
                if want_grad {
                    let g = sign(diff) * wgt / n;
                    grad[i] += g;
                    grad[j] -= g;
                }
            }
            if y + 1 < h {
                let j = i + w;
                let diff = d[i] - d[j];
                let wgt = edge(i, j);
                sum += diff.abs() * wgt;
                if want_grad {
                    let g = sign(diff) * wgt / n;
                    grad[i] += g;
                    grad[j] -= g;
                }
            }
        }
    }
    Ok((sum / n, grad))
}

/// Depth consistency between two views: the first depth map is warped with
/// itself as warp depth and sampled, then compared to the second map by
/// mean absolute difference over observed pixels.
pub fn consistency_loss(
    first: &Image,
    second: &Image,
    pose: &Pose6,
    k: &Intrinsics,
) -> Result<MaskedMean> {
    Ok(consistency_loss_grad(first, second, pose, k, false)?.0)
}

/// Gradients of [`consistency_loss`]: `(value, d/first, d/second, d/pose)`.
pub(crate) fn consistency_loss_grad(
    first: &Image,
    second: &Image,
    pose: &Pose6,
    k: &Intrinsics,
    want_grad: bool,
) -> Result<(MaskedMean, Vec<f64>, Vec<f64>, [f64; 6])> {
    first.check_same_shape(second)?;
    if first.channels() != 1 {
        return Err(Error::dims("1 channel", first.channels()));
    }
    let grid = warp_coordinates(first, pose, k)?;
    let sampled = bilinear_sample(first, &grid)?;
    let n_px = first.pixel_count();
    let (s, d2) = (sampled.image.data(), second.data());
    let count = grid.valid_count();
    if count == 0 {
        log::debug!("consistency loss over an empty support");
        let z = if want_grad { vec![0.0; n_px] } else { Vec::new() };
        return Ok((MaskedMean { value: 0.0, count }, z.clone(), z, [0.0; 6]));
    }
    let inv_n = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut up = vec![0.0; n_px];
    for i in 0..n_px {
        if grid.valid[i] {
            let diff = s[i] - d2[i];
            sum += diff.abs();
            up[i] = sign(diff) * inv_n;
        }
    }
    let m = MaskedMean {
        value: sum * inv_n,
        count,
    };
    if !want_grad {
        return Ok((m, Vec::new(), Vec::new(), [0.0; 6]));
    }
    let grad_second: Vec<f64> = up.iter().map(|g| -g).collect();
    let upstream = Image::from_field(first.width(), first.height(), up)?;
    let sg = sample_vjp(first, &grid, &upstream, true)?;
    let (mut grad_first, grad_pose) = warp_coordinates_vjp(first, pose, k, &grid, &sg.u, &sg.v)?;
    for (g, s) in grad_first.iter_mut().zip(sg.src.expect("requested").data()) {
        *g += s;
    }
    Ok((m, grad_first, grad_second, grad_pose))
}

/// Cross-entropy towards a mask of ones: `(1/N) sum -ln E`, evaluated from
/// the logits as `softplus(-logit)`.
pub fn explainability_loss(mask: &ExplainabilityMask) -> f64 {
    let l = mask.logits.data();
    l.iter().map(|&x| softplus(-x)).sum::<f64>() / l.len() as f64
}

/// The same loss on log-probabilities, with its gradient on them.
pub(crate) fn explainability_log_grad(log_e: &[f64]) -> (f64, Vec<f64>) {
    let n = log_e.len() as f64;
    let value = -log_e.iter().sum::<f64>() / n;
    (value, vec![-1.0 / n; log_e.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn l1_examples() {
        let a = Image::filled(4, 3, 3, 0.2);
        let b = Image::filled(4, 3, 3, 0.5);
        assert_eq!(l1_loss(&SampledImage::all_valid(a.clone()), &a).unwrap().value, 0.0);
        let m = l1_loss(&SampledImage::all_valid(a.clone()), &b).unwrap();
        assert!((m.value - 0.3).abs() < 1e-15);
        let empty = SampledImage {
            image: a.clone(),
            valid: vec![false; 12],
        };
        assert!(l1_loss(&empty, &b).unwrap().is_empty());
    }

    #[test]
    fn l1_matches_brute_force_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let r = rand_img(&mut rng, 6, 5, 3);
            let t = rand_img(&mut rng, 6, 5, 3);
            let valid: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.7)).collect();
            let mut s = 0.0;
            let mut n = 0;
            for y in 0..5 {
                for x in 0..6 {
                    if valid[y * 6 + x] {
                        n += 3;
                        for c in 0..3 {
                            s += (r.get(x, y, c) - t.get(x, y, c)).abs();
                        }
                    }
                }
            }
            let rec = SampledImage { image: r, valid };
            assert!((l1_loss(&rec, &t).unwrap().value - s / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn image_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = LossWeights::default();
        let t = rand_img(&mut rng, 6, 5, 3);
        let r = rand_img(&mut rng, 6, 5, 3);
        let ones = ExplainabilityMask::constant(6, 5, f64::INFINITY);
        let same = SampledImage::all_valid(t.clone());
        assert_eq!(image_loss(&same, &t, &ones, &w).unwrap().value, 0.0);
        let zero = ExplainabilityMask::constant(6, 5, f64::NEG_INFINITY);
        let rec = SampledImage::all_valid(r.clone());
        assert_eq!(image_loss(&rec, &t, &zero, &w).unwrap().value, 0.0);
        let l1_only = LossWeights { alpha: 0.0, ..w };
        let a = image_loss(&rec, &t, &ones, &l1_only).unwrap().value;
        let b = l1_loss(&rec, &t).unwrap().value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn image_loss_is_monotone_in_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = rand_img(&mut rng, 6, 5, 3);
        let r = SampledImage::all_valid(rand_img(&mut rng, 6, 5, 3));
        let mut logits = Image::filled(6, 5, 1, 0.0);
        let w = LossWeights::default();
        let mut last = image_loss(&r, &t, &ExplainabilityMask::from_logits(logits.clone()).unwrap(), &w)
            .unwrap()
            .value;
        for i in 0..30 {
            logits.data_mut()[i] = 2.0;
            let v = image_loss(&r, &t, &ExplainabilityMask::from_logits(logits.clone()).unwrap(), &w)
                .unwrap()
                .value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn image_loss_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            let t = rand_img(&mut rng, 8, 8, 3);
            let r = rand_img(&mut rng, 8, 8, 3);
            let valid: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.85)).collect();
            let e: Vec<f64> = (0..64).map(|_| rng.gen_range(0.05..0.95)).collect();
            let w = LossWeights::default();
            let rec = SampledImage {
                image: r.clone(),
                valid: valid.clone(),
            };
            let (_, gr, ge) = image_loss_grad(&rec, &t, &e, &w, true).unwrap();
            let f = |r: &Image, e: &[f64]| {
                let rec = SampledImage {
                    image: r.clone(),
                    valid: valid.clone(),
                };
                image_loss_grad(&rec, &t, e, &w, false).unwrap().0.value
            };
            let h = 1e-7;
            let mut worst = 0.0f64;
            let scale = gr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..192 {
                let mut rp = r.clone();
                rp.data_mut()[i] += h;
                let mut rm = r.clone();
                rm.data_mut()[i] -= h;
                let fd = (f(&rp, &e) - f(&rm, &e)) / (2.0 * h);
                worst = worst.max((fd - gr[i]).abs() / scale);
            }
            assert!(worst < 1e-4, "seed {seed}: {worst}");
            for i in 0..64 {
                let mut ep = e.clone();
                ep[i] += h;
                let mut em = e.clone();
                em[i] -= h;
                let fd = (f(&r, &ep) - f(&r, &em)) / (2.0 * h);
                assert!((fd - ge[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn smoothness_examples() {
        let img = Image::filled(7, 5, 3, 0.4);
        let flat = Image::filled(7, 5, 1, 0.12);
        assert_eq!(smoothness_loss(&flat, &img).unwrap(), 0.0);

        // one column step of height 0.25 between x = 2 and x = 3
        let step = Image::from_fn(7, 5, 1, |x, _, _| if x <= 2 { 0.1 } else { 0.35 });
        let v = smoothness_loss(&step, &img).unwrap();
        let want = 5.0 * 0.25 / 35.0;
        assert!((v - want).abs() < 1e-15);

        // image edge at the same place, colour difference 0.3 in every channel
        let edged = Image::from_fn(7, 5, 3, |x, _, _| if x <= 2 { 0.2 } else { 0.5 });
        let v = smoothness_loss(&step, &edged).unwrap();
        assert!((v - want * (-0.3f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn smoothness_ignores_constant_offsets_and_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let img = rand_img(&mut rng, 8, 8, 3);
        let d = rand_img(&mut rng, 8, 8, 1);
        let shifted = d.map(|v| v + 3.0);
        let a = smoothness_loss(&d, &img).unwrap();
        let b = smoothness_loss(&shifted, &img).unwrap();
        assert!((a - b).abs() < 1e-12);
        let (_, g) = smoothness_loss_grad(&d, &img, true).unwrap();
        let h = 1e-7;
        for i in 0..64 {
            let mut p = d.clone();
            p.data_mut()[i] += h;
            let mut m = d.clone();
            m.data_mut()[i] -= h;
            let fd = (smoothness_loss(&p, &img).unwrap() - smoothness_loss(&m, &img).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn consistency_examples() {
        let k = Intrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
        let a = Image::filled(8, 8, 1, 4.0);
        let b = Image::filled(8, 8, 1, 4.25);
        let id = Pose6::IDENTITY;
        assert_eq!(consistency_loss(&a, &a, &id, &k).unwrap().value, 0.0);
        assert!((consistency_loss(&a, &b, &id, &k).unwrap().value - 0.25).abs() < 1e-15);
        // rectified shift of 10*0.8/4 = 2 px keeps 6 of 8 columns
        let m = consistency_loss(&a, &a, &Pose6::translation(0.8, 0.0, 0.0), &k).unwrap();
        assert_eq!((m.value, m.count), (0.0, 48));
        assert!(consistency_loss(&a, &Image::filled(7, 8, 1, 1.0), &id, &k).is_err());
    }

    #[test]
    fn consistency_gradients_match_finite_differences() {
        let k = Intrinsics::new(9.0, 9.0, 3.5, 3.5, 8, 8).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(80 + seed);
            let d1 = Image::from_fn(8, 8, 1, |_, _, _| rng.gen_range(4.0..8.0));
            let d2 = Image::from_fn(8, 8, 1, |_, _, _| rng.gen_range(4.0..8.0));
            let pose = Pose6::new(
                [rng.gen_range(0.2..0.5), rng.gen_range(-0.05..0.05), rng.gen_range(-0.1..0.1)],
                [rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)],
            );
            let (_, g1, g2, gp) = consistency_loss_grad(&d1, &d2, &pose, &k, true).unwrap();
            let f = |a: &Image, b: &Image, p: &Pose6| consistency_loss(a, b, p, &k).unwrap().value;
            let h = 1e-7;
            let mut worst = 0.0f64;
            let scale = g1.iter().chain(&g2).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..64 {
                let (mut p, mut m) = (d1.clone(), d1.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let fd = (f(&p, &d2, &pose) - f(&m, &d2, &pose)) / (2.0 * h);
                worst = worst.max((fd - g1[i]).abs() / scale);
                let (mut p, mut m) = (d2.clone(), d2.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let fd = (f(&d1, &p, &pose) - f(&d1, &m, &pose)) / (2.0 * h);
                worst = worst.max((fd - g2[i]).abs() / scale);
            }
            assert!(worst < 1e-4, "seed {seed} depth {worst}");
            let pscale = gp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for a in 0..6 {
                let (mut p, mut m) = (pose.to_array(), pose.to_array());
                p[a] += h;
                m[a] -= h;
                let fd = (f(&d1, &d2, &Pose6::from_array(p)) - f(&d1, &d2, &Pose6::from_array(m)))
                    / (2.0 * h);
                assert!((fd - gp[a]).abs() / pscale < 1e-4, "seed {seed} pose {a}");
            }
        }
    }

    #[test]
    fn explainability_examples() {
        let near_one = ExplainabilityMask::constant(4, 4, 20.0);
        assert!(explainability_loss(&near_one) < 1e-8);
        let half = ExplainabilityMask::constant(4, 4, 0.0);
        assert!((explainability_loss(&half) - std::f64::consts::LN_2).abs() < 1e-15);
        let near_zero = ExplainabilityMask::constant(4, 4, -20.0);
        assert!((explainability_loss(&near_zero) - 20.0).abs() < 1e-8);
        let huge = ExplainabilityMask::constant(4, 4, -1e6);
        assert!(explainability_loss(&huge).is_finite());
    }
}
