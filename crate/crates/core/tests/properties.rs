use proptest::prelude::*;

use warpdepth::dataio::{
    augment, decode_pgm16, decode_ppm, encode_pgm16, encode_ppm, format_calibration, mirror_poses,
    parse_calibration_str, AugmentParams,
};
use warpdepth::evalkit::{d1_all, eigen_metrics, flip_merge};
use warpdepth::geometry::{rotation_exp, warp_coordinates, Pose6};
use warpdepth::losses::{smoothness_loss, ssim_map};
use warpdepth::optim::{lr_schedule, DisparityField, Schedule};
use warpdepth::{Image, Intrinsics};

fn image(max_w: usize, max_h: usize, c: usize) -> impl Strategy<Value = Image> {
    (1..=max_w, 1..=max_h).prop_flat_map(move |(w, h)| {
        prop::collection::vec(0.0f64..=1.0, w * h * c)
            .prop_map(move |d| Image::new(w, h, c, d).unwrap())
    })
}

fn image_pair(max_w: usize, max_h: usize, c: usize) -> impl Strategy<Value = (Image, Image)> {
    (1..=max_w, 1..=max_h).prop_flat_map(move |(w, h)| {
        let n = w * h * c;
        (
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(a, b)| {
                (Image::new(w, h, c, a).unwrap(), Image::new(w, h, c, b).unwrap())
            })
    })
}

fn depths(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.5f64..40.0, n),
        prop::collection::vec(0.5f64..40.0, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_one_on_itself((x, y) in image_pair(9, 7, 3)) {
        let a = ssim_map(&x, &y, 0.01, 0.03).unwrap();
        let b = ssim_map(&y, &x, 0.01, 0.03).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
            prop_assert!(*p <= 1.0 + 1e-12);
        }
        let s = ssim_map(&x, &x, 0.01, 0.03).unwrap();
        prop_assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn smoothness_ignores_a_constant_offset(
        (d, img) in image_pair(10, 8, 1), offset in -5.0f64..5.0,
    ) {
        let a = smoothness_loss(&d, &img).unwrap();
        let b = smoothness_loss(&d.map(|v| v + offset), &img).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn disparity_stays_inside_its_range(
        logits in prop::collection::vec(-1e3f64..1e3, 1..64), dmax in 0.01f64..1.0,
    ) {
        let n = logits.len();
        let f = DisparityField::from_logits(Image::new(n, 1, 1, logits).unwrap(), dmax).unwrap();
        for s in f.normalized().data() {
            prop_assert!(*s > 0.0 && *s < dmax);
        }
    }

    #[test]
    fn identity_pose_keeps_the_grid(w in 2usize..20, h in 2usize..12, d in 0.1f64..100.0) {
        let k = Intrinsics::new(10.0, 11.0, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h).unwrap();
        let depth = Image::filled(w, h, 1, d);
        let g = warp_coordinates(&depth, &Pose6::IDENTITY, &k).unwrap();
        for i in 0..w * h {
            prop_assert_eq!(g.u[i], (i % w) as f64);
            prop_assert_eq!(g.v[i], (i / w) as f64);
        }
    }

    #[test]
    fn rotations_are_orthonormal(r in prop::array::uniform3(-3.0f64..3.0)) {
        let m = rotation_exp(r);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                prop_assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flip_merge_is_bounded_by_its_inputs((a, b) in image_pair(40, 4, 1)) {
        let m = flip_merge(&a, &b).unwrap();
        for ((o, x), y) in m.data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!(*o >= x.min(*y) - 1e-15 && *o <= x.max(*y) + 1e-15);
        }
    }

    #[test]
    fn eigen_metrics_are_scale_consistent((p, g) in depths(30), k in 0.2f64..3.0) {
        let (w, h) = (6, 5);
        let valid = vec![true; w * h];
        let cap = 1e6;
        let pi = Image::new(w, h, 1, p).unwrap();
        let gi = Image::new(w, h, 1, g).unwrap();
        let a = eigen_metrics(&pi, &gi, &valid, cap).unwrap();
        let b = eigen_metrics(&pi.map(|v| v * k), &gi.map(|v| v * k), &valid, cap).unwrap();
        prop_assert!((a.abs_rel - b.abs_rel).abs() <= 1e-12);
        prop_assert!((a.rmse_log - b.rmse_log).abs() <= 1e-12);
        prop_assert!((a.rmse * k - b.rmse).abs() <= 1e-12 * b.rmse.max(1.0));
        prop_assert!((a.sq_rel * k - b.sq_rel).abs() <= 1e-12 * b.sq_rel.max(1.0));
        // ratios computed from scaled values can round across a threshold
        prop_assert!((a.delta1 - b.delta1).abs() <= 1.0 / 30.0 + 1e-12);
    }

    #[test]
    fn d1_ignores_pixel_order((p, g) in depths(24), seed in any::<u64>()) {
        let p: Vec<f64> = p.iter().map(|v| v * 10.0).collect();
        let g: Vec<f64> = g.iter().map(|v| v * 10.0).collect();
        let valid: Vec<bool> = (0..24).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        let mut order: Vec<usize> = (0..24).collect();
        order.sort_by_key(|&i| (seed.rotate_left(i as u32) ^ i as u64, i));
        let perm = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pv: Vec<bool> = order.iter().map(|&i| valid[i]).collect();
        let a = d1_all(&Image::new(24, 1, 1, p.clone()).unwrap(), &Image::new(24, 1, 1, g.clone()).unwrap(), &valid).unwrap();
        let b = d1_all(&Image::new(24, 1, 1, perm(&p)).unwrap(), &Image::new(24, 1, 1, perm(&g)).unwrap(), &pv).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn augmentation_keeps_intensities_in_range(
        img in image(12, 8, 3),
        flip in any::<bool>(),
        gamma in 0.8f64..=1.2,
        brightness in 0.5f64..=2.0,
        color in prop::array::uniform3(0.8f64..=1.2),
    ) {
        let p = AugmentParams { flip, gamma, brightness, color };
        let out = augment(&img, &p);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let flips = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
        prop_assert_eq!(augment(&augment(&img, &flips), &flips), img);
    }

    #[test]
    fn mirroring_poses_is_an_involution(
        s in prop::array::uniform6(-1.0f64..1.0), t in prop::array::uniform6(-1.0f64..1.0),
    ) {
        let (a, b) = (Pose6::from_array(s), Pose6::from_array(t));
        let (ma, mb) = mirror_poses(&a, &b);
        let (ra, rb) = mirror_poses(&ma, &mb);
        for (x, y) in ra.to_array().iter().chain(&rb.to_array()).zip(s.iter().chain(&t)) {
            prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", (ra, rb), (a, b));
        }
    }

    #[test]
    fn ppm_round_trips_quantised_images(
        (w, h, bytes) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h * 3))
        }),
    ) {
        let img = Image::new(w, h, 3, bytes.iter().map(|&b| f64::from(b) / 255.0).collect()).unwrap();
        let enc = encode_ppm(&img).unwrap();
        prop_assert_eq!(&enc[enc.len() - bytes.len()..], &bytes[..]);
        prop_assert_eq!(decode_ppm(&enc).unwrap(), img);
    }

    #[test]
    fn pgm16_round_trip_is_within_quantisation(
        values in prop::collection::vec(0.0f64..255.0, 1..40),
    ) {
        let n = values.len();
        let map = Image::new(n, 1, 1, values.clone()).unwrap();
        let back = decode_pgm16(&encode_pgm16(&map, None).unwrap()).unwrap();
        for (i, v) in values.iter().enumerate() {
            if back.valid[i] {
                prop_assert!((back.values.data()[i] - v).abs() <= 1.0 / 512.0);
            } else {
                // only values that round to the reserved code read back invalid
                prop_assert!(*v < 1.0 / 512.0);
            }
        }
    }

    #[test]
    fn calibration_text_round_trips(
        fx in 1.0f64..2000.0, c in 0.0f64..1.0, w in 2usize..4000, b in 0.01f64..2.0,
    ) {
        let cx = c * (w - 1) as f64;
        let k = Intrinsics::new(fx, fx * 1.01, cx, cx / 2.0, w, w / 2 + 1).unwrap();
        let (k2, b2) = parse_calibration_str(&format_calibration(&k, b)).unwrap();
        prop_assert_eq!(k2, k);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn schedule_never_increases(n in 1usize..500, base in 1e-6f64..1.0) {
        let s = Schedule::default();
        let lrs: Vec<f64> = (0..n).map(|i| lr_schedule(i, n, base, &s)).collect();
        prop_assert_eq!(lrs[0], base);
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs.iter().all(|&l| l >= base / 4.0));
    }
}
