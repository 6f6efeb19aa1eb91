use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use warpdepth::dataio::{
    self, augment_sample, load_depth_pgm16, mirror_poses, parse_calibration, save_depth_pgm16,
    save_pgm8, synth_scene, write_pose, AugmentParams, SceneSpec,
};
use warpdepth::evalkit::{d1_all, eigen_metrics, flip_merge, select_eval_map, MetricReport};
use warpdepth::losses::{LossWeights, SceneGrads};
use warpdepth::optim::{gradcheck_suite, optimize_scene, OptimizeConfig, SceneParams, TraceRow, View};
use warpdepth::{Image, Intrinsics};

use crate::args::{
    EvalArgs, EvalView, Format, GradcheckArgs, LossArgs, MapKind, OptimizeArgs, PostprocessArgs,
    Preset, SynthArgs,
};

/// Returned by a command whose computation ran but did not meet its bar.
#[derive(Debug)]
pub struct Failed;

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for Failed {}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SceneSpec>(&text)
                .with_context(|| format!("parsing scene spec {}", path.display()))?
        }
        None => match args.preset {
            Preset::Plane => SceneSpec::default(),
            Preset::Slanted => SceneSpec::slanted(),
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(w) = args.width {
        spec.width = w;
    }
    if let Some(h) = args.height {
        spec.height = h;
    }
    let sample = synth_scene(&spec)?;
    let manifest = dataio::save_sample(&sample, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn loss_weights(args: &LossArgs) -> Result<LossWeights> {
    let mut w = LossWeights::default();
    for entry in &args.weights {
        let (k, v) = entry
            .split_once('=')
            .with_context(|| format!("weight `{entry}` is not key=value"))?;
        let v: f64 = v
            .trim()
            .parse()
            .with_context(|| format!("weight `{entry}` has a non-numeric value"))?;
        match k.trim() {
            "image" => w.w_image = v,
            "ds" => w.w_ds = v,
            "lr" => w.w_lr = v,
            "exp" => w.w_exp = v,
            other => bail!("unknown weight `{other}` (expected image, ds, lr or exp)"),
        }
    }
    if let Some(a) = args.alpha {
        w.alpha = a;
    }
    if let Some(c) = args.c1 {
        w.c1 = c;
    }
    if let Some(c) = args.c2 {
        w.c2 = c;
    }
    w.validate()?;
    Ok(w)
}

fn optimize_config(args: &OptimizeArgs) -> Result<OptimizeConfig> {
    let cfg = OptimizeConfig {
        iterations: args.iterations,
        scales: args.scales as usize,
        lr: args.lr,
        weights: loss_weights(&args.loss)?,
        dmax: args.dmax,
        seed: args.seed,
        deterministic: args.deterministic,
        freeze_stereo_pose: args.freeze_stereo_pose,
        ..OptimizeConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Undoes a flip augmentation on the recovered parameters.
fn unflip(params: &SceneParams) -> SceneParams {
    let mut out = params.clone();
    let swapped = [View::Right, View::Left, View::NextRight, View::NextLeft];
    for (v, src) in View::ALL.into_iter().zip(swapped) {
        out.disparity[v.index()].logits = params.field(src).logits.flip_horizontal();
    }
    let (stereo, temporal) = mirror_poses(&params.stereo, &params.temporal);
    out.stereo = stereo;
    out.temporal = temporal;
    out.mask.logits = params.mask.logits.flip_horizontal();
    out
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,scale,lr,image,smooth,consistency,explainability,total\n");
    for r in trace {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.scale, r.lr, l.image, l.smooth, l.consistency, l.explainability, l.total
        );
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn optimize_one(manifest: &Path, out: &Path, args: &OptimizeArgs, cfg: &OptimizeConfig) -> Result<()> {
    let mut sample = dataio::load_sample(manifest)
        .with_context(|| format!("loading scene {}", manifest.display()))?;
    let aug = if args.augment {
        let p = AugmentParams::random(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        log::info!("{}: augmentation {p:?}", manifest.display());
        sample = augment_sample(&sample, &p);
        Some(p)
    } else {
        None
    };
    let (state, trace) = optimize_scene(&sample, cfg)
        .with_context(|| format!("optimising {}", manifest.display()))?;
    let params = match aug {
        Some(p) if p.flip => unflip(&state.params),
        _ => state.params,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for v in View::ALL {
        save_depth_pgm16(
            &params.field(v).pixels(),
            None,
            out.join(format!("disp_{}.pgm", v.tag())),
        )?;
    }
    let k = dataio::parse_calibration(dataio::parse_manifest(manifest)?.calibration)?.0;
    let field = select_eval_map(&params, args.eval_view == EvalView::Left);
    save_depth_pgm16(&field.depth(&k, sample.baseline)?, None, out.join("depth.pgm"))?;
    write_pose(&params.stereo, out.join("pose_stereo.txt"))?;
    write_pose(&params.temporal, out.join("pose_temporal.txt"))?;
    save_pgm8(&params.mask.probabilities(), out.join("mask.pgm"))?;
    write_text(&out.join("loss_trace.csv"), &trace_csv(&trace))?;
    if let Some(last) = trace.last() {
        log::info!("{}: final loss {}", manifest.display(), last.loss.total);
    }
    Ok(())
}

fn scene_dir(out: &Path, manifest: &Path, index: usize) -> PathBuf {
    let stem = manifest
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    out.join(format!("{index:03}_{stem}"))
}

pub fn optimize(args: &OptimizeArgs) -> Result<()> {
    let cfg = optimize_config(args)?;
    if args.manifests.len() == 1 {
        return optimize_one(&args.manifests[0], &args.out, args, &cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs as usize)
        .build()
        .context("building the worker pool")?;
    let results: Vec<Result<()>> = pool.install(|| {
        args.manifests
            .par_iter()
            .enumerate()
            .map(|(i, m)| optimize_one(m, &scene_dir(&args.out, m, i), args, &cfg))
            .collect()
    });
    let failures: Vec<String> = results
        .into_iter()
        .zip(&args.manifests)
        .filter_map(|(r, m)| r.err().map(|e| format!("{}: {e:#}", m.display())))
        .collect();
    ensure!(failures.is_empty(), "{} scene(s) failed:\n{}", failures.len(), failures.join("\n"));
    Ok(())
}

pub fn postprocess(args: &PostprocessArgs) -> Result<()> {
    let a = load_depth_pgm16(&args.disp)?;
    let b = load_depth_pgm16(&args.disp_flipped)?;
    let (bv, bvalid) = if args.reflip {
        let w = b.values.width();
        let flipped_valid = (0..b.valid.len())
            .map(|i| b.valid[i - i % w + (w - 1 - i % w)])
            .collect();
        (b.values.flip_horizontal(), flipped_valid)
    } else {
        (b.values, b.valid)
    };
    let merged = flip_merge(&a.values, &bv)
        .with_context(|| format!("merging {} and {}", args.disp.display(), args.disp_flipped.display()))?;
    let valid: Vec<bool> = a.valid.iter().zip(&bvalid).map(|(x, y)| *x && *y).collect();
    save_depth_pgm16(&merged, Some(&valid), &args.out)?;
    Ok(())
}

/// Depth <-> pixel disparity, both ways `fx * B / x`.
fn invert(map: &Image, k: &Intrinsics, baseline: f64) -> Image {
    let f = k.fx * baseline;
    map.map(|v| if v > 0.0 { f / v } else { 0.0 })
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let pred = load_depth_pgm16(&args.pred)?;
    let gt = load_depth_pgm16(&args.gt)?;
    ensure!(
        pred.values.same_shape(&gt.values),
        "prediction is {} but ground truth is {}",
        pred.values.shape_string(),
        gt.values.shape_string()
    );
    let calib = match &args.calib {
        Some(p) => Some(parse_calibration(p)?),
        None => None,
    };
    let valid = &gt.valid;
    let mut report = match args.kind {
        MapKind::Depth => {
            let mut r = eigen_metrics(&pred.values, &gt.values, valid, args.cap)?;
            if let Some((k, b)) = calib {
                r.d1_all = Some(d1_all(&invert(&pred.values, &k, b), &invert(&gt.values, &k, b), valid)?);
            }
            r
        }
        MapKind::Disparity => {
            let Some((k, b)) = calib else {
                bail!("--calib is required to evaluate disparity maps");
            };
            let mut r = eigen_metrics(&invert(&pred.values, &k, b), &invert(&gt.values, &k, b), valid, args.cap)?;
            r.d1_all = Some(d1_all(&pred.values, &gt.values, valid)?);
            r
        }
    };
    report.cap = args.cap;
    print!("{}", format_report(&report, args.format));
    Ok(())
}

fn format_report(r: &MetricReport, format: Format) -> String {
    match format {
        Format::Text => r.key_values(),
        Format::Csv => format!("{}\n{}\n", MetricReport::CSV_HEADER, r.csv_row()),
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let weights = loss_weights(&args.loss)?;
    ensure!(args.size >= 2, "scene size must be at least 2");
    ensure!(args.eps > 0.0, "eps must be positive");
    let flip = match &args.inject_sign_flip {
        Some(name) => {
            let names: Vec<&str> = SceneGrads::zeros(0).blocks().iter().map(|b| b.0).collect();
            Some(
                names
                    .iter()
                    .position(|n| n == name)
                    .with_context(|| format!("unknown block `{name}`; one of {names:?}"))?,
            )
        }
        None => None,
    };
    let runs = gradcheck_suite(args.seed, args.scenes, args.size, &weights, args.eps, flip)?;
    let mut out = String::new();
    let mut failed = Vec::new();
    if args.format == Format::Csv {
        out.push_str("seed,block,rel_error,max_abs_diff,scale\n");
    }
    for (seed, report) in &runs {
        for b in &report.blocks {
            match args.format {
                Format::Csv => {
                    let _ = writeln!(out, "{seed},{},{},{},{}", b.block, b.rel_error, b.max_abs_diff, b.scale);
                }
                Format::Text => {
                    let _ = writeln!(out, "seed={seed} block={} rel_error={:.3e}", b.block, b.rel_error);
                }
            }
            if !(b.rel_error < args.tolerance) {
                failed.push(format!("seed {seed} block {} error {:.3e}", b.block, b.rel_error));
            }
        }
    }
    let worst = runs.iter().map(|(_, r)| r.max_error()).fold(0.0, f64::max);
    if args.format == Format::Text {
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict}: {} scenes, max relative error {worst:.3e}", runs.len());
    }
    print!("{out}");
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("{f}");
        }
        return Err(Failed.into());
    }
    Ok(())
}
