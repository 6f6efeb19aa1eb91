use warpdepth::dataio::{synth_scene, SceneSpec};
use warpdepth::optim::{optimize_scene, OptimizeConfig, TraceRow};

fn trace(spec: &SceneSpec, iterations: usize) -> Vec<TraceRow> {
    let sample = synth_scene(spec).unwrap();
    let cfg = OptimizeConfig {
        iterations,
        deterministic: true,
        ..OptimizeConfig::default()
    };
    optimize_scene(&sample, &cfg).unwrap().1
}

#[test]
fn loss_settles_within_each_scale() {
    let spec = SceneSpec {
        width: 64,
        height: 32,
        ..SceneSpec::default()
    };
    let rows = trace(&spec, 300);
    assert_eq!(rows.len(), 4 * 300);
    // totals from different scales sum different pyramids; compare within one
    for stage in rows.chunks(300) {
        for i in 100..stage.len() - 50 {
            let (a, b) = (stage[i].loss.total, stage[i + 50].loss.total);
            assert!(b <= a, "scale {} iter {}: {a} -> {b}", stage[i].scale, stage[i].iteration);
        }
    }
}

#[test]
fn optimisation_lowers_the_loss_at_every_scale() {
    let rows = trace(&SceneSpec { width: 128, height: 64, ..SceneSpec::slanted() }, 60);
    for stage in rows.chunks(60) {
        assert!(stage[59].loss.total < stage[0].loss.total, "scale {}: {:?} -> {:?}", stage[0].scale, stage[0].loss, stage[59].loss);
        assert!(stage[59].loss.image < stage[0].loss.image);
    }
}
