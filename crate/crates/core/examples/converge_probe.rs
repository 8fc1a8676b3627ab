//! Quick convergence probe on a drawer scene (dev tool).

use artikit::losses::LossWeights;
use artikit::optim::{run, OptimConfig, ProblemInputs};
use artikit::scenegen::{self, SceneTemplate};
use artikit::volume::{fuse_fields, FusionParams, GridSpec};
use artikit::losses::ViewSet;

fn main() {
    let t0 = std::time::Instant::now();
    let scene = scenegen::generate_scene(1, SceneTemplate::Drawer);
    let spec = GridSpec::unit_workspace(96);
    let mut fields = Vec::new();
    let mut viewsets = Vec::new();
    for state in 0..2 {
        let views = scenegen::render_views(&scene, state, 16, 2 + state as u64);
        let mut f = fuse_fields(&views, spec, FusionParams::default()).unwrap();
        f.color = scene.color_field(state, spec);
        fields.push(f);
        viewsets.push(ViewSet::new(views));
    }
    let views1 = viewsets.pop().unwrap();
    let views0 = viewsets.pop().unwrap();
    let f1 = fields.pop().unwrap();
    let f0 = fields.pop().unwrap();
    let matches = scenegen::synth_matches(&scene, &views0.views, &views1.views,
        scenegen::MatchOptions::default(), 7);
    println!("setup: {:?}, matches: {}", t0.elapsed(), matches.len());

    let inputs = ProblemInputs {
        fields: [f0, f1],
        views: [views0, views1],
        matches,
        part_count: 2,
    };
    let config = OptimConfig {
        steps: 2000,
        gate_step: 500,
        ray_samples: 1024,
        uniform_samples: 2048,
        match_samples: 1024,
        seg_res: 50,
        seed: 11,
        ..OptimConfig::default()
    };
    let t1 = std::time::Instant::now();
    let out = run(&inputs, &LossWeights::default(), &config).unwrap();
    println!("optimize: {:?} ({:.1} ms/step)", t1.elapsed(), t1.elapsed().as_millis() as f64 / config.steps as f64);
    for r in out.trace.iter().step_by(100) {
        println!("step {:4}  cns {:10.5}  match {:12.3}  coll {:9.5}  total {:12.3}",
            r.step, r.breakdown.consistency, r.breakdown.matching, r.breakdown.collision, r.breakdown.total);
    }
    let last = out.trace.last().unwrap();
    println!("final: cns {:.6} match {:.4} coll {:.6} total {:.4}",
        last.breakdown.consistency, last.breakdown.matching, last.breakdown.collision, last.breakdown.total);

    let m = out.state.motions[1].decode().unwrap();
    let gt = scene.cross_motion(1, 0);
    let ang = artikit::math::geodesic_angle(&m.rot, &gt.rot).to_degrees();
    println!("GT delta: {:?}", gt.trans);
    println!("recovered trans: {:?}", m.trans);
    println!("rotation error vs GT: {ang:.4} deg, trans err: {:.5}", (m.trans - gt.trans).norm());

    // Label accuracy on GT surface points.
    let views_gt = scenegen::render_views(&scene, 0, 8, 99);
    let mut total = 0;
    let mut ok = 0;
    for view in &views_gt {
        for pix in (0..view.depth.len()).step_by(53) {
            if !view.mask[pix] { continue; }
            let (iy, ix) = (pix / view.width, pix % view.width);
            let d = view.depth[pix] as f64;
            let x = view.unproject(ix as f64 + 0.5, iy as f64 + 0.5, d);
            let gt_part = scene.part_at_surface(0, &x);
            let pred = out.state.seg[0].hard_label(&x);
            total += 1;
            if gt_part == pred { ok += 1; }
        }
    }
    println!("label accuracy at state 0 surface: {}/{} = {:.3}", ok, total, ok as f64 / total as f64);
}
