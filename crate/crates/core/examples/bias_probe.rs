//! Compares loss at the ground-truth articulation vs the optimizer's result.

use artikit::articulation::{ArticulationState, MotionParam, SegField};
use artikit::losses::{total_loss, LossWeights, ParamGrads, SampleBatch, ViewSet};
use artikit::optim::{run, OptimConfig, ProblemInputs};
use artikit::scenegen::{self, GroundTruthScene, SceneTemplate};
use artikit::volume::{fuse_fields, FusionParams, GridSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gt_state(scene: &GroundTruthScene, seg_res: u32) -> ArticulationState {
    let spec = GridSpec::unit_workspace(seg_res);
    let mut art = ArticulationState {
        seg: [
            SegField::new(spec, scene.part_count),
            SegField::new(spec, scene.part_count),
        ],
        motions: (0..scene.part_count)
            .map(|p| MotionParam::from_rigid(&scene.cross_motion(p, 0)))
            .collect(),
    };
    art.motions[0] = MotionParam::identity();
    for state in 0..2 {
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    let x = spec.voxel_center(i, j, k);
                    // Label by nearest part surface.
                    let part = scene.part_at_surface(state, &x);
                    let vox = ((k * spec.dims[1] + j) * spec.dims[0] + i) as usize;
                    for c in 0..scene.part_count {
                        let idx = art.seg[state].logit_index(vox, c);
                        art.seg[state].logits[idx] = if c == part { 10.0 } else { -10.0 };
                    }
                }
            }
        }
    }
    art
}

fn main() {
    let scene = scenegen::generate_scene(1, SceneTemplate::Drawer);
    let spec = GridSpec::unit_workspace(96);
    let mut fields = Vec::new();
    let mut viewsets = Vec::new();
    for state in 0..2 {
        let views = scenegen::render_views(&scene, state, 64, 2 + state as u64);
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
    let inputs = ProblemInputs {
        fields: [f0, f1],
        views: [views0, views1],
        matches,
        part_count: 2,
    };

    let config = OptimConfig {
        steps: 2000, gate_step: 500,
        ray_samples: 1024, uniform_samples: 2048, match_samples: 1024,
        seg_res: 50, seed: 11,
        ..OptimConfig::default()
    };
    let out = run(&inputs, &LossWeights::default(), &config).unwrap();
    let art_gt = gt_state(&scene, 50);
    let weights = LossWeights::default();

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let views = [&inputs.views[0], &inputs.views[1]];
    let mut hybrid_motion_gt = out.state.clone();
    hybrid_motion_gt.motions = art_gt.motions.clone();
    let mut hybrid_seg_gt = art_gt.clone();
    hybrid_seg_gt.motions = out.state.motions.clone();
    let mut sums = [ [0.0; 4], [0.0; 4], [0.0; 4], [0.0; 4] ];
    for _ in 0..10 {
        let batch = SampleBatch::draw(&inputs.fields, &views, 2048, 4096, weights.surf_band, &mut rng);
        for (si, art) in [&art_gt, &out.state, &hybrid_motion_gt, &hybrid_seg_gt].iter().enumerate() {
            let decoded = art.decode_motions();
            let b = total_loss(art, &decoded, &inputs.fields, &views, &inputs.matches[..2000.min(inputs.matches.len())], &batch, &weights, true, None::<&mut ParamGrads>.map(|x| x)).unwrap();
            sums[si][0] += b.consistency; sums[si][1] += b.matching; sums[si][2] += b.collision; sums[si][3] += b.total;
        }
    }
    println!("                 cns          match        coll         total");
    println!("GT state:       {:10.6}  {:10.6}  {:10.6}  {:10.4}", sums[0][0]/10.0, sums[0][1]/10.0, sums[0][2]/10.0, sums[0][3]/10.0);
    println!("converged:      {:10.6}  {:10.6}  {:10.6}  {:10.4}", sums[1][0]/10.0, sums[1][1]/10.0, sums[1][2]/10.0, sums[1][3]/10.0);
    println!("GTmot+optseg:   {:10.6}  {:10.6}  {:10.6}  {:10.4}", sums[2][0]/10.0, sums[2][1]/10.0, sums[2][2]/10.0, sums[2][3]/10.0);
    println!("optmot+GTseg:   {:10.6}  {:10.6}  {:10.6}  {:10.4}", sums[3][0]/10.0, sums[3][1]/10.0, sums[3][2]/10.0, sums[3][3]/10.0);

    let maxlogit = out.state.seg[0].logits.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    println!("max |logit| after run: {maxlogit:.2}");
    let m = out.state.motions[1].decode().unwrap();
    let gt = scene.cross_motion(1, 0);
    println!("rot err {:.3} deg, trans err {:.5}",
        artikit::math::geodesic_angle(&m.rot, &gt.rot).to_degrees(), (m.trans - gt.trans).norm());
}
