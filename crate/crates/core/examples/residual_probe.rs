//! Per-match residual analysis of the ray-transport estimator at GT.

use artikit::articulation::{ArticulationState, MotionParam, SegField};
use artikit::losses::ViewSet;
use artikit::scenegen::{self, GroundTruthScene, SceneTemplate};
use artikit::volume::{fuse_fields, surface_weight, FusionParams, GridSpec, StateFields};
use nalgebra::Vector3;

fn gt_state(scene: &GroundTruthScene, seg_res: u32) -> ArticulationState {
    let spec = GridSpec::unit_workspace(seg_res);
    let mut art = ArticulationState {
        seg: [SegField::new(spec, scene.part_count), SegField::new(spec, scene.part_count)],
        motions: (0..scene.part_count).map(|p| MotionParam::from_rigid(&scene.cross_motion(p, 0))).collect(),
    };
    art.motions[0] = MotionParam::identity();
    for state in 0..2 {
        for k in 0..spec.dims[2] { for j in 0..spec.dims[1] { for i in 0..spec.dims[0] {
            let x = spec.voxel_center(i, j, k);
            let part = scene.part_at_surface(state, &x);
            let vox = ((k * spec.dims[1] + j) * spec.dims[0] + i) as usize;
            for c in 0..scene.part_count {
                let idx = art.seg[state].logit_index(vox, c);
                art.seg[state].logits[idx] = if c == part { 10.0 } else { -10.0 };
            }
        }}}
    }
    art
}

fn main() {
    let scene = scenegen::generate_scene(1, SceneTemplate::Drawer);
    let spec = GridSpec::unit_workspace(96);
    let mut fields: Vec<StateFields> = Vec::new();
    let mut viewsets = Vec::new();
    for state in 0..2 {
        let views = scenegen::render_views(&scene, state, 24, 2 + state as u64);
        let mut f = fuse_fields(&views, spec, FusionParams::default()).unwrap();
        f.color = scene.color_field(state, spec);
        fields.push(f);
        viewsets.push(ViewSet::new(views));
    }
    let matches = scenegen::synth_matches(&scene, &viewsets[0].views, &viewsets[1].views,
        scenegen::MatchOptions::default(), 7);
    let art = gt_state(&scene, 50);
    let decoded = art.decode_motions();
    let band = 0.03f64;
    let alpha = 5.0;

    #[derive(Default, Clone)]
    struct Bucket { n: usize, sum: f64, max: f64 }
    let mut by_part: Vec<Bucket> = vec![Bucket::default(); 2];
    let mut soft_edge = Bucket::default();   // rays whose samples never go below -0.005
    let mut deep = Bucket::default();
    let mut seg_mixed = Bucket::default();   // rays with mixed labels among samples
    let mut hard_est_all = Bucket::default();// residual of "unproject+rigid" hard estimator

    for m in &matches {
        let (src, dst) = if m.t == 0 { (&viewsets[0].views[m.v], &viewsets[1].views[m.u]) }
                         else { (&viewsets[1].views[m.v], &viewsets[0].views[m.u]) };
        let Some(d) = src.depth_at(m.p.x, m.p.y) else { continue };
        let c2w = src.world_to_cam.inverse();
        let ray = c2w.apply_dir(&Vector3::new(
            (m.p.x - src.intrinsics.cx) / src.intrinsics.fx,
            (m.p.y - src.intrinsics.cy) / src.intrinsics.fy, 1.0));
        let base = c2w.trans;
        let seg = &art.seg[m.t];
        let dirmot = if m.t == 0 { &decoded.forward } else { &decoded.inverse };
        let mut wsum = 0.0; let mut ybar = Vector3::zeros();
        let mut min_e = f64::INFINITY; let mut labels = std::collections::HashSet::new();
        for k in 0..12 {
            let z = d - band + (k as f64 + 0.5) / 12.0 * 2.0 * band;
            let x = base + ray * z;
            let e = fields[m.t].esdf.sample(&x, 0);
            if e.abs() >= band { continue; }
            min_e = min_e.min(e);
            let ev = seg.eval(&x);
            let lab = if ev.probs[0] > ev.probs[1] { 0 } else { 1 };
            labels.insert(lab);
            let w = surface_weight(e, alpha);
            let mut y = Vector3::zeros();
            for i in 0..2 { y += dirmot[i].apply(&x) * ev.probs[i]; }
            wsum += w; ybar += y * w;
        }
        if wsum < 1e-6 { continue; }
        ybar /= wsum;
        let Some((px, py, _)) = dst.project(&ybar) else { continue };
        let r2 = (px - m.q.x).powi(2) + (py - m.q.y).powi(2);

        // attribution
        let x_surf = src.unproject(m.p.x, m.p.y, d);
        let part = scene.part_at_surface(m.t, &x_surf);
        by_part[part].n += 1; by_part[part].sum += r2; by_part[part].max = by_part[part].max.max(r2);
        if min_e > -0.005 { soft_edge.n += 1; soft_edge.sum += r2; soft_edge.max = soft_edge.max.max(r2); }
        else { deep.n += 1; deep.sum += r2; deep.max = deep.max.max(r2); }
        if labels.len() > 1 { seg_mixed.n += 1; seg_mixed.sum += r2; seg_mixed.max = seg_mixed.max.max(r2); }

        // hard estimator reference
        let y_hard = scene.cross_motion(part, m.t).apply(&x_surf);
        if let Some((hx, hy, _)) = dst.project(&y_hard) {
            let hr2 = (hx - m.q.x).powi(2) + (hy - m.q.y).powi(2);
            hard_est_all.n += 1; hard_est_all.sum += hr2; hard_est_all.max = hard_est_all.max.max(hr2);
        }
    }
    let pr = |name: &str, b: &Bucket| if b.n > 0 {
        println!("{name:14} n={:5}  mean r² {:.4}  max {:.3}", b.n, b.sum / b.n as f64, b.max);
    };
    pr("part 0", &by_part[0]); pr("part 1", &by_part[1]);
    pr("edge rays", &soft_edge); pr("deep rays", &deep);
    pr("seg-mixed", &seg_mixed);
    pr("hard estim", &hard_est_all);
}
