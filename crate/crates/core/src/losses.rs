//! Differentiable objectives over the point correspondence field.
//!
//! Three loss families supervise the articulation model:
//!
//! - **Consistency**: a transported point must find the same signed distance
//!   and color at the other state (near-surface samples, weighted by a
//!   bell-shaped surface weight), and the same occupancy (uniform samples).
//!   Terms are discounted by `w_vis` when the transported point lands in
//!   unobserved space.
//! - **Matching**: sparse cross-state pixel matches; the weighted surface
//!   point along the source pixel's ray is transported and projected into the
//!   target view, and the squared pixel residual to the matched pixel is
//!   penalized.
//! - **Collision**: for uniformly sampled points at the target state, each
//!   part's rigid preimage is scored by segmentation probability times
//!   occupancy; a summed score above one means two pieces of material map to
//!   the same point and is penalized quadratically.
//!
//! All gradients are analytic and validated against central finite
//! differences in the test suite. Evaluation is parallelized over fixed-size
//! chunks with an ordered reduction, so results are bit-deterministic
//! regardless of thread count.

use crate::articulation::{
    ArticulationState, DecodedMotions, Direction, SegField, MAX_PARTS,
};
use crate::math::Rigid;
use crate::volume::{surface_weight, DepthView, StateFields};
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A cross-state pixel correspondence: pixel `p` of view `v` at state `t`
/// matches pixel `q` of view `u` at the other state.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchPair {
    pub t: usize,
    pub v: usize,
    pub u: usize,
    pub p: Vector2<f64>,
    pub q: Vector2<f64>,
}

/// Loss weights and shape parameters. Defaults follow the reference training
/// schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    /// SDF consistency weight (λ_s).
    pub lambda_sdf: f64,
    /// Color consistency weight (λ_c).
    pub lambda_rgb: f64,
    /// Occupancy consistency weight (λ_o).
    pub lambda_occ: f64,
    /// Consistency family weight in the total (λ_cns).
    pub lambda_cns: f64,
    /// Matching weight in the total (λ_match).
    pub lambda_match: f64,
    /// Collision weight in the total (λ_coll).
    pub lambda_coll: f64,
    /// Sharpness of the bell-shaped surface weight (α).
    pub alpha: f64,
    /// Discount for consistency against unobserved targets (w_vis).
    pub w_vis: f64,
    /// Near-surface band half-width (λ_surf).
    pub surf_band: f64,
    /// Occupancy transition width (s).
    pub occ_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sdf: 10.0,
            lambda_rgb: 0.1,
            lambda_occ: 5.0,
            lambda_cns: 1.0,
            lambda_match: 500.0,
            lambda_coll: 50.0,
            alpha: 5.0,
            w_vis: 0.5,
            surf_band: 0.03,
            occ_scale: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_sdf,
            self.lambda_rgb,
            self.lambda_occ,
            self.lambda_cns,
            self.lambda_match,
            self.lambda_coll,
            self.alpha,
            self.w_vis,
            self.surf_band,
            self.occ_scale,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if self.w_vis <= 0.0 || self.w_vis > 1.0 {
            return Err(Error::InvalidArgument("w_vis must be in (0, 1]".into()));
        }
        if self.occ_scale <= 0.0 || self.surf_band <= 0.0 {
            return Err(Error::InvalidArgument(
                "occ_scale and surf_band must be positive".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn occupancy(&self, esdf: f64) -> (f64, f64) {
        let raw = 0.5 - esdf / self.occ_scale;
        if raw <= 0.0 {
            (0.0, 0.0)
        } else if raw >= 1.0 {
            (1.0, 0.0)
        } else {
            (raw, -1.0 / self.occ_scale)
        }
    }
}

/// A near-surface sample on a camera ray.
#[derive(Debug, Clone, Copy)]
pub struct RayPoint {
    pub x: Vector3<f64>,
    pub ray_dir: Vector3<f64>,
    /// Frozen signed distance at `x` in its own state.
    pub esdf: f64,
    pub state: usize,
}

/// A uniform workspace sample.
#[derive(Debug, Clone, Copy)]
pub struct UniformPoint {
    pub x: Vector3<f64>,
    pub state: usize,
}

/// One step's sample set: near-surface ray points for SDF/color consistency
/// and uniform points for occupancy consistency and collision checks.
#[derive(Debug, Clone, Default)]
pub struct SampleBatch {
    pub ray_points: Vec<RayPoint>,
    pub uniform_points: Vec<UniformPoint>,
}

/// Views of one state with cached mask pixel indices for sampling.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub views: Vec<DepthView>,
    masked: Vec<Vec<u32>>,
}

impl ViewSet {
    pub fn new(views: Vec<DepthView>) -> Self {
        let masked = views
            .iter()
            .map(|v| {
                v.mask
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &m)| m.then_some(i as u32))
                    .collect()
            })
            .collect();
        ViewSet { views, masked }
    }
}

impl SampleBatch {
    /// Draws a fresh batch: for each state, `ray_per_direction` points along
    /// rays of random masked pixels within `±surf_band` of the observed
    /// depth (kept only when inside the near-surface band of the fused SDF),
    /// and `uniform_per_direction` points uniform over the grid box.
    pub fn draw(
        fields: &[StateFields; 2],
        views: &[&ViewSet; 2],
        ray_per_direction: usize,
        uniform_per_direction: usize,
        surf_band: f64,
        rng: &mut impl Rng,
    ) -> SampleBatch {
        let mut batch = SampleBatch::default();
        for state in 0..2 {
            let vs = views[state];
            let esdf = &fields[state].esdf;
            let mut kept = 0;
            let mut attempts = 0;
            while kept < ray_per_direction && attempts < 20 * ray_per_direction {
                attempts += 1;
                if vs.views.is_empty() {
                    break;
                }
                let vi = rng.random_range(0..vs.views.len());
                let view = &vs.views[vi];
                let pixels = &vs.masked[vi];
                if pixels.is_empty() {
                    continue;
                }
                let pix = pixels[rng.random_range(0..pixels.len())] as usize;
                let d = view.depth[pix] as f64;
                if d <= 0.0 {
                    continue;
                }
                let (iy, ix) = (pix / view.width, pix % view.width);
                let z = rng.random_range((d - surf_band)..(d + surf_band));
                let x = view.unproject(ix as f64 + 0.5, iy as f64 + 0.5, z);
                let e = esdf.sample(&x, 0);
                if e.abs() >= surf_band {
                    continue;
                }
                let dir = (x - view.camera_center()).normalize();
                batch.ray_points.push(RayPoint {
                    x,
                    ray_dir: dir,
                    esdf: e,
                    state,
                });
                kept += 1;
            }
            let (lo, hi) = esdf.spec.bounds();
            for _ in 0..uniform_per_direction {
                let x = Vector3::new(
                    rng.random_range(lo.x..hi.x),
                    rng.random_range(lo.y..hi.y),
                    rng.random_range(lo.z..hi.z),
                );
                batch.uniform_points.push(UniformPoint { x, state });
            }
        }
        batch
    }
}

/// Gradients with respect to every free parameter of an
/// [`ArticulationState`]: both logit grids and, per part, the rotation matrix
/// entries (chained through the 6D decoding at the end of a step) and the
/// translation.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub seg: [Vec<f64>; 2],
    pub rot: Vec<Matrix3<f64>>,
    pub trans: Vec<Vector3<f64>>,
}

impl ParamGrads {
    pub fn zeros(art: &ArticulationState) -> Self {
        ParamGrads {
            seg: [
                vec![0.0; art.seg[0].logits.len()],
                vec![0.0; art.seg[1].logits.len()],
            ],
            rot: vec![Matrix3::zeros(); art.part_count()],
            trans: vec![Vector3::zeros(); art.part_count()],
        }
    }

    /// Chains the rotation-matrix gradients through the 6D decode Jacobians,
    /// yielding per-part `(rot6d, trans)` gradients. Part 0 is frozen and
    /// reported as zero.
    pub fn motion_param_grads(&self, decoded: &DecodedMotions) -> Vec<([f64; 6], Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.rot.len());
        for i in 0..self.rot.len() {
            if i == 0 {
                out.push(([0.0; 6], Vector3::zeros()));
                continue;
            }
            let mut g6 = [0.0; 6];
            for (k, g) in g6.iter_mut().enumerate() {
                *g = self.rot[i].component_mul(&decoded.rot_jacobians[i][k]).sum();
            }
            out.push((g6, self.trans[i]));
        }
        out
    }
}

/// Per-term scalar breakdown of one evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub consistency: f64,
    pub matching: f64,
    pub collision: f64,
    pub total: f64,
}

/// Per-chunk gradient accumulator merged in deterministic chunk order.
struct ChunkAccum {
    loss: f64,
    count: usize,
    rot: Vec<Matrix3<f64>>,
    trans: Vec<Vector3<f64>>,
    seg: [Vec<(u32, f64)>; 2],
}

impl ChunkAccum {
    fn new(parts: usize) -> Self {
        ChunkAccum {
            loss: 0.0,
            count: 0,
            rot: vec![Matrix3::zeros(); parts],
            trans: vec![Vector3::zeros(); parts],
            seg: [Vec::new(), Vec::new()],
        }
    }
}

/// Accumulates the directional chain rule from gradients with respect to the
/// *directed* motion `(Â, t̂)` back to the stored forward parameters `(R, τ)`.
///
/// For the 1→0 direction the directed motion is the inverse, `Â = Rᵀ`,
/// `t̂ = −Rᵀ τ`.
fn chain_directed_motion(
    dir: Direction,
    fwd: &Rigid,
    d_rot_hat: &Matrix3<f64>,
    d_trans_hat: &Vector3<f64>,
    out_rot: &mut Matrix3<f64>,
    out_trans: &mut Vector3<f64>,
) {
    match dir {
        Direction::ZeroToOne => {
            *out_rot += d_rot_hat;
            *out_trans += d_trans_hat;
        }
        Direction::OneToZero => {
            *out_rot += d_rot_hat.transpose();
            *out_rot -= fwd.trans * d_trans_hat.transpose();
            *out_trans -= fwd.rot * d_trans_hat;
        }
    }
}

/// Scatters `dL/d(interpolated logits)` through the softmax and trilinear
/// stencil into the sparse per-chunk logit gradient list.
fn scatter_seg_grad(
    seg_field: &SegField,
    eval: &crate::articulation::SegEval,
    d_probs: &[f64; MAX_PARTS],
    scale: f64,
    out: &mut Vec<(u32, f64)>,
) {
    let m = seg_field.part_count;
    let probs = &eval.probs;
    let mut dot = 0.0;
    for i in 0..m {
        dot += d_probs[i] * probs[i];
    }
    for j in 0..m {
        let d_logit = probs[j] * (d_probs[j] - dot) * scale;
        if d_logit == 0.0 {
            continue;
        }
        for c in 0..8 {
            let w = eval.stencil.weights[c];
            if w == 0.0 {
                continue;
            }
            let idx = seg_field.logit_index(eval.stencil.corner_voxels[c], j) as u32;
            out.push((idx, w * d_logit));
        }
    }
}

/// Spatial gradient of probability channel `i` at a seg evaluation.
fn prob_spatial_grad(
    eval: &crate::articulation::SegEval,
    m: usize,
    i: usize,
) -> Vector3<f64> {
    let mut mean_grad = Vector3::zeros();
    for j in 0..m {
        mean_grad += eval.logit_grads[j] * eval.probs[j];
    }
    (eval.logit_grads[i] - mean_grad) * eval.probs[i]
}

/// Shared context for one loss evaluation.
pub struct LossContext<'a> {
    pub art: &'a ArticulationState,
    pub decoded: &'a DecodedMotions,
    pub fields: &'a [StateFields; 2],
    pub weights: &'a LossWeights,
    /// Seed for the per-pair ray stratification jitter of the matching term.
    /// Varying it per step turns the fixed quadrature bias of each match
    /// into zero-mean noise across the run.
    pub match_jitter_seed: u64,
}

const CHUNK: usize = 256;

/// SplitMix64-based uniform jitter in [0, 1).
fn stratum_jitter(seed: u64, index: u64) -> f64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

impl<'a> LossContext<'a> {
    fn parts(&self) -> usize {
        self.art.part_count()
    }

    /// Near-surface SDF + color consistency over ray points. Returns the mean
    /// per-point loss (λ_s/λ_c applied, family weight λ_cns not).
    fn surface_consistency(&self, points: &[RayPoint], grads: Option<&mut ParamGrads>) -> f64 {
        let chunks: Vec<ChunkAccum> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = ChunkAccum::new(self.parts());
                for pt in chunk {
                    self.surface_point_term(pt, &mut acc);
                }
                acc
            })
            .collect();
        reduce_chunks(chunks, points.len(), grads)
    }

    fn surface_point_term(&self, pt: &RayPoint, acc: &mut ChunkAccum) {
        let w = self.weights;
        let dir = if pt.state == 0 {
            Direction::ZeroToOne
        } else {
            Direction::OneToZero
        };
        let t = pt.state;
        let t2 = 1 - t;
        let m = self.parts();
        let seg = &self.art.seg[t];
        let eval = seg.eval(&pt.x);
        let motions = self.decoded.directed(dir);

        let mut y = Vector3::zeros();
        let mut images = [Vector3::zeros(); MAX_PARTS];
        for i in 0..m {
            images[i] = motions[i].apply(&pt.x);
            y += images[i] * eval.probs[i];
        }

        let (e_y, g_e) = self.fields[t2].esdf.sample_esdf_extended(&y);
        let c_x = self.fields[t].color_at(&pt.x);
        let mut c_y = Vector3::zeros();
        let mut g_c = [Vector3::zeros(); 3];
        for ch in 0..3 {
            let (v, g) = self.fields[t2].color.sample_with_grad(&y, ch);
            c_y[ch] = v;
            g_c[ch] = g;
        }

        let bell = surface_weight(pt.esdf, w.alpha);
        let visf = if self.fields[t2].observed_at(&y) {
            1.0
        } else {
            w.w_vis
        };
        let l_s = (pt.esdf - e_y) * (pt.esdf - e_y);
        let l_c = (c_x - c_y).norm_squared();
        acc.loss += visf * bell * (w.lambda_sdf * l_s + w.lambda_rgb * l_c);
        acc.count += 1;

        // d loss / d y
        let mut dldy = g_e * (visf * bell * w.lambda_sdf * 2.0 * (e_y - pt.esdf));
        for ch in 0..3 {
            dldy += g_c[ch] * (visf * bell * w.lambda_rgb * 2.0 * (c_y[ch] - c_x[ch]));
        }
        self.backprop_transport(dir, &pt.x, &eval, &images, &dldy, acc);
    }

    /// Occupancy consistency over uniform points: mean of λ_o · (Occ^t(x) −
    /// Occ^{t'}(y))², discounted like the surface terms.
    fn occupancy_consistency(&self, points: &[UniformPoint], grads: Option<&mut ParamGrads>) -> f64 {
        let chunks: Vec<ChunkAccum> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = ChunkAccum::new(self.parts());
                for pt in chunk {
                    self.occupancy_point_term(pt, &mut acc);
                }
                acc
            })
            .collect();
        reduce_chunks(chunks, points.len(), grads)
    }

    fn occupancy_point_term(&self, pt: &UniformPoint, acc: &mut ChunkAccum) {
        let w = self.weights;
        let dir = if pt.state == 0 {
            Direction::ZeroToOne
        } else {
            Direction::OneToZero
        };
        let t = pt.state;
        let t2 = 1 - t;
        let m = self.parts();
        let seg = &self.art.seg[t];
        let eval = seg.eval(&pt.x);
        let motions = self.decoded.directed(dir);

        let mut y = Vector3::zeros();
        let mut images = [Vector3::zeros(); MAX_PARTS];
        for i in 0..m {
            images[i] = motions[i].apply(&pt.x);
            y += images[i] * eval.probs[i];
        }

        let (e_x, _) = self.fields[t].esdf.sample_esdf_extended(&pt.x);
        let (occ_x, _) = w.occupancy(e_x);
        let (e_y, g_e) = self.fields[t2].esdf.sample_esdf_extended(&y);
        let (occ_y, docc) = w.occupancy(e_y);
        let visf = if self.fields[t2].observed_at(&y) {
            1.0
        } else {
            w.w_vis
        };
        let diff = occ_x - occ_y;
        acc.loss += visf * w.lambda_occ * diff * diff;
        acc.count += 1;

        let dldy = g_e * (visf * w.lambda_occ * 2.0 * (occ_y - occ_x) * docc);
        self.backprop_transport(dir, &pt.x, &eval, &images, &dldy, acc);
    }

    /// Backpropagates `dL/dy` of a transported point into logits and motion
    /// parameters.
    fn backprop_transport(
        &self,
        dir: Direction,
        x: &Vector3<f64>,
        eval: &crate::articulation::SegEval,
        images: &[Vector3<f64>; MAX_PARTS],
        dldy: &Vector3<f64>,
        acc: &mut ChunkAccum,
    ) {
        let m = self.parts();
        let t = dir.source_state();
        let mut d_probs = [0.0; MAX_PARTS];
        for i in 0..m {
            d_probs[i] = dldy.dot(&images[i]);
        }
        scatter_seg_grad(&self.art.seg[t], eval, &d_probs, 1.0, &mut acc.seg[t]);
        for i in 1..m {
            let p = eval.probs[i];
            let d_rot_hat = dldy * x.transpose() * p;
            let d_trans_hat = dldy * p;
            chain_directed_motion(
                dir,
                &self.decoded.forward[i],
                &d_rot_hat,
                &d_trans_hat,
                &mut acc.rot[i],
                &mut acc.trans[i],
            );
        }
    }

    /// Collision: uniform points are traced back through every part's
    /// inverse motion; summed (probability × occupancy) above one is
    /// penalized. Mean per-point loss without λ_coll.
    fn collision(&self, points: &[UniformPoint], grads: Option<&mut ParamGrads>) -> f64 {
        let chunks: Vec<ChunkAccum> = points
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = ChunkAccum::new(self.parts());
                for pt in chunk {
                    self.collision_point_term(pt, &mut acc);
                }
                acc
            })
            .collect();
        reduce_chunks(chunks, points.len(), grads)
    }

    fn collision_point_term(&self, pt: &UniformPoint, acc: &mut ChunkAccum) {
        let w = self.weights;
        // The point lives at the *target* state of the articulation under
        // test; candidates are traced back to the source state.
        let dir = if pt.state == 1 {
            Direction::ZeroToOne
        } else {
            Direction::OneToZero
        };
        let t = dir.source_state();
        let m = self.parts();
        let motions = self.decoded.directed(dir);
        let seg = &self.art.seg[t];

        let mut evals: [Option<crate::articulation::SegEval>; MAX_PARTS] = [None; MAX_PARTS];
        let mut candidates = [Vector3::zeros(); MAX_PARTS];
        let mut occ = [0.0; MAX_PARTS];
        let mut docc = [0.0; MAX_PARTS];
        let mut g_esdf = [Vector3::zeros(); MAX_PARTS];
        let mut count = 0.0;
        for i in 0..m {
            let x_i = motions[i].inverse().apply(&pt.x);
            candidates[i] = x_i;
            let eval = seg.eval(&x_i);
            let (e, g) = self.fields[t].esdf.sample_esdf_extended(&x_i);
            let (o, d) = w.occupancy(e);
            count += eval.probs[i] * o;
            occ[i] = o;
            docc[i] = d;
            g_esdf[i] = g;
            evals[i] = Some(eval);
        }
        acc.count += 1;
        let excess = count - 1.0;
        if excess <= 0.0 {
            return;
        }
        acc.loss += excess * excess;
        let dcount = 2.0 * excess;

        for i in 0..m {
            let eval = evals[i].as_ref().unwrap();
            // Through the probability channel i at the candidate.
            let mut d_probs = [0.0; MAX_PARTS];
            d_probs[i] = dcount * occ[i];
            scatter_seg_grad(seg, eval, &d_probs, 1.0, &mut acc.seg[t]);
            // Through the candidate position (probability field and occupancy
            // both move with it).
            if i == 0 {
                continue;
            }
            let dp_dx = prob_spatial_grad(eval, m, i);
            let dldx = dp_dx * (dcount * occ[i]) + g_esdf[i] * (dcount * eval.probs[i] * docc[i]);
            // Candidate is the *inverse* directed motion applied to y:
            // x_i = Âᵀ (y − t̂) for directed (Â, t̂).
            let v = pt.x - motions[i].trans;
            let d_rot_hat = v * dldx.transpose();
            let d_trans_hat = -(motions[i].rot * dldx);
            chain_directed_motion(
                dir,
                &self.decoded.forward[i],
                &d_rot_hat,
                &d_trans_hat,
                &mut acc.rot[i],
                &mut acc.trans[i],
            );
        }
    }

    /// Matching loss over the given pairs; mean squared pixel residual.
    /// Pairs whose ray misses the near-surface band (or whose source pixel
    /// has no depth) are skipped; errors if every pair is skipped.
    fn matching(
        &self,
        pairs: &[MatchPair],
        views: &[&ViewSet; 2],
        grads: Option<&mut ParamGrads>,
    ) -> Result<f64> {
        let chunks: Vec<ChunkAccum> = pairs
            .par_chunks(CHUNK.min(64))
            .map(|chunk| {
                let mut acc = ChunkAccum::new(self.parts());
                for pair in chunk {
                    self.matching_pair_term(pair, views, &mut acc);
                }
                acc
            })
            .collect();
        let evaluated: usize = chunks.iter().map(|c| c.count).sum();
        if evaluated == 0 {
            return Err(Error::EmptyInput(
                "matching loss: every pair was skipped (no rays hit the surface band)".into(),
            ));
        }
        Ok(reduce_chunks_counted(chunks, evaluated, grads))
    }

    fn matching_pair_term(&self, pair: &MatchPair, views: &[&ViewSet; 2], acc: &mut ChunkAccum) {
        const RAY_SAMPLES: usize = 12;
        let w = self.weights;
        let t = pair.t;
        let t2 = 1 - t;
        let dir = if t == 0 {
            Direction::ZeroToOne
        } else {
            Direction::OneToZero
        };
        let m = self.parts();
        let Some(src) = views[t].views.get(pair.v) else {
            return;
        };
        let Some(dst) = views[t2].views.get(pair.u) else {
            return;
        };
        let Some(d_obs) = src.depth_at(pair.p.x, pair.p.y) else {
            return;
        };
        // Ray through the (continuous) source pixel, linear in camera depth.
        let cam_to_world = src.world_to_cam.inverse();
        let ray = cam_to_world.apply_dir(&Vector3::new(
            (pair.p.x - src.intrinsics.cx) / src.intrinsics.fx,
            (pair.p.y - src.intrinsics.cy) / src.intrinsics.fy,
            1.0,
        ));
        let base = cam_to_world.trans;

        let seg = &self.art.seg[t];
        let motions = self.decoded.directed(dir);
        struct RaySample {
            x: Vector3<f64>,
            bell: f64,
            eval: crate::articulation::SegEval,
            images: [Vector3<f64>; MAX_PARTS],
        }
        let mut samples: Vec<RaySample> = Vec::with_capacity(RAY_SAMPLES);
        let mut weight_sum = 0.0;
        let mut y_bar = Vector3::zeros();
        for k in 0..RAY_SAMPLES {
            let z = d_obs - w.surf_band
                + (k as f64 + 0.5) / RAY_SAMPLES as f64 * 2.0 * w.surf_band;
            let x = base + ray * z;
            let e = self.fields[t].esdf.sample(&x, 0);
            if e.abs() >= w.surf_band {
                continue;
            }
            let bell = surface_weight(e, w.alpha);
            let eval = seg.eval(&x);
            let mut images = [Vector3::zeros(); MAX_PARTS];
            let mut y = Vector3::zeros();
            for i in 0..m {
                images[i] = motions[i].apply(&x);
                y += images[i] * eval.probs[i];
            }
            weight_sum += bell;
            y_bar += y * bell;
            samples.push(RaySample {
                x,
                bell,
                eval,
                images,
            });
        }
        if samples.is_empty() || weight_sum < 1e-6 {
            return;
        }
        y_bar /= weight_sum;

        // Project into the target view.
        let c = dst.world_to_cam.apply(&y_bar);
        if c.z <= 1e-6 {
            return;
        }
        let fx = dst.intrinsics.fx;
        let fy = dst.intrinsics.fy;
        let px = fx * c.x / c.z + dst.intrinsics.cx;
        let py = fy * c.y / c.z + dst.intrinsics.cy;
        let r = Vector2::new(px - pair.q.x, py - pair.q.y);
        acc.loss += r.norm_squared();
        acc.count += 1;

        // dL/dȳ through the pinhole projection.
        let d_cam = Vector3::new(
            2.0 * r.x * fx / c.z,
            2.0 * r.y * fy / c.z,
            -2.0 * r.x * fx * c.x / (c.z * c.z) - 2.0 * r.y * fy * c.y / (c.z * c.z),
        );
        let dldy_bar = dst.world_to_cam.rot.transpose() * d_cam;

        for s in &samples {
            let dldy = dldy_bar * (s.bell / weight_sum);
            self.backprop_transport(dir, &s.x, &s.eval, &s.images, &dldy, acc);
        }
    }
}

/// Ordered merge of per-chunk accumulators; means are over the total point
/// count and gradients are folded into `grads` with the same 1/N scale.
fn reduce_chunks(chunks: Vec<ChunkAccum>, n: usize, grads: Option<&mut ParamGrads>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    reduce_chunks_counted(chunks, n, grads)
}

fn reduce_chunks_counted(
    chunks: Vec<ChunkAccum>,
    n: usize,
    grads: Option<&mut ParamGrads>,
) -> f64 {
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    match grads {
        None => {
            for c in &chunks {
                loss += c.loss;
            }
        }
        Some(g) => {
            for c in chunks {
                loss += c.loss;
                for i in 0..c.rot.len() {
                    g.rot[i] += c.rot[i] * inv;
                    g.trans[i] += c.trans[i] * inv;
                }
                for state in 0..2 {
                    for &(idx, v) in &c.seg[state] {
                        g.seg[state][idx as usize] += v * inv;
                    }
                }
            }
        }
    }
    loss * inv
}

/// Scales gradients accumulated by a term into the total's parameter grads.
fn add_scaled(dst: &mut ParamGrads, src: &ParamGrads, scale: f64) {
    for i in 0..dst.rot.len() {
        dst.rot[i] += src.rot[i] * scale;
        dst.trans[i] += src.trans[i] * scale;
    }
    for state in 0..2 {
        for (d, s) in dst.seg[state].iter_mut().zip(&src.seg[state]) {
            *d += s * scale;
        }
    }
}

/// Evaluates the full objective `λ_cns·L_cns + λ_match·L_match +
/// λ_coll·L_coll`, optionally accumulating analytic gradients.
///
/// With `enable_gated_terms` false, the occupancy-consistency and collision
/// terms are excluded (the schedule enables them only after a warm-up).
/// An empty `matches` slice disables the matching term.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    art: &ArticulationState,
    decoded: &DecodedMotions,
    fields: &[StateFields; 2],
    views: &[&ViewSet; 2],
    matches: &[MatchPair],
    batch: &SampleBatch,
    weights: &LossWeights,
    enable_gated_terms: bool,
    mut grads: Option<&mut ParamGrads>,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if batch.ray_points.is_empty() && batch.uniform_points.is_empty() {
        return Err(Error::EmptyInput("loss evaluation needs a nonempty batch".into()));
    }
    let ctx = LossContext {
        art,
        decoded,
        fields,
        weights,
    };

    // Each family accumulates into its own buffer, then is folded into the
    // caller's grads with its weight from the schedule.
    let run_term = |f: &dyn Fn(Option<&mut ParamGrads>) -> Result<f64>,
                        weight: f64,
                        grads: &mut Option<&mut ParamGrads>|
     -> Result<f64> {
        match grads {
            None => f(None),
            Some(g) => {
                let mut local = ParamGrads::zeros(art);
                let v = f(Some(&mut local))?;
                add_scaled(g, &local, weight);
                Ok(v)
            }
        }
    };

    let surface = run_term(
        &|g| Ok(ctx.surface_consistency(&batch.ray_points, g)),
        weights.lambda_cns,
        &mut grads,
    )?;
    let occupancy = if enable_gated_terms {
        run_term(
            &|g| Ok(ctx.occupancy_consistency(&batch.uniform_points, g)),
            weights.lambda_cns,
            &mut grads,
        )?
    } else {
        0.0
    };
    let consistency = surface + occupancy;

    let matching = if matches.is_empty() {
        0.0
    } else {
        run_term(
            &|g| ctx.matching(matches, views, g),
            weights.lambda_match,
            &mut grads,
        )?
    };

    let collision = if enable_gated_terms {
        run_term(
            &|g| Ok(ctx.collision(&batch.uniform_points, g)),
            weights.lambda_coll,
            &mut grads,
        )?
    } else {
        0.0
    };

    let total = weights.lambda_cns * consistency
        + weights.lambda_match * matching
        + weights.lambda_coll * collision;
    Ok(LossBreakdown {
        consistency,
        matching,
        collision,
        total,
    })
}

/// Consistency loss alone (both families, ungated), without gradients.
pub fn consistency_loss(
    art: &ArticulationState,
    fields: &[StateFields; 2],
    batch: &SampleBatch,
    weights: &LossWeights,
) -> Result<f64> {
    if batch.ray_points.is_empty() {
        return Err(Error::EmptyInput("consistency loss needs ray points".into()));
    }
    let decoded = art.decode_motions();
    let ctx = LossContext {
        art,
        decoded: &decoded,
        fields,
        weights,
    };
    Ok(ctx.surface_consistency(&batch.ray_points, None)
        + ctx.occupancy_consistency(&batch.uniform_points, None))
}

/// Matching loss alone, without gradients.
pub fn matching_loss(
    art: &ArticulationState,
    fields: &[StateFields; 2],
    views: &[&ViewSet; 2],
    matches: &[MatchPair],
    weights: &LossWeights,
) -> Result<f64> {
    let decoded = art.decode_motions();
    let ctx = LossContext {
        art,
        decoded: &decoded,
        fields,
        weights,
    };
    ctx.matching(matches, views, None)
}

/// Collision loss alone, without gradients.
pub fn collision_loss(
    art: &ArticulationState,
    fields: &[StateFields; 2],
    uniform_points: &[UniformPoint],
    weights: &LossWeights,
) -> f64 {
    let decoded = art.decode_motions();
    let ctx = LossContext {
        art,
        decoded: &decoded,
        fields,
        weights,
    };
    ctx.collision(uniform_points, None)
}
