//! The articulation model: segmentation field, per-part motions, and the
//! point correspondence field.
//!
//! An [`ArticulationState`] holds every free variable of the stage-two
//! optimization: one segmentation logit volume per state and one 6D-rotation
//! plus translation parameter block per part. Motions are shared between
//! states — the state-1→0 motions are always the exact inverses of the
//! state-0→1 motions — and part 0 is pinned to the identity.
//!
//! A point at one state is transported to the other by blending the per-part
//! rigid images with the local segmentation probabilities, in the manner of
//! linear blend skinning; tracing the same map backwards yields one rigid
//! candidate preimage per part.

use crate::math::Rigid;
use crate::volume::GridSpec;
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Hard cap on the number of parts, so per-point buffers can live on the
/// stack in the optimization hot path.
pub const MAX_PARTS: usize = 8;

/// Transport direction between the two articulation states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ZeroToOne,
    OneToZero,
}

impl Direction {
    pub fn source_state(self) -> usize {
        match self {
            Direction::ZeroToOne => 0,
            Direction::OneToZero => 1,
        }
    }

    pub fn target_state(self) -> usize {
        1 - self.source_state()
    }

    pub fn flipped(self) -> Direction {
        match self {
            Direction::ZeroToOne => Direction::OneToZero,
            Direction::OneToZero => Direction::ZeroToOne,
        }
    }

    pub fn both() -> [Direction; 2] {
        [Direction::ZeroToOne, Direction::OneToZero]
    }
}

/// Decodes the 6D rotation representation (the first two columns of a
/// rotation matrix, unconstrained) into a rotation via Gram–Schmidt.
///
/// Errors on degenerate input: a near-zero first column or near-parallel
/// columns.
pub fn decode_rot6d(v: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    if a1.norm() < 1e-9 {
        return Err(Error::InvalidArgument(
            "rot6d first column is numerically zero".into(),
        ));
    }
    let b1 = a1.normalize();
    let u2 = a2 - b1 * b1.dot(&a2);
    if u2.norm() < 1e-9 {
        return Err(Error::InvalidArgument(
            "rot6d columns are numerically parallel".into(),
        ));
    }
    let b2 = u2.normalize();
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// Decoded rotation together with the 9×6 Jacobian `∂R/∂v`, as one 3×3
/// matrix per input component.
///
/// Near-degenerate inputs are nudged by `1e-8` before decoding so gradients
/// stay finite during optimization.
pub fn decode_rot6d_with_jacobian(v: &[f64; 6]) -> (Matrix3<f64>, [Matrix3<f64>; 6]) {
    let mut v = *v;
    if Vector3::new(v[0], v[1], v[2]).norm() < 1e-8 {
        v[0] += 1e-8;
    }
    {
        let a1 = Vector3::new(v[0], v[1], v[2]);
        let a2 = Vector3::new(v[3], v[4], v[5]);
        let b1 = a1.normalize();
        if (a2 - b1 * b1.dot(&a2)).norm() < 1e-8 {
            // Nudge the second column off the first.
            let e: Vector3<f64> = if b1.y.abs() < 0.9 {
                Vector3::y()
            } else {
                Vector3::z()
            };
            v[3] += 1e-8 * e.x;
            v[4] += 1e-8 * e.y;
            v[5] += 1e-8 * e.z;
        }
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);

    let n1 = a1.norm();
    let b1 = a1 / n1;
    let s = b1.dot(&a2);
    let u2 = a2 - b1 * s;
    let n2 = u2.norm();
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    let rot = Matrix3::from_columns(&[b1, b2, b3]);

    let mut jac = [Matrix3::zeros(); 6];
    for (k, j) in jac.iter_mut().enumerate() {
        let (da1, da2) = if k < 3 {
            (Vector3::ith(k, 1.0), Vector3::zeros())
        } else {
            (Vector3::zeros(), Vector3::ith(k - 3, 1.0))
        };
        let db1 = (da1 - b1 * b1.dot(&da1)) / n1;
        let ds = db1.dot(&a2) + b1.dot(&da2);
        let du2 = da2 - b1 * ds - db1 * s;
        let db2 = (du2 - b2 * b2.dot(&du2)) / n2;
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        *j = Matrix3::from_columns(&[db1, db2, db3]);
    }
    (rot, jac)
}

/// Per-part motion parameters: unconstrained 6D rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParam {
    pub rot6d: [f64; 6],
    pub trans: Vector3<f64>,
}

impl MotionParam {
    pub fn identity() -> Self {
        MotionParam {
            rot6d: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            trans: Vector3::zeros(),
        }
    }

    /// Encodes an existing rigid transform (its first two rotation columns).
    pub fn from_rigid(m: &Rigid) -> Self {
        MotionParam {
            rot6d: [
                m.rot[(0, 0)],
                m.rot[(1, 0)],
                m.rot[(2, 0)],
                m.rot[(0, 1)],
                m.rot[(1, 1)],
                m.rot[(2, 1)],
            ],
            trans: m.trans,
        }
    }

    pub fn decode(&self) -> Result<Rigid> {
        Ok(Rigid::new(decode_rot6d(&self.rot6d)?, self.trans))
    }
}

/// Fixed gain between stored grid values and the logits fed to the softmax.
///
/// The grid parameters move at most one learning-rate unit per Adam step, so
/// without a gain the decayed schedule caps logits near ±8 and the softmax
/// transition between parts cannot get sharper than about one seg voxel.
/// The gain restores the output-scale freedom the reference architecture's
/// MLP head has, letting part boundaries sharpen to a few millimeters.
pub const LOGIT_GAIN: f64 = 10.0;

/// Dense segmentation logit volume with trilinear interpolation.
///
/// `logits` holds `part_count` channels per voxel, channel-innermost and
/// x-fastest, matching [`crate::volume::VolumeGrid`]. Interpolated values are
/// scaled by [`LOGIT_GAIN`] before the softmax.
#[derive(Debug, Clone)]
pub struct SegField {
    pub spec: GridSpec,
    pub part_count: usize,
    pub logits: Vec<f64>,
}

/// Trilinear stencil of a query point: the 8 corner voxels with their convex
/// weights, reused to scatter gradients back into the logit grid.
#[derive(Debug, Clone, Copy)]
pub struct SegStencil {
    pub corner_voxels: [usize; 8],
    pub weights: [f64; 8],
}

/// Segmentation probabilities at a point together with everything needed for
/// the chain rule: spatial gradients of the interpolated logits and the
/// interpolation stencil.
#[derive(Debug, Clone, Copy)]
pub struct SegEval {
    pub probs: [f64; MAX_PARTS],
    pub logit_grads: [Vector3<f64>; MAX_PARTS],
    pub stencil: SegStencil,
}

impl SegField {
    pub fn new(spec: GridSpec, part_count: usize) -> Self {
        assert!(
            (2..=MAX_PARTS).contains(&part_count),
            "part count must be in 2..={MAX_PARTS}"
        );
        SegField {
            spec,
            part_count,
            logits: vec![0.0; spec.voxel_count() * part_count],
        }
    }

    #[inline]
    pub fn logit_index(&self, voxel: usize, channel: usize) -> usize {
        voxel * self.part_count + channel
    }

    /// Full evaluation used by the losses: probabilities, spatial logit
    /// gradients, and the scatter stencil. Out-of-bounds queries clamp.
    pub fn eval(&self, x: &Vector3<f64>) -> SegEval {
        let h = self.spec.voxel_size;
        let [nx, ny, _] = self.spec.dims;
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut active = [true; 3];
        for a in 0..3 {
            let u = (x[a] - self.spec.origin[a]) / h - 0.5;
            let n = self.spec.dims[a] as i64;
            let i = (u.floor() as i64).clamp(0, n - 2) as usize;
            let f = u - i as f64;
            cell[a] = i;
            if f < 0.0 {
                frac[a] = 0.0;
                active[a] = false;
            } else if f > 1.0 {
                frac[a] = 1.0;
                active[a] = false;
            } else {
                frac[a] = f;
            }
        }
        let stride = [1usize, nx as usize, (nx * ny) as usize];
        let base = cell[0] * stride[0] + cell[1] * stride[1] + cell[2] * stride[2];
        let mut corner_voxels = [0usize; 8];
        let mut weights = [0.0f64; 8];
        let [fx, fy, fz] = frac;
        for c in 0..8 {
            let dx = c & 1;
            let dy = (c >> 1) & 1;
            let dz = (c >> 2) & 1;
            corner_voxels[c] = base + dx * stride[0] + dy * stride[1] + dz * stride[2];
            weights[c] = (if dx == 1 { fx } else { 1.0 - fx })
                * (if dy == 1 { fy } else { 1.0 - fy })
                * (if dz == 1 { fz } else { 1.0 - fz });
        }

        let m = self.part_count;
        let mut interp = [0.0f64; MAX_PARTS];
        let mut grads = [Vector3::zeros(); MAX_PARTS];
        for ch in 0..m {
            let mut v = [0.0f64; 8];
            for c in 0..8 {
                v[c] = self.logits[self.logit_index(corner_voxels[c], ch)];
            }
            let c00 = v[0] + (v[1] - v[0]) * fx;
            let c10 = v[2] + (v[3] - v[2]) * fx;
            let c01 = v[4] + (v[5] - v[4]) * fx;
            let c11 = v[6] + (v[7] - v[6]) * fx;
            let c0 = c00 + (c10 - c00) * fy;
            let c1 = c01 + (c11 - c01) * fy;
            interp[ch] = c0 + (c1 - c0) * fz;
            let dx = {
                let d0 = (v[1] - v[0]) + ((v[3] - v[2]) - (v[1] - v[0])) * fy;
                let d1 = (v[5] - v[4]) + ((v[7] - v[6]) - (v[5] - v[4])) * fy;
                d0 + (d1 - d0) * fz
            };
            let dy = {
                let d0 = c10 - c00;
                let d1 = c11 - c01;
                d0 + (d1 - d0) * fz
            };
            let dz = c1 - c0;
            let mut g = Vector3::new(dx, dy, dz) * (LOGIT_GAIN / h);
            for a in 0..3 {
                if !active[a] {
                    g[a] = 0.0;
                }
            }
            grads[ch] = g;
            interp[ch] *= LOGIT_GAIN;
        }

        let mut probs = [0.0f64; MAX_PARTS];
        let max = interp[..m]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for ch in 0..m {
            probs[ch] = (interp[ch] - max).exp();
            sum += probs[ch];
        }
        for p in probs[..m].iter_mut() {
            *p /= sum;
        }
        // Pre-scaling the stencil weights keeps the gradient scatter path
        // (stored value → scaled logit → softmax) consistent.
        for w in &mut weights {
            *w *= LOGIT_GAIN;
        }
        SegEval {
            probs,
            logit_grads: grads,
            stencil: SegStencil {
                corner_voxels,
                weights,
            },
        }
    }

    /// Segmentation probabilities at a point (trilinear logits, then softmax).
    pub fn probs(&self, x: &Vector3<f64>) -> Vec<f64> {
        self.eval(x).probs[..self.part_count].to_vec()
    }

    /// Hard label: argmax of the segmentation probabilities.
    pub fn hard_label(&self, x: &Vector3<f64>) -> usize {
        let e = self.eval(x);
        e.probs[..self.part_count]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

/// All free variables of the articulation optimization: one segmentation
/// field per state plus the shared forward (state 0→1) part motions.
///
/// Motion 0 is pinned to the identity and never updated; state-1→0 motions
/// are derived as exact inverses rather than stored.
#[derive(Debug, Clone)]
pub struct ArticulationState {
    pub seg: [SegField; 2],
    pub motions: Vec<MotionParam>,
}

/// Decoded motions cached per step: forward and inverse rigid transforms plus
/// the rotation Jacobians for backpropagation.
#[derive(Debug, Clone)]
pub struct DecodedMotions {
    pub forward: Vec<Rigid>,
    pub inverse: Vec<Rigid>,
    pub rot_jacobians: Vec<[Matrix3<f64>; 6]>,
}

impl DecodedMotions {
    /// Motions that transport points from `dir.source_state()` to the other
    /// state.
    pub fn directed(&self, dir: Direction) -> &[Rigid] {
        match dir {
            Direction::ZeroToOne => &self.forward,
            Direction::OneToZero => &self.inverse,
        }
    }
}

impl ArticulationState {
    /// Random initialization: logits ~ N(0, 0.01), rotations near identity,
    /// translations near zero. Motion 0 is the exact identity.
    pub fn init(part_count: usize, seg_spec: GridSpec, rng: &mut impl Rng) -> Self {
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut seg = [
            SegField::new(seg_spec, part_count),
            SegField::new(seg_spec, part_count),
        ];
        for field in &mut seg {
            for l in &mut field.logits {
                *l = noise.sample(rng);
            }
        }
        let mut motions = vec![MotionParam::identity()];
        for _ in 1..part_count {
            let mut m = MotionParam::identity();
            for v in &mut m.rot6d {
                *v += noise.sample(rng);
            }
            for a in 0..3 {
                m.trans[a] = noise.sample(rng);
            }
            motions.push(m);
        }
        ArticulationState { seg, motions }
    }

    pub fn part_count(&self) -> usize {
        self.motions.len()
    }

    pub fn decode_motions(&self) -> DecodedMotions {
        let mut forward = Vec::with_capacity(self.motions.len());
        let mut inverse = Vec::with_capacity(self.motions.len());
        let mut rot_jacobians = Vec::with_capacity(self.motions.len());
        for m in &self.motions {
            let (rot, jac) = decode_rot6d_with_jacobian(&m.rot6d);
            let rigid = Rigid::new(rot, m.trans);
            inverse.push(rigid.inverse());
            forward.push(rigid);
            rot_jacobians.push(jac);
        }
        DecodedMotions {
            forward,
            inverse,
            rot_jacobians,
        }
    }

    /// Transports a point from `dir.source_state()` to the other state by
    /// probability-blended rigid motions.
    pub fn forward_point(&self, x: &Vector3<f64>, dir: Direction) -> Vector3<f64> {
        let decoded = self.decode_motions();
        let seg = &self.seg[dir.source_state()];
        let probs = seg.eval(x).probs;
        blend_point(x, &probs[..self.part_count()], decoded.directed(dir))
    }
}

/// Convex combination of the per-part rigid images of `x`.
pub fn blend_point(x: &Vector3<f64>, probs: &[f64], motions: &[Rigid]) -> Vector3<f64> {
    let mut y = Vector3::zeros();
    for (p, m) in probs.iter().zip(motions) {
        y += m.apply(x) * *p;
    }
    y
}

/// The per-part rigid preimages of `y` under directed motions: candidate `i`
/// maps back to `y` exactly under part `i`'s motion.
pub fn backward_candidates(y: &Vector3<f64>, motions: &[Rigid]) -> Vec<Vector3<f64>> {
    motions.iter().map(|m| m.inverse().apply(y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn random6(rng: &mut StdRng) -> [f64; 6] {
        let mut v = [0.0; 6];
        for x in &mut v {
            *x = rng.random_range(-2.0..2.0);
        }
        v
    }

    #[test]
    fn decode_identity_basis() {
        let r = decode_rot6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn decode_removes_scale_and_shear() {
        // (2·e1, e2 + 0.5·e1) still decodes to the identity.
        let r = decode_rot6d(&[2.0, 0.0, 0.0, 0.5, 1.0, 0.0]).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn decode_scale_invariance() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let v = random6(&mut rng);
            let Ok(r) = decode_rot6d(&v) else { continue };
            let scaled = [3.7 * v[0], 3.7 * v[1], 3.7 * v[2], v[3], v[4], v[5]];
            let r2 = decode_rot6d(&scaled).unwrap();
            assert!((r - r2).norm() < 1e-12);
        }
    }

    #[test]
    fn decode_always_orthonormal() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut n = 0;
        while n < 1000 {
            let v = random6(&mut rng);
            let Ok(r) = decode_rot6d(&v) else { continue };
            assert!(((r.transpose() * r) - Matrix3::identity()).norm() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
            n += 1;
        }
    }

    #[test]
    fn decode_rejects_degenerate() {
        assert!(decode_rot6d(&[0.0; 6]).is_err());
        assert!(decode_rot6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn robust_decode_handles_degenerate() {
        let (r, _) = decode_rot6d_with_jacobian(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(((r.transpose() * r) - Matrix3::identity()).norm() < 1e-9);
        let (r, _) = decode_rot6d_with_jacobian(&[0.0; 6]);
        assert!(((r.transpose() * r) - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn rot6d_jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..50 {
            let v = random6(&mut rng);
            if decode_rot6d(&v).is_err() {
                continue;
            }
            let (_, jac) = decode_rot6d_with_jacobian(&v);
            for k in 0..6 {
                let mut vp = v;
                let mut vm = v;
                vp[k] += h;
                vm[k] -= h;
                let rp = decode_rot6d(&vp).unwrap();
                let rm = decode_rot6d(&vm).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                assert!(
                    (jac[k] - fd).norm() < 1e-5 * (1.0 + fd.norm()),
                    "component {k}: err {}",
                    (jac[k] - fd).norm()
                );
            }
        }
    }

    fn uniform_seg(m: usize) -> SegField {
        SegField::new(GridSpec::unit_workspace(8), m)
    }

    #[test]
    fn seg_prob_uniform_logits() {
        let seg = uniform_seg(3);
        let p = seg.probs(&Vector3::new(0.1, -0.2, 0.3));
        for &pi in &p {
            assert_relative_eq!(pi, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn seg_prob_saturated_logits() {
        let mut seg = uniform_seg(2);
        for v in 0..seg.spec.voxel_count() {
            let (i0, i1) = (seg.logit_index(v, 0), seg.logit_index(v, 1));
            seg.logits[i0] = 10.0;
            seg.logits[i1] = -10.0;
        }
        let p = seg.probs(&Vector3::zeros());
        assert!((p[0] - 1.0).abs() < 1e-4);
        assert!(p[1] < 1e-4);
    }

    #[test]
    fn seg_prob_matches_composition_oracle() {
        let mut rng = StdRng::seed_from_u64(8);
        let mut seg = uniform_seg(4);
        for l in &mut seg.logits {
            *l = rng.random_range(-2.0..2.0);
        }
        // Independent oracle: per-channel trilinear via the volume sampler,
        // then softmax.
        let mut as_grid = crate::volume::VolumeGrid::zeros(seg.spec, 4);
        for (dst, &src) in as_grid.data_mut().iter_mut().zip(&seg.logits) {
            *dst = src as f32;
        }
        for _ in 0..200 {
            let x = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let p = seg.probs(&x);
            let logits: Vec<f64> = (0..4)
                .map(|c| as_grid.sample(&x, c) * LOGIT_GAIN)
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..4 {
                // f32 grid storage vs f64 logits limits agreement.
                assert!((p[c] - exps[c] / sum).abs() < 1e-5);
            }
            assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn seg_prob_is_locally_lipschitz() {
        let mut rng = StdRng::seed_from_u64(10);
        let mut seg = uniform_seg(2);
        for l in &mut seg.logits {
            *l = rng.random_range(-3.0..3.0);
        }
        let delta = 1e-4;
        for _ in 0..200 {
            let x = Vector3::new(
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.45..0.45),
            );
            let d = Vector3::new(
                rng.random_range(-1.0..1.0f64),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize()
                * delta;
            let p0 = seg.probs(&x);
            let p1 = seg.probs(&(x + d));
            let diff: f64 = p0
                .iter()
                .zip(&p1)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // Stored values in ±3 on a 0.125 grid: after the logit gain the
            // composition's slope stays well below 2000 per unit length.
            assert!(diff < 2000.0 * delta);
        }
    }

    fn hard_seg(m: usize, part: usize) -> SegField {
        let mut seg = SegField::new(GridSpec::unit_workspace(8), m);
        for v in 0..seg.spec.voxel_count() {
            for c in 0..m {
                let idx = seg.logit_index(v, c);
                seg.logits[idx] = if c == part { 20.0 } else { -20.0 };
            }
        }
        seg
    }

    fn two_part_state(motion1: Rigid) -> ArticulationState {
        let mut rng = StdRng::seed_from_u64(1);
        let mut art = ArticulationState::init(2, GridSpec::unit_workspace(8), &mut rng);
        art.motions[1] = MotionParam::from_rigid(&motion1);
        art
    }

    #[test]
    fn forward_identity_motions_fix_points() {
        let mut art = two_part_state(Rigid::identity());
        art.motions[1] = MotionParam::identity();
        let x = Vector3::new(0.2, -0.1, 0.05);
        assert_relative_eq!(
            art.forward_point(&x, Direction::ZeroToOne),
            x,
            epsilon = 1e-12
        );
    }

    #[test]
    fn forward_hard_single_part_translates() {
        let t = Vector3::new(0.0, 0.0, 0.1);
        let mut art = two_part_state(Rigid::from_translation(t));
        art.seg[0] = hard_seg(2, 1);
        let x = Vector3::new(0.1, 0.1, 0.0);
        let y = art.forward_point(&x, Direction::ZeroToOne);
        assert!((y - (x + t)).norm() < 1e-9);
    }

    #[test]
    fn forward_even_blend_averages() {
        let t = Vector3::new(0.0, 0.0, 0.2);
        let mut art = two_part_state(Rigid::from_translation(t));
        art.seg[0] = SegField::new(GridSpec::unit_workspace(8), 2);
        let x = Vector3::new(0.1, -0.2, 0.0);
        let y = art.forward_point(&x, Direction::ZeroToOne);
        assert!((y - (x + t * 0.5)).norm() < 1e-12);
    }

    #[test]
    fn backward_candidates_are_rigid_preimages() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..100 {
            let v = random6(&mut rng);
            let Ok(rot) = decode_rot6d(&v) else { continue };
            let motions = vec![
                Rigid::identity(),
                Rigid::new(
                    rot,
                    Vector3::new(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                    ),
                ),
            ];
            let y = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let candidates = backward_candidates(&y, &motions);
            assert_relative_eq!(candidates[0], y, epsilon = 1e-12);
            for (i, c) in candidates.iter().enumerate() {
                // Forwarding candidate i with a hard label i returns y.
                let round_trip = motions[i].apply(c);
                assert!((round_trip - y).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_candidate_of_rotation_is_inverse_rotation() {
        let rot = crate::math::rotation_matrix(Vector3::z(), 90f64.to_radians());
        let motions = vec![Rigid::identity(), Rigid::new(rot, Vector3::zeros())];
        let y = Vector3::new(1.0, 0.0, 0.0);
        let candidates = backward_candidates(&y, &motions);
        let inv = crate::math::rotation_matrix(Vector3::z(), -90f64.to_radians()) * y;
        assert!((candidates[1] - inv).norm() < 1e-12);
    }

    #[test]
    fn shared_motion_round_trip_is_identity() {
        // With matching hard segmentation, 1→0 after 0→1 is the identity.
        let rot = crate::math::rotation_matrix(Vector3::new(0.3, 1.0, -0.2), 0.7);
        let motion = Rigid::new(rot, Vector3::new(0.1, -0.05, 0.2));
        let mut art = two_part_state(motion);
        art.seg[0] = hard_seg(2, 1);
        art.seg[1] = hard_seg(2, 1);
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..100 {
            let x = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let y = art.forward_point(&x, Direction::ZeroToOne);
            let back = art.forward_point(&y, Direction::OneToZero);
            assert!(
                (back - x).norm() < 1e-8,
                "round trip drift {}",
                (back - x).norm()
            );
        }
    }

    #[test]
    fn hard_label_shift_invariant() {
        let mut rng = StdRng::seed_from_u64(16);
        let mut seg = uniform_seg(3);
        for l in &mut seg.logits {
            *l = rng.random_range(-2.0..2.0);
        }
        let mut shifted = seg.clone();
        for l in &mut shifted.logits {
            *l += 7.5;
        }
        for _ in 0..100 {
            let x = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            assert_eq!(seg.hard_label(&x), shifted.hard_label(&x));
        }
    }
}
