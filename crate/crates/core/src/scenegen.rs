//! Procedural ground-truth articulated scenes.
//!
//! Scenes are built from analytic solid primitives (boxes and cylinders) so
//! that depth maps, signed distances, colors, and interior-point visibility
//! labels all have closed forms. Each scene carries its exact joint records
//! and per-part poses at both articulation states, which makes it a full
//! oracle for the reconstruction pipeline: every quantity the optimizer is
//! supposed to recover is known by construction.
//!
//! Four templates are provided: `drawer` (prismatic), `door` (revolute),
//! `laptop` (revolute with a near-closed rest state), and `multi` (one
//! revolute door plus one prismatic drawer on a shared body).

use crate::losses::MatchPair;
use crate::math::{look_at_world_to_cam, Rigid};
use crate::volume::{DepthView, GridSpec, Intrinsics, VolumeGrid};
use crate::{Error, Result};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// Ground-truth or extracted joint: type, axis line, and the scalar state
/// change between the two captures (radians for revolute joints, world units
/// for prismatic ones).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointRecord {
    pub joint_type: JointType,
    pub axis_dir: Vector3<f64>,
    /// A point on the axis; unused for prismatic joints.
    pub axis_origin: Vector3<f64>,
    pub state_delta: f64,
}

impl JointRecord {
    /// The rigid motion this joint applies between state 0 and state 1.
    pub fn motion(&self) -> Rigid {
        match self.joint_type {
            JointType::Revolute => {
                Rigid::rotation_about_axis(self.axis_dir, self.axis_origin, self.state_delta)
            }
            JointType::Prismatic => {
                Rigid::from_translation(self.axis_dir.normalize() * self.state_delta)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    Box { half_extents: Vector3<f64> },
    /// Axis along local +z.
    Cylinder { radius: f64, half_height: f64 },
}

/// An axis-aligned solid placed at its state-0 position, owned by one part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub center: Vector3<f64>,
    pub part: usize,
    /// Per-face base colors: 6 entries for boxes (-x,+x,-y,+y,-z,+z),
    /// 3 for cylinders (side, -z cap, +z cap).
    pub face_colors: Vec<[f64; 3]>,
}

/// A labeled sample used to test visibility handling: a material point with
/// its position at both states and the state(s) where it is observable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InteriorSample {
    pub pos: [Vector3<f64>; 2],
    pub visible: [bool; 2],
}

/// A complete synthetic articulated object with exact ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthScene {
    pub primitives: Vec<Primitive>,
    pub part_count: usize,
    /// Joint `j` drives part `j + 1`; part 0 is static.
    pub joints: Vec<JointRecord>,
    pub state0: Vec<Rigid>,
    pub state1: Vec<Rigid>,
    pub interior_points: Vec<InteriorSample>,
    /// Meters per workspace unit, used when reporting metric errors.
    pub scale: f64,
}

const COLOR_GRADIENT: f64 = 0.3;

impl GroundTruthScene {
    pub fn part_pose(&self, part: usize, state: usize) -> &Rigid {
        if state == 0 {
            &self.state0[part]
        } else {
            &self.state1[part]
        }
    }

    /// The rigid motion of `part` from `state` to the other state.
    pub fn cross_motion(&self, part: usize, from_state: usize) -> Rigid {
        let fwd = self.state1[part].compose(&self.state0[part].inverse());
        if from_state == 0 {
            fwd
        } else {
            fwd.inverse()
        }
    }

    /// Analytic signed distance to the whole object at a state.
    pub fn sdf(&self, state: usize, x: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|p| {
                let local = self.part_pose(p.part, state).inverse().apply(x) - p.center;
                shape_sdf(&p.shape, &local)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Part owning the surface nearest to `x` (intended for on-surface points).
    pub fn part_at_surface(&self, state: usize, x: &Vector3<f64>) -> usize {
        self.primitives
            .iter()
            .map(|p| {
                let local = self.part_pose(p.part, state).inverse().apply(x) - p.center;
                (shape_sdf(&p.shape, &local).abs(), p.part)
            })
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .map(|(_, part)| part)
            .unwrap()
    }

    /// First ray hit: returns (ray parameter, part index, color).
    pub fn raycast(
        &self,
        state: usize,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<(f64, usize, [f64; 3])> {
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for p in &self.primitives {
            let inv = self.part_pose(p.part, state).inverse();
            let o = inv.apply(origin) - p.center;
            let d = inv.apply_dir(dir);
            if let Some(t) = shape_raycast(&p.shape, &o, &d) {
                if best.map(|(bt, _, _)| t < bt).unwrap_or(true) {
                    let local = o + d * t;
                    let color = shape_color(&p.shape, &p.face_colors, &local);
                    best = Some((t, p.part, color));
                }
            }
        }
        best
    }

    /// Color of the surface point nearest to `x`, for building the frozen
    /// appearance field.
    pub fn nearest_surface_color(&self, state: usize, x: &Vector3<f64>) -> [f64; 3] {
        let mut best = (f64::INFINITY, [0.5; 3]);
        for p in &self.primitives {
            let local = self.part_pose(p.part, state).inverse().apply(x) - p.center;
            let q = shape_closest_surface_point(&p.shape, &local);
            let d = (q - local).norm();
            if d < best.0 {
                best = (d, shape_color(&p.shape, &p.face_colors, &q));
            }
        }
        best.1
    }

    /// Fills a 3-channel grid with the analytic Lambertian color field.
    pub fn color_field(&self, state: usize, spec: GridSpec) -> VolumeGrid {
        let mut grid = VolumeGrid::zeros(spec, 3);
        let [nx, ny, _] = spec.dims;
        let slab = (nx * ny) as usize * 3;
        grid.data_mut()
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(k, chunk)| {
                for j in 0..ny {
                    for i in 0..nx {
                        let x = spec.voxel_center(i, j, k as u32);
                        let c = self.nearest_surface_color(state, &x);
                        let base = ((j * nx + i) * 3) as usize;
                        chunk[base] = c[0] as f32;
                        chunk[base + 1] = c[1] as f32;
                        chunk[base + 2] = c[2] as f32;
                    }
                }
            });
        grid
    }
}

fn shape_sdf(shape: &PrimitiveShape, p: &Vector3<f64>) -> f64 {
    match shape {
        PrimitiveShape::Box { half_extents: h } => {
            let q = Vector3::new(p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z);
            let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
            let inside = q.x.max(q.y).max(q.z).min(0.0);
            outside + inside
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => {
            let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
            let dz = p.z.abs() - half_height;
            let outside = Vector2::new(dr.max(0.0), dz.max(0.0)).norm();
            let inside = dr.max(dz).min(0.0);
            outside + inside
        }
    }
}

/// Closest point on the shape surface from `p` (works from either side).
fn shape_closest_surface_point(shape: &PrimitiveShape, p: &Vector3<f64>) -> Vector3<f64> {
    match shape {
        PrimitiveShape::Box { half_extents: h } => {
            let inside =
                p.x.abs() <= h.x && p.y.abs() <= h.y && p.z.abs() <= h.z;
            if !inside {
                Vector3::new(
                    p.x.clamp(-h.x, h.x),
                    p.y.clamp(-h.y, h.y),
                    p.z.clamp(-h.z, h.z),
                )
            } else {
                // Push out through the nearest face.
                let gaps = [h.x - p.x.abs(), h.y - p.y.abs(), h.z - p.z.abs()];
                let a = (0..3)
                    .min_by(|&i, &j| gaps[i].partial_cmp(&gaps[j]).unwrap())
                    .unwrap();
                let mut q = *p;
                q[a] = h[a] * if p[a] >= 0.0 { 1.0 } else { -1.0 };
                q
            }
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => {
            let r = (p.x * p.x + p.y * p.y).sqrt();
            let radial = if r > 1e-12 {
                Vector2::new(p.x / r, p.y / r)
            } else {
                Vector2::new(1.0, 0.0)
            };
            let dr = r - radius;
            let dz = p.z.abs() - half_height;
            if dr <= 0.0 && dz <= 0.0 {
                // Inside: exit through the nearer of side wall and cap.
                if -dr < -dz {
                    Vector3::new(radial.x * radius, radial.y * radius, p.z)
                } else {
                    Vector3::new(p.x, p.y, half_height * p.z.signum())
                }
            } else {
                let rr = r.min(*radius).max(0.0);
                let zz = p.z.clamp(-half_height, *half_height);
                if dr > 0.0 && dz > 0.0 {
                    Vector3::new(
                        radial.x * radius,
                        radial.y * radius,
                        half_height * p.z.signum(),
                    )
                } else if dr > 0.0 {
                    Vector3::new(radial.x * radius, radial.y * radius, zz)
                } else {
                    Vector3::new(radial.x * rr, radial.y * rr, half_height * p.z.signum())
                }
            }
        }
    }
}

/// Face color at a local surface point, with a mild gradient along the face.
fn shape_color(shape: &PrimitiveShape, colors: &[[f64; 3]], q: &Vector3<f64>) -> [f64; 3] {
    let (face, u) = match shape {
        PrimitiveShape::Box { half_extents: h } => {
            let rel = [q.x / h.x, q.y / h.y, q.z / h.z];
            let a = (0..3)
                .max_by(|&i, &j| rel[i].abs().partial_cmp(&rel[j].abs()).unwrap())
                .unwrap();
            let face = 2 * a + if rel[a] >= 0.0 { 1 } else { 0 };
            let b = (a + 1) % 3;
            let u = ((q[b] / h[b]) + 1.0) / 2.0;
            (face, u.clamp(0.0, 1.0))
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => {
            let dz = q.z.abs() - half_height;
            let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
            if dz.abs() < dr.abs() {
                let face = if q.z >= 0.0 { 2 } else { 1 };
                let u = ((q.x * q.x + q.y * q.y).sqrt() / radius).clamp(0.0, 1.0);
                (face, u)
            } else {
                let u = (q.y.atan2(q.x) / std::f64::consts::TAU + 0.5).clamp(0.0, 1.0);
                (0, u)
            }
        }
    };
    let base = colors[face.min(colors.len() - 1)];
    let g = COLOR_GRADIENT;
    let scale = 1.0 - g / 2.0 + g * u;
    [
        (base[0] * scale).clamp(0.0, 1.0),
        (base[1] * scale).clamp(0.0, 1.0),
        (base[2] * scale).clamp(0.0, 1.0),
    ]
}

/// Ray-shape intersection in the shape's local frame; returns the smallest
/// positive parameter.
fn shape_raycast(shape: &PrimitiveShape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    match shape {
        PrimitiveShape::Box { half_extents: h } => {
            let mut tmin = 0.0f64;
            let mut tmax = f64::INFINITY;
            for a in 0..3 {
                if d[a].abs() < 1e-15 {
                    if o[a].abs() > h[a] {
                        return None;
                    }
                } else {
                    let inv = 1.0 / d[a];
                    let mut t0 = (-h[a] - o[a]) * inv;
                    let mut t1 = (h[a] - o[a]) * inv;
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    tmin = tmin.max(t0);
                    tmax = tmax.min(t1);
                    if tmin > tmax {
                        return None;
                    }
                }
            }
            (tmin > 1e-9).then_some(tmin)
        }
        PrimitiveShape::Cylinder {
            radius,
            half_height,
        } => {
            let mut best: Option<f64> = None;
            // Side wall.
            let a = d.x * d.x + d.y * d.y;
            if a > 1e-15 {
                let b = o.x * d.x + o.y * d.y;
                let c = o.x * o.x + o.y * o.y - radius * radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for t in [(-b - sq) / a, (-b + sq) / a] {
                        if t > 1e-9 && (o.z + t * d.z).abs() <= *half_height {
                            best = Some(best.map_or(t, |bt: f64| bt.min(t)));
                            break;
                        }
                    }
                }
            }
            // Caps.
            if d.z.abs() > 1e-15 {
                for zcap in [-half_height, *half_height] {
                    let t = (zcap - o.z) / d.z;
                    if t > 1e-9 {
                        let px = o.x + t * d.x;
                        let py = o.y + t * d.y;
                        if px * px + py * py <= radius * radius {
                            best = Some(best.map_or(t, |bt: f64| bt.min(t)));
                        }
                    }
                }
            }
            best
        }
    }
}

/// Scene templates mirroring common articulated household objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneTemplate {
    Drawer,
    Door,
    Laptop,
    Multi,
}

impl std::str::FromStr for SceneTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drawer" => Ok(SceneTemplate::Drawer),
            "door" => Ok(SceneTemplate::Door),
            "laptop" => Ok(SceneTemplate::Laptop),
            "multi" => Ok(SceneTemplate::Multi),
            other => Err(Error::InvalidArgument(format!(
                "unknown scene template '{other}' (expected drawer|door|laptop|multi)"
            ))),
        }
    }
}

/// Deterministic procedural scene for a seed and template.
pub fn generate_scene(seed: u64, template: SceneTemplate) -> GroundTruthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    match template {
        SceneTemplate::Drawer => build_drawer(&mut rng),
        SceneTemplate::Door => build_door(&mut rng),
        SceneTemplate::Laptop => build_laptop(&mut rng),
        SceneTemplate::Multi => build_multi(&mut rng),
    }
}

fn palette(rng: &mut impl Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.15..0.95),
                rng.random_range(0.15..0.95),
                rng.random_range(0.15..0.95),
            ]
        })
        .collect()
}

fn boxp(
    part: usize,
    center: Vector3<f64>,
    half: Vector3<f64>,
    colors: Vec<[f64; 3]>,
) -> Primitive {
    Primitive {
        shape: PrimitiveShape::Box { half_extents: half },
        center,
        part,
        face_colors: colors,
    }
}

/// Hollow open-front shell: back wall at -x, plus top/bottom/left/right.
/// Returns the five wall boxes for `part`.
#[allow(clippy::too_many_arguments)]
fn shell_boxes(
    part: usize,
    center: Vector3<f64>,
    d: f64,
    w_outer: f64,
    h: f64,
    wall: f64,
    y_range: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<Primitive> {
    let (y0, y1) = y_range;
    let ymid = (y0 + y1) / 2.0;
    let yhalf = (y1 - y0) / 2.0;
    let _ = w_outer;
    vec![
        // Back.
        boxp(
            part,
            center + Vector3::new(-d / 2.0 + wall / 2.0, ymid - center.y, 0.0),
            Vector3::new(wall / 2.0, yhalf, h / 2.0),
            palette(rng, 6),
        ),
        // Top.
        boxp(
            part,
            center + Vector3::new(0.0, ymid - center.y, h / 2.0 - wall / 2.0),
            Vector3::new(d / 2.0, yhalf, wall / 2.0),
            palette(rng, 6),
        ),
        // Bottom.
        boxp(
            part,
            center + Vector3::new(0.0, ymid - center.y, -h / 2.0 + wall / 2.0),
            Vector3::new(d / 2.0, yhalf, wall / 2.0),
            palette(rng, 6),
        ),
        // Left.
        boxp(
            part,
            center + Vector3::new(0.0, y0 + wall / 2.0 - center.y, 0.0),
            Vector3::new(d / 2.0, wall / 2.0, h / 2.0),
            palette(rng, 6),
        ),
        // Right.
        boxp(
            part,
            center + Vector3::new(0.0, y1 - wall / 2.0 - center.y, 0.0),
            Vector3::new(d / 2.0, wall / 2.0, h / 2.0),
            palette(rng, 6),
        ),
    ]
}

/// Open-top drawer tray filling a cavity, with a sealed front panel and a
/// knob; returns primitives and the tray's inner-cavity bounds.
#[allow(clippy::too_many_arguments)]
fn drawer_tray(
    part: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
    z_range: (f64, f64),
    wall: f64,
    cy: f64,
    rng: &mut impl Rng,
) -> (Vec<Primitive>, (Vector3<f64>, Vector3<f64>)) {
    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    let (z0, z1) = z_range;
    let xmid = (x0 + x1) / 2.0;
    let xhalf = (x1 - x0) / 2.0;
    let rim = z0 + 0.62 * (z1 - z0);
    let mut prims = vec![
        // Bottom.
        boxp(
            part,
            Vector3::new(xmid, cy, z0 + wall / 2.0),
            Vector3::new(xhalf, (y1 - y0) / 2.0, wall / 2.0),
            palette(rng, 6),
        ),
        // Back wall.
        boxp(
            part,
            Vector3::new(x0 + wall / 2.0, cy, (z0 + rim) / 2.0),
            Vector3::new(wall / 2.0, (y1 - y0) / 2.0, (rim - z0) / 2.0),
            palette(rng, 6),
        ),
        // Left wall.
        boxp(
            part,
            Vector3::new(xmid, y0 + wall / 2.0, (z0 + rim) / 2.0),
            Vector3::new(xhalf, wall / 2.0, (rim - z0) / 2.0),
            palette(rng, 6),
        ),
        // Right wall.
        boxp(
            part,
            Vector3::new(xmid, y1 - wall / 2.0, (z0 + rim) / 2.0),
            Vector3::new(xhalf, wall / 2.0, (rim - z0) / 2.0),
            palette(rng, 6),
        ),
        // Front panel sealing the full cavity cross-section.
        boxp(
            part,
            Vector3::new(x1 - wall / 2.0, cy, (z0 + z1) / 2.0),
            Vector3::new(wall / 2.0, (y1 - y0) / 2.0, (z1 - z0) / 2.0),
            palette(rng, 6),
        ),
        // Knob sticking out of the panel.
        Primitive {
            shape: PrimitiveShape::Cylinder {
                radius: 0.015,
                half_height: 0.012,
            },
            center: Vector3::new(x1 + 0.012, cy, (z0 + z1) / 2.0),
            part,
            face_colors: palette(rng, 3),
        },
    ];
    // The knob cylinder axis should face +x: approximate with a squat box
    // instead to keep primitives axis-aligned? No: a z-axis cylinder knob
    // works fine visually and geometrically; reorient as a vertical handle.
    if let PrimitiveShape::Cylinder { half_height, .. } = &mut prims[5].shape {
        *half_height = 0.035;
    }
    let inner_lo = Vector3::new(x0 + wall, y0 + wall, z0 + wall);
    let inner_hi = Vector3::new(x1 - wall, y1 - wall, rim);
    (prims, (inner_lo, inner_hi))
}

fn build_drawer(rng: &mut impl Rng) -> GroundTruthScene {
    let d = rng.random_range(0.40..0.48);
    let w = rng.random_range(0.34..0.42);
    let h = rng.random_range(0.26..0.34);
    let wall = 0.035;
    let clear = 0.012;
    let center = Vector3::new(-0.08, 0.0, 0.0);
    let delta = rng.random_range(0.10..0.22);

    let mut primitives = shell_boxes(
        0,
        center,
        d,
        w,
        h,
        wall,
        (center.y - w / 2.0, center.y + w / 2.0),
        rng,
    );
    let x_front = center.x + d / 2.0;
    let (tray, inner) = drawer_tray(
        1,
        (center.x - d / 2.0 + wall + clear, x_front),
        (center.y - w / 2.0 + wall + clear, center.y + w / 2.0 - wall - clear),
        (center.z - h / 2.0 + wall + clear, center.z + h / 2.0 - wall - clear),
        0.03,
        center.y,
        rng,
    );
    primitives.extend(tray);

    let joint = JointRecord {
        joint_type: JointType::Prismatic,
        axis_dir: Vector3::x(),
        axis_origin: Vector3::zeros(),
        state_delta: delta,
    };
    let motion = joint.motion();
    let state0 = vec![Rigid::identity(); 2];
    let state1 = vec![Rigid::identity(), motion];

    // Material points inside the closed tray that slide clear of the shell.
    let mut interior_points = Vec::new();
    let m = 0.05;
    let zp = inner.0.z + 0.015;
    let x_lo = (x_front - delta + m).max(inner.0.x + m);
    let x_hi = inner.1.x - 0.04;
    if x_hi > x_lo {
        for i in 0..24 {
            let fx = (i % 6) as f64 / 5.0;
            let fy = (i / 6) as f64 / 3.0;
            let p = Vector3::new(
                x_lo + fx * (x_hi - x_lo),
                inner.0.y + m + fy * (inner.1.y - inner.0.y - 2.0 * m),
                zp,
            );
            interior_points.push(InteriorSample {
                pos: [p, motion.apply(&p)],
                visible: [false, true],
            });
        }
    }

    GroundTruthScene {
        primitives,
        part_count: 2,
        joints: vec![joint],
        state0,
        state1,
        interior_points,
        scale: 1.0,
    }
}

fn build_door(rng: &mut impl Rng) -> GroundTruthScene {
    let d = rng.random_range(0.36..0.44);
    let w = rng.random_range(0.32..0.40);
    let h = rng.random_range(0.28..0.36);
    let wall = 0.035;
    let clear = 0.012;
    let center = Vector3::new(-0.12, 0.0, 0.0);
    let delta = rng.random_range(25f64.to_radians()..70f64.to_radians());

    let mut primitives = shell_boxes(
        0,
        center,
        d,
        w,
        h,
        wall,
        (center.y - w / 2.0, center.y + w / 2.0),
        rng,
    );
    let x_front = center.x + d / 2.0;
    let panel_y0 = center.y - w / 2.0 + wall + clear;
    let panel_y1 = center.y + w / 2.0 - wall - clear;
    let panel_z0 = center.z - h / 2.0 + wall + clear;
    let panel_z1 = center.z + h / 2.0 - wall - clear;
    primitives.push(boxp(
        1,
        Vector3::new(
            x_front - wall / 2.0,
            (panel_y0 + panel_y1) / 2.0,
            (panel_z0 + panel_z1) / 2.0,
        ),
        Vector3::new(wall / 2.0, (panel_y1 - panel_y0) / 2.0, (panel_z1 - panel_z0) / 2.0),
        palette(rng, 6),
    ));
    // Vertical handle near the free edge.
    primitives.push(Primitive {
        shape: PrimitiveShape::Cylinder {
            radius: 0.013,
            half_height: 0.05,
        },
        center: Vector3::new(x_front + 0.015, panel_y1 - 0.04, center.z),
        part: 1,
        face_colors: palette(rng, 3),
    });

    // Hinge along the panel's left edge; negative z axis so a positive delta
    // swings the panel outward, clear of the opening.
    let joint = JointRecord {
        joint_type: JointType::Revolute,
        axis_dir: -Vector3::z(),
        axis_origin: Vector3::new(x_front, panel_y0, 0.0),
        state_delta: delta,
    };
    let motion = joint.motion();
    let state0 = vec![Rigid::identity(); 2];
    let state1 = vec![Rigid::identity(), motion];

    // Static cavity points exposed once the door swings open. Kept low and
    // shallow so the viewing cone through the opening stays wide.
    let mut interior_points = Vec::new();
    for i in 0..24 {
        let fx = (i % 4) as f64 / 3.0;
        let fy = ((i / 4) % 3) as f64 / 2.0;
        let fz = (i / 12) as f64;
        let p = Vector3::new(
            x_front - 0.20 + fx * 0.10,
            panel_y0 + 0.05 + fy * (panel_y1 - panel_y0 - 0.1),
            panel_z0 + 0.03 + fz * 0.04,
        );
        interior_points.push(InteriorSample {
            pos: [p, p],
            visible: [false, true],
        });
    }

    GroundTruthScene {
        primitives,
        part_count: 2,
        joints: vec![joint],
        state0,
        state1,
        interior_points,
        scale: 1.0,
    }
}

fn build_laptop(rng: &mut impl Rng) -> GroundTruthScene {
    let l = rng.random_range(0.34..0.42);
    let w = rng.random_range(0.40..0.48);
    let tb = 0.05;
    let tl = 0.035;
    let clear = 0.012;
    let z0 = -0.16;
    let cx = 0.0;
    let delta = rng.random_range(25f64.to_radians()..80f64.to_radians());

    let base = boxp(
        0,
        Vector3::new(cx, 0.0, z0 + tb / 2.0),
        Vector3::new(l / 2.0, w / 2.0, tb / 2.0),
        palette(rng, 6),
    );
    let lid_z = z0 + tb + clear + tl / 2.0;
    let lid = boxp(
        1,
        Vector3::new(cx, 0.0, lid_z),
        Vector3::new(l / 2.0, w / 2.0, tl / 2.0),
        palette(rng, 6),
    );

    // Hinge along the back edge (-x side), opening the lid upward: rotating
    // about +y at the lid's back-bottom edge tips the +x free edge up.
    let joint = JointRecord {
        joint_type: JointType::Revolute,
        axis_dir: Vector3::y(),
        axis_origin: Vector3::new(cx - l / 2.0, 0.0, z0 + tb + clear),
        state_delta: -delta,
    };
    let motion = joint.motion();
    let state0 = vec![Rigid::identity(); 2];
    let state1 = vec![Rigid::identity(), motion];

    // Keyboard-surface points hidden in the closed clearance gap.
    let mut interior_points = Vec::new();
    let zp = z0 + tb + clear / 2.0;
    for i in 0..24 {
        let fx = (i % 6) as f64 / 5.0;
        let fy = (i / 6) as f64 / 3.0;
        let p = Vector3::new(
            cx - l / 2.0 + 0.1 + fx * (l - 0.2),
            -w / 2.0 + 0.1 + fy * (w - 0.2),
            zp,
        );
        interior_points.push(InteriorSample {
            pos: [p, p],
            visible: [false, true],
        });
    }

    GroundTruthScene {
        primitives: vec![base, lid],
        part_count: 2,
        joints: vec![joint],
        state0,
        state1,
        interior_points,
        scale: 1.0,
    }
}

fn build_multi(rng: &mut impl Rng) -> GroundTruthScene {
    let d = rng.random_range(0.40..0.46);
    let w = rng.random_range(0.52..0.58);
    let h = rng.random_range(0.28..0.34);
    let wall = 0.035;
    let clear = 0.012;
    let center = Vector3::new(-0.10, 0.0, 0.0);
    let door_delta = rng.random_range(25f64.to_radians()..65f64.to_radians());
    let drawer_delta = rng.random_range(0.10..0.20);

    // Shared shell with a center divider: door compartment on -y, drawer
    // compartment on +y.
    let y_lo = center.y - w / 2.0;
    let y_hi = center.y + w / 2.0;
    let mut primitives = shell_boxes(0, center, d, w, h, wall, (y_lo, y_hi), rng);
    primitives.push(boxp(
        0,
        Vector3::new(center.x, center.y, center.z),
        Vector3::new(d / 2.0, wall / 2.0, h / 2.0),
        palette(rng, 6),
    ));

    let x_front = center.x + d / 2.0;
    let z0 = center.z - h / 2.0 + wall + clear;
    let z1 = center.z + h / 2.0 - wall - clear;

    // Door over the -y compartment, hinged at the outer (-y) edge.
    let door_y0 = y_lo + wall + clear;
    let door_y1 = center.y - wall / 2.0 - clear;
    primitives.push(boxp(
        1,
        Vector3::new(
            x_front - wall / 2.0,
            (door_y0 + door_y1) / 2.0,
            (z0 + z1) / 2.0,
        ),
        Vector3::new(wall / 2.0, (door_y1 - door_y0) / 2.0, (z1 - z0) / 2.0),
        palette(rng, 6),
    ));
    primitives.push(Primitive {
        shape: PrimitiveShape::Cylinder {
            radius: 0.012,
            half_height: 0.045,
        },
        center: Vector3::new(x_front + 0.014, door_y1 - 0.035, center.z),
        part: 1,
        face_colors: palette(rng, 3),
    });
    let door_joint = JointRecord {
        joint_type: JointType::Revolute,
        axis_dir: -Vector3::z(),
        axis_origin: Vector3::new(x_front, door_y0, 0.0),
        state_delta: door_delta,
    };

    // Drawer in the +y compartment.
    let (tray, _) = drawer_tray(
        2,
        (center.x - d / 2.0 + wall + clear, x_front),
        (center.y + wall / 2.0 + clear, y_hi - wall - clear),
        (z0, z1),
        0.03,
        (center.y + wall / 2.0 + clear + y_hi - wall - clear) / 2.0,
        rng,
    );
    primitives.extend(tray);
    let drawer_joint = JointRecord {
        joint_type: JointType::Prismatic,
        axis_dir: Vector3::x(),
        axis_origin: Vector3::zeros(),
        state_delta: drawer_delta,
    };

    let state0 = vec![Rigid::identity(); 3];
    let state1 = vec![
        Rigid::identity(),
        door_joint.motion(),
        drawer_joint.motion(),
    ];

    GroundTruthScene {
        primitives,
        part_count: 3,
        joints: vec![door_joint, drawer_joint],
        state0,
        state1,
        interior_points: Vec::new(),
        scale: 1.0,
    }
}

/// Default rendering geometry: camera ring radius, image size, focal length.
pub const RENDER_RADIUS: f64 = 1.8;
pub const RENDER_RES: usize = 128;
pub const RENDER_FOCAL: f64 = 150.0;

/// Renders depth views from random upper-hemisphere cameras looking at the
/// origin. Depth is exact ray-primitive intersection (z-depth); the mask
/// marks object hits. Optional Gaussian depth noise is controlled separately
/// by [`add_depth_noise`].
pub fn render_views(
    scene: &GroundTruthScene,
    state: usize,
    n_views: usize,
    seed: u64,
) -> Vec<DepthView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ state as u64);
    let eyes: Vec<Vector3<f64>> = (0..n_views)
        .map(|_| {
            let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
            let elevation = rng.random_range(15f64.to_radians()..75f64.to_radians());
            Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            ) * RENDER_RADIUS
        })
        .collect();
    eyes.par_iter()
        .map(|eye| render_single_view(scene, state, *eye))
        .collect()
}

fn render_single_view(scene: &GroundTruthScene, state: usize, eye: Vector3<f64>) -> DepthView {
    let res = RENDER_RES;
    let intrinsics = Intrinsics {
        fx: RENDER_FOCAL,
        fy: RENDER_FOCAL,
        cx: res as f64 / 2.0,
        cy: res as f64 / 2.0,
    };
    let world_to_cam = look_at_world_to_cam(eye, Vector3::zeros());
    let cam_to_world = world_to_cam.inverse();
    let mut depth = vec![0.0f32; res * res];
    let mut mask = vec![false; res * res];
    for j in 0..res {
        for i in 0..res {
            let dir_cam = Vector3::new(
                (i as f64 + 0.5 - intrinsics.cx) / intrinsics.fx,
                (j as f64 + 0.5 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let dir = cam_to_world.apply_dir(&dir_cam.normalize());
            if let Some((t, _, _)) = scene.raycast(state, &eye, &dir) {
                let hit = eye + dir * t;
                let z = world_to_cam.apply(&hit).z;
                depth[j * res + i] = z as f32;
                mask[j * res + i] = true;
            }
        }
    }
    DepthView {
        intrinsics,
        width: res,
        height: res,
        world_to_cam,
        depth,
        mask,
    }
}

/// Adds zero-mean Gaussian noise to all valid depth returns.
pub fn add_depth_noise(views: &mut [DepthView], sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef_cafe_f00d);
    let dist = Normal::new(0.0, sigma).unwrap();
    for view in views {
        for d in &mut view.depth {
            if *d > 0.0 {
                *d += dist.sample(&mut rng) as f32;
            }
        }
    }
}

/// Options for [`synth_matches`].
#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    /// Closest other-state views paired with each view.
    pub k_nearest: usize,
    /// Matches kept per view pair.
    pub n_per_pair: usize,
    /// Gaussian pixel noise applied to both endpoints.
    pub noise_px: f64,
    /// Fraction of matches whose target is replaced by a uniform random pixel.
    pub outlier_frac: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            k_nearest: 3,
            n_per_pair: 40,
            noise_px: 0.0,
            outlier_frac: 0.0,
        }
    }
}

/// Synthesizes cross-state pixel matches from ground-truth correspondences.
///
/// For every view at each state, the `k_nearest` closest views at the other
/// state are paired with it; ground-truth surface points visible in both are
/// projected into both images, then perturbed by Gaussian noise, with a
/// fraction of targets replaced by uniform outliers. View pairs with no
/// co-visible surface are skipped.
pub fn synth_matches(
    scene: &GroundTruthScene,
    views0: &[DepthView],
    views1: &[DepthView],
    opts: MatchOptions,
    seed: u64,
) -> Vec<MatchPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed_0000_0001);
    let noise = Normal::new(0.0, opts.noise_px.max(1e-12)).unwrap();
    let mut out = Vec::new();
    let views = [views0, views1];
    for t in 0..2usize {
        let src_views = views[t];
        let dst_views = views[1 - t];
        for (v, view) in src_views.iter().enumerate() {
            // Masked pixel list for sampling.
            let masked: Vec<usize> = view
                .mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect();
            if masked.is_empty() {
                continue;
            }
            let mut neighbor_idx: Vec<usize> = (0..dst_views.len()).collect();
            let src_center = view.camera_center();
            neighbor_idx.sort_by(|&a, &b| {
                let da = (dst_views[a].camera_center() - src_center).norm();
                let db = (dst_views[b].camera_center() - src_center).norm();
                da.partial_cmp(&db).unwrap()
            });
            for &u in neighbor_idx.iter().take(opts.k_nearest) {
                let dst = &dst_views[u];
                let mut kept = 0;
                let mut attempts = 0;
                while kept < opts.n_per_pair && attempts < 30 * opts.n_per_pair {
                    attempts += 1;
                    let pix = masked[rng.random_range(0..masked.len())];
                    let (iy, ix) = (pix / view.width, pix % view.width);
                    let p = Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5);
                    let d = view.depth[pix] as f64;
                    let x = view.unproject(p.x, p.y, d);
                    let part = scene.part_at_surface(t, &x);
                    let x2 = scene.cross_motion(part, t).apply(&x);
                    let Some((qx, qy, qz)) = dst.project(&x2) else {
                        continue;
                    };
                    let Some(dq) = dst.depth_at(qx, qy) else {
                        continue;
                    };
                    // Co-visibility: the transported point must be the surface
                    // the target view actually sees there.
                    if (qz - dq).abs() > 0.01 {
                        continue;
                    }
                    let mut pn = p;
                    let mut qn = Vector2::new(qx, qy);
                    if opts.noise_px > 0.0 {
                        pn.x += noise.sample(&mut rng);
                        pn.y += noise.sample(&mut rng);
                        qn.x += noise.sample(&mut rng);
                        qn.y += noise.sample(&mut rng);
                    }
                    if opts.outlier_frac > 0.0 && rng.random_range(0.0..1.0) < opts.outlier_frac {
                        qn = Vector2::new(
                            rng.random_range(0.0..dst.width as f64),
                            rng.random_range(0.0..dst.height as f64),
                        );
                    }
                    if pn.x < 0.0
                        || pn.y < 0.0
                        || pn.x >= view.width as f64
                        || pn.y >= view.height as f64
                    {
                        continue;
                    }
                    out.push(MatchPair {
                        t,
                        v,
                        u,
                        p: pn,
                        q: qn,
                    });
                    kept += 1;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::visibility;

    #[test]
    fn drawer_template_contract() {
        let scene = generate_scene(1, SceneTemplate::Drawer);
        assert_eq!(scene.part_count, 2);
        assert_eq!(scene.joints.len(), 1);
        assert_eq!(scene.joints[0].joint_type, JointType::Prismatic);
        assert!(scene.joints[0].state_delta > 0.0);
    }

    #[test]
    fn multi_template_has_mixed_joints() {
        let scene = generate_scene(7, SceneTemplate::Multi);
        assert!(scene.part_count >= 3);
        assert_eq!(scene.joints[0].joint_type, JointType::Revolute);
        assert_eq!(scene.joints[1].joint_type, JointType::Prismatic);
    }

    #[test]
    fn scenes_are_deterministic() {
        for template in [
            SceneTemplate::Drawer,
            SceneTemplate::Door,
            SceneTemplate::Laptop,
            SceneTemplate::Multi,
        ] {
            let a = generate_scene(42, template);
            let b = generate_scene(42, template);
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap()
            );
        }
    }

    #[test]
    fn joint_motion_reproduces_state1_poses() {
        for template in [
            SceneTemplate::Drawer,
            SceneTemplate::Door,
            SceneTemplate::Laptop,
            SceneTemplate::Multi,
        ] {
            let scene = generate_scene(3, template);
            for (j, joint) in scene.joints.iter().enumerate() {
                let part = j + 1;
                let m = joint.motion().compose(&scene.state0[part]);
                let want = &scene.state1[part];
                assert!((m.rot - want.rot).norm() < 1e-12);
                assert!((m.trans - want.trans).norm() < 1e-12);
            }
            // Part 0 static at both states.
            assert!(scene.state0[0].rot == nalgebra::Matrix3::identity());
            assert!(scene.state1[0].trans.norm() == 0.0);
        }
    }

    #[test]
    fn parts_do_not_interpenetrate() {
        // Sampled points well inside any movable part must not be inside the
        // static part, at either state.
        for template in [
            SceneTemplate::Drawer,
            SceneTemplate::Door,
            SceneTemplate::Laptop,
            SceneTemplate::Multi,
        ] {
            let scene = generate_scene(11, template);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for state in 0..2 {
                let mut checked = 0;
                while checked < 300 {
                    let x = Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    );
                    // Depth inside each part's own primitives.
                    let mut per_part = vec![f64::INFINITY; scene.part_count];
                    for p in &scene.primitives {
                        let local =
                            scene.part_pose(p.part, state).inverse().apply(&x) - p.center;
                        per_part[p.part] = per_part[p.part].min(shape_sdf(&p.shape, &local));
                    }
                    let inside: Vec<usize> = (0..scene.part_count)
                        .filter(|&i| per_part[i] < -0.004)
                        .collect();
                    if inside.is_empty() {
                        continue;
                    }
                    checked += 1;
                    assert!(
                        inside.len() == 1,
                        "{template:?} state {state}: point {x:?} inside parts {inside:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn render_depth_matches_analytic_box_distance() {
        // A camera looking straight down the -x axis at the drawer front.
        let scene = generate_scene(5, SceneTemplate::Drawer);
        let views = render_views(&scene, 0, 12, 9);
        for view in &views {
            // Center-of-mask pixels: un-project then re-project must land on
            // the same pixel, and the re-cast ray must hit at the same depth.
            let mut tested = 0;
            for pix in (0..view.depth.len()).step_by(197) {
                if !view.mask[pix] {
                    continue;
                }
                let (iy, ix) = (pix / view.width, pix % view.width);
                let (px, py) = (ix as f64 + 0.5, iy as f64 + 0.5);
                let d = view.depth[pix] as f64;
                let x = view.unproject(px, py, d);
                let (qx, qy, qz) = view.project(&x).unwrap();
                assert!((qx - px).abs() < 1e-6);
                assert!((qy - py).abs() < 1e-6);
                assert!((qz - d).abs() < 1e-9);
                // The un-projected point lies on the analytic surface.
                assert!(
                    scene.sdf(0, &x).abs() < 1e-6,
                    "sdf at surface point = {}",
                    scene.sdf(0, &x)
                );
                tested += 1;
            }
            assert!(tested > 0);
        }
    }

    #[test]
    fn mask_ratio_strictly_inside_unit_interval() {
        let scene = generate_scene(2, SceneTemplate::Door);
        for state in 0..2 {
            for view in render_views(&scene, state, 8, 1) {
                let frac =
                    view.mask.iter().filter(|&&m| m).count() as f64 / view.mask.len() as f64;
                assert!(frac > 0.0 && frac < 1.0, "mask fraction {frac}");
            }
        }
    }

    #[test]
    fn interior_points_flip_visibility_between_states() {
        for template in [SceneTemplate::Drawer, SceneTemplate::Door, SceneTemplate::Laptop] {
            let scene = generate_scene(4, template);
            assert!(!scene.interior_points.is_empty());
            let views0 = render_views(&scene, 0, 40, 31);
            let views1 = render_views(&scene, 1, 40, 32);
            let eps = 0.03;
            let mut correct = 0;
            for s in &scene.interior_points {
                let v0 = visibility(&s.pos[0], &views0, eps);
                let v1 = visibility(&s.pos[1], &views1, eps);
                if v0 == s.visible[0] && v1 == s.visible[1] {
                    correct += 1;
                }
            }
            // All hidden points must stay hidden; nearly all exposed points
            // should be seen by at least one of 40 views.
            assert!(
                correct as f64 >= 0.9 * scene.interior_points.len() as f64,
                "{template:?}: only {correct}/{} interior labels correct",
                scene.interior_points.len()
            );
            for s in &scene.interior_points {
                assert!(!visibility(&s.pos[0], &views0, eps), "{template:?} leak at state 0");
            }
        }
    }

    #[test]
    fn noiseless_matches_have_exact_reprojection() {
        let scene = generate_scene(6, SceneTemplate::Drawer);
        let views0 = render_views(&scene, 0, 10, 21);
        let views1 = render_views(&scene, 1, 10, 22);
        let matches = synth_matches(&scene, &views0, &views1, MatchOptions::default(), 77);
        assert!(!matches.is_empty());
        for m in &matches {
            let (src, dst) = if m.t == 0 {
                (&views0[m.v], &views1[m.u])
            } else {
                (&views1[m.v], &views0[m.u])
            };
            let d = src.depth_at(m.p.x, m.p.y).unwrap();
            let x = src.unproject(m.p.x, m.p.y, d);
            let part = scene.part_at_surface(m.t, &x);
            let x2 = scene.cross_motion(part, m.t).apply(&x);
            let (qx, qy, _) = dst.project(&x2).unwrap();
            assert!(
                (qx - m.q.x).abs() < 1e-6 && (qy - m.q.y).abs() < 1e-6,
                "reprojection residual ({}, {})",
                qx - m.q.x,
                qy - m.q.y
            );
        }
    }

    #[test]
    fn static_part_matches_reproject_without_motion() {
        let scene = generate_scene(8, SceneTemplate::Door);
        let views0 = render_views(&scene, 0, 8, 41);
        let views1 = render_views(&scene, 1, 8, 42);
        let matches = synth_matches(&scene, &views0, &views1, MatchOptions::default(), 5);
        let mut static_checked = 0;
        for m in &matches.iter().filter(|m| m.t == 0).collect::<Vec<_>>() {
            let src = &views0[m.v];
            let d = src.depth_at(m.p.x, m.p.y).unwrap();
            let x = src.unproject(m.p.x, m.p.y, d);
            if scene.part_at_surface(0, &x) != 0 {
                continue;
            }
            // Same world point, no motion.
            let (qx, qy, _) = views1[m.u].project(&x).unwrap();
            assert!((qx - m.q.x).abs() < 1e-6 && (qy - m.q.y).abs() < 1e-6);
            static_checked += 1;
        }
        assert!(static_checked > 10);
    }

    #[test]
    fn drawer_matches_translate_by_joint_delta() {
        let scene = generate_scene(9, SceneTemplate::Drawer);
        let delta = scene.joints[0].state_delta;
        let axis = scene.joints[0].axis_dir;
        let views0 = render_views(&scene, 0, 8, 51);
        let views1 = render_views(&scene, 1, 8, 52);
        let matches = synth_matches(&scene, &views0, &views1, MatchOptions::default(), 6);
        let mut moving_checked = 0;
        for m in matches.iter().filter(|m| m.t == 0) {
            let src = &views0[m.v];
            let d = src.depth_at(m.p.x, m.p.y).unwrap();
            let x = src.unproject(m.p.x, m.p.y, d);
            if scene.part_at_surface(0, &x) != 1 {
                continue;
            }
            let (qx, qy, _) = views1[m.u].project(&(x + axis * delta)).unwrap();
            assert!((qx - m.q.x).abs() < 1e-6 && (qy - m.q.y).abs() < 1e-6);
            moving_checked += 1;
        }
        assert!(moving_checked > 10);
    }

    #[test]
    fn color_field_matches_surface_colors() {
        let scene = generate_scene(10, SceneTemplate::Laptop);
        let spec = GridSpec::unit_workspace(32);
        let grid = scene.color_field(0, spec);
        // At a voxel center on the lid top face, the field equals the face
        // color there.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let want = scene.nearest_surface_color(0, &x);
            // Sample at the exact voxel center containing x.
            let spec = grid.spec;
            let i = (((x.x - spec.origin.x) / spec.voxel_size).floor() as u32).min(spec.dims[0] - 1);
            let j = (((x.y - spec.origin.y) / spec.voxel_size).floor() as u32).min(spec.dims[1] - 1);
            let k = (((x.z - spec.origin.z) / spec.voxel_size).floor() as u32).min(spec.dims[2] - 1);
            let c = spec.voxel_center(i, j, k);
            let want_c = scene.nearest_surface_color(0, &c);
            for ch in 0..3 {
                assert!((grid.at(i, j, k, ch) - want_c[ch]).abs() < 1e-6);
            }
            let _ = want;
        }
    }
}
