//! Dense volumetric fields and view geometry.
//!
//! A [`VolumeGrid`] stores one or more scalar channels (signed distance,
//! color, visibility) at voxel centers of an axis-aligned grid and supports
//! clamped trilinear sampling with analytic spatial gradients. [`DepthView`]
//! is a posed pinhole camera with a depth map and object mask; it drives both
//! depth fusion ([`fuse_depth`], [`fuse_fields`]) and point visibility
//! ([`visibility`]). Isosurfaces are extracted with marching cubes
//! ([`extract_mesh`]).

mod fuse;
mod mc_tables;
mod mesh;

pub use fuse::{fuse_depth, fuse_fields, FusionParams};
pub use mesh::{extract_mesh, TriMesh};

use crate::math::Rigid;
use crate::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Geometry of an axis-aligned voxel grid.
///
/// Voxel `(i, j, k)` has its center at `origin + (i + 0.5, j + 0.5, k + 0.5)
/// · voxel_size`; the grid spans `[origin, origin + dims · voxel_size]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [u32; 3],
}

impl GridSpec {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [u32; 3]) -> Result<Self> {
        if voxel_size <= 0.0 {
            return Err(Error::InvalidArgument("voxel_size must be positive".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument("grid dims must be ≥ 2".into()));
        }
        Ok(GridSpec {
            origin,
            voxel_size,
            dims,
        })
    }

    /// Cubic grid of `res³` voxels covering the unit workspace `[-0.5, 0.5]³`.
    pub fn unit_workspace(res: u32) -> Self {
        GridSpec {
            origin: Vector3::new(-0.5, -0.5, -0.5),
            voxel_size: 1.0 / res as f64,
            dims: [res; 3],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn voxel_center(&self, i: u32, j: u32, k: u32) -> Vector3<f64> {
        self.origin
            + Vector3::new(
                (i as f64 + 0.5) * self.voxel_size,
                (j as f64 + 0.5) * self.voxel_size,
                (k as f64 + 0.5) * self.voxel_size,
            )
    }

    /// World-space bounds of the grid box.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let extent = Vector3::new(
            self.dims[0] as f64 * self.voxel_size,
            self.dims[1] as f64 * self.voxel_size,
            self.dims[2] as f64 * self.voxel_size,
        );
        (self.origin, self.origin + extent)
    }
}

/// Dense multi-channel scalar volume.
///
/// Values are stored as `f32` with channels interleaved per voxel and the
/// spatial x index varying fastest: `((k·ny + j)·nx + i)·channels + c`.
#[derive(Debug, Clone)]
pub struct VolumeGrid {
    pub spec: GridSpec,
    channels: usize,
    data: Vec<f32>,
}

impl VolumeGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        VolumeGrid {
            spec,
            channels,
            data: vec![0.0; spec.voxel_count() * channels],
        }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != spec.voxel_count() * channels {
            return Err(Error::InvalidArgument(format!(
                "grid data length {} does not match dims {:?} × {} channels",
                data.len(),
                spec.dims,
                channels
            )));
        }
        Ok(VolumeGrid {
            spec,
            channels,
            data,
        })
    }

    /// Fills a single-channel grid from a function of the voxel center.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vector3<f64>) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let [nx, ny, _] = spec.dims;
        let mut data = vec![0.0f32; spec.voxel_count()];
        data.par_chunks_mut((nx * ny) as usize)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..ny {
                    for i in 0..nx {
                        slab[(j * nx + i) as usize] =
                            f(spec.voxel_center(i, j, k as u32)) as f32;
                    }
                }
            });
        VolumeGrid {
            spec,
            channels: 1,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, i: u32, j: u32, k: u32, c: usize) -> usize {
        let [nx, ny, _] = self.spec.dims;
        ((k * ny + j) * nx + i) as usize * self.channels + c
    }

    #[inline]
    pub fn at(&self, i: u32, j: u32, k: u32, c: usize) -> f64 {
        self.data[self.index(i, j, k, c)] as f64
    }

    #[inline]
    pub fn set(&mut self, i: u32, j: u32, k: u32, c: usize, v: f64) {
        let idx = self.index(i, j, k, c);
        self.data[idx] = v as f32;
    }

    /// Clamped trilinear sample of channel `c`.
    ///
    /// Exact at voxel centers; queries outside the grid clamp to the boundary
    /// value. Panics if `c` is out of range (see [`sample_trilinear`] for the
    /// checked variant).
    pub fn sample(&self, x: &Vector3<f64>, c: usize) -> f64 {
        self.sample_with_grad(x, c).0
    }

    /// Trilinear sample plus its spatial gradient.
    ///
    /// The gradient is zero along axes where the query is clamped.
    pub fn sample_with_grad(&self, x: &Vector3<f64>, c: usize) -> (f64, Vector3<f64>) {
        assert!(c < self.channels, "channel {c} out of range");
        let h = self.spec.voxel_size;
        let mut cell = [0u32; 3];
        let mut frac = [0.0f64; 3];
        let mut active = [true; 3];
        for a in 0..3 {
            let u = (x[a] - self.spec.origin[a]) / h - 0.5;
            let n = self.spec.dims[a];
            let i = (u.floor() as i64).clamp(0, n as i64 - 2) as u32;
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
        let [i, j, k] = cell;
        let v = [
            self.at(i, j, k, c),
            self.at(i + 1, j, k, c),
            self.at(i, j + 1, k, c),
            self.at(i + 1, j + 1, k, c),
            self.at(i, j, k + 1, c),
            self.at(i + 1, j, k + 1, c),
            self.at(i, j + 1, k + 1, c),
            self.at(i + 1, j + 1, k + 1, c),
        ];
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        // Interpolate along x, then y, then z.
        let c00 = v[0] + (v[1] - v[0]) * fx;
        let c10 = v[2] + (v[3] - v[2]) * fx;
        let c01 = v[4] + (v[5] - v[4]) * fx;
        let c11 = v[6] + (v[7] - v[6]) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let dx = {
            let d00 = v[1] - v[0];
            let d10 = v[3] - v[2];
            let d01 = v[5] - v[4];
            let d11 = v[7] - v[6];
            let d0 = d00 + (d10 - d00) * fy;
            let d1 = d01 + (d11 - d01) * fy;
            d0 + (d1 - d0) * fz
        };
        let dy = {
            let d0 = c10 - c00;
            let d1 = c11 - c01;
            d0 + (d1 - d0) * fz
        };
        let dz = c1 - c0;
        let mut grad = Vector3::new(dx, dy, dz) / h;
        for a in 0..3 {
            if !active[a] {
                grad[a] = 0.0;
            }
        }
        (value, grad)
    }

    /// Signed-distance sample extended beyond the grid box.
    ///
    /// Inside the grid this is the plain trilinear sample of channel 0;
    /// outside, the Euclidean distance from `x` to the grid box is added so
    /// the field keeps growing (and keeps a useful gradient) when points are
    /// transported out of bounds.
    pub fn sample_esdf_extended(&self, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let (lo, hi) = self.spec.bounds();
        let clamped = Vector3::new(
            x.x.clamp(lo.x, hi.x),
            x.y.clamp(lo.y, hi.y),
            x.z.clamp(lo.z, hi.z),
        );
        let offset = x - clamped;
        let dist = offset.norm();
        let (v, g) = self.sample_with_grad(&clamped, 0);
        if dist > 0.0 {
            (v + dist, g + offset / dist)
        } else {
            (v, g)
        }
    }
}

/// Checked trilinear sample: errors on an invalid channel index.
pub fn sample_trilinear(grid: &VolumeGrid, x: &Vector3<f64>, channel: usize) -> Result<f64> {
    if channel >= grid.channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range (grid has {})",
            grid.channels()
        )));
    }
    Ok(grid.sample(x, channel))
}

/// Smoothed occupancy from a signed distance value: `clip(0.5 − esdf/s, 0, 1)`.
///
/// `s` controls the width of the transition band around the surface and must
/// be positive.
pub fn occupancy(esdf_value: f64, s: f64) -> Result<f64> {
    if s <= 0.0 {
        return Err(Error::InvalidArgument(
            "occupancy transition width must be positive".into(),
        ));
    }
    Ok((0.5 - esdf_value / s).clamp(0.0, 1.0))
}

/// Bell-shaped weight `sigmoid(−α·esdf) · sigmoid(α·esdf)`.
///
/// Peaks at 0.25 on the surface, symmetric in the sign of `esdf`, strictly
/// decreasing in `|esdf|`.
pub fn surface_weight(esdf_value: f64, alpha: f64) -> f64 {
    let s = sigmoid(alpha * esdf_value);
    s * (1.0 - s)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// A posed depth observation: pinhole camera, z-depth map, and object mask.
///
/// `depth` stores the distance along the optical axis (0 means no return);
/// `world_to_cam` maps world points into the camera frame with +z forward.
#[derive(Debug, Clone)]
pub struct DepthView {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub world_to_cam: Rigid,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
}

impl DepthView {
    /// Continuous pixel coordinates and camera-frame depth of a world point,
    /// or `None` if the point is behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_cam.apply(x);
        if c.z <= 1e-12 {
            return None;
        }
        let px = self.intrinsics.fx * c.x / c.z + self.intrinsics.cx;
        let py = self.intrinsics.fy * c.y / c.z + self.intrinsics.cy;
        Some((px, py, c.z))
    }

    /// Depth at the pixel containing `(px, py)`; `None` outside the image or
    /// where there is no depth return.
    pub fn depth_at(&self, px: f64, py: f64) -> Option<f64> {
        let (i, j) = self.pixel_index(px, py)?;
        let d = self.depth[j * self.width + i] as f64;
        (d > 0.0).then_some(d)
    }

    pub fn mask_at(&self, px: f64, py: f64) -> bool {
        self.pixel_index(px, py)
            .map(|(i, j)| self.mask[j * self.width + i])
            .unwrap_or(false)
    }

    fn pixel_index(&self, px: f64, py: f64) -> Option<(usize, usize)> {
        if px < 0.0 || py < 0.0 {
            return None;
        }
        let i = px.floor() as usize;
        let j = py.floor() as usize;
        (i < self.width && j < self.height).then_some((i, j))
    }

    /// World point of pixel `(px, py)` at camera-frame depth `z`.
    pub fn unproject(&self, px: f64, py: f64, z: f64) -> Vector3<f64> {
        let c = Vector3::new(
            (px - self.intrinsics.cx) / self.intrinsics.fx * z,
            (py - self.intrinsics.cy) / self.intrinsics.fy * z,
            z,
        );
        self.world_to_cam.inverse().apply(&c)
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.world_to_cam.inverse().trans
    }
}

/// True if `x` is observed by at least one view: it projects into the image
/// and the measured depth there, plus `epsilon`, exceeds the point's distance
/// along the optical axis. Pixels without a depth return provide no
/// visibility.
pub fn visibility(x: &Vector3<f64>, views: &[DepthView], epsilon: f64) -> bool {
    views.iter().any(|view| {
        view.project(x)
            .and_then(|(px, py, z)| view.depth_at(px, py).map(|d| d + epsilon > z))
            .unwrap_or(false)
    })
}

/// Frozen per-state reconstruction: signed distance, color, and visibility
/// volumes on a shared grid.
#[derive(Debug, Clone)]
pub struct StateFields {
    /// Single-channel Euclidean signed distance.
    pub esdf: VolumeGrid,
    /// Three-channel RGB, valid everywhere (nearest-surface extended).
    pub color: VolumeGrid,
    /// Single-channel observedness: 1 where the voxel was seen by any view.
    pub visibility: VolumeGrid,
}

impl StateFields {
    /// Whether the point was observed; out-of-grid points count as unobserved.
    pub fn observed_at(&self, x: &Vector3<f64>) -> bool {
        let (lo, hi) = self.visibility.spec.bounds();
        if (0..3).any(|a| x[a] < lo[a] || x[a] > hi[a]) {
            return false;
        }
        self.visibility.sample(x, 0) > 0.5
    }

    pub fn color_at(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.color.sample(x, 0),
            self.color.sample(x, 1),
            self.color.sample(x, 2),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_grid(rng: &mut StdRng, dims: [u32; 3]) -> VolumeGrid {
        let spec = GridSpec::new(Vector3::new(-0.2, 0.1, -0.4), 0.05, dims).unwrap();
        let mut g = VolumeGrid::zeros(spec, 1);
        for v in g.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        g
    }

    /// Independent 8-corner convex-combination oracle.
    fn corner_weight_oracle(g: &VolumeGrid, x: &Vector3<f64>, c: usize) -> f64 {
        let h = g.spec.voxel_size;
        let mut idx = [0u32; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let u = ((x[a] - g.spec.origin[a]) / h - 0.5)
                .clamp(0.0, (g.spec.dims[a] - 1) as f64);
            let i = (u.floor() as u32).min(g.spec.dims[a] - 2);
            idx[a] = i;
            f[a] = u - i as f64;
        }
        let mut acc = 0.0;
        for dz in 0..2u32 {
            for dy in 0..2u32 {
                for dx in 0..2u32 {
                    let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                        * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                        * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                    acc += w * g.at(idx[0] + dx, idx[1] + dy, idx[2] + dz, c);
                }
            }
        }
        acc
    }

    #[test]
    fn trilinear_exact_at_voxel_centers() {
        let mut rng = StdRng::seed_from_u64(3);
        let g = random_grid(&mut rng, [6, 5, 7]);
        for (i, j, k) in [(0, 0, 0), (5, 4, 6), (2, 3, 1)] {
            let x = g.spec.voxel_center(i, j, k);
            assert_relative_eq!(g.sample(&x, 0), g.at(i, j, k, 0), epsilon = 1e-12);
        }
    }

    #[test]
    fn trilinear_midpoint_is_average() {
        let spec = GridSpec::unit_workspace(4);
        let mut g = VolumeGrid::zeros(spec, 1);
        g.set(1, 1, 1, 0, 0.0);
        g.set(2, 1, 1, 0, 1.0);
        let a = spec.voxel_center(1, 1, 1);
        let b = spec.voxel_center(2, 1, 1);
        let mid = (a + b) / 2.0;
        assert_relative_eq!(g.sample(&mid, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn trilinear_matches_corner_weight_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        let g = random_grid(&mut rng, [9, 8, 10]);
        let (lo, hi) = g.spec.bounds();
        for _ in 0..1000 {
            let x = Vector3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            let got = g.sample(&x, 0);
            let want = corner_weight_oracle(&g, &x, 0);
            assert!((got - want).abs() < 1e-12, "mismatch at {x:?}");
        }
    }

    #[test]
    fn trilinear_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(23);
        let g = random_grid(&mut rng, [8, 8, 8]);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 200 {
            let x = Vector3::new(
                rng.random_range(-0.15..0.1),
                rng.random_range(0.15..0.45),
                rng.random_range(-0.35..-0.1),
            );
            // Stay away from cell boundaries where the gradient jumps.
            let u = (x - g.spec.origin) / g.spec.voxel_size;
            if (0..3).any(|a| {
                let f = (u[a] - 0.5).fract().abs();
                f < 0.01 || f > 0.99
            }) {
                continue;
            }
            let (_, grad) = g.sample_with_grad(&x, 0);
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += h;
                xm[a] -= h;
                let fd = (g.sample(&xp, 0) - g.sample(&xm, 0)) / (2.0 * h);
                assert!((grad[a] - fd).abs() < 1e-5, "axis {a} at {x:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn sample_trilinear_rejects_bad_channel() {
        let g = VolumeGrid::zeros(GridSpec::unit_workspace(4), 2);
        assert!(sample_trilinear(&g, &Vector3::zeros(), 2).is_err());
        assert!(sample_trilinear(&g, &Vector3::zeros(), 1).is_ok());
    }

    #[test]
    fn esdf_extension_grows_with_distance() {
        let spec = GridSpec::unit_workspace(8);
        let mut g = VolumeGrid::zeros(spec, 1);
        for v in g.data_mut() {
            *v = 0.2;
        }
        let inside = Vector3::new(0.2, 0.0, 0.0);
        let outside = Vector3::new(0.8, 0.0, 0.0);
        assert_relative_eq!(g.sample_esdf_extended(&inside).0, 0.2, epsilon = 1e-6);
        let (v, grad) = g.sample_esdf_extended(&outside);
        assert_relative_eq!(v, 0.2 + 0.3, epsilon = 1e-6);
        assert_relative_eq!(grad, Vector3::x(), epsilon = 1e-9);
    }

    #[test]
    fn occupancy_cases() {
        assert_relative_eq!(occupancy(0.0, 0.01).unwrap(), 0.5);
        assert_relative_eq!(occupancy(-0.005, 0.01).unwrap(), 1.0);
        assert_relative_eq!(occupancy(0.02, 0.01).unwrap(), 0.0);
        assert!(occupancy(0.0, 0.0).is_err());
        assert!(occupancy(0.0, -1.0).is_err());
    }

    #[test]
    fn occupancy_monotone_in_esdf() {
        let mut prev = f64::INFINITY;
        let mut e = -0.03;
        while e <= 0.03 {
            let o = occupancy(e, 0.01).unwrap();
            assert!(o <= prev + 1e-15);
            prev = o;
            e += 0.001;
        }
    }

    #[test]
    fn surface_weight_peak_and_symmetry() {
        assert_relative_eq!(surface_weight(0.0, 5.0), 0.25, epsilon = 1e-15);
        assert_relative_eq!(surface_weight(0.0, 0.3), 0.25, epsilon = 1e-15);
        for d in [0.01, 0.1, 1.0, 3.0] {
            assert_relative_eq!(
                surface_weight(d, 5.0),
                surface_weight(-d, 5.0),
                epsilon = 1e-15
            );
            assert!(surface_weight(d, 5.0) < 0.25);
        }
        // Unimodal: decreasing away from the surface.
        let ws: Vec<f64> = (0..40).map(|i| surface_weight(i as f64 * 0.05, 5.0)).collect();
        assert!(ws.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        // Frozen scalar value, cross-checked externally:
        // sigmoid(-5)·sigmoid(5) = 0.0066480566707786.
        assert_relative_eq!(surface_weight(1.0, 5.0), 0.0066480566707786, epsilon = 1e-10);
    }

    fn test_view() -> DepthView {
        // Camera at (0, 0, -2) looking along +z toward the origin.
        let pose = Rigid::from_translation(Vector3::new(0.0, 0.0, 2.0));
        let mut depth = vec![0.0f32; 64 * 64];
        // A flat wall at world z = 0 (camera depth 2) filling the image,
        // except the top row which has no return.
        for j in 1..64 {
            for i in 0..64 {
                depth[j * 64 + i] = 2.0;
            }
        }
        DepthView {
            intrinsics: Intrinsics {
                fx: 64.0,
                fy: 64.0,
                cx: 32.0,
                cy: 32.0,
            },
            width: 64,
            height: 64,
            world_to_cam: pose,
            depth,
            mask: vec![true; 64 * 64],
        }
    }

    #[test]
    fn visibility_on_surface_and_behind() {
        let view = test_view();
        let views = [view];
        // On the observed wall: dist = depth, visible with ε > 0.
        assert!(visibility(&Vector3::new(0.0, 0.0, 0.0), &views, 0.03));
        // 0.1 behind the wall along the ray: invisible at ε = 0.03.
        assert!(!visibility(&Vector3::new(0.0, 0.0, 0.1), &views, 0.03));
        // In front of the wall: visible.
        assert!(visibility(&Vector3::new(0.0, 0.0, -0.5), &views, 0.03));
        // Behind the camera: invisible.
        assert!(!visibility(&Vector3::new(0.0, 0.0, -3.0), &views, 0.03));
    }

    #[test]
    fn visibility_monotone_in_epsilon() {
        let view = test_view();
        let views = [view];
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let x = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let eps_small = rng.random_range(0.0..0.05);
            let eps_big = eps_small + rng.random_range(0.0..0.05);
            if visibility(&x, &views, eps_small) {
                assert!(visibility(&x, &views, eps_big));
            }
        }
    }

    #[test]
    fn no_depth_return_gives_no_visibility() {
        let view = test_view();
        // Project a point that lands in the top row (no return) and is in
        // front of everything: still invisible because depth = 0 there.
        let x = view.unproject(10.0, 0.5, 1.0);
        assert!(!visibility(&x, &[view], 0.5));
    }

    #[test]
    fn unproject_project_round_trip() {
        let view = test_view();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..100 {
            let px = rng.random_range(0.0..64.0);
            let py = rng.random_range(0.0..64.0);
            let z = rng.random_range(0.5..3.0);
            let w = view.unproject(px, py, z);
            let (qx, qy, qz) = view.project(&w).unwrap();
            assert_relative_eq!(qx, px, epsilon = 1e-9);
            assert_relative_eq!(qy, py, epsilon = 1e-9);
            assert_relative_eq!(qz, z, epsilon = 1e-9);
        }
    }
}
