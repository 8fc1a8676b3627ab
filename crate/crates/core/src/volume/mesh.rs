//! Triangle meshes and marching cubes isosurface extraction.

use super::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use super::VolumeGrid;
use nalgebra::Vector3;
use std::collections::HashMap;

/// An indexed triangle mesh with optional per-vertex part labels.
#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub part_labels: Option<Vec<u32>>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        (b - a).cross(&(c - a)).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Applies a rigid transform to all vertices in place.
    pub fn transform(&mut self, m: &crate::math::Rigid) {
        for v in &mut self.vertices {
            *v = m.apply(v);
        }
    }

    /// Merges another mesh into this one, preserving labels when both carry
    /// them.
    pub fn append(&mut self, other: &TriMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        if let (Some(mine), Some(theirs)) = (self.part_labels.as_mut(), other.part_labels.as_ref())
        {
            mine.extend_from_slice(theirs);
        } else {
            self.part_labels = None;
        }
    }

    /// Drops degenerate triangles and unreferenced vertices.
    pub fn cleanup(&mut self) {
        self.triangles.retain(|t| {
            t[0] != t[1] && t[1] != t[2] && t[0] != t[2]
        });
        let tri_copy = self.triangles.clone();
        self.triangles = tri_copy
            .into_iter()
            .filter(|t| self.triangle_area(t) > 1e-18)
            .collect();

        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for t in &mut self.triangles {
            for idx in t.iter_mut() {
                let old = *idx as usize;
                if remap[old] == u32::MAX {
                    remap[old] = kept.len() as u32;
                    kept.push(old);
                }
                *idx = remap[old];
            }
        }
        self.vertices = kept.iter().map(|&i| self.vertices[i]).collect();
        if let Some(labels) = &self.part_labels {
            self.part_labels = Some(kept.iter().map(|&i| labels[i]).collect());
        }
    }

    /// Connected components over shared triangle edges; returns one vertex-set
    /// per component.
    pub fn connected_components(&self) -> Vec<Vec<u32>> {
        let n = self.vertices.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(parent: &mut [u32], i: u32) -> u32 {
            let mut i = i;
            while parent[i as usize] != i {
                parent[i as usize] = parent[parent[i as usize] as usize];
                i = parent[i as usize];
            }
            i
        }
        for t in &self.triangles {
            for &(a, b) in &[(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let ra = find(&mut parent, a);
                let rb = find(&mut parent, b);
                if ra != rb {
                    parent[ra as usize] = rb;
                }
            }
        }
        let mut groups: HashMap<u32, Vec<u32>> = HashMap::new();
        for i in 0..n as u32 {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<u32>> = groups.into_values().collect();
        out.sort_by_key(|g| std::cmp::Reverse(g.len()));
        out
    }

    /// Keeps only triangles whose vertices all lie in `keep`.
    pub fn restrict_to_vertices(&self, keep: &[bool]) -> TriMesh {
        let mut out = TriMesh {
            vertices: self.vertices.clone(),
            triangles: self
                .triangles
                .iter()
                .filter(|t| t.iter().all(|&v| keep[v as usize]))
                .copied()
                .collect(),
            part_labels: self.part_labels.clone(),
        };
        out.cleanup();
        out
    }
}

/// Extracts the `iso`-level set of the grid's channel 0 with marching cubes.
///
/// Cube corners sit at voxel centers and isosurface vertices are placed on
/// cube edges by linear interpolation. Vertices shared between neighboring
/// cubes are welded so the result is watertight wherever the level set is
/// closed. A grid with no crossing yields an empty mesh.
pub fn extract_mesh(grid: &VolumeGrid, iso: f64) -> TriMesh {
    let [nx, ny, nz] = grid.spec.dims;
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Global edge key: (i, j, k, axis) of the lattice edge carrying the vertex.
    let mut edge_vertex: HashMap<(u32, u32, u32, u8), u32> = HashMap::new();

    let mut corner_vals = [0.0f64; 8];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    let v = grid.at(i + off[0] as u32, j + off[1] as u32, k + off[2] as u32, 0);
                    corner_vals[c] = v;
                    if v < iso {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut cube_edge_vertex = [u32::MAX; 12];
                for e in 0..12 {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let [ca, cb] = EDGE_CORNERS[e];
                    let key = edge_key(i, j, k, ca, cb);
                    let idx = *edge_vertex.entry(key).or_insert_with(|| {
                        let oa = CORNER_OFFSETS[ca];
                        let ob = CORNER_OFFSETS[cb];
                        let pa = grid.spec.voxel_center(
                            i + oa[0] as u32,
                            j + oa[1] as u32,
                            k + oa[2] as u32,
                        );
                        let pb = grid.spec.voxel_center(
                            i + ob[0] as u32,
                            j + ob[1] as u32,
                            k + ob[2] as u32,
                        );
                        let va = corner_vals[ca];
                        let vb = corner_vals[cb];
                        let t = if (vb - va).abs() < 1e-30 {
                            0.5
                        } else {
                            ((iso - va) / (vb - va)).clamp(0.0, 1.0)
                        };
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    });
                    cube_edge_vertex[e] = idx;
                }
                let tri_row = &TRIANGLE_TABLE[case];
                let mut m = 0;
                while m < 16 && tri_row[m] >= 0 {
                    triangles.push([
                        cube_edge_vertex[tri_row[m] as usize],
                        cube_edge_vertex[tri_row[m + 1] as usize],
                        cube_edge_vertex[tri_row[m + 2] as usize],
                    ]);
                    m += 3;
                }
            }
        }
    }

    let mut mesh = TriMesh {
        vertices,
        triangles,
        part_labels: None,
    };
    mesh.cleanup();
    mesh
}

/// Canonical lattice-edge key for a cube edge between local corners `ca`,
/// `cb` of the cube at `(i, j, k)`.
fn edge_key(i: u32, j: u32, k: u32, ca: usize, cb: usize) -> (u32, u32, u32, u8) {
    let a = CORNER_OFFSETS[ca];
    let b = CORNER_OFFSETS[cb];
    let base = [
        i + a[0].min(b[0]) as u32,
        j + a[1].min(b[1]) as u32,
        k + a[2].min(b[2]) as u32,
    ];
    let axis = if a[0] != b[0] {
        0
    } else if a[1] != b[1] {
        1
    } else {
        2
    };
    (base[0], base[1], base[2], axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;

    fn sphere_grid(res: u32, radius: f64) -> VolumeGrid {
        VolumeGrid::from_fn(GridSpec::unit_workspace(res), |p| p.norm() - radius)
    }

    #[test]
    fn sphere_vertices_near_radius() {
        let g = sphere_grid(48, 0.3);
        let mesh = extract_mesh(&g, 0.0);
        assert!(!mesh.is_empty());
        let h = g.spec.voxel_size;
        for v in &mesh.vertices {
            assert!(
                (v.norm() - 0.3).abs() < h,
                "vertex at radius {}",
                v.norm()
            );
        }
    }

    #[test]
    fn all_positive_grid_gives_empty_mesh() {
        let g = VolumeGrid::from_fn(GridSpec::unit_workspace(16), |_| 1.0);
        let mesh = extract_mesh(&g, 0.0);
        assert!(mesh.is_empty());
    }

    #[test]
    fn cube_surface_area_close_to_analytic() {
        let half = 0.25;
        let g = VolumeGrid::from_fn(GridSpec::unit_workspace(64), |p| {
            let q = Vector3::new(p.x.abs() - half, p.y.abs() - half, p.z.abs() - half);
            let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
            let inside = q.x.max(q.y).max(q.z).min(0.0);
            outside + inside
        });
        let mesh = extract_mesh(&g, 0.0);
        let analytic = 6.0 * (2.0 * half) * (2.0 * half);
        let got = mesh.surface_area();
        assert!(
            (got - analytic).abs() / analytic < 0.05,
            "area {got} vs {analytic}"
        );
    }

    #[test]
    fn sphere_mesh_is_watertight_and_single_component() {
        let g = sphere_grid(32, 0.3);
        let mesh = extract_mesh(&g, 0.0);
        // Every edge should be shared by exactly two triangles.
        let mut edge_count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &mesh.triangles {
            for &(a, b) in &[(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        assert!(edge_count.values().all(|&c| c == 2), "open or non-manifold edges");
        assert_eq!(mesh.connected_components().len(), 1);
    }

    #[test]
    fn no_degenerate_triangles_after_cleanup() {
        let g = sphere_grid(24, 0.32);
        let mesh = extract_mesh(&g, 0.0);
        for t in &mesh.triangles {
            assert!(mesh.triangle_area(t) > 0.0);
        }
    }
}
