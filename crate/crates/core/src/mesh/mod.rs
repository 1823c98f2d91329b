//! Explicit surface extraction from a sampled density field.

mod ply;
mod tables;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Point3, UnitVec3};
use crate::radiance::RadianceField;
use tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};

pub use ply::{encode_ply, export_ply};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar samples on a regular lattice, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub origin: Point3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(origin: Point3, spacing: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self, MeshError> {
        let grid = Self {
            origin,
            spacing,
            dims,
            values,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(origin: Point3, spacing: f64, dims: [usize; 3], f: impl Fn(&Point3) -> f64) -> Result<Self, MeshError> {
        let [nx, ny, nz] = dims;
        let mut values = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(&(origin + Point3::new(i as f64, j as f64, k as f64) * spacing)));
                }
            }
        }
        Self::new(origin, spacing, dims, values)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: String| Err(MeshError::InvalidGrid(m));
        if self.dims.iter().any(|&d| d < 2) {
            return bad(format!("every dimension must be at least 2, got {:?}", self.dims));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive".into());
        }
        let n = self.dims.iter().product::<usize>();
        if self.values.len() != n {
            return bad(format!("expected {n} values, got {}", self.values.len()));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return bad("values must be finite".into());
        }
        Ok(())
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.origin + Point3::new(i as f64, j as f64, k as f64) * self.spacing
    }
}

/// Evaluates the field density on a lattice. Directions are irrelevant to
/// density, so a fixed one is passed.
pub fn sample_grid<F: RadianceField + ?Sized>(
    field: &F,
    origin: Point3,
    spacing: f64,
    dims: [usize; 3],
) -> Result<DensityGrid, MeshError> {
    if dims.iter().any(|&d| d < 2) {
        return Err(MeshError::InvalidGrid(format!(
            "every dimension must be at least 2, got {dims:?}"
        )));
    }
    let [nx, ny, nz] = dims;
    let dir = UnitVec3::new_unchecked(Point3::z());
    let slices: Vec<Vec<f64>> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let xs: Vec<Point3> = (0..ny)
                .flat_map(|j| {
                    (0..nx).map(move |i| origin + Point3::new(i as f64, j as f64, k as f64) * spacing)
                })
                .collect();
            let ray_of = vec![0; xs.len()];
            field
                .sample_batch(&xs, std::slice::from_ref(&dir), &ray_of)
                .into_iter()
                .map(|s| s.density)
                .collect()
        })
        .collect();
    DensityGrid::new(origin, spacing, dims, slices.concat())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks index bounds and that no triangle repeats a vertex.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(format!("triangle {i} indexes past {n} vertices"));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(format!("triangle {i} is degenerate"));
            }
        }
        Ok(())
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_use_counts(&self) -> BTreeMap<(u32, u32), usize> {
        let mut counts = BTreeMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// `V − E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_use_counts().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// Signed enclosed volume; positive when triangles wind counter-clockwise
    /// seen from outside.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoSurface {
    pub mesh: TriangleMesh,
    /// Set when the iso level lies outside the open range of grid values,
    /// in which case the mesh is empty.
    pub degenerate_iso: bool,
}

/// Which slot a surface vertex occupies: a crossing strictly inside a
/// lattice edge, or a lattice point the surface passes through exactly.
#[derive(Clone, Copy)]
enum VertexSite {
    Edge { point: usize, axis: usize },
    Point(usize),
}

/// Extracts `{density = iso}`. Inside is where the value is at or above
/// `iso`; triangles wind counter-clockwise seen from outside.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> Result<IsoSurface, MeshError> {
    grid.validate()?;
    let (min, max) = grid
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(iso > min && iso < max) {
        return Ok(IsoSurface {
            mesh: TriangleMesh::default(),
            degenerate_iso: true,
        });
    }

    let [nx, ny, nz] = grid.dims;
    let n = nx * ny * nz;
    let below = |idx: usize| grid.values[idx] < iso;
    let site_of = |point: usize, axis: usize| -> VertexSite {
        let step = [1, nx, nx * ny][axis];
        let (v0, v1) = (grid.values[point], grid.values[point + step]);
        let t = (iso - v0) / (v1 - v0);
        if t <= 0.0 {
            VertexSite::Point(point)
        } else if t >= 1.0 {
            VertexSite::Point(point + step)
        } else {
            VertexSite::Edge { point, axis }
        }
    };

    // Pass 1: one vertex per crossing, numbered in lattice order.
    let mut slot = vec![u32::MAX; 4 * n];
    let mut vertices = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = grid.index(i, j, k);
                let ijk = [i, j, k];
                for axis in 0..3 {
                    if ijk[axis] + 1 >= grid.dims[axis] {
                        continue;
                    }
                    let step = [1, nx, nx * ny][axis];
                    if below(p) == below(p + step) {
                        continue;
                    }
                    let key = match site_of(p, axis) {
                        VertexSite::Edge { point, axis } => 3 * point + axis,
                        VertexSite::Point(q) => 3 * n + q,
                    };
                    if slot[key] != u32::MAX {
                        continue;
                    }
                    slot[key] = vertices.len() as u32;
                    let pos = match site_of(p, axis) {
                        VertexSite::Edge { .. } => {
                            let (v0, v1) = (grid.values[p], grid.values[p + step]);
                            let mut offset = Point3::zeros();
                            offset[axis] = (iso - v0) / (v1 - v0) * grid.spacing;
                            grid.position(i, j, k) + offset
                        }
                        VertexSite::Point(q) => {
                            let (qi, qj, qk) = (q % nx, (q / nx) % ny, q / (nx * ny));
                            grid.position(qi, qj, qk)
                        }
                    };
                    vertices.push(pos);
                }
            }
        }
    }

    // Pass 2: triangles per cell, concatenated in cell order.
    let slot = &slot;
    let per_slab: Vec<Vec<[u32; 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let corner = |c: usize| {
                        let o = CORNERS[c];
                        grid.index(i + o[0], j + o[1], k + o[2])
                    };
                    let mut case = 0usize;
                    for c in 0..8 {
                        if below(corner(c)) {
                            case |= 1 << c;
                        }
                    }
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let edge_vertex = |e: usize| {
                        let (a, b) = (corner(EDGES[e][0]), corner(EDGES[e][1]));
                        let (lo, hi) = (a.min(b), a.max(b));
                        let axis = match hi - lo {
                            1 => 0,
                            d if d == nx => 1,
                            _ => 2,
                        };
                        let key = match site_of(lo, axis) {
                            VertexSite::Edge { point, axis } => 3 * point + axis,
                            VertexSite::Point(q) => 3 * n + q,
                        };
                        slot[key]
                    };
                    for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        let t = [
                            edge_vertex(tri[0] as usize),
                            edge_vertex(tri[1] as usize),
                            edge_vertex(tri[2] as usize),
                        ];
                        if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                            tris.push(t);
                        }
                    }
                }
            }
            tris
        })
        .collect();

    Ok(IsoSurface {
        mesh: TriangleMesh {
            vertices,
            triangles: per_slab.concat(),
        },
        degenerate_iso: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiance::{Architecture, EncodingConfig, FieldParameters, SceneBounds};

    fn sphere_grid(n: usize, radius: f64, origin_shift: Point3) -> DensityGrid {
        let extent = 120.0;
        let spacing = extent / (n - 1) as f64;
        let origin = Point3::new(-60.0, -60.0, -60.0) + origin_shift;
        let center = origin_shift;
        DensityGrid::from_fn(origin, spacing, [n; 3], |p| radius - (p - center).norm()).unwrap()
    }

    #[test]
    fn no_crossing_gives_empty_flagged_mesh() {
        let grid = DensityGrid::from_fn(Point3::zeros(), 1.0, [3; 3], |_| 0.2).unwrap();
        let out = marching_cubes(&grid, 0.5).unwrap();
        assert!(out.mesh.is_empty() && out.mesh.vertices.is_empty());
        assert!(out.degenerate_iso);
    }

    #[test]
    fn single_corner_above_iso_gives_one_triangle() {
        let mut values = vec![0.0; 8];
        values[0] = 1.0;
        let grid = DensityGrid::new(Point3::zeros(), 2.0, [2, 2, 2], values).unwrap();
        let out = marching_cubes(&grid, 0.25).unwrap();
        assert!(!out.degenerate_iso);
        assert_eq!(out.mesh.triangles.len(), 1);
        assert_eq!(out.mesh.vertices.len(), 3);
        let mut verts = out.mesh.vertices.clone();
        verts.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        // p = p0 + (iso − v0)/(v1 − v0)·(p1 − p0) = 0.75·2 along each axis.
        assert_eq!(verts, vec![Point3::new(0.0, 0.0, 1.5), Point3::new(0.0, 1.5, 0.0), Point3::new(1.5, 0.0, 0.0)]);
        // Normal points away from the inside corner at the origin.
        let t = out.mesh.triangles[0].map(|i| out.mesh.vertices[i as usize]);
        let normal = (t[1] - t[0]).cross(&(t[2] - t[0]));
        assert!(normal.dot(&Point3::new(1.0, 1.0, 1.0)) > 0.0);
    }

    #[test]
    fn sphere_is_watertight_genus_zero_and_accurate() {
        let grid = sphere_grid(64, 50.0, Point3::zeros());
        let out = marching_cubes(&grid, 0.0).unwrap();
        let mesh = &out.mesh;
        mesh.validate().unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        for v in &mesh.vertices {
            assert!((v.norm() - 50.0).abs() <= grid.spacing, "{}", v.norm());
        }
        assert!(mesh.signed_volume() > 0.0);
        let volume = 4.0 / 3.0 * std::f64::consts::PI * 50f64.powi(3);
        assert!((mesh.signed_volume() - volume).abs() / volume < 0.02);
    }

    #[test]
    fn vertices_lie_on_lattice_edges_and_are_distinct() {
        let grid = sphere_grid(24, 40.0, Point3::zeros());
        let mesh = marching_cubes(&grid, 0.0).unwrap().mesh;
        for v in &mesh.vertices {
            let off_lattice = (0..3)
                .filter(|&a| {
                    let f = (v[a] - grid.origin[a]) / grid.spacing;
                    (f - f.round()).abs() > 1e-9
                })
                .count();
            assert!(off_lattice <= 1);
        }
        let mut sorted: Vec<_> = mesh.vertices.iter().map(|v| (v.x, v.y, v.z)).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in sorted.windows(2) {
            let d = ((w[0].0 - w[1].0).powi(2) + (w[0].1 - w[1].1).powi(2) + (w[0].2 - w[1].2).powi(2)).sqrt();
            assert!(d > 1e-9);
        }
    }

    #[test]
    fn translating_origin_translates_vertices() {
        let shift = Point3::new(3.25, -7.5, 11.0);
        let a = marching_cubes(&sphere_grid(20, 35.0, Point3::zeros()), 0.0).unwrap().mesh;
        let mut shifted = sphere_grid(20, 35.0, Point3::zeros());
        shifted.origin += shift;
        let b = marching_cubes(&shifted, 0.0).unwrap().mesh;
        assert_eq!(a.triangles, b.triangles);
        for (va, vb) in a.vertices.iter().zip(&b.vertices) {
            assert!((vb - va - shift).norm() < 1e-12);
        }
    }

    #[test]
    fn iso_through_lattice_point_stays_valid() {
        // Integer-valued field so the iso level hits lattice values exactly.
        let grid = DensityGrid::from_fn(Point3::zeros(), 1.0, [6; 3], |p| {
            4.0 - ((p.x - 2.5).abs() + (p.y - 2.5).abs() + (p.z - 2.5).abs()).round()
        })
        .unwrap();
        let mesh = marching_cubes(&grid, 1.0).unwrap().mesh;
        mesh.validate().unwrap();
        assert!(!mesh.is_empty());
    }

    #[test]
    fn sample_grid_conventions() {
        let bounds = SceneBounds::new([-50.0; 3], [50.0; 3]).unwrap();
        let zero = FieldParameters::zeros(EncodingConfig::default(), bounds, Architecture::default());
        let grid = sample_grid(&zero, Point3::new(-40.0, -30.0, -20.0), 10.0, [3, 4, 5]).unwrap();
        assert!(grid.values.iter().all(|&v| v == std::f64::consts::LN_2));
        assert_eq!(grid.position(0, 0, 0), Point3::new(-40.0, -30.0, -20.0));
        assert_eq!(grid.position(2, 3, 4), Point3::new(-20.0, 0.0, 20.0));

        let params = FieldParameters::init(EncodingConfig::default(), bounds, Architecture::default(), 8);
        let grid = sample_grid(&params, Point3::new(-5.0, 2.0, 7.0), 12.5, [2, 2, 2]).unwrap();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    let p = grid.position(i, j, k);
                    let s = crate::radiance::field_eval(&params, &bounds.normalize(&p), &UnitVec3::new_normalize(Point3::new(0.3, 0.1, 1.0))).unwrap();
                    assert!((grid.value(i, j, k) - s.density).abs() < 1e-12);
                }
            }
        }
        assert!(sample_grid(&params, Point3::zeros(), 1.0, [1, 2, 2]).is_err());
    }
}
