use std::fmt::Write as _;
use std::path::Path;

use super::{MeshError, TriangleMesh};
use crate::io::write_atomic;

/// ASCII PLY with double-precision vertices in millimetres.
pub fn encode_ply(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment units mm\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element face {}", mesh.triangles.len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn export_ply(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    mesh.validate().map_err(MeshError::InvalidGrid)?;
    write_atomic(path, encode_ply(mesh).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    /// Minimal reader for the subset written above.
    fn parse(text: &str) -> (Vec<[f64; 3]>, Vec<Vec<usize>>) {
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("ply"));
        let (mut nv, mut nf) = (0, 0);
        for line in lines.by_ref() {
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["element", "vertex", n] => nv = n.parse().unwrap(),
                ["element", "face", n] => nf = n.parse().unwrap(),
                ["end_header"] => break,
                _ => {}
            }
        }
        let verts = (0..nv)
            .map(|_| {
                let v: Vec<f64> = lines.next().unwrap().split(' ').map(|w| w.parse().unwrap()).collect();
                [v[0], v[1], v[2]]
            })
            .collect();
        let faces = (0..nf)
            .map(|_| {
                let f: Vec<usize> = lines.next().unwrap().split(' ').map(|w| w.parse().unwrap()).collect();
                assert_eq!(f[0], f.len() - 1);
                f[1..].to_vec()
            })
            .collect();
        assert!(lines.next().is_none());
        (verts, faces)
    }

    #[test]
    fn roundtrip_is_exact() {
        let mesh = TriangleMesh {
            vertices: vec![
                Point3::new(0.1, -2.0 / 3.0, 1e-7),
                Point3::new(123.456, 0.0, -5.5),
                Point3::new(1.0 / 7.0, 9.0, 3.0),
                Point3::new(-0.0, 2.5, 1e10),
            ],
            triangles: vec![[0, 1, 2], [2, 1, 3]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        export_ply(&mesh, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("property double x"));
        let (verts, faces) = parse(&text);
        for (a, b) in verts.iter().zip(&mesh.vertices) {
            assert_eq!(a, &[b.x, b.y, b.z]);
        }
        assert_eq!(faces, vec![vec![0, 1, 2], vec![2, 1, 3]]);
    }

    #[test]
    fn empty_and_single_triangle_layouts() {
        let empty = encode_ply(&TriangleMesh::default());
        assert!(empty.contains("element vertex 0\n") && empty.contains("element face 0\n"));
        assert!(empty.ends_with("end_header\n"));

        let one = TriangleMesh {
            vertices: vec![Point3::zeros(), Point3::x(), Point3::y()],
            triangles: vec![[0, 1, 2]],
        };
        let text = encode_ply(&one);
        let body: Vec<&str> = text.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body, vec!["0.0 0.0 0.0", "1.0 0.0 0.0", "0.0 1.0 0.0", "3 0 1 2"]);
    }

    #[test]
    fn sphere_mesh_roundtrips() {
        let grid = crate::mesh::DensityGrid::from_fn(Point3::repeat(-30.0), 3.0, [21; 3], |p| 20.0 - p.norm()).unwrap();
        let mesh = crate::mesh::marching_cubes(&grid, 0.0).unwrap().mesh;
        let (verts, faces) = parse(&encode_ply(&mesh));
        assert_eq!(verts.len(), mesh.vertices.len());
        assert_eq!(faces.len(), mesh.triangles.len());
        for (a, b) in verts.iter().zip(&mesh.vertices) {
            assert_eq!(a, &[b.x, b.y, b.z]);
        }
    }

    #[test]
    fn rejects_out_of_range_indices() {
        let mesh = TriangleMesh {
            vertices: vec![Point3::zeros(); 2],
            triangles: vec![[0, 1, 2]],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(export_ply(&mesh, &dir.path().join("bad.ply")).is_err());
        assert!(!dir.path().join("bad.ply").exists());
    }
}
