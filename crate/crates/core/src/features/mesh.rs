use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{ensure_parent, io_err};

pub type Point = [f64; 3];

/// Triangle mesh with positions in cm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[u32; 3]>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: [u32; 3]) -> [Point; 3] {
        f.map(|i| self.vertices[i as usize])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(self.faces[f]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn face_centroid(&self, f: usize) -> Point {
        let [a, b, c] = self.corners(self.faces[f]);
        [0, 1, 2].map(|d| (a[d] + b[d] + c[d]) / 3.0)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive when normals point outward.
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&f| {
                let [a, b, c] = self.corners(f);
                let n = cross(b, c);
                (a[0] * n[0] + a[1] * n[1] + a[2] * n[2]) / 6.0
            })
            .sum()
    }

    /// Drops faces with repeated indices or (numerically) zero area.
    pub fn remove_degenerate_faces(&mut self) {
        let faces = std::mem::take(&mut self.faces);
        self.faces = faces
            .into_iter()
            .filter(|f| {
                if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                    return false;
                }
                let [a, b, c] = self.corners(*f);
                let scale = norm(sub(b, a)).max(norm(sub(c, a)));
                0.5 * norm(cross(sub(b, a), sub(c, a))) > 1e-12 * scale * scale
            })
            .collect();
    }

    /// Undirected edges not shared by exactly two faces.
    pub fn open_edges(&self) -> usize {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    pub fn translated(&self, t: Point) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|v| [v[0] + t[0], v[1] + t[1], v[2] + t[2]]).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, self.to_obj()).map_err(io_err(path))
    }
}

/// Area-weighted mean of face centroids.
pub fn mesh_center(mesh: &Mesh) -> Result<Point> {
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let a = mesh.face_area(f);
        let c = mesh.face_centroid(f);
        for d in 0..3 {
            acc[d] += a * c[d];
        }
        total += a;
    }
    if total <= 0.0 {
        return Err(Error::EmptyMesh);
    }
    Ok(acc.map(|v| v / total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle_center_is_centroid() {
        let m = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 1.5]],
            faces: vec![[0, 1, 2]],
        };
        assert_eq!(mesh_center(&m).unwrap(), [1.0, 1.0, 0.5]);
        assert!(matches!(mesh_center(&Mesh::default()), Err(Error::EmptyMesh)));
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let mut m = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]],
        };
        m.remove_degenerate_faces();
        assert_eq!(m.faces, vec![[0, 1, 3]]);
    }

    #[test]
    fn obj_is_one_based() {
        let m = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2]],
        };
        let obj = m.to_obj();
        assert!(obj.ends_with("f 1 2 3\n"));
        assert_eq!(obj.lines().count(), 4);
    }
}
