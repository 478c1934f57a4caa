//! Marching cubes over voxel centers.
//!
//! The triangulation table is generated rather than typed in. For every
//! corner case each cube face contributes oriented segments between its
//! crossing edges; the segments chain into closed loops that are
//! triangulated without any diagonal lying in a cube face (a few loops
//! admit no such triangulation and get a centroid vertex instead). Faces with two diagonal inside corners are ambiguous and
//! are resolved from the face-center sample (mean of the four corners): if
//! it is above the iso level the inside corners are joined, otherwise they
//! are separated. Both cells sharing a face see the same four values and so
//! make the same choice, which keeps the surface closed.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::mesh::Mesh;
use crate::volume::DensityVolume;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
pub(crate) const EDGES: [(u8, u8); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Corners of each face, counter-clockwise seen from outside the cube.
pub(crate) const FACES: [[u8; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

/// Interpolation parameter is kept this far from either end of an edge.
const EDGE_MARGIN: f64 = 1e-3;

fn edge_between(a: u8, b: u8) -> u8 {
    EDGES
        .iter()
        .position(|&(p, q)| (p, q) == (a, b) || (q, p) == (a, b))
        .expect("face corners are cube-adjacent") as u8
}

fn share_face(a: u8, b: u8) -> bool {
    let (ea, eb) = (EDGES[a as usize], EDGES[b as usize]);
    FACES.iter().any(|f| f.contains(&ea.0) && f.contains(&ea.1) && f.contains(&eb.0) && f.contains(&eb.1))
}

fn edge_axis(e: usize) -> usize {
    e / 4
}

/// Triangulation of one corner case under one face choice. Vertex codes
/// below 12 are cube edges; code `12 + i` is the centroid of `centroids[i]`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Entry {
    pub tris: Vec<[u8; 3]>,
    pub centroids: Vec<Vec<u8>>,
}

pub(crate) const CENTROID_CODE: u8 = 12;

pub(crate) fn triangulate(case: u8, join_mask: u8) -> Entry {
    let inside = |c: u8| (case >> c) & 1 == 1;
    let mut next = [u8::MAX; 12];
    for (f, face) in FACES.iter().enumerate() {
        let mut crossings: Vec<(u8, bool)> = Vec::with_capacity(4);
        for i in 0..4 {
            let (a, b) = (face[i], face[(i + 1) % 4]);
            if inside(a) != inside(b) {
                // Walking counter-clockwise: leaving the inside region is an exit.
                crossings.push((edge_between(a, b), inside(a)));
            }
        }
        match crossings.len() {
            0 => {}
            2 => {
                let (exit, enter) = if crossings[0].1 {
                    (crossings[0].0, crossings[1].0)
                } else {
                    (crossings[1].0, crossings[0].0)
                };
                next[exit as usize] = enter;
            }
            4 => {
                let join = (join_mask >> f) & 1 == 1;
                for i in 0..4 {
                    if crossings[i].1 {
                        let partner = if join { crossings[(i + 1) % 4] } else { crossings[(i + 3) % 4] };
                        next[crossings[i].0 as usize] = partner.0;
                    }
                }
            }
            _ => unreachable!("a square has an even number of sign changes"),
        }
    }
    let mut seen = [false; 12];
    let mut entry = Entry::default();
    for start in 0..12 {
        if next[start] == u8::MAX || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e] as usize;
        }
        debug_assert_eq!(e, start);
        // Exit-to-enter loops wind around the inside; reverse for outward normals.
        lp.reverse();
        let mut out = Vec::new();
        if triangulate_loop(&lp, &mut out) {
            entry.tris.extend(out);
        } else {
            let c = CENTROID_CODE + entry.centroids.len() as u8;
            for i in 0..lp.len() {
                entry.tris.push([c, lp[i], lp[(i + 1) % lp.len()]]);
            }
            entry.centroids.push(lp);
        }
    }
    entry
}

/// Triangulates a polygon so that no diagonal joins two crossings on the
/// same cube face; such a diagonal could coincide with one chosen by the
/// neighbouring cell and leave an edge with four incident triangles.
fn triangulate_loop(poly: &[u8], out: &mut Vec<[u8; 3]>) -> bool {
    let n = poly.len();
    if n < 3 {
        return n == 0;
    }
    if n == 3 {
        out.push([poly[0], poly[1], poly[2]]);
        return true;
    }
    // The triangle on edge (0, 1) picks an apex k; the diagonals it creates
    // must cross the cell interior.
    for k in 2..n {
        let ok_a = k == 2 || !share_face(poly[1], poly[k]);
        let ok_b = k == n - 1 || !share_face(poly[k], poly[0]);
        if !(ok_a && ok_b) {
            continue;
        }
        let mark = out.len();
        out.push([poly[0], poly[1], poly[k]]);
        let right: Vec<u8> = poly[1..=k].to_vec();
        let mut left: Vec<u8> = poly[k..].to_vec();
        left.push(poly[0]);
        let left = if left.len() >= 3 { left } else { Vec::new() };
        let right = if right.len() >= 3 { right } else { Vec::new() };
        if triangulate_loop(&right, out) && triangulate_loop(&left, out) {
            return true;
        }
        out.truncate(mark);
    }
    false
}

/// Faces with two diagonal inside corners, as a bit mask.
pub(crate) fn ambiguous_faces(case: u8) -> u8 {
    let inside = |c: u8| (case >> c) & 1 == 1;
    let mut mask = 0;
    for (f, face) in FACES.iter().enumerate() {
        let flags = face.map(inside);
        if flags[0] == flags[2] && flags[1] == flags[3] && flags[0] != flags[1] {
            mask |= 1 << f;
        }
    }
    mask
}

struct Table {
    entries: Vec<Entry>,
    ambiguous: [u8; 256],
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut ambiguous = [0u8; 256];
        let mut entries = Vec::with_capacity(256 * 64);
        for case in 0..=255u8 {
            ambiguous[case as usize] = ambiguous_faces(case);
            for mask in 0..64u8 {
                entries.push(triangulate(case, mask));
            }
        }
        Table { entries, ambiguous }
    })
}

#[derive(Default)]
struct Slab {
    tris: Vec<[u64; 3]>,
    centroids: Vec<(u64, Vec<u64>)>,
}

/// Isosurface of `volume` at `iso`; voxels with value > `iso` are inside.
///
/// Vertices are shared between neighbouring cells and numbered in order of
/// first use, scanning cells with x fastest.
pub fn marching_cubes(volume: &DensityVolume, iso: f64) -> Mesh {
    let grid = &volume.grid;
    let n = grid.resolution;
    if n < 2 || !iso.is_finite() {
        return Mesh::default();
    }
    let (lo, hi) = volume
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
    if iso >= hi || iso < lo {
        return Mesh::default();
    }
    let table = table();
    let value = |i: usize, j: usize, k: usize| volume.values[grid.index(i, j, k)] as f64;

    // Keys below `centroid_base` are `3 · voxel + axis` edge ids; above it,
    // `4 · cell + loop` ids of per-cell loop centroids.
    let centroid_base = 3 * grid.len() as u64;
    let slabs: Vec<Slab> = (0..n - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Slab::default();
            for j in 0..n - 1 {
                for i in 0..n - 1 {
                    let mut v = [0.0; 8];
                    let mut case = 0u8;
                    for (c, slot) in v.iter_mut().enumerate() {
                        *slot = value(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                        if *slot > iso {
                            case |= 1 << c;
                        }
                    }
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let amb = table.ambiguous[case as usize];
                    let mut join = 0u8;
                    if amb != 0 {
                        for (f, face) in FACES.iter().enumerate() {
                            if (amb >> f) & 1 == 1 {
                                let center = face.iter().map(|&c| v[c as usize]).sum::<f64>() / 4.0;
                                if center > iso {
                                    join |= 1 << f;
                                }
                            }
                        }
                    }
                    let edge_key = |e: u8| {
                        let (a, _) = EDGES[e as usize];
                        let a = a as usize;
                        let base = grid.index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                        base as u64 * 3 + edge_axis(e as usize) as u64
                    };
                    let cell = grid.index(i, j, k) as u64;
                    let key = |code: u8| {
                        if code < CENTROID_CODE {
                            edge_key(code)
                        } else {
                            centroid_base + 4 * cell + (code - CENTROID_CODE) as u64
                        }
                    };
                    let entry = &table.entries[case as usize * 64 + join as usize];
                    for (l, members) in entry.centroids.iter().enumerate() {
                        out.centroids
                            .push((centroid_base + 4 * cell + l as u64, members.iter().map(|&e| edge_key(e)).collect()));
                    }
                    out.tris.extend(entry.tris.iter().map(|t| t.map(key)));
                }
            }
            out
        })
        .collect();

    let step = |axis: usize| match axis {
        0 => 1,
        1 => n,
        _ => n * n,
    };
    let edge_point = |key: u64| {
        let axis = (key % 3) as usize;
        let a = (key / 3) as usize;
        let b = a + step(axis);
        let (va, vb) = (volume.values[a] as f64, volume.values[b] as f64);
        let t = ((iso - va) / (vb - va)).clamp(EDGE_MARGIN, 1.0 - EDGE_MARGIN);
        let mut q = grid.voxel_center(a % n, (a / n) % n, a / (n * n));
        q[axis] += t * grid.voxel_size();
        q
    };
    let centroids: HashMap<u64, &Vec<u64>> = slabs.iter().flat_map(|s| s.centroids.iter().map(|(k, m)| (*k, m))).collect();
    let mut ids: HashMap<u64, u32> = HashMap::new();
    let mut mesh = Mesh::default();
    for &key in slabs.iter().flat_map(|s| s.tris.iter()).flatten() {
        if ids.contains_key(&key) {
            continue;
        }
        let p = if key < centroid_base {
            edge_point(key)
        } else {
            let members = centroids[&key];
            let mut c = [0.0; 3];
            for &m in members {
                let q = edge_point(m);
                (0..3).for_each(|d| c[d] += q[d] / members.len() as f64);
            }
            c
        };
        ids.insert(key, mesh.vertices.len() as u32);
        mesh.vertices.push(p);
    }
    for tri in slabs.iter().flat_map(|s| s.tris.iter()) {
        mesh.faces.push(tri.map(|k| ids[&k]));
    }
    mesh.remove_degenerate_faces();
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner(c: u8) -> [f64; 3] {
        [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
    }

    #[test]
    fn faces_are_counter_clockwise_from_outside() {
        for face in FACES {
            let p = face.map(corner);
            let a = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
            let b = [p[2][0] - p[1][0], p[2][1] - p[1][1], p[2][2] - p[1][2]];
            let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            let c: Vec<f64> = (0..3).map(|d| p.iter().map(|q| q[d]).sum::<f64>() / 4.0 - 0.5).collect();
            assert!(n[0] * c[0] + n[1] * c[1] + n[2] * c[2] > 0.0, "{face:?}");
            for i in 0..4 {
                edge_between(face[i], face[(i + 1) % 4]);
            }
        }
    }

    fn edge_counts(entry: &Entry) -> HashMap<(u8, u8), i32> {
        let mut count: HashMap<(u8, u8), i32> = HashMap::new();
        for t in &entry.tris {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count
    }

    #[test]
    fn interior_edges_never_lie_in_a_face() {
        // Loop edges lie in a cube face and appear once per cell; every other
        // edge must cross the interior and appear exactly twice, so that no
        // neighbouring cell can produce it as well.
        for case in 0..=255u8 {
            for mask in 0..64u8 {
                for (&(a, b), &c) in &edge_counts(&triangulate(case, mask)) {
                    let on_face = b < CENTROID_CODE && share_face(a, b);
                    assert!(c == 1 || c == 2);
                    assert_eq!(c == 1, on_face, "case {case} mask {mask} edge ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn centroids_are_rare() {
        let with_centroid = (0..=255u8)
            .flat_map(|c| (0..64u8).map(move |m| (c, m)))
            .filter(|&(c, m)| m & !ambiguous_faces(c) == 0 && !triangulate(c, m).centroids.is_empty())
            .count();
        assert!(with_centroid > 0 && with_centroid < 200);
        for case in 0..=255u8 {
            if ambiguous_faces(case) == 0 {
                assert!(triangulate(case, 0).centroids.is_empty(), "case {case}");
            }
        }
    }

    #[test]
    fn complement_cases_have_matching_triangle_counts() {
        for case in 0..=255u8 {
            let a = triangulate(case, 0).tris.len();
            let b = triangulate(!case, 0b111111).tris.len();
            assert_eq!(a, b, "case {case}");
        }
        assert!(triangulate(0, 0).tris.is_empty());
        assert!(triangulate(255, 0).tris.is_empty());
        assert_eq!(triangulate(1, 0).tris.len(), 1);
        assert_eq!(triangulate(0b0000_0011, 0).tris.len(), 2);
    }
}
