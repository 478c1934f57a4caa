//! Density-based clustering with a hashed-grid neighbour search.
//!
//! Conventions: a point counts as its own neighbour; a neighbour lies within
//! distance `eps` inclusive. Clusters are the connected components of core
//! points, numbered by their lowest core index. A border point joins the
//! cluster of its nearest core neighbour (lowest index on ties).

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::Point;
use crate::error::{Error, Result};

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<i32>,
    pub clusters: usize,
}

impl ClusterLabels {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster as i32).collect()
    }

    /// One label per line.
    pub fn to_text(&self) -> String {
        self.labels.iter().map(|l| format!("{l}\n")).collect()
    }
}

type Cell = (i64, i64, i64);

struct GridIndex<'a> {
    points: &'a [Point],
    eps: f64,
    cells: HashMap<Cell, Vec<u32>>,
}

impl<'a> GridIndex<'a> {
    fn new(points: &'a [Point], eps: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i as u32);
        }
        GridIndex { points, eps, cells }
    }

    fn cell(p: &Point, eps: f64) -> Cell {
        let f = |v: f64| (v / eps).floor() as i64;
        (f(p[0]), f(p[1]), f(p[2]))
    }

    fn dist2(a: &Point, b: &Point) -> f64 {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    }

    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let p = &self.points[i];
        let (cx, cy, cz) = Self::cell(p, self.eps);
        let e2 = self.eps * self.eps;
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(list) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in list {
                            let d = Self::dist2(p, &self.points[j as usize]);
                            if d <= e2 {
                                f(j as usize, d);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn dbscan(points: &[Point], eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be >= 1"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points must be finite"));
    }
    let index = GridIndex::new(points, eps);
    let core: Vec<bool> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut n = 0;
            index.for_each_neighbor(i, |_, _| n += 1);
            n >= min_pts
        })
        .collect();

    let mut labels = vec![NOISE; points.len()];
    let mut clusters = 0;
    let mut stack = Vec::new();
    for seed in 0..points.len() {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        let id = clusters as i32;
        clusters += 1;
        labels[seed] = id;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            index.for_each_neighbor(i, |j, _| {
                if core[j] && labels[j] == NOISE {
                    labels[j] = id;
                    stack.push(j);
                }
            });
        }
    }

    let border: Vec<(usize, i32)> = (0..points.len())
        .into_par_iter()
        .filter(|&i| !core[i])
        .filter_map(|i| {
            let mut best: Option<(f64, usize)> = None;
            index.for_each_neighbor(i, |j, d| {
                if core[j] && best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                    best = Some((d, j));
                }
            });
            best.map(|(_, j)| (i, labels[j]))
        })
        .collect();
    for (i, l) in border {
        labels[i] = l;
    }
    Ok(ClusterLabels { labels, clusters })
}

/// Brute-force O(n²) clustering with the same conventions: density
/// reachability by breadth-first expansion from each unvisited core point.
pub fn dbscan_reference(points: &[Point], eps: f64, min_pts: usize) -> ClusterLabels {
    let n = points.len();
    let d2 = |i: usize, j: usize| GridIndex::dist2(&points[i], &points[j]);
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| d2(i, j) <= eps * eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut clusters = 0;
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        let id = clusters as i32;
        clusters += 1;
        labels[seed] = id;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbours[i] {
                if core[j] && labels[j] == NOISE {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = neighbours[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| d2(i, a).total_cmp(&d2(i, b)).then(a.cmp(&b)));
        if let Some(j) = nearest {
            labels[i] = labels[j];
        }
    }
    ClusterLabels { labels, clusters }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_group_is_one_cluster() {
        let pts: Vec<Point> = (0..5).map(|i| [0.01 * i as f64, 0.0, 0.0]).collect();
        let l = dbscan(&pts, 0.1, 5).unwrap();
        assert_eq!(l.clusters, 1);
        assert!(l.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pts: Vec<Point> = (0..5).map(|i| [0.01 * i as f64, 0.0, 0.0]).collect();
        pts.push([5.0, 5.0, 5.0]);
        let l = dbscan(&pts, 0.1, 3).unwrap();
        assert_eq!(l.labels[5], NOISE);
        assert_eq!(l.clusters, 1);
    }

    #[test]
    fn border_point_joins_nearest_core() {
        let pts: Vec<Point> = vec![[0.0; 3], [0.1, 0.0, 0.0], [-0.1, 0.0, 0.0], [0.55, 0.0, 0.0], [1.2, 0.0, 0.0]];
        let l = dbscan(&pts, 0.5, 3).unwrap();
        assert_eq!(l.labels, vec![0, 0, 0, 0, NOISE]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(dbscan(&[[0.0; 3]], 0.0, 1).is_err());
        assert!(dbscan(&[[0.0; 3]], 1.0, 0).is_err());
    }
}
