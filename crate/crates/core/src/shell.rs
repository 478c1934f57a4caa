//! Parametric layered shell objects and their rasterization.
//!
//! A [`ShellModel`] is a stack of constant-density layers. Each layer's
//! mid-surface radius is an azimuthally symmetric Legendre series in the
//! polar angle, and the layer occupies `mid ± thickness / 2`. The outer
//! layer can be split at the equator by a joint gap and pierced from the
//! +z side by a fill tube. The whole object is then placed at `center`
//! and deformed by a unit-diagonal shear about the world origin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DensityVolume, GridSpec};

pub const MAX_LEGENDRE_DEGREE: usize = 8;
pub const DEFAULT_SUPERSAMPLE: usize = 2;
const NESTING_THETA_SAMPLES: usize = 32;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellLayer {
    /// g/cm³
    pub density: f64,
    /// Legendre coefficients of the mid-surface radius, cm.
    pub coeffs: Vec<f64>,
    /// Wall thickness, cm.
    pub thickness: f64,
}

impl ShellLayer {
    pub fn spherical(density: f64, radius: f64, thickness: f64) -> Self {
        ShellLayer {
            density,
            coeffs: vec![radius],
            thickness,
        }
    }

    /// A solid ball of the given radius.
    pub fn solid_sphere(density: f64, radius: f64) -> Self {
        ShellLayer::spherical(density, radius / 2.0, radius)
    }

    #[inline]
    fn mid_radius_cos(&self, cos_theta: f64) -> f64 {
        legendre_series(cos_theta, &self.coeffs)
    }

    /// `(inner, outer)` surface radii at the given polar angle cosine.
    #[inline]
    pub fn surfaces_cos(&self, cos_theta: f64) -> (f64, f64) {
        let mid = self.mid_radius_cos(cos_theta);
        (mid - self.thickness / 2.0, mid + self.thickness / 2.0)
    }
}

fn identity() -> Mat3 {
    IDENTITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellModel {
    /// Outermost first.
    pub layers: Vec<ShellLayer>,
    #[serde(default)]
    pub joint_size: f64,
    #[serde(default)]
    pub fill_tube_radius: f64,
    #[serde(default)]
    pub fill_tube_density: f64,
    /// Object placement before shearing, cm.
    #[serde(default)]
    pub center: Vec3,
    #[serde(default = "identity")]
    pub shear: Mat3,
}

impl Default for ShellModel {
    fn default() -> Self {
        ShellModel {
            layers: Vec::new(),
            joint_size: 0.0,
            fill_tube_radius: 0.0,
            fill_tube_density: 0.0,
            center: [0.0; 3],
            shear: IDENTITY,
        }
    }
}

/// Σ aₙ Pₙ(x) by the three-term recurrence.
#[inline]
pub fn legendre_series(x: f64, coeffs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let (mut p_prev, mut p) = (0.0, 1.0);
    for (n, &a) in coeffs.iter().enumerate() {
        sum += a * p;
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
    }
    sum
}

/// Radius of an azimuthally symmetric interface at polar angle `theta`.
pub fn legendre_radius(theta: f64, coeffs: &[f64]) -> f64 {
    legendre_series(theta.cos(), coeffs)
}

/// `S · p` for the model's shear matrix.
pub fn apply_shear(point: Vec3, model: &ShellModel) -> Vec3 {
    mat_vec(&model.shear, point)
}

#[inline]
fn mat_vec(m: &Mat3, p: Vec3) -> Vec3 {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate inverse. Exact for the identity.
fn inverse3(m: &Mat3) -> Option<Mat3> {
    let det = det3(m);
    if det.abs() < 1e-12 || !det.is_finite() {
        return None;
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            inv[r][col] = adj[r][col] / det;
        }
    }
    Some(inv)
}

impl ShellModel {
    pub fn new(layers: Vec<ShellLayer>) -> Self {
        ShellModel {
            layers,
            ..Default::default()
        }
    }

    pub fn max_layer_density(&self) -> f64 {
        self.layers.iter().map(|l| l.density).fold(0.0, f64::max)
    }

    /// Checks every invariant, including radial nesting on a fixed
    /// angular grid.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if !(layer.density >= 0.0 && layer.density.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: density must be >= 0")));
            }
            if !(layer.thickness > 0.0 && layer.thickness.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: thickness must be > 0")));
            }
            if layer.coeffs.is_empty() || layer.coeffs.len() > MAX_LEGENDRE_DEGREE + 1 {
                return Err(Error::invalid(format!(
                    "layer {i}: expected 1..={} Legendre coefficients, got {}",
                    MAX_LEGENDRE_DEGREE + 1,
                    layer.coeffs.len()
                )));
            }
            if layer.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: non-finite coefficient")));
            }
        }
        if !(self.joint_size >= 0.0) || !(self.fill_tube_radius >= 0.0) {
            return Err(Error::invalid("joint_size and fill_tube_radius must be >= 0"));
        }
        if !(self.fill_tube_density >= 0.0) {
            return Err(Error::invalid("fill_tube_density must be >= 0"));
        }
        for d in 0..3 {
            if self.shear[d][d] != 1.0 {
                return Err(Error::invalid("shear matrix must have a unit diagonal"));
            }
        }
        if self.shear.iter().flatten().chain(&self.center).any(|v| !v.is_finite()) {
            return Err(Error::invalid("shear and center must be finite"));
        }
        if inverse3(&self.shear).is_none() {
            return Err(Error::invalid("shear matrix is singular"));
        }
        self.check_nesting()
    }

    fn check_nesting(&self) -> Result<()> {
        // Interfaces are azimuthally symmetric, so the φ columns of a θ×φ
        // sample grid are identical; only θ needs visiting.
        for t in 0..NESTING_THETA_SAMPLES {
            let theta = std::f64::consts::PI * t as f64 / (NESTING_THETA_SAMPLES - 1) as f64;
            let c = theta.cos();
            for (k, layer) in self.layers.iter().enumerate() {
                let (_, outer) = layer.surfaces_cos(c);
                if outer <= 0.0 {
                    return Err(Error::NotNested {
                        outer: k,
                        layer: k,
                        theta,
                    });
                }
            }
            for (k, pair) in self.layers.windows(2).enumerate() {
                let (inner_k, _) = pair[0].surfaces_cos(c);
                let (_, outer_next) = pair[1].surfaces_cos(c);
                if inner_k <= outer_next {
                    return Err(Error::NotNested {
                        outer: k,
                        layer: k + 1,
                        theta,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn inverse_shear(&self) -> Mat3 {
        inverse3(&self.shear).unwrap_or(IDENTITY)
    }

    /// Maps a world point into the unsheared, centered object frame.
    #[inline]
    pub fn pull_back(&self, point: Vec3, inverse: &Mat3) -> Vec3 {
        let q = mat_vec(inverse, point);
        [q[0] - self.center[0], q[1] - self.center[1], q[2] - self.center[2]]
    }

    /// Index of the layer whose wall contains the object-frame point.
    pub fn layer_at(&self, q: Vec3) -> Option<usize> {
        let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let c = if r > 0.0 { q[2] / r } else { 1.0 };
        self.layers.iter().position(|l| {
            let (inner, outer) = l.surfaces_cos(c);
            inner <= r && r < outer
        })
    }

    /// Density at an object-frame point (no shear, no placement).
    pub fn object_density(&self, q: Vec3) -> f64 {
        let Some(outermost) = self.layers.first() else {
            return 0.0;
        };
        let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let c = if r > 0.0 { q[2] / r } else { 1.0 };

        if self.fill_tube_radius > 0.0
            && q[2] > 0.0
            && (q[0] * q[0] + q[1] * q[1]).sqrt() < self.fill_tube_radius
        {
            let (_, outer) = outermost.surfaces_cos(c);
            if r < outer {
                return self.fill_tube_density;
            }
        }

        for (k, layer) in self.layers.iter().enumerate() {
            let (inner, outer) = layer.surfaces_cos(c);
            if inner <= r && r < outer {
                if k == 0 && self.joint_size > 0.0 && q[2].abs() <= self.joint_size / 2.0 {
                    return 0.0;
                }
                return layer.density;
            }
        }
        0.0
    }

    /// Density at a world point: pull back through the shear and placement,
    /// then evaluate the object-frame field.
    pub fn evaluate_density(&self, point: Vec3) -> f64 {
        let inv = self.inverse_shear();
        self.object_density(self.pull_back(point, &inv))
    }
}

pub fn evaluate_density(point: Vec3, model: &ShellModel) -> f64 {
    model.evaluate_density(point)
}

/// Rasterizes the model; each voxel is the mean density over
/// `supersample³` stratified sub-points.
pub fn voxelize(model: &ShellModel, grid: &GridSpec, supersample: usize) -> Result<DensityVolume> {
    if supersample == 0 {
        return Err(Error::invalid("supersample must be >= 1"));
    }
    grid.validate()?;
    model.validate()?;
    let inv = model.inverse_shear();
    let n = grid.resolution;
    let ss = supersample;
    let offsets: Vec<f64> = (0..ss).map(|a| (a as f64 + 0.5) / ss as f64).collect();
    let norm = 1.0 / (ss * ss * ss) as f64;

    let mut values = vec![0.0f32; grid.len()];
    values
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..n {
                for i in 0..n {
                    let mut acc = 0.0;
                    for &dz in &offsets {
                        for &dy in &offsets {
                            for &dx in &offsets {
                                let p = grid.position(i as f64 + dx, j as f64 + dy, k as f64 + dz);
                                acc += model.object_density(model.pull_back(p, &inv));
                            }
                        }
                    }
                    slab[i + n * j] = (acc * norm) as f32;
                }
            }
        });
    Ok(DensityVolume { grid: *grid, values })
}
