//! Beer-Lambert transmission radiographs by exact voxel traversal.
//!
//! Rays are traced with Siddon's parametric method: every crossing of a
//! voxel plane is collected, the crossings are merged in ray order, and
//! each segment contributes `density × length` of the voxel containing its
//! midpoint. The result is exact for piecewise-constant grids.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::shell::Vec3;
use crate::volume::DensityVolume;

pub const DEFAULT_DETECTOR: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BeamKind {
    #[default]
    Parallel,
    Cone,
}

fn default_axis() -> Vec3 {
    [0.0, 0.0, 1.0]
}

fn default_detector() -> usize {
    DEFAULT_DETECTOR
}

/// Acquisition geometry. The detector is centered on the volume center;
/// for cone beams the source sits `source_distance` before the center and
/// the detector plane `detector_distance` behind it along `view_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    #[serde(default)]
    pub kind: BeamKind,
    #[serde(default = "default_detector")]
    pub rows: usize,
    #[serde(default = "default_detector")]
    pub cols: usize,
    /// Pixel pitch in cm.
    pub pitch: f64,
    #[serde(default)]
    pub source_distance: f64,
    #[serde(default)]
    pub detector_distance: f64,
    #[serde(default = "default_axis")]
    pub view_axis: Vec3,
}

impl BeamGeometry {
    pub fn parallel(rows: usize, cols: usize, pitch: f64) -> Self {
        BeamGeometry {
            kind: BeamKind::Parallel,
            rows,
            cols,
            pitch,
            source_distance: 0.0,
            detector_distance: 0.0,
            view_axis: default_axis(),
        }
    }

    pub fn cone(rows: usize, cols: usize, pitch: f64, source_distance: f64, detector_distance: f64) -> Self {
        BeamGeometry {
            kind: BeamKind::Cone,
            source_distance,
            detector_distance,
            ..BeamGeometry::parallel(rows, cols, pitch)
        }
    }

    /// Parallel beam whose detector exactly covers a grid of half-width `extent`.
    pub fn covering(pixels: usize, extent: f64) -> Self {
        BeamGeometry::parallel(pixels, pixels, 2.0 * extent / pixels as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("detector must have at least one pixel"));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::invalid("pixel pitch must be > 0"));
        }
        if norm(self.view_axis) == 0.0 || self.view_axis.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("view axis must be a non-zero vector"));
        }
        if self.kind == BeamKind::Cone && !(self.source_distance > 0.0 && self.detector_distance >= 0.0) {
            return Err(Error::invalid("cone beam needs source_distance > 0 and detector_distance >= 0"));
        }
        Ok(())
    }

    /// Unit `(column, row, view)` directions of the detector frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let d = scale(self.view_axis, 1.0 / norm(self.view_axis));
        let helper = if d[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let v = normalize(cross(d, helper));
        let u = cross(v, d);
        (u, v, d)
    }

    /// `(row, col)` offset of a pixel center from the detector center, cm.
    pub fn pixel_offset(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.pitch,
            (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.pitch,
        )
    }

    /// The ray through pixel `(row, col)` for a volume centered at `center`.
    pub fn ray(&self, center: Vec3, row: usize, col: usize) -> Ray {
        let (u, v, d) = self.basis();
        let (dr, dc) = self.pixel_offset(row, col);
        match self.kind {
            BeamKind::Parallel => Ray {
                origin: add(center, add(scale(u, dc), scale(v, dr))),
                direction: d,
            },
            BeamKind::Cone => {
                let source = add(center, scale(d, -self.source_distance));
                let pixel = add(
                    center,
                    add(scale(d, self.detector_distance), add(scale(u, dc), scale(v, dr))),
                );
                Ray {
                    origin: source,
                    direction: sub(pixel, source),
                }
            }
        }
    }
}

/// Mass attenuation coefficient μₘ in cm²/g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub mass_attenuation: f64,
}

impl MaterialSpec {
    pub fn new(mass_attenuation: f64) -> Result<Self> {
        let m = MaterialSpec { mass_attenuation };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_attenuation > 0.0 && self.mass_attenuation.is_finite()) {
            return Err(Error::invalid("mass attenuation must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// Transmission image with its acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Radiograph {
    pub pixels: Image,
    pub geometry: BeamGeometry,
}

impl Radiograph {
    pub fn new(pixels: Image, geometry: BeamGeometry) -> Result<Self> {
        if pixels.rows != geometry.rows || pixels.cols != geometry.cols {
            return Err(Error::shape(
                "radiograph",
                &[geometry.rows, geometry.cols],
                &[pixels.rows, pixels.cols],
            ));
        }
        Ok(Radiograph { pixels, geometry })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (data, sidecar) = io::sidecar_pair(path);
        io::ensure_parent(&data)?;
        io::write_f32_le(&data, self.pixels.data.iter().map(|&v| v as f32))?;
        io::write_json(&sidecar, &self.geometry)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (data, sidecar) = io::sidecar_pair(path);
        let geometry: BeamGeometry = io::read_json(&sidecar)?;
        let values = io::read_f32_le(&data)?;
        let pixels = Image::new(geometry.rows, geometry.cols, values.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Format {
                path: data.clone(),
                reason: e.to_string(),
            })?;
        Radiograph::new(pixels, geometry)
    }
}

#[inline]
fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// ∫ρ dl along the (infinite) line in g/cm². Zero for rays missing the grid.
pub fn radiological_path(volume: &DensityVolume, ray: &Ray) -> f64 {
    let len = norm(ray.direction);
    if len == 0.0 || !len.is_finite() {
        return 0.0;
    }
    let d = scale(ray.direction, 1.0 / len);
    let o = ray.origin;
    let grid = &volume.grid;
    let n = grid.resolution;
    let h = grid.voxel_size();
    let lo = grid.min_corner();

    let (mut t_in, mut t_out) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let hi = lo[a] + n as f64 * h;
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi {
                return 0.0;
            }
        } else {
            let ta = (lo[a] - o[a]) / d[a];
            let tb = (hi - o[a]) / d[a];
            t_in = t_in.max(ta.min(tb));
            t_out = t_out.min(ta.max(tb));
        }
    }
    if !(t_out > t_in) {
        return 0.0;
    }

    let mut crossings = Vec::with_capacity(3 * (n + 1) + 2);
    crossings.push(t_in);
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        for p in 0..=n {
            let t = (lo[a] + p as f64 * h - o[a]) / d[a];
            if t > t_in && t < t_out {
                crossings.push(t);
            }
        }
    }
    crossings.push(t_out);
    crossings.sort_unstable_by(f64::total_cmp);

    let last = (n - 1) as f64;
    let mut acc = 0.0;
    for w in crossings.windows(2) {
        let seg = w[1] - w[0];
        if seg <= 0.0 {
            continue;
        }
        let tm = 0.5 * (w[0] + w[1]);
        let idx = |a: usize| ((o[a] + d[a] * tm - lo[a]) / h).floor().clamp(0.0, last) as usize;
        let v = volume.get(idx(0), idx(1), idx(2));
        if v != 0.0 {
            acc += v as f64 * seg;
        }
    }
    acc
}

/// Radiological path for every detector pixel, row-major.
pub fn path_image(volume: &DensityVolume, geometry: &BeamGeometry) -> Result<Image> {
    geometry.validate()?;
    if geometry.kind == BeamKind::Cone {
        let bounding = volume.grid.extent * 3f64.sqrt();
        if geometry.source_distance <= bounding {
            return Err(Error::invalid(format!(
                "cone source at distance {} lies inside the volume bounding sphere (radius {bounding:.4})",
                geometry.source_distance
            )));
        }
    }
    let center = volume.grid.origin;
    let cols = geometry.cols;
    let mut data = vec![0.0; geometry.rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            *px = radiological_path(volume, &geometry.ray(center, row, col));
        }
    });
    Image::new(geometry.rows, cols, data)
}

/// Monochromatic Beer-Lambert projection: `exp(-μₘ ∫ρ dl)` per pixel.
pub fn project(volume: &DensityVolume, geometry: &BeamGeometry, material: &MaterialSpec) -> Result<Radiograph> {
    material.validate()?;
    let paths = path_image(volume, geometry)?;
    let mu = material.mass_attenuation;
    let pixels = paths.map(|p| (-mu * p).exp().max(f64::MIN_POSITIVE));
    Radiograph::new(pixels, *geometry)
}

/// Element-wise `-ln T`.
pub fn absorption_image(radiograph: &Radiograph) -> Result<Image> {
    let px = &radiograph.pixels;
    if let Some((index, &value)) = px.data.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }
    Ok(px.map(|t| -t.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shell::{voxelize, ShellLayer, ShellModel};
    use crate::volume::GridSpec;

    fn uniform(n: usize, extent: f64, value: f32) -> DensityVolume {
        let g = GridSpec::new(n, extent).unwrap();
        DensityVolume::from_values(g, vec![value; g.len()]).unwrap()
    }

    /// Midpoint-rule line integral; independent of the traversal.
    fn sampled_path(volume: &DensityVolume, ray: &Ray, samples: usize) -> f64 {
        let g = &volume.grid;
        let d = normalize(ray.direction);
        let reach = 4.0 * g.extent;
        let dt = 2.0 * reach / samples as f64;
        let lo = g.min_corner();
        let h = g.voxel_size();
        let mut acc = 0.0;
        for s in 0..samples {
            let t = -reach + (s as f64 + 0.5) * dt;
            let p = add(ray.origin, scale(d, t));
            let f: Vec<f64> = (0..3).map(|a| (p[a] - lo[a]) / h).collect();
            if f.iter().all(|&x| x >= 0.0 && x < g.resolution as f64) {
                acc += volume.get(f[0] as usize, f[1] as usize, f[2] as usize) as f64 * dt;
            }
        }
        acc
    }

    #[test]
    fn missing_ray_has_zero_path() {
        let v = uniform(16, 1.0, 1.0);
        let ray = Ray {
            origin: [5.0, 5.0, 0.0],
            direction: [0.0, 0.0, 1.0],
        };
        assert_eq!(radiological_path(&v, &ray), 0.0);
        let parallel_outside = Ray {
            origin: [0.0, 0.0, 3.0],
            direction: [1.0, 1.0, 0.0],
        };
        assert_eq!(radiological_path(&v, &parallel_outside), 0.0);
    }

    #[test]
    fn axis_aligned_chord_through_uniform_cube() {
        let v = uniform(16, 1.0, 1.0);
        for dir in [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 3.0]] {
            let ray = Ray {
                origin: [0.13, -0.21, 0.4],
                direction: dir,
            };
            assert!((radiological_path(&v, &ray) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oblique_ray_matches_midpoint_oracle() {
        let g = GridSpec::new(32, 1.0).unwrap();
        let m = ShellModel::new(vec![ShellLayer::spherical(1.5, 0.6, 0.3)]);
        let v = voxelize(&m, &g, 1).unwrap();
        let ray = Ray {
            origin: [0.1, -0.2, 0.05],
            direction: [0.3, 0.5, 0.8],
        };
        let exact = radiological_path(&v, &ray);
        let oracle = sampled_path(&v, &ray, 100_000);
        assert!(exact > 0.5);
        assert!((exact - oracle).abs() / exact < 2e-3, "{exact} vs {oracle}");
    }

    #[test]
    fn zero_volume_transmits_everything() {
        let g = GridSpec::new(16, 1.0).unwrap();
        let v = DensityVolume::zeros(g);
        let r = project(&v, &BeamGeometry::covering(16, 1.0), &MaterialSpec::new(2.0).unwrap()).unwrap();
        assert!(r.pixels.data.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn doubling_density_doubles_absorption() {
        let g = GridSpec::new(32, 1.0).unwrap();
        let m = ShellModel::new(vec![ShellLayer::spherical(1.0, 0.5, 0.3)]);
        let v = voxelize(&m, &g, 2).unwrap();
        let mut v2 = v.clone();
        v2.values.iter_mut().for_each(|x| *x *= 2.0);
        let geo = BeamGeometry::covering(32, 1.0);
        let a = path_image(&v, &geo).unwrap();
        let b = path_image(&v2, &geo).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn absorption_image_inverts_projection() {
        let geo = BeamGeometry::parallel(1, 3, 1.0);
        let r = Radiograph::new(Image::new(1, 3, vec![1.0, (-1.0f64).exp(), 0.3]).unwrap(), geo).unwrap();
        let a = absorption_image(&r).unwrap();
        assert_eq!(a.data[0], 0.0);
        assert!((a.data[1] - 1.0).abs() < 1e-15);
        for (p, q) in r.pixels.data.iter().zip(&a.data) {
            assert!(((-q).exp() - p).abs() < 1e-15);
        }
        let bad = Radiograph::new(Image::new(1, 3, vec![1.0, 0.0, 0.3]).unwrap(), geo).unwrap();
        assert!(matches!(absorption_image(&bad), Err(Error::NonPositivePixel { index: 1, .. })));
    }

    #[test]
    fn cone_source_inside_bounding_sphere_is_rejected() {
        let v = uniform(16, 1.0, 0.0);
        let geo = BeamGeometry::cone(8, 8, 0.25, 1.5, 2.0);
        assert!(project(&v, &geo, &MaterialSpec::new(1.0).unwrap()).is_err());
        let geo = BeamGeometry::cone(8, 8, 0.25, 10.0, 2.0);
        assert!(project(&v, &geo, &MaterialSpec::new(1.0).unwrap()).is_ok());
    }

    #[test]
    fn detector_basis_is_orthonormal() {
        for axis in [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.3, -0.4, 0.2]] {
            let mut g = BeamGeometry::covering(4, 1.0);
            g.view_axis = axis;
            let (u, v, d) = g.basis();
            let dot = |a: Vec3, b: Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            assert!(dot(u, v).abs() < 1e-12 && dot(u, d).abs() < 1e-12 && dot(v, d).abs() < 1e-12);
            assert!((norm(u) - 1.0).abs() < 1e-12 && (norm(v) - 1.0).abs() < 1e-12);
        }
        let (u, v, _) = BeamGeometry::covering(4, 1.0).basis();
        assert_eq!((u, v), ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]));
    }

    #[test]
    fn radiograph_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let geo = BeamGeometry::cone(2, 3, 0.1, 50.0, 5.0);
        let r = Radiograph::new(Image::new(2, 3, vec![1.0, 0.5, 0.25, 0.125, 0.75, 1.0]).unwrap(), geo).unwrap();
        let p = dir.path().join("r.json");
        r.write(&p).unwrap();
        assert_eq!(Radiograph::read(&p).unwrap(), r);
    }
}
