//! Regular cubic voxel grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const ALLOWED_RESOLUTIONS: [usize; 5] = [16, 32, 64, 128, 256];

/// Cubic grid of `resolution³` voxels covering `origin ± extent` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    /// Physical half-width in cm.
    pub extent: f64,
    /// Grid center in cm.
    #[serde(default)]
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(resolution: usize, extent: f64) -> Result<Self> {
        let grid = GridSpec {
            resolution,
            extent,
            origin: [0.0; 3],
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Same as [`GridSpec::new`] but without the fixed resolution ladder;
    /// used for network outputs and downsampled targets.
    pub fn unchecked(resolution: usize, extent: f64, origin: [f64; 3]) -> Self {
        GridSpec {
            resolution,
            extent,
            origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::invalid(format!(
                "grid resolution {} not in {:?}",
                self.resolution, ALLOWED_RESOLUTIONS
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::invalid(format!("grid extent {} must be > 0", self.extent)));
        }
        Ok(())
    }

    /// Edge length of one voxel in cm.
    pub fn voxel_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    /// Lower corner of the grid's bounding box.
    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.origin[0] - self.extent,
            self.origin[1] - self.extent,
            self.origin[2] - self.extent,
        ]
    }

    /// Linear index with x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    /// Physical coordinate of a (possibly fractional) voxel position;
    /// integer + 0.5 is a voxel center.
    #[inline]
    pub fn position(&self, fi: f64, fj: f64, fk: f64) -> [f64; 3] {
        let h = self.voxel_size();
        let lo = self.min_corner();
        [lo[0] + fi * h, lo[1] + fj * h, lo[2] + fk * h]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.position(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5)
    }
}

/// Scalar density field in g/cm³ sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVolume {
    pub grid: GridSpec,
    pub values: Vec<f32>,
}

impl DensityVolume {
    pub fn zeros(grid: GridSpec) -> Self {
        DensityVolume {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape("volume", &[grid.len()], &[values.len()]));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::invalid(format!(
                "volume value {v} at index {i} is negative or not finite"
            )));
        }
        Ok(DensityVolume { grid, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Σ values · voxel volume, in grams.
    pub fn total_mass(&self) -> f64 {
        let dv = self.grid.voxel_size().powi(3);
        self.values.iter().map(|&v| v as f64).sum::<f64>() * dv
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let (data, sidecar) = io::sidecar_pair(path);
        io::ensure_parent(&data)?;
        io::write_f32_le(&data, self.values.iter().copied())?;
        io::write_json(&sidecar, &self.grid)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (data, sidecar) = io::sidecar_pair(path);
        let grid: GridSpec = io::read_json(&sidecar)?;
        if !(grid.extent > 0.0) || grid.resolution == 0 {
            return Err(Error::Format {
                path: sidecar,
                reason: "resolution and extent must be positive".into(),
            });
        }
        let values = io::read_f32_le(&data)?;
        DensityVolume::from_values(grid, values).map_err(|e| Error::Format {
            path: data,
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_resolutions_outside_ladder() {
        assert!(GridSpec::new(48, 1.0).is_err());
        assert!(GridSpec::new(32, 0.0).is_err());
        assert!(GridSpec::new(32, 1.0).is_ok());
    }

    #[test]
    fn voxel_centers_are_symmetric_about_origin() {
        let g = GridSpec::new(16, 2.0).unwrap();
        let a = g.voxel_center(0, 0, 0);
        let b = g.voxel_center(15, 15, 15);
        for d in 0..3 {
            assert!((a[d] + b[d]).abs() < 1e-12);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 16);
    }

    #[test]
    fn volume_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(16, 1.5).unwrap();
        let values = (0..g.len()).map(|i| (i % 7) as f32 * 0.25).collect();
        let v = DensityVolume::from_values(g, values).unwrap();
        let path = dir.path().join("v.json");
        v.write(&path).unwrap();
        assert!(dir.path().join("v.f32").exists());
        assert_eq!(DensityVolume::read(&path).unwrap(), v);
    }

    #[test]
    fn negative_values_are_rejected() {
        let g = GridSpec::new(16, 1.0).unwrap();
        let mut values = vec![0.0; g.len()];
        values[3] = -1.0;
        assert!(DensityVolume::from_values(g, values).is_err());
    }
}
