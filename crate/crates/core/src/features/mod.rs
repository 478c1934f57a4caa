//! Surface extraction and spherical-harmonic asymmetry analysis.

pub mod dbscan;
pub mod linalg;
pub mod marching;
pub mod mesh;
pub mod spherical;

use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan, dbscan_reference, ClusterLabels, NOISE};
pub use marching::marching_cubes;
pub use mesh::{mesh_center, Mesh, Point};
pub use spherical::{fit_spherical_harmonics, real_sph_harm, to_spherical, SurfaceFit};

use crate::error::{Error, Result};
use crate::volume::DensityVolume;

pub const DEFAULT_MIN_PTS: usize = 8;
pub const DEFAULT_EPS_VOXELS: f64 = 2.0;
pub const DEFAULT_DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    /// Absolute iso level; `None` means half the volume maximum.
    #[serde(default)]
    pub iso: Option<f64>,
    /// Neighbourhood radius in cm; `None` means two voxel widths.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Optional polar-angle window `[θ_min, θ_max]` in radians.
    #[serde(default)]
    pub theta_range: Option<[f64; 2]>,
}

fn default_min_pts() -> usize {
    DEFAULT_MIN_PTS
}
fn default_degree() -> usize {
    DEFAULT_DEGREE
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            iso: None,
            eps: None,
            min_pts: DEFAULT_MIN_PTS,
            degree: DEFAULT_DEGREE,
            theta_range: None,
        }
    }
}

/// Half of the volume's peak value.
pub fn default_iso(volume: &DensityVolume) -> f64 {
    0.5 * volume.max_value() as f64
}

/// One separated surface and its fit (if it had enough points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFeature {
    pub cluster: usize,
    pub vertex_count: usize,
    pub mean_radius: f64,
    pub fit: Option<SurfaceFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub iso: f64,
    pub eps: f64,
    pub mesh: Mesh,
    pub center: Option<Point>,
    pub labels: ClusterLabels,
    /// Ordered by mean radius, outermost first.
    pub surfaces: Vec<SurfaceFeature>,
    pub warnings: Vec<String>,
}

impl Features {
    pub fn fits(&self) -> Vec<&SurfaceFit> {
        self.surfaces.iter().filter_map(|s| s.fit.as_ref()).collect()
    }
}

/// Mesh, center, cluster and fit each surface of `volume`.
pub fn extract_features(volume: &DensityVolume, params: &ExtractParams) -> Result<Features> {
    let iso = params.iso.unwrap_or_else(|| default_iso(volume));
    let eps = params.eps.unwrap_or(DEFAULT_EPS_VOXELS * volume.grid.voxel_size());
    let mesh = marching_cubes(volume, iso);
    if mesh.is_empty() {
        return Ok(Features {
            iso,
            eps,
            mesh,
            center: None,
            labels: ClusterLabels {
                labels: Vec::new(),
                clusters: 0,
            },
            surfaces: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let center = mesh_center(&mesh)?;
    let labels = dbscan(&mesh.vertices, eps, params.min_pts)?;
    let mut surfaces = Vec::with_capacity(labels.clusters);
    let mut warnings = Vec::new();
    for cluster in 0..labels.clusters {
        let members = labels.members(cluster);
        let pts: Vec<Point> = members.iter().map(|&i| mesh.vertices[i]).collect();
        let sph = to_spherical(&pts, center)?;
        let mean_radius = sph.iter().map(|s| s[0]).sum::<f64>() / sph.len() as f64;
        let fit = match params.theta_range {
            Some([lo, hi]) => spherical::fit_spherical_cap(&sph, params.degree, center, lo, hi),
            None => fit_spherical_harmonics(&sph, params.degree, center),
        };
        let fit = match fit {
            Ok(f) => Some(f),
            Err(e @ (Error::Underdetermined { .. } | Error::RankDeficient { .. })) => {
                warnings.push(format!("cluster {cluster}: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        surfaces.push(SurfaceFeature {
            cluster,
            vertex_count: members.len(),
            mean_radius,
            fit,
        });
    }
    surfaces.sort_by(|a, b| b.mean_radius.total_cmp(&a.mean_radius));
    Ok(Features {
        iso,
        eps,
        mesh,
        center: Some(center),
        labels,
        surfaces,
        warnings,
    })
}
