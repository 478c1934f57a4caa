//! Spherical coordinates and real spherical-harmonic surface fits.
//!
//! Harmonics are orthonormal on the unit sphere with no Condon-Shortley
//! phase: `Y_n0 ∝ P_n(cos θ)`, `Y_nm ∝ √2 P_n^m cos(mφ)` for `m > 0` and
//! `Y_nm ∝ √2 P_n^|m| sin(|m|φ)` for `m < 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::linalg::least_squares;
use super::mesh::Point;
use crate::error::{Error, Result};

/// `(r, θ, φ)` with θ ∈ [0, π] and φ ∈ [−π, π).
pub type Spherical = [f64; 3];

pub fn to_spherical(points: &[Point], center: Point) -> Result<Vec<Spherical>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let (x, y, z) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
            let rho = x.hypot(y);
            let r = rho.hypot(z);
            if r == 0.0 {
                return Err(Error::PointAtCenter { index });
            }
            let theta = rho.atan2(z);
            let mut phi = y.atan2(x);
            if phi >= PI {
                phi -= 2.0 * PI;
            }
            Ok([r, theta, phi])
        })
        .collect()
}

pub fn from_spherical(s: Spherical, center: Point) -> Point {
    let [r, t, p] = s;
    [
        center[0] + r * t.sin() * p.cos(),
        center[1] + r * t.sin() * p.sin(),
        center[2] + r * t.cos(),
    ]
}

/// Flat index of `(n, m)` in coefficient order `n², …` with m from −n to n.
pub fn sh_index(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

pub fn sh_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Every `Y_nm(θ, φ)` for `n ≤ degree`, in [`sh_index`] order.
pub fn sh_basis(degree: usize, theta: f64, phi: f64) -> Vec<f64> {
    let (x, s) = (theta.cos(), theta.sin());
    let nd = degree + 1;
    // Normalized associated Legendre values p[n][m], m ≤ n.
    let mut p = vec![vec![0.0; nd]; nd];
    p[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..nd {
        p[m][m] = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..degree {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * x * p[m][m];
    }
    for m in 0..nd {
        for n in m + 2..nd {
            let (nf, mf) = (n as f64, m as f64);
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0).powi(2) - mf * mf) / (4.0 * (nf - 1.0).powi(2) - 1.0)).sqrt();
            p[n][m] = a * (x * p[n - 1][m] - b * p[n - 2][m]);
        }
    }
    let mut out = vec![0.0; sh_count(degree)];
    for n in 0..nd {
        out[sh_index(n, 0)] = p[n][0];
        for m in 1..=n {
            let mf = m as f64;
            let scaled = std::f64::consts::SQRT_2 * p[n][m];
            out[sh_index(n, m as i64)] = scaled * (mf * phi).cos();
            out[sh_index(n, -(m as i64))] = scaled * (mf * phi).sin();
        }
    }
    out
}

pub fn real_sph_harm(n: usize, m: i64, theta: f64, phi: f64) -> Result<f64> {
    if m.unsigned_abs() as usize > n {
        return Err(Error::invalid(format!("|m| = {} exceeds n = {n}", m.abs())));
    }
    Ok(sh_basis(n, theta, phi)[sh_index(n, m)])
}

/// Fitted surface `r(θ, φ) ≈ Σ c_nm Y_nm(θ, φ)` about `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SurfaceFitRecord", try_from = "SurfaceFitRecord")]
pub struct SurfaceFit {
    pub center: Point,
    pub degree: usize,
    /// In [`sh_index`] order.
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    pub points: usize,
}

#[derive(Serialize, Deserialize)]
struct SurfaceFitRecord {
    center: Point,
    degree: usize,
    coefficients: Vec<(usize, i64, f64)>,
    residual_rms: f64,
    #[serde(default)]
    points: usize,
}

impl From<SurfaceFit> for SurfaceFitRecord {
    fn from(f: SurfaceFit) -> Self {
        let mut coefficients = Vec::with_capacity(f.coefficients.len());
        for n in 0..=f.degree {
            for m in -(n as i64)..=n as i64 {
                coefficients.push((n, m, f.coefficients[sh_index(n, m)]));
            }
        }
        SurfaceFitRecord {
            center: f.center,
            degree: f.degree,
            coefficients,
            residual_rms: f.residual_rms,
            points: f.points,
        }
    }
}

impl TryFrom<SurfaceFitRecord> for SurfaceFit {
    type Error = String;

    fn try_from(r: SurfaceFitRecord) -> std::result::Result<Self, String> {
        let mut coefficients = vec![f64::NAN; sh_count(r.degree)];
        for (n, m, v) in r.coefficients {
            if n > r.degree || m.unsigned_abs() as usize > n {
                return Err(format!("coefficient ({n}, {m}) outside degree {}", r.degree));
            }
            coefficients[sh_index(n, m)] = v;
        }
        if coefficients.iter().any(|v| v.is_nan()) {
            return Err("missing coefficients".into());
        }
        Ok(SurfaceFit {
            center: r.center,
            degree: r.degree,
            coefficients,
            residual_rms: r.residual_rms,
            points: r.points,
        })
    }
}

impl SurfaceFit {
    pub fn coefficient(&self, n: usize, m: i64) -> f64 {
        self.coefficients[sh_index(n, m)]
    }

    /// Mean radius implied by the monopole term.
    pub fn mean_radius(&self) -> f64 {
        self.coefficients[0] / (4.0 * PI).sqrt()
    }

    pub fn radius(&self, theta: f64, phi: f64) -> f64 {
        sh_basis(self.degree, theta, phi)
            .iter()
            .zip(&self.coefficients)
            .map(|(y, c)| y * c)
            .sum()
    }

    /// Σ_m c_nm² for degree `n`.
    pub fn degree_power(&self, n: usize) -> f64 {
        (-(n as i64)..=n as i64).map(|m| self.coefficient(n, m).powi(2)).sum()
    }
}

/// Minimum number of samples for a fit of the given degree.
pub fn required_points(degree: usize) -> usize {
    2 * sh_count(degree)
}

/// Least-squares fit of `r` over the sampled directions.
pub fn fit_spherical_harmonics(points: &[Spherical], degree: usize, center: Point) -> Result<SurfaceFit> {
    let unknowns = sh_count(degree);
    let required = required_points(degree);
    if points.len() < required {
        return Err(Error::Underdetermined {
            points: points.len(),
            unknowns,
            required,
        });
    }
    let mut a = Vec::with_capacity(points.len() * unknowns);
    for p in points {
        a.extend(sh_basis(degree, p[1], p[2]));
    }
    let b: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let coefficients = least_squares(&a, points.len(), unknowns, &b)?;
    let sse: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let fit: f64 = a[i * unknowns..(i + 1) * unknowns]
                .iter()
                .zip(&coefficients)
                .map(|(y, c)| y * c)
                .sum();
            (p[0] - fit).powi(2)
        })
        .sum();
    Ok(SurfaceFit {
        center,
        degree,
        coefficients,
        residual_rms: (sse / points.len() as f64).sqrt(),
        points: points.len(),
    })
}

/// Like [`fit_spherical_harmonics`] but only using samples with θ in `[theta_min, theta_max]`.
pub fn fit_spherical_cap(
    points: &[Spherical],
    degree: usize,
    center: Point,
    theta_min: f64,
    theta_max: f64,
) -> Result<SurfaceFit> {
    let kept: Vec<Spherical> = points
        .iter()
        .copied()
        .filter(|p| p[1] >= theta_min && p[1] <= theta_max)
        .collect();
    fit_spherical_harmonics(&kept, degree, center)
}

/// Quasi-uniform unit directions (golden-angle spiral).
pub fn fibonacci_directions(count: usize) -> Vec<(f64, f64)> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let phi = (golden * i as f64).rem_euclid(2.0 * PI) - PI;
            (z.acos(), phi)
        })
        .collect()
}
