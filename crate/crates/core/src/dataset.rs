//! Seeded synthetic datasets of (volume, clean radiograph, degraded
//! radiograph) triples, and loading them back as training samples.
//!
//! Sample `i` draws from its own ChaCha8 stream `(seed, i)`, so any sample
//! can be regenerated on its own and generation order does not matter.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade, DegradeParams};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::nn::network::NetworkConfig;
use crate::nn::tensor::{downsample, Tensor};
use crate::nn::train::{image_tensor, preprocess, Sample, VolumeScale};
use crate::projector::{project, BeamGeometry, MaterialSpec, Radiograph};
use crate::shell::{voxelize, ShellLayer, ShellModel, DEFAULT_SUPERSAMPLE, IDENTITY};
use crate::volume::{DensityVolume, GridSpec};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "shellforge-dataset";
pub const MANIFEST_VERSION: u32 = 1;
/// Draws allowed per sample before giving up on the dataset ranges.
pub const MAX_ATTEMPTS: usize = 1000;
/// Largest tolerated fraction of rejected draws.
pub const MAX_REJECTION_RATE: f64 = 0.9;

/// Closed interval for a uniformly sampled parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const ZERO: Range = Range { min: 0.0, max: 0.0 };

    pub fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::invalid(format!("{name}: need finite min <= max, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRanges {
    pub density: Range,
    /// Mean mid-surface radius (the P₀ coefficient), cm.
    pub radius: Range,
    pub thickness: Range,
    /// Coefficients of P₁, P₂, …
    #[serde(default)]
    pub modes: Vec<Range>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: f64,
    pub val: f64,
}

fn zero_range() -> Range {
    Range::ZERO
}
fn zero_ranges3() -> [Range; 3] {
    [Range::ZERO; 3]
}
fn zero_ranges6() -> [Range; 6] {
    [Range::ZERO; 6]
}
fn default_supersample() -> usize {
    DEFAULT_SUPERSAMPLE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    /// Outermost first.
    pub layers: Vec<LayerRanges>,
    #[serde(default = "zero_range")]
    pub joint_size: Range,
    #[serde(default = "zero_range")]
    pub fill_tube_radius: Range,
    #[serde(default = "zero_range")]
    pub fill_tube_density: Range,
    #[serde(default = "zero_ranges3")]
    pub center: [Range; 3],
    /// Off-diagonal shear entries in the order xy, xz, yx, yz, zx, zy.
    #[serde(default = "zero_ranges6")]
    pub shear: [Range; 6],
    pub grid: GridSpec,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    pub geometry: BeamGeometry,
    pub material: MaterialSpec,
    pub degrade: DegradeParams,
    #[serde(default)]
    pub seed: u64,
    pub split: Split,
}

impl Default for DatasetSpec {
    /// 200 training and 40 validation double shells viewed side-on
    /// (perpendicular to the symmetry axis) on 64² detectors.
    fn default() -> Self {
        let grid = GridSpec::new(32, 1.0).expect("valid default grid");
        let mut geometry = BeamGeometry::covering(64, grid.extent);
        geometry.view_axis = [1.0, 0.0, 0.0];
        DatasetSpec {
            count: 240,
            layers: vec![
                LayerRanges {
                    density: Range::new(0.9, 1.1),
                    radius: Range::new(0.6, 0.8),
                    thickness: Range::new(0.15, 0.25),
                    modes: vec![Range::ZERO, Range::new(-0.05, 0.05)],
                },
                LayerRanges {
                    density: Range::new(0.9, 1.1),
                    radius: Range::new(0.3, 0.45),
                    thickness: Range::new(0.12, 0.2),
                    modes: vec![Range::ZERO, Range::new(-0.05, 0.05)],
                },
            ],
            joint_size: Range::new(0.0, 0.08),
            fill_tube_radius: Range::new(0.0, 0.04),
            fill_tube_density: Range::ZERO,
            center: [Range::ZERO; 3],
            shear: [Range::ZERO; 6],
            grid,
            supersample: 4,
            geometry,
            material: MaterialSpec { mass_attenuation: 2.0 },
            degrade: DegradeParams {
                blur_sigma: 0.5,
                photon_scale: 1.0e4,
                gaussian_sigma: 2.0e-3,
                flat_field_coeffs: [1.0, 0.05, -0.03, 0.02, 0.0, 0.01],
                quantization_levels: 4096,
                ..DegradeParams::default()
            },
            seed: 0,
            split: Split {
                train: 200.0 / 240.0,
                val: 40.0 / 240.0,
            },
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count must be >= 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("at least one layer range is required"));
        }
        let s = self.split;
        if !(s.train >= 0.0 && s.val >= 0.0) || ((s.train + s.val) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions must be >= 0 and sum to 1, got {s:?}")));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.density.validate(&format!("layer {i} density"))?;
            l.radius.validate(&format!("layer {i} radius"))?;
            l.thickness.validate(&format!("layer {i} thickness"))?;
            if l.density.min < 0.0 || l.thickness.min <= 0.0 {
                return Err(Error::invalid(format!("layer {i}: density >= 0 and thickness > 0 required")));
            }
            for (n, m) in l.modes.iter().enumerate() {
                m.validate(&format!("layer {i} mode {}", n + 1))?;
            }
        }
        for (name, r) in [
            ("joint_size", self.joint_size),
            ("fill_tube_radius", self.fill_tube_radius),
            ("fill_tube_density", self.fill_tube_density),
        ] {
            r.validate(name)?;
            if r.min < 0.0 {
                return Err(Error::invalid(format!("{name} must be >= 0")));
            }
        }
        for r in self.center.iter().chain(&self.shear) {
            r.validate("center/shear")?;
        }
        if self.supersample == 0 {
            return Err(Error::invalid("supersample must be >= 1"));
        }
        self.grid.validate()?;
        self.geometry.validate()?;
        self.material.validate()?;
        self.degrade.validate()
    }

    pub fn train_count(&self) -> usize {
        ((self.count as f64 * self.split.train).round() as usize).min(self.count)
    }

    /// One draw of every parameter, in a fixed order.
    pub fn draw(&self, rng: &mut impl Rng) -> ShellModel {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let density = l.density.sample(rng);
                let mut coeffs = vec![l.radius.sample(rng)];
                coeffs.extend(l.modes.iter().map(|m| m.sample(rng)));
                ShellLayer {
                    density,
                    coeffs,
                    thickness: l.thickness.sample(rng),
                }
            })
            .collect();
        let joint_size = self.joint_size.sample(rng);
        let fill_tube_radius = self.fill_tube_radius.sample(rng);
        let fill_tube_density = self.fill_tube_density.sample(rng);
        let center = self.center.map(|r| r.sample(rng));
        let off = self.shear.map(|r| r.sample(rng));
        let mut shear = IDENTITY;
        shear[0][1] = off[0];
        shear[0][2] = off[1];
        shear[1][0] = off[2];
        shear[1][2] = off[3];
        shear[2][0] = off[4];
        shear[2][1] = off[5];
        ShellModel {
            layers,
            joint_size,
            fill_tube_radius,
            fill_tube_density,
            center,
            shear,
        }
    }

    /// Whether every sampled parameter of `model` lies in its declared range.
    pub fn admits(&self, model: &ShellModel) -> bool {
        if model.layers.len() != self.layers.len() {
            return false;
        }
        let layers_ok = model.layers.iter().zip(&self.layers).all(|(m, r)| {
            r.density.contains(m.density)
                && r.thickness.contains(m.thickness)
                && m.coeffs.len() == r.modes.len() + 1
                && r.radius.contains(m.coeffs[0])
                && m.coeffs[1..].iter().zip(&r.modes).all(|(c, r)| r.contains(*c))
        });
        let s = model.shear;
        let off = [s[0][1], s[0][2], s[1][0], s[1][2], s[2][0], s[2][1]];
        layers_ok
            && self.joint_size.contains(model.joint_size)
            && self.fill_tube_radius.contains(model.fill_tube_radius)
            && self.fill_tube_density.contains(model.fill_tube_density)
            && self.center.iter().zip(model.center).all(|(r, v)| r.contains(v))
            && self.shear.iter().zip(off).all(|(r, v)| r.contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub subset: Subset,
    pub model: ShellModel,
    /// Draws rejected for violating nesting before this model was accepted.
    pub rejected: usize,
    pub degrade_seed: u64,
    /// Stems of the `.f32` / `.json` pairs, relative to the dataset directory.
    pub volume: String,
    pub clean: String,
    pub degraded: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub spec: DatasetSpec,
    pub rejected: usize,
    pub samples: Vec<ManifestEntry>,
    /// Every file in the directory, including this manifest.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let m: Manifest = read_json(&dir.join(MANIFEST_NAME))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: dir.join(MANIFEST_NAME),
                reason: format!("unsupported manifest {} v{}", m.format, m.version),
            });
        }
        Ok(m)
    }

    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.subset == subset)
    }
}

struct Draw {
    model: ShellModel,
    rejected: usize,
    degrade_seed: u64,
}

fn draw_sample(spec: &DatasetSpec, index: usize) -> Result<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    for attempt in 0..MAX_ATTEMPTS {
        let model = spec.draw(&mut rng);
        match model.validate() {
            Ok(()) => {
                return Ok(Draw {
                    model,
                    rejected: attempt,
                    degrade_seed: rng.random(),
                })
            }
            Err(Error::NotNested { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectionRate {
        rejected: MAX_ATTEMPTS,
        accepted: 0,
    })
}

fn stem(kind: &str, index: usize) -> String {
    format!("{kind}_{index:05}")
}

/// Writes `spec.count` samples and a manifest into `dir`.
pub fn generate_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let draws = (0..spec.count)
        .into_par_iter()
        .map(|i| draw_sample(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let rejected: usize = draws.iter().map(|d| d.rejected).sum();
    let accepted = draws.len();
    if rejected as f64 > MAX_REJECTION_RATE * (rejected + accepted) as f64 {
        return Err(Error::RejectionRate { rejected, accepted });
    }
    if dir.exists() && fs::read_dir(dir).map_err(crate::io::io_err(dir))?.next().is_some() {
        return Err(Error::invalid(format!("dataset directory {} is not empty", dir.display())));
    }
    fs::create_dir_all(dir).map_err(crate::io::io_err(dir))?;
    let n_train = spec.train_count();
    let samples = draws
        .into_par_iter()
        .enumerate()
        .map(|(index, d)| {
            let volume = voxelize(&d.model, &spec.grid, spec.supersample)?;
            let clean = project(&volume, &spec.geometry, &spec.material)?;
            let params = DegradeParams {
                seed: d.degrade_seed,
                ..spec.degrade.clone()
            };
            let noisy = Radiograph::new(degrade(&clean.pixels, &params)?, spec.geometry)?;
            let entry = ManifestEntry {
                index,
                subset: if index < n_train { Subset::Train } else { Subset::Val },
                model: d.model,
                rejected: d.rejected,
                degrade_seed: d.degrade_seed,
                volume: stem("volume", index),
                clean: stem("clean", index),
                degraded: stem("degraded", index),
            };
            volume.write(&dir.join(&entry.volume))?;
            clean.write(&dir.join(&entry.clean))?;
            noisy.write(&dir.join(&entry.degraded))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut files = vec![MANIFEST_NAME.to_string()];
    for e in &samples {
        for s in [&e.volume, &e.clean, &e.degraded] {
            files.push(format!("{s}.f32"));
            files.push(format!("{s}.json"));
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        rejected,
        samples,
        files,
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

/// Files present in `dir` but not in the manifest, and listed but missing.
pub fn manifest_mismatch(dir: &Path, manifest: &Manifest) -> Result<(Vec<String>, Vec<String>)> {
    let mut present = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(crate::io::io_err(dir))? {
        let entry = entry.map_err(crate::io::io_err(dir))?;
        present.insert(entry.file_name().to_string_lossy().into_owned());
    }
    let listed: BTreeSet<String> = manifest.files.iter().cloned().collect();
    Ok((
        present.difference(&listed).cloned().collect(),
        listed.difference(&present).cloned().collect(),
    ))
}

/// Which radiograph of each pair feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Clean,
    #[default]
    Degraded,
}

/// A dataset converted to network samples.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub scale: VolumeScale,
}

/// Occupancy target: density over the model's densest layer, block-averaged
/// to `resolution`.
pub fn occupancy_target(volume: &DensityVolume, max_density: f64, resolution: usize) -> Result<Tensor<f32>> {
    let r = volume.grid.resolution;
    if resolution == 0 || !r.is_multiple_of(resolution) {
        return Err(Error::invalid(format!("cannot bring a {r}³ volume to {resolution}³")));
    }
    let inv = if max_density > 0.0 { 1.0 / max_density } else { 0.0 };
    let t = Tensor::new(
        &[r, r, r],
        volume.values.iter().map(|&v| ((v as f64 * inv).clamp(0.0, 1.0)) as f32).collect(),
    )?;
    downsample(&t, r / resolution)
}

pub fn load_entry(dir: &Path, entry: &ManifestEntry, config: &NetworkConfig, input: InputKind) -> Result<Sample> {
    let stem = match input {
        InputKind::Clean => &entry.clean,
        InputKind::Degraded => &entry.degraded,
    };
    let rad = Radiograph::read(&dir.join(stem))?;
    let n = config.input_size;
    if rad.pixels.rows != n || rad.pixels.cols != n {
        return Err(Error::shape(
            format!("{stem} (network input)"),
            &[n, n],
            &[rad.pixels.rows, rad.pixels.cols],
        ));
    }
    let image = image_tensor(&preprocess(&rad.pixels)?);
    let volume = DensityVolume::read(&dir.join(&entry.volume))?;
    let target = occupancy_target(&volume, entry.model.max_layer_density(), config.max_resolution())?;
    Ok(Sample { image, target })
}

/// Loads every sample; the density scale is the mean peak layer density of
/// the training subset.
pub fn load_training_data(dir: &Path, config: &NetworkConfig, input: InputKind) -> Result<TrainingData> {
    let manifest = Manifest::read(dir)?;
    let load = |subset| {
        manifest
            .subset(subset)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|e| load_entry(dir, e, config, input))
            .collect::<Result<Vec<_>>>()
    };
    let train = load(Subset::Train)?;
    let val = load(Subset::Val)?;
    let densities: Vec<f64> = manifest.subset(Subset::Train).map(|e| e.model.max_layer_density()).collect();
    let density_scale = if densities.is_empty() {
        1.0
    } else {
        densities.iter().sum::<f64>() / densities.len() as f64
    };
    Ok(TrainingData {
        train,
        val,
        scale: VolumeScale {
            density_scale,
            extent: manifest.spec.grid.extent,
            origin: manifest.spec.grid.origin,
        },
    })
}

pub fn entry_paths(dir: &Path, entry: &ManifestEntry) -> Vec<PathBuf> {
    [&entry.volume, &entry.clean, &entry.degraded]
        .iter()
        .flat_map(|s| [dir.join(format!("{s}.f32")), dir.join(format!("{s}.json"))])
        .collect()
}
