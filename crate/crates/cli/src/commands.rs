use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shellforge_core::dataset::{generate_dataset, load_training_data, DatasetSpec, InputKind};
use shellforge_core::degrade::{default_flat_field_sigma, degrade, pseudo_flat_field, DegradeParams};
use shellforge_core::features::{extract_features, ExtractParams, SurfaceFit};
use shellforge_core::io::{io_err, read_json, write_json};
use shellforge_core::nn::train::{preprocess, TrainConfig};
use shellforge_core::nn::{reconstruct, train_from, Checkpoint, Network, NetworkConfig};
use shellforge_core::oracle;
use shellforge_core::projector::project;
use shellforge_core::shell::{voxelize, DEFAULT_SUPERSAMPLE};
use shellforge_core::{BeamGeometry, DensityVolume, Error, GridSpec, MaterialSpec, Radiograph, Result, ShellModel};

use crate::run::{build_report, file_sha256, StageRecord, REPORT_FILE};
use crate::{Command, Common};

pub const RADIOGRAPH: &str = "radiograph";
pub const VOLUME: &str = "volume";
pub const DEGRADED: &str = "degraded";
pub const FLATFIELD: &str = "flatfield";
pub const RECONSTRUCTION: &str = "reconstruction";
pub const CHECKPOINT: &str = "params.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const MESH_FILE: &str = "mesh.obj";
pub const LABELS_FILE: &str = "labels.txt";
pub const FITS_FILE: &str = "fits.json";
pub const FEATURES_FILE: &str = "features.json";

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// `(data, sidecar)` paths of a written `.f32` / `.json` pair.
fn pair(dir: &Path, stem: &str) -> [PathBuf; 2] {
    [dir.join(format!("{stem}.f32")), dir.join(format!("{stem}.json"))]
}

fn write_radiograph(rad: &Radiograph, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    rad.write(&dir.join(stem))?;
    let pgm = dir.join(format!("{stem}.pgm"));
    rad.pixels.write_pgm(&pgm)?;
    let mut files = pair(dir, stem).to_vec();
    files.push(pgm);
    Ok(files)
}

fn write_volume(volume: &DensityVolume, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    volume.write(&dir.join(stem))?;
    Ok(pair(dir, stem).to_vec())
}

pub fn dispatch(command: Command, run: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let record = match command {
        Command::Generate {
            common,
            seed,
            resolution,
            count,
        } => cmd_generate(&common, seed, resolution, count)?,
        Command::Project {
            common,
            volume,
            resolution,
            save_volume,
        } => cmd_project(&common, volume.as_deref(), resolution, save_volume)?,
        Command::Degrade { common, input, seed } => cmd_degrade(&common, &input, seed)?,
        Command::Flatfield { common, input, sigma } => cmd_flatfield(&common, &input, sigma)?,
        Command::Train {
            common,
            data,
            seed,
            epochs,
        } => cmd_train(&common, &data, seed, epochs)?,
        Command::Reconstruct {
            common,
            checkpoint,
            input,
        } => cmd_reconstruct(&common, &checkpoint, &input)?,
        Command::Extract { common, input } => cmd_extract(&common, &input)?,
        Command::Report { common } => {
            let run = run.ok_or_else(|| Error::invalid("report needs --run <dir>"))?;
            return cmd_report(&common, run);
        }
        Command::Selftest => return cmd_selftest(),
    };
    if let Some(run) = run {
        let (stage, config, outputs) = record;
        StageRecord::new(stage, &config, &outputs, start.elapsed().as_secs_f64())?.append(run)?;
    }
    Ok(())
}

type Staged = (&'static str, serde_json::Value, Vec<PathBuf>);

fn to_value(v: &impl Serialize) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::invalid(e.to_string()))
}

fn cmd_generate(common: &Common, seed: Option<u64>, resolution: Option<usize>, count: Option<usize>) -> Result<Staged> {
    let mut spec: DatasetSpec = load_config(common.config.as_deref())?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = resolution {
        spec.grid = GridSpec {
            resolution: r,
            ..spec.grid
        };
    }
    if let Some(c) = count {
        spec.count = c;
    }
    let manifest = generate_dataset(&spec, &common.out)?;
    println!(
        "wrote {} samples to {} ({} nesting rejections)",
        manifest.samples.len(),
        common.out.display(),
        manifest.rejected
    );
    let outputs = manifest.files.iter().map(|f| common.out.join(f)).collect();
    Ok(("generate", to_value(&spec)?, outputs))
}

fn default_project_grid() -> GridSpec {
    GridSpec::new(64, 1.0).expect("valid grid")
}
fn default_supersample() -> usize {
    DEFAULT_SUPERSAMPLE
}
fn default_project_geometry() -> BeamGeometry {
    BeamGeometry::covering(128, 1.0)
}

/// Inputs of `project`. `model` may be omitted when `--volume` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    #[serde(default)]
    pub model: Option<ShellModel>,
    #[serde(default = "default_project_grid")]
    pub grid: GridSpec,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    #[serde(default = "default_project_geometry")]
    pub geometry: BeamGeometry,
    /// Required: there is no meaningful default attenuation.
    #[serde(default)]
    pub material: Option<MaterialSpec>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            model: None,
            grid: default_project_grid(),
            supersample: default_supersample(),
            geometry: default_project_geometry(),
            material: None,
        }
    }
}

fn cmd_project(common: &Common, volume: Option<&Path>, resolution: Option<usize>, save: bool) -> Result<Staged> {
    let mut cfg: ProjectConfig = load_config(common.config.as_deref())?;
    if let Some(r) = resolution {
        cfg.grid.resolution = r;
    }
    let vol = match (volume, &cfg.model) {
        (Some(path), _) => DensityVolume::read(path)?,
        (None, Some(model)) => voxelize(model, &cfg.grid, cfg.supersample)?,
        (None, None) => return Err(Error::invalid("project needs a model in --config or a --volume")),
    };
    let material = cfg
        .material
        .ok_or_else(|| Error::invalid("project config needs material.mass_attenuation"))?;
    create_out(&common.out)?;
    let rad = project(&vol, &cfg.geometry, &material)?;
    let mut outputs = write_radiograph(&rad, &common.out, RADIOGRAPH)?;
    println!("{}  {}", file_sha256(&outputs[0])?, outputs[0].display());
    if save {
        outputs.extend(write_volume(&vol, &common.out, VOLUME)?);
    }
    let mut config = to_value(&cfg)?;
    if let Some(path) = volume {
        config["volume_sha256"] = json!(file_sha256(&shellforge_core::io::sidecar_pair(path).0)?);
    }
    Ok(("project", config, outputs))
}

fn cmd_degrade(common: &Common, input: &Path, seed: Option<u64>) -> Result<Staged> {
    let mut params: DegradeParams = load_config(common.config.as_deref())?;
    if let Some(s) = seed {
        params.seed = s;
    }
    let rad = Radiograph::read(input)?;
    let out = Radiograph::new(degrade(&rad.pixels, &params)?, rad.geometry)?;
    create_out(&common.out)?;
    let outputs = write_radiograph(&out, &common.out, DEGRADED)?;
    Ok(("degrade", to_value(&params)?, outputs))
}

fn cmd_flatfield(common: &Common, input: &Path, sigma: Option<f64>) -> Result<Staged> {
    let rad = Radiograph::read(input)?;
    let sigma = sigma.unwrap_or_else(|| default_flat_field_sigma(&rad.pixels));
    let out = Radiograph::new(pseudo_flat_field(&rad.pixels, sigma)?, rad.geometry)?;
    create_out(&common.out)?;
    let outputs = write_radiograph(&out, &common.out, FLATFIELD)?;
    Ok(("flatfield", json!({ "sigma": sigma }), outputs))
}

/// Contents of the `train` config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Which radiograph of each dataset pair feeds the network.
    #[serde(default)]
    pub input: InputKind,
}

fn cmd_train(common: &Common, data: &Path, seed: Option<u64>, epochs: Option<usize>) -> Result<Staged> {
    let mut settings: TrainSettings = load_config(common.config.as_deref())?;
    if let Some(s) = seed {
        settings.train.seed = s;
    }
    if let Some(e) = epochs {
        settings.train.epochs = e;
    }
    settings.network.validate()?;
    let set = load_training_data(data, &settings.network, settings.input)?;
    create_out(&common.out)?;
    let log_path = common.out.join(TRAIN_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_error = None;
    let network = Network::<f32>::init(settings.network.clone(), settings.train.seed)?;
    let outcome = train_from(network, &settings.train, &set.train, &set.val, |r| {
        let line = json!({
            "epoch": r.epoch,
            "head_losses": r.head_losses,
            "combined": r.combined,
            "val_combined": r.val_combined,
        });
        eprintln!("epoch {:>3}  combined {:.4}  val {:.4}", r.epoch, r.combined, r.val_combined);
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(io_err(&log_path)(e));
    }
    drop(log);
    let ckpt_path = common.out.join(CHECKPOINT);
    Checkpoint {
        network: outcome.network,
        scale: set.scale,
    }
    .write(&ckpt_path)?;
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    let config = json!({ "settings": settings, "dataset_manifest_sha256": file_sha256(&data.join(shellforge_core::dataset::MANIFEST_NAME))? });
    Ok(("train", config, vec![log_path, ckpt_path]))
}

fn cmd_reconstruct(common: &Common, checkpoint: &Path, input: &Path) -> Result<Staged> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let rad = Radiograph::read(input)?;
    let volume = reconstruct(&ckpt.network, &ckpt.scale, &preprocess(&rad.pixels)?)?;
    create_out(&common.out)?;
    let outputs = write_volume(&volume, &common.out, RECONSTRUCTION)?;
    let config = json!({
        "checkpoint_sha256": file_sha256(checkpoint)?,
        "input_sha256": file_sha256(&shellforge_core::io::sidecar_pair(input).0)?,
    });
    Ok(("reconstruct", config, outputs))
}

fn cmd_extract(common: &Common, input: &Path) -> Result<Staged> {
    let params: ExtractParams = load_config(common.config.as_deref())?;
    let volume = DensityVolume::read(input)?;
    let features = extract_features(&volume, &params)?;
    for w in &features.warnings {
        eprintln!("warning: {w}");
    }
    create_out(&common.out)?;
    let dir = &common.out;
    let mesh_path = dir.join(MESH_FILE);
    features.mesh.write_obj(&mesh_path)?;
    let labels_path = dir.join(LABELS_FILE);
    fs::write(&labels_path, features.labels.to_text()).map_err(io_err(&labels_path))?;
    let fits: Vec<&SurfaceFit> = features.fits();
    let fits_path = dir.join(FITS_FILE);
    write_json(&fits_path, &fits)?;
    let summary = json!({
        "iso": features.iso,
        "eps": features.eps,
        "center": features.center,
        "clusters": features.labels.clusters,
        "surfaces": features.surfaces.iter().map(|s| json!({
            "cluster": s.cluster,
            "vertex_count": s.vertex_count,
            "mean_radius": s.mean_radius,
            "fitted": s.fit.is_some(),
        })).collect::<Vec<_>>(),
        "warnings": features.warnings,
    });
    let summary_path = dir.join(FEATURES_FILE);
    write_json(&summary_path, &summary)?;
    println!(
        "{} vertices, {} faces, {} surfaces, {} fits",
        features.mesh.vertices.len(),
        features.mesh.faces.len(),
        features.surfaces.len(),
        fits.len()
    );
    let mut config = to_value(&params)?;
    config["input_sha256"] = json!(file_sha256(&shellforge_core::io::sidecar_pair(input).0)?);
    Ok(("extract", config, vec![mesh_path, labels_path, fits_path, summary_path]))
}

fn cmd_report(common: &Common, run: &Path) -> Result<()> {
    let report = build_report(run)?;
    create_out(&common.out)?;
    let path = common.out.join(REPORT_FILE);
    write_json(&path, &report)?;
    println!("{}  {}", report.report_hash, path.display());
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let checks = oracle::run_all()?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += (!c.passed) as usize;
    }
    if failed > 0 {
        return Err(Error::invalid(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
