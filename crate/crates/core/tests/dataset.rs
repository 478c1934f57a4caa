use std::fs;

use shellforge_core::dataset::{
    entry_paths, generate_dataset, load_training_data, manifest_mismatch, DatasetSpec, InputKind, Manifest, Range,
    Split, Subset,
};
use shellforge_core::nn::NetworkConfig;
use shellforge_core::{BeamGeometry, DensityVolume, GridSpec, Radiograph};

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        count: 6,
        grid: GridSpec::new(16, 1.0).unwrap(),
        geometry: BeamGeometry::covering(16, 1.0),
        supersample: 1,
        joint_size: Range::new(0.0, 0.1),
        shear: std::array::from_fn(|_| Range::new(-0.05, 0.05)),
        seed,
        split: Split { train: 2.0 / 3.0, val: 1.0 / 3.0 },
        ..DatasetSpec::default()
    }
}

#[test]
fn manifest_lists_exactly_the_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(1);
    let manifest = generate_dataset(&spec, dir.path()).unwrap();
    assert_eq!(manifest_mismatch(dir.path(), &manifest).unwrap(), (vec![], vec![]));
    assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);

    fs::write(dir.path().join("stray.txt"), "x").unwrap();
    fs::remove_file(dir.path().join(format!("{}.f32", manifest.samples[0].clean))).unwrap();
    let (extra, missing) = manifest_mismatch(dir.path(), &manifest).unwrap();
    assert_eq!(extra, vec!["stray.txt".to_string()]);
    assert_eq!(missing, vec![format!("{}.f32", manifest.samples[0].clean)]);
}

#[test]
fn samples_are_valid_and_within_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(2);
    let manifest = generate_dataset(&spec, dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 6);
    assert_eq!(manifest.subset(Subset::Train).count(), 4);
    assert_eq!(manifest.subset(Subset::Val).count(), 2);
    for entry in &manifest.samples {
        entry.model.validate().unwrap();
        assert!(spec.admits(&entry.model));
        for p in entry_paths(dir.path(), entry) {
            assert!(p.exists(), "{}", p.display());
        }
        let vol = DensityVolume::read(&dir.path().join(&entry.volume)).unwrap();
        assert_eq!(vol.grid.resolution, 16);
        let clean = Radiograph::read(&dir.path().join(&entry.clean)).unwrap();
        assert!(clean.pixels.data.iter().all(|&t| t > 0.0 && t <= 1.0));
    }
}

#[test]
fn generation_is_reproducible_and_seed_sensitive() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(&small_spec(3), a.path()).unwrap();
    generate_dataset(&small_spec(3), b.path()).unwrap();
    generate_dataset(&small_spec(4), c.path()).unwrap();
    for f in &ma.files {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let first = format!("{}.f32", ma.samples[0].volume);
    assert_ne!(fs::read(a.path().join(&first)).unwrap(), fs::read(c.path().join(&first)).unwrap());
}

#[test]
fn training_data_matches_network_shapes() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small_spec(5), dir.path()).unwrap();
    let config = NetworkConfig {
        input_size: 16,
        decoder_channels: vec![4, 4],
        head_resolutions: vec![8, 16],
        ..NetworkConfig::default()
    };
    let data = load_training_data(dir.path(), &config, InputKind::Degraded).unwrap();
    assert_eq!((data.train.len(), data.val.len()), (4, 2));
    for s in data.train.iter().chain(&data.val) {
        assert_eq!(s.target.data.len(), 16 * 16 * 16);
        assert!(s.target.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn non_empty_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("other.txt"), "x").unwrap();
    assert!(generate_dataset(&small_spec(6), dir.path()).is_err());
}
