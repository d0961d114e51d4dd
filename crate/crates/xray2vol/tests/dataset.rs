use std::collections::BTreeSet;
use std::fs;

use xray2vol::core::dataset::{view_aligned_volume, DatasetConfig};
use xray2vol::core::projector::project;
use xray2vol::core::ViewPose;
use xray2vol::dataset::{build_dataset, Dataset};
use xray2vol::manifest::{species_index, Split, MANIFEST_FILE};

fn small(species: usize, views: usize, seed: u64) -> DatasetConfig {
    DatasetConfig { species, views, image_size: 16, volume_size: 8, phantom_size: 16, n_steps: 32, seed, ..DatasetConfig::default() }
}

fn files(dir: &std::path::Path) -> usize {
    walk(dir).len()
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn counts_files_and_split_hygiene() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(dir.path(), &small(10, 4, 1)).unwrap();
    assert_eq!(m.records.len(), 40);
    assert_eq!(files(dir.path()), 81);
    assert_eq!(m.count(Split::Validation), 4);
    let train: BTreeSet<_> = m.split(Split::Train).map(|r| &r.species).collect();
    let val: BTreeSet<_> = m.split(Split::Validation).map(|r| &r.species).collect();
    assert!(train.is_disjoint(&val));
    assert_eq!(val.len(), 1);
    let mirrored = m.records.iter().filter(|r| r.pose.mirrored()).count();
    assert_eq!(mirrored, 20);
    let ds = Dataset::open(dir.path()).unwrap();
    ds.check_files().unwrap();
    assert_eq!(ds.manifest, m);
}

#[test]
fn stored_pairs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(3, 4, 2);
    build_dataset(dir.path(), &cfg).unwrap();
    let ds = Dataset::open(&dir.path().join(MANIFEST_FILE)).unwrap();
    for r in &ds.manifest.records {
        let image = ds.load_image(r).unwrap();
        let volume = ds.load_volume(r).unwrap();
        let again = project(&volume, &ViewPose::identity(), &cfg.projector()).unwrap();
        let err: f64 = again.data().iter().zip(image.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / image.data().len() as f64;
        assert!(err <= 1e-4, "{}: mean abs {err}", r.id);
        // The stored volume is the phantom seen from the recorded pose.
        let phantom = cfg.phantom(species_index(&r.species).unwrap()).unwrap();
        let expected = view_aligned_volume(&phantom, &r.pose, [8; 3]).unwrap();
        assert_eq!(expected, volume);
    }
}

#[test]
fn builds_are_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(a.path(), &small(3, 2, 5)).unwrap();
    build_dataset(b.path(), &small(3, 2, 5)).unwrap();
    build_dataset(c.path(), &small(3, 2, 6)).unwrap();
    let mut same = true;
    for p in walk(a.path()) {
        let rel = p.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
        same &= fs::read(&p).unwrap() == fs::read(c.path().join(rel)).unwrap();
    }
    assert!(!same, "another seed must change the data");
}

#[test]
fn failed_builds_leave_no_files() {
    let dir = tempfile::tempdir().unwrap();
    // A file where the volume directory should be makes every volume write fail.
    fs::write(dir.path().join("volumes"), b"in the way").unwrap();
    assert!(build_dataset(dir.path(), &small(2, 2, 0)).is_err());
    let left: Vec<_> = walk(dir.path());
    assert_eq!(left, vec![dir.path().join("volumes")]);
    assert!(!dir.path().join("images").exists());
}
