//! Writing synthetic datasets to disk and loading them back.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use xray2vol_core::dataset::{synthesize_sample, validation_species, DatasetConfig};
use xray2vol_core::net::Sample;
use xray2vol_core::{Volume, XRayImage};

use crate::error::{Error, Result};
use crate::formats::{load_volume, load_xray, save_image, save_volume};
use crate::manifest::{sample_id, species_id, Manifest, Record, Split, MANIFEST_FILE};

/// Generates every species and view of `cfg` into `out_dir` and writes
/// `out_dir/manifest.txt`. On failure every file written so far is removed.
pub fn build_dataset(out_dir: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    cfg.validate()?;
    let written = Mutex::new(Vec::<PathBuf>::new());
    let result = write_dataset(out_dir, cfg, &written);
    if result.is_err() {
        for p in written.into_inner().unwrap_or_else(|e| e.into_inner()) {
            let _ = fs::remove_file(p);
        }
        for sub in ["images", "volumes"] {
            let _ = fs::remove_dir(out_dir.join(sub));
        }
    }
    result
}

fn write_dataset(out_dir: &Path, cfg: &DatasetConfig, written: &Mutex<Vec<PathBuf>>) -> Result<Manifest> {
    let held_out = validation_species(cfg.species, cfg.validation_fraction, cfg.seed);
    let per_species = (0..cfg.species)
        .into_par_iter()
        .map(|s| {
            let phantom = cfg.phantom(s)?;
            let split = if held_out[s] { Split::Validation } else { Split::Train };
            let mut records = Vec::with_capacity(cfg.views);
            for (v, pose) in cfg.poses(s).into_iter().enumerate() {
                let (image, volume) = synthesize_sample(&phantom, &pose, cfg)?;
                let id = sample_id(s, v);
                let record = Record {
                    image: PathBuf::from(format!("images/{id}.ximg")),
                    volume: PathBuf::from(format!("volumes/{id}.xvol")),
                    id,
                    species: species_id(s),
                    pose,
                    split,
                };
                let image_path = out_dir.join(&record.image);
                written.lock().unwrap().push(image_path.clone());
                save_image(&image_path, image.image())?;
                let volume_path = out_dir.join(&record.volume);
                written.lock().unwrap().push(volume_path.clone());
                save_volume(&volume_path, &volume)?;
                records.push(record);
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { config: *cfg, records: per_species.into_iter().flatten().collect() };
    let path = out_dir.join(MANIFEST_FILE);
    written.lock().unwrap().push(path.clone());
    manifest.save(&path)?;
    Ok(manifest)
}

/// A manifest together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    /// Opens a manifest file, or `manifest.txt` inside a directory.
    pub fn open(path: &Path) -> Result<Dataset> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_owned() };
        let manifest = Manifest::load(&file)?;
        let root = file.parent().map(Path::to_owned).unwrap_or_default();
        Ok(Dataset { manifest, root })
    }

    pub fn image_path(&self, r: &Record) -> PathBuf {
        self.root.join(&r.image)
    }

    pub fn volume_path(&self, r: &Record) -> PathBuf {
        self.root.join(&r.volume)
    }

    pub fn load_image(&self, r: &Record) -> Result<XRayImage> {
        load_xray(&self.image_path(r))
    }

    pub fn load_volume(&self, r: &Record) -> Result<Volume> {
        load_volume(&self.volume_path(r))
    }

    /// Records of one split in manifest order.
    pub fn records(&self, split: Split) -> Vec<&Record> {
        self.manifest.split(split).collect()
    }

    /// Loads image/volume pairs of one split in manifest order.
    pub fn samples(&self, split: Split) -> Result<Vec<Sample>> {
        self.records(split)
            .par_iter()
            .map(|r| Ok(Sample { image: self.load_image(r)?, volume: self.load_volume(r)? }))
            .collect()
    }

    /// Every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.manifest.records {
            for p in [self.image_path(r), self.volume_path(r)] {
                if !p.is_file() {
                    return Err(Error::Usage(format!("{} is referenced by the manifest but missing", p.display())));
                }
            }
        }
        Ok(())
    }
}
