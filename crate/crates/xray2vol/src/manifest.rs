//! Line-oriented dataset manifest.
//!
//! The first line is a header,
//! `#xray2vol-manifest v1 chi=10 nsteps=128 seed=0 ...`, carrying the full
//! dataset configuration. Every further non-empty line describes one sample:
//! `id=sp000_v000 species=sp000 dir=x,y,z mirror=0 split=train
//! image=images/sp000_v000.ximg volume=volumes/sp000_v000.xvol`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use xray2vol_core::dataset::DatasetConfig;
use xray2vol_core::{Vec3, ViewPose};

use crate::error::{Error, Result};
use crate::formats::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &str = "#xray2vol-manifest";
const VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Validation),
            _ => Err(format!("unknown split `{s}` (expected train or val)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub species: String,
    pub pose: ViewPose,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub image: PathBuf,
    pub volume: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub records: Vec<Record>,
}

/// `sp007` for species 7.
pub fn species_id(species: usize) -> String {
    format!("sp{species:03}")
}

/// Inverse of [`species_id`].
pub fn species_index(id: &str) -> Option<usize> {
    id.strip_prefix("sp")?.parse().ok()
}

pub fn sample_id(species: usize, view: usize) -> String {
    format!("{}_v{view:03}", species_id(species))
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "{MAGIC} {VERSION} chi={} nsteps={} seed={} species={} views={} image={} volume={} phantom={} valfrac={}\n",
            c.chi, c.n_steps, c.seed, c.species, c.views, c.image_size, c.volume_size, c.phantom_size, c.validation_fraction
        );
        for r in &self.records {
            let d = r.pose.direction();
            writeln!(
                s,
                "id={} species={} dir={},{},{} mirror={} split={} image={} volume={}",
                r.id,
                r.species,
                d.x,
                d.y,
                d.z,
                u8::from(r.pose.mirrored()),
                r.split.as_str(),
                r.image.display(),
                r.volume.display()
            )
            .unwrap();
        }
        s
    }

    /// Parses manifest text; `path` is only used for error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Manifest> {
        let err = |line: usize, reason: String| Error::Manifest { path: path.to_owned(), line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
        let mut words = head.split_whitespace();
        if words.next() != Some(MAGIC) {
            return Err(err(1, format!("header must start with `{MAGIC}`")));
        }
        match words.next() {
            Some(VERSION) => {}
            v => return Err(err(1, format!("unsupported manifest version {v:?}"))),
        }
        let fields = pairs(words).map_err(|e| err(1, e))?;
        let config = header_config(&fields).map_err(|e| err(1, e))?;
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        let mut species_split: BTreeMap<String, Split> = BTreeMap::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let words = line.split_whitespace();
            let record = pairs(words).and_then(|f| record(&f)).map_err(|e| err(n, e))?;
            if !ids.insert(record.id.clone()) {
                return Err(err(n, format!("duplicate sample id `{}`", record.id)));
            }
            if let Some(&s) = species_split.get(&record.species) {
                if s != record.split {
                    return Err(err(n, format!("species `{}` appears in both splits", record.species)));
                }
            }
            species_split.insert(record.species.clone(), record.split);
            records.push(record);
        }
        Ok(Manifest { config, records })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

fn pairs<'a>(words: impl Iterator<Item = &'a str>) -> Result<BTreeMap<&'a str, &'a str>, String> {
    let mut out = BTreeMap::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("`{w}` is not key=value"))?;
        if out.insert(k, v).is_some() {
            return Err(format!("key `{k}` repeated"));
        }
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(f: &BTreeMap<&str, &str>, key: &str) -> Result<T, String> {
    let raw = f.get(key).ok_or_else(|| format!("missing `{key}`"))?;
    raw.parse().map_err(|_| format!("bad value `{raw}` for `{key}`"))
}

fn header_config(f: &BTreeMap<&str, &str>) -> Result<DatasetConfig, String> {
    let config = DatasetConfig {
        chi: field(f, "chi")?,
        n_steps: field(f, "nsteps")?,
        seed: field(f, "seed")?,
        species: field(f, "species")?,
        views: field(f, "views")?,
        image_size: field(f, "image")?,
        volume_size: field(f, "volume")?,
        phantom_size: field(f, "phantom")?,
        validation_fraction: field(f, "valfrac")?,
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn record(f: &BTreeMap<&str, &str>) -> Result<Record, String> {
    const KEYS: [&str; 7] = ["id", "species", "dir", "mirror", "split", "image", "volume"];
    if let Some(k) = f.keys().find(|k| !KEYS.contains(k)) {
        return Err(format!("unknown key `{k}`"));
    }
    let dir: String = field(f, "dir")?;
    let c: Vec<f64> = dir.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|_| format!("bad direction `{dir}`"))?;
    let [x, y, z] = c[..] else {
        return Err(format!("direction `{dir}` needs three components"));
    };
    let mirrored = match f.get("mirror") {
        Some(&"0") => false,
        Some(&"1") => true,
        other => return Err(format!("mirror must be 0 or 1, got {other:?}")),
    };
    let pose = ViewPose::from_direction(Vec3::new(x, y, z), mirrored).map_err(|e| e.to_string())?;
    Ok(Record {
        id: field(f, "id")?,
        species: field(f, "species")?,
        pose,
        split: field(f, "split")?,
        image: PathBuf::from(field::<String>(f, "image")?),
        volume: PathBuf::from(field::<String>(f, "volume")?),
    })
}
