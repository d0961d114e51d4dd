//! The batch pipeline behind the command line: training, inference,
//! baselines, evaluation, the slice-count ablation and re-synthesis.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use xray2vol_core::baselines::{BaselineIndex, IndexEntry};
use xray2vol_core::dataset::{view_aligned_volume, DatasetConfig};
use xray2vol_core::fusion::{fuse_volume, FusionConfig};
use xray2vol_core::metrics::{classify_view, evaluation_render_config, rendered_dssim, summarize, volume_l2, Report, SampleScore, Summary};
use xray2vol_core::net::{train, AdamConfig, EpochStats, Network, NetworkConfig, NetworkWeights, TrainConfig, TrainOutcome};
use xray2vol_core::projector::{gamma_encode, project};
use xray2vol_core::render::{render_iso, RenderConfig};
use xray2vol_core::volume::{depth_resample_roundtrip, resample_gaussian};
use xray2vol_core::{Image, ProjectorConfig, ViewPose, Volume, XRayImage};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formats::{load_volume, write_atomic};
use crate::manifest::{species_index, Record, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub base_channels: usize,
    pub min_resolution: usize,
    pub blocks_per_stage: usize,
    /// Return the weights of the epoch with the lowest validation loss
    /// instead of the final ones.
    pub keep_best: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let desk = NetworkConfig::desk();
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
            base_channels: desk.base_channels,
            min_resolution: desk.min_resolution,
            blocks_per_stage: desk.blocks_per_stage,
            keep_best: false,
        }
    }
}

/// The network shape implied by a dataset: input at image resolution,
/// output depth equal to the stored volume depth.
pub fn network_config(data: &DatasetConfig, opts: &TrainOptions) -> Result<NetworkConfig> {
    let cfg = NetworkConfig {
        input_size: data.image_size,
        min_resolution: opts.min_resolution,
        base_channels: opts.base_channels,
        out_depth: data.volume_size,
        blocks_per_stage: opts.blocks_per_stage,
    };
    cfg.validate()?;
    if cfg.output_dims() != [data.volume_size; 3] {
        return Err(Error::Usage(format!(
            "network output {:?} does not match the stored {}^3 volumes; the image must be twice the volume size",
            cfg.output_dims(),
            data.volume_size
        )));
    }
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub config: NetworkConfig,
    pub weights: NetworkWeights,
    pub outcome: TrainOutcome,
}

/// Trains on the train split, validating on the held-out species after
/// every epoch. When `log` is given, a CSV with columns
/// `epoch,train_loss,val_loss,seconds` is written (row 0 is the untrained
/// network's validation loss).
pub fn train_dataset(
    ds: &Dataset,
    opts: &TrainOptions,
    log: Option<&Path>,
    progress: &mut dyn FnMut(&EpochStats, f64),
) -> Result<Trained> {
    let config = network_config(&ds.manifest.config, opts)?;
    let train_set = ds.samples(Split::Train)?;
    let val_set = ds.samples(Split::Validation)?;
    let mut net = Network::new(config, opts.seed)?;
    let cfg = TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        adam: AdamConfig { learning_rate: opts.learning_rate, ..AdamConfig::default() },
        seed: opts.seed,
    };
    let mut rows = Vec::new();
    let start = Instant::now();
    let outcome = train(&mut net, &train_set, &val_set, &cfg, &mut |s| {
        let secs = start.elapsed().as_secs_f64();
        let val = s.val_loss.map(|v| v.to_string()).unwrap_or_default();
        rows.push(format!("{},{},{},{:.3}", s.epoch, s.train_loss, val, secs));
        progress(s, secs);
    })?;
    if let Some(path) = log {
        let first = outcome.initial_val_loss.map(|v| v.to_string()).unwrap_or_default();
        let mut csv = format!("epoch,train_loss,val_loss,seconds\n0,,{first},0\n");
        for row in rows {
            csv += &row;
            csv.push('\n');
        }
        write_atomic(path, csv.as_bytes())?;
    }
    let weights = if opts.keep_best { outcome.weights.clone() } else { net.to_weights() };
    Ok(Trained { config, weights, outcome })
}

/// Recovers the topology of `weights` for a network fed `input_size`
/// images. Only the input size is not recorded by the tensors themselves.
pub fn config_from_weights(weights: &NetworkWeights, input_size: usize) -> Result<NetworkConfig> {
    let bad = |why: &str| Error::Usage(format!("weights do not describe a network: {why}"));
    let mut stem = BTreeSet::new();
    let mut levels = BTreeSet::new();
    let mut base = 0;
    for t in &weights.tensors {
        let mut parts = t.name.split('.');
        match (parts.next(), parts.next()) {
            (Some("stem"), Some(i)) => {
                stem.insert(i.parse::<usize>().map_err(|_| bad("bad stem index"))?);
            }
            (Some(enc), Some(_)) if enc.starts_with("enc") => {
                levels.insert(enc[3..].parse::<usize>().map_err(|_| bad("bad encoder level"))?);
            }
            _ => {}
        }
        if t.dims.len() == 4 && t.name != "head.out.kernel" {
            base = base.max(t.dims[0]);
        }
    }
    let out = weights.get("head.out.kernel").ok_or_else(|| bad("no head.out.kernel"))?;
    let depth = *out.dims.first().ok_or_else(|| bad("head.out.kernel has rank 0"))?;
    if levels.is_empty() || levels.len() > 30 {
        return Err(bad("no encoder levels"));
    }
    let cfg = NetworkConfig {
        input_size,
        min_resolution: input_size >> levels.len(),
        base_channels: base,
        out_depth: depth,
        blocks_per_stage: stem.len(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_network(weights: &NetworkWeights, input_size: usize) -> Result<Network> {
    Ok(Network::from_weights(config_from_weights(weights, input_size)?, weights)?)
}

/// Predicts the coarse volume of `image` (resampled to the network input)
/// and, unless `fusion` is `None`, fuses it with the full-resolution image.
pub fn infer_volume(net: &Network, image: &XRayImage, fusion: Option<&FusionConfig>) -> Result<Volume> {
    let n = net.config().input_size;
    let input = if image.dims() == (n, n) { image.clone() } else { image.resample(n, n)? };
    let coarse = net.predict(&input)?;
    match fusion {
        None => Ok(coarse),
        Some(cfg) => Ok(fuse_volume(&coarse, image, cfg)?.volume),
    }
}

/// Nearest-neighbor and oracle index over the train split.
pub fn baseline_index(ds: &Dataset) -> Result<BaselineIndex> {
    let entries = ds
        .records(Split::Train)
        .par_iter()
        .map(|r| Ok(IndexEntry { id: r.id.clone(), image: ds.load_image(r)?, volume: ds.load_volume(r)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineIndex::new(entries)?)
}

/// Square size of the canonical evaluation renders.
pub const EVAL_RENDER_SIZE: usize = 64;

/// Scores one prediction. Predictions at another resolution (such as fused
/// volumes) are Gaussian-resampled onto the ground-truth grid first.
pub fn score(record: &Record, prediction: &Volume, truth: &Volume, render: &RenderConfig) -> Result<SampleScore> {
    let prediction = if prediction.dims() == truth.dims() {
        prediction.clone()
    } else {
        resample_gaussian(prediction, truth.dims())?
    };
    Ok(SampleScore {
        id: record.id.clone(),
        species: record.species.clone(),
        bucket: classify_view(&record.pose),
        l2: volume_l2(&prediction, truth)?,
        dssim: rendered_dssim(&prediction, truth, render)?,
    })
}

/// Scores every validation sample with `predict`; samples for which it
/// returns `None` are listed as missing.
pub fn evaluate_with(
    ds: &Dataset,
    render_size: usize,
    predict: &(dyn Fn(&Record) -> Result<Option<Volume>> + Sync),
) -> Result<Report> {
    let render = evaluation_render_config(render_size, render_size);
    let results = ds
        .records(Split::Validation)
        .par_iter()
        .map(|r| match predict(r)? {
            None => Ok(Err(r.id.clone())),
            Some(p) => Ok(Ok(score(r, &p, &ds.load_volume(r)?, &render)?)),
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut samples, mut missing) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(id) => missing.push(id),
        }
    }
    Ok(Report::new(samples, missing))
}

/// Evaluates predictions stored as `<method_dir>/<sample id>.xvol`.
pub fn evaluate_dir(ds: &Dataset, method_dir: &Path, render_size: usize) -> Result<Report> {
    evaluate_with(ds, render_size, &|r| {
        let path = method_dir.join(format!("{}.xvol", r.id));
        if path.is_file() {
            load_volume(&path).map(Some)
        } else {
            Ok(None)
        }
    })
}

fn summary_line(name: &str, s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!(
            "{name:<6} mean {:.6}  std {:.6}  95% CI [{:.6}, {:.6}]  n {}\n",
            s.mean, s.std_dev, s.ci95.0, s.ci95.1, s.n
        ),
        None => format!("{name:<6} no samples\n"),
    }
}

pub fn report_text(report: &Report) -> String {
    let mut s = String::new();
    s += &summary_line("L2", &report.l2);
    s += &summary_line("DSSIM", &report.dssim);
    if !report.missing.is_empty() {
        writeln!(s, "missing {} outputs: {}", report.missing.len(), report.missing.join(" ")).unwrap();
    }
    s += "\nview    count  l2        dssim\n";
    for b in &report.buckets {
        writeln!(s, "{:<7} {:>5}  {:.6}  {:.6}", b.bucket.name(), b.count, b.l2, b.dssim).unwrap();
    }
    for (name, (hi, counts)) in [("L2", &report.l2_histogram), ("DSSIM", &report.dssim_histogram)] {
        writeln!(s, "\n{name} histogram over [0, {hi:.6}]").unwrap();
        let width = hi / counts.len() as f64;
        for (i, c) in counts.iter().enumerate() {
            writeln!(s, "[{:.6}, {:.6}) {c}", i as f64 * width, (i + 1) as f64 * width).unwrap();
        }
    }
    s
}

pub fn report_csv(report: &Report) -> String {
    let mut s = String::from("sample_id,species,view_bucket,l2,dssim\n");
    for r in &report.samples {
        writeln!(s, "{},{},{},{},{}", r.id, r.species, r.bucket.name(), r.l2, r.dssim).unwrap();
    }
    s
}

/// Writes `report.txt` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    write_atomic(&dir.join("report.txt"), report_text(report).as_bytes())?;
    write_atomic(&dir.join("report.csv"), report_csv(report).as_bytes())
}

/// Depth of the regenerated ground truth in the slice-count ablation.
pub const ABLATION_DEPTH: usize = 128;

/// Mean DSSIM per reduced slice count.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub slices: usize,
    pub dssim: Summary,
}

/// Slice-count ablation on the validation set: each ground-truth volume is
/// regenerated from its phantom at `depth` slices, band-limited to every
/// level and compared with the original by DSSIM of iso renderings.
pub fn ablate_depth(ds: &Dataset, levels: &[usize], depth: usize, render_size: usize) -> Result<Vec<AblationRow>> {
    if let Some(&l) = levels.iter().find(|&&l| l == 0 || l > depth) {
        return Err(Error::Usage(format!("slice level {l} must be in 1..={depth}")));
    }
    let cfg = &ds.manifest.config;
    let render = evaluation_render_config(render_size, render_size);
    let records = ds.records(Split::Validation);
    let species: BTreeSet<&str> = records.iter().map(|r| r.species.as_str()).collect();
    let phantoms = species
        .into_par_iter()
        .map(|s| {
            let i = species_index(s).ok_or_else(|| Error::Usage(format!("species id `{s}` is not of the form spNNN")))?;
            Ok((s, cfg.phantom(i)?))
        })
        .collect::<Result<std::collections::BTreeMap<_, _>>>()?;
    let per_sample = records
        .par_iter()
        .map(|r| {
            let truth = view_aligned_volume(&phantoms[r.species.as_str()], &r.pose, [cfg.volume_size, cfg.volume_size, depth])?;
            let reference = render_iso(&truth, &render)?.image;
            levels
                .iter()
                .map(|&l| {
                    let reduced = depth_resample_roundtrip(&truth, l)?;
                    Ok(xray2vol_core::metrics::dssim(&render_iso(&reduced, &render)?.image, &reference)?)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    levels
        .iter()
        .enumerate()
        .map(|(i, &slices)| {
            let values: Vec<f64> = per_sample.iter().map(|v| v[i]).collect();
            let dssim = summarize(&values).ok_or_else(|| Error::Usage("no validation samples".into()))?;
            Ok(AblationRow { slices, dssim })
        })
        .collect()
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut s = String::from("slices,mean_dssim,std_dssim,ci95_lo,ci95_hi,n\n");
    for r in rows {
        let d = &r.dssim;
        writeln!(s, "{},{},{},{},{},{}", r.slices, d.mean, d.std_dev, d.ci95.0, d.ci95.1, d.n).unwrap();
    }
    s
}

/// Re-synthesizes an x-ray from a density volume, optionally display
/// encoded with `gamma`.
pub fn resynthesize(v: &Volume, pose: &ViewPose, cfg: &ProjectorConfig, gamma: Option<f64>) -> Result<Image> {
    let img = project(v, pose, cfg)?.into_image();
    Ok(match gamma {
        Some(g) => gamma_encode(&img, g)?,
        None => img,
    })
}
