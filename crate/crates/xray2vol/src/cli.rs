//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use xray2vol_core::dataset::{DatasetConfig, VALIDATION_FRACTION};
use xray2vol_core::fusion::{ErrorMode, FusionConfig, FusionPolicy};
use xray2vol_core::render::{render_cutaway, render_iso, render_stereo, ClipBox, RenderConfig};
use xray2vol_core::{ProjectorConfig, Vec3, ViewPose};

use crate::dataset::{build_dataset, Dataset};
use crate::error::{Error, Result};
use crate::formats::{export_png16, export_png8, export_rgb_png, load_volume, load_weights, load_xray, save_image, save_volume, save_weights};
use crate::manifest::Split;
use crate::pipeline::{
    ablate_depth, ablation_text, baseline_index, evaluate_dir, infer_volume, load_network, report_text, resynthesize,
    train_dataset, write_report, TrainOptions, ABLATION_DEPTH, EVAL_RENDER_SIZE,
};

#[derive(Debug, Parser)]
#[command(name = "xray2vol", version, about = "Single-image x-ray tomography pipeline")]
pub struct Cli {
    /// Seed for every random choice of the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    GenDataset(GenDataset),
    /// Train the network on a dataset's train split.
    Train(Train),
    /// Predict a volume from an x-ray, fused with the x-ray by default.
    Infer(Infer),
    /// Nearest-neighbor or oracle retrieval from the train split.
    Baseline(Baseline),
    /// Score predicted volumes against the validation ground truth.
    Eval(Eval),
    /// DSSIM of ground truth band-limited to fewer depth slices.
    AblateDepth(AblateDepth),
    /// Render an iso-surface, cut-away or anaglyph stereo image.
    Render(Render),
    /// Re-synthesize an x-ray from a volume.
    Resynth(Resynth),
}

#[derive(Debug, Args)]
pub struct GenDataset {
    #[arg(long, default_value_t = 40)]
    pub species: usize,
    #[arg(long, default_value_t = 50)]
    pub views: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub img_size: usize,
    #[arg(long, default_value_t = 32)]
    pub vol_size: usize,
    #[arg(long, default_value_t = 64)]
    pub phantom_size: usize,
    #[arg(long, default_value_t = 10.0)]
    pub chi: f64,
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
    #[arg(long, default_value_t = VALIDATION_FRACTION)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 8)]
    pub min_resolution: usize,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    /// Loss log CSV; defaults to the weights path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Keep the epoch with the lowest validation loss instead of the last.
    #[arg(long)]
    pub keep_best: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Proportional,
    Uniform,
    FirstSlice,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ErrorModeArg {
    Exact,
    Literal,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    #[arg(long, value_enum, default_value_t = PolicyArg::Proportional)]
    pub fusion_policy: PolicyArg,
    #[arg(long, default_value_t = 2.0)]
    pub fusion_beta: f64,
    #[arg(long, value_enum, default_value_t = ErrorModeArg::Exact)]
    pub fusion_error_mode: ErrorModeArg,
    /// Extinction coefficient assumed by fusion.
    #[arg(long, default_value_t = 10.0)]
    pub chi: f64,
}

impl FusionArgs {
    fn config(&self) -> FusionConfig {
        FusionConfig {
            beta: self.fusion_beta,
            policy: match self.fusion_policy {
                PolicyArg::Proportional => FusionPolicy::Proportional,
                PolicyArg::Uniform => FusionPolicy::Uniform,
                PolicyArg::FirstSlice => FusionPolicy::FirstSlice,
            },
            error_mode: match self.fusion_error_mode {
                ErrorModeArg::Exact => ErrorMode::Exact,
                ErrorModeArg::Literal => ErrorMode::Literal,
            },
            chi: self.chi,
            ..FusionConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct Infer {
    #[arg(long)]
    pub weights: PathBuf,
    /// Single x-ray to reconstruct; requires `--out`.
    #[arg(long, requires = "out", conflicts_with = "manifest")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Reconstruct every validation x-ray of a dataset into `--out-dir`.
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Network input resolution the weights were trained for.
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long)]
    pub no_fusion: bool,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nn,
    Oracle,
}

#[derive(Debug, Args)]
pub struct Baseline {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub manifest: PathBuf,
    /// An x-ray (nn) or ground-truth volume (oracle); requires `--out`.
    #[arg(long, requires = "out")]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Answer every validation sample into this directory instead.
    #[arg(long, conflicts_with = "query")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<sample id>.xvol` predictions.
    #[arg(long)]
    pub method_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = EVAL_RENDER_SIZE)]
    pub render_size: usize,
}

#[derive(Debug, Args)]
pub struct AblateDepth {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub levels: Vec<usize>,
    /// Slices of the regenerated ground truth.
    #[arg(long, default_value_t = ABLATION_DEPTH)]
    pub depth: usize,
    #[arg(long, default_value_t = EVAL_RENDER_SIZE)]
    pub render_size: usize,
    /// CSV output; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Render {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// View direction `x,y,z` with z >= 0; the volume's own +z by default.
    #[arg(long, value_parser = parse_vec3)]
    pub view: Option<Vec3>,
    #[arg(long)]
    pub mirror: bool,
    #[arg(long, default_value_t = 0.1)]
    pub iso: f64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub ao_samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub ao_radius: f64,
    #[arg(long, default_value_t = 32.0)]
    pub specular_exponent: f64,
    /// Clip box `x0,y0,z0,x1,y1,z1` in view coordinates to cut away.
    #[arg(long, value_parser = parse_box)]
    pub cutaway: Option<ClipBox>,
    /// Red-cyan anaglyph instead of a gray image.
    #[arg(long)]
    pub stereo: bool,
    #[arg(long, default_value_t = 4.0)]
    pub eye_separation: f64,
    /// Write a 16-bit instead of an 8-bit PNG (gray images only).
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Debug, Args)]
pub struct Resynth {
    #[arg(long)]
    pub volume: PathBuf,
    /// View direction `x,y,z` with z >= 0; the volume's own +z by default.
    #[arg(long, value_parser = parse_vec3)]
    pub pose: Option<Vec3>,
    #[arg(long)]
    pub mirror: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Display-encode the opacities with this gamma.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub chi: f64,
    #[arg(long, default_value_t = 128)]
    pub steps: usize,
    /// Output width and height; the volume's x and y size by default.
    #[arg(long)]
    pub size: Option<usize>,
    /// Also export a 16-bit PNG next to the image.
    #[arg(long)]
    pub png: bool,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| format!("expected {N} comma-separated numbers"))
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let [x, y, z] = parse_floats::<3>(s)?;
    Ok(Vec3::new(x, y, z))
}

fn parse_box(s: &str) -> Result<ClipBox, String> {
    let [x0, y0, z0, x1, y1, z1] = parse_floats::<6>(s)?;
    ClipBox::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1)).map_err(|e| e.to_string())
}

fn pose(direction: Option<Vec3>, mirror: bool) -> Result<ViewPose> {
    match direction {
        None if !mirror => Ok(ViewPose::identity()),
        d => {
            let d = d.unwrap_or(Vec3::Z);
            let d = d.normalized().ok_or_else(|| Error::Usage(format!("view direction {d:?} has zero length")))?;
            Ok(ViewPose::from_direction(d, mirror)?)
        }
    }
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenDataset(a) => {
            let cfg = DatasetConfig {
                species: a.species,
                views: a.views,
                image_size: a.img_size,
                volume_size: a.vol_size,
                phantom_size: a.phantom_size,
                chi: a.chi,
                n_steps: a.steps,
                seed,
                validation_fraction: a.val_fraction,
            };
            let m = build_dataset(&a.out, &cfg)?;
            eprintln!(
                "wrote {} samples ({} train, {} val) to {}",
                m.records.len(),
                m.count(Split::Train),
                m.count(Split::Validation),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let ds = Dataset::open(&a.manifest)?;
            let opts = TrainOptions {
                epochs: a.epochs,
                batch_size: a.batch,
                learning_rate: a.lr,
                seed,
                base_channels: a.base_channels,
                min_resolution: a.min_resolution,
                blocks_per_stage: a.blocks,
                keep_best: a.keep_best,
            };
            let log = a.log.clone().unwrap_or_else(|| with_extension(&a.out, "csv"));
            let trained = train_dataset(&ds, &opts, Some(&log), &mut |s, secs| {
                let val = s.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                eprintln!("epoch {:>3}  train {:.6}  val {val}  {secs:.1}s", s.epoch, s.train_loss);
            })?;
            save_weights(&a.out, &trained.weights)?;
        }
        Command::Infer(a) => {
            let net = load_network(&load_weights(&a.weights)?, a.input_size)?;
            let fusion = (!a.no_fusion).then(|| a.fusion.config());
            match (&a.image, &a.out, &a.manifest, &a.out_dir) {
                (Some(image), Some(out), None, _) => {
                    save_volume(out, &infer_volume(&net, &load_xray(image)?, fusion.as_ref())?)?;
                }
                (None, _, Some(manifest), Some(dir)) => {
                    let ds = Dataset::open(manifest)?;
                    for r in ds.records(Split::Validation) {
                        let v = infer_volume(&net, &ds.load_image(r)?, fusion.as_ref())?;
                        save_volume(&dir.join(format!("{}.xvol", r.id)), &v)?;
                    }
                }
                _ => return Err(Error::Usage("infer needs --image with --out, or --manifest with --out-dir".into())),
            }
        }
        Command::Baseline(a) => {
            let ds = Dataset::open(&a.manifest)?;
            let index = baseline_index(&ds)?;
            let answer = |query: &Path| -> Result<_> {
                let hit = match a.method {
                    Method::Nn => index.nearest_neighbor(&load_xray(query)?)?.volume.clone(),
                    Method::Oracle => index.oracle(&load_volume(query)?)?.volume.clone(),
                };
                Ok(hit)
            };
            match (&a.query, &a.out, &a.out_dir) {
                (Some(q), Some(out), None) => save_volume(out, &answer(q)?)?,
                (None, _, Some(dir)) => {
                    for r in ds.records(Split::Validation) {
                        let q = match a.method {
                            Method::Nn => ds.image_path(r),
                            Method::Oracle => ds.volume_path(r),
                        };
                        save_volume(&dir.join(format!("{}.xvol", r.id)), &answer(&q)?)?;
                    }
                }
                _ => return Err(Error::Usage("baseline needs --query with --out, or --out-dir".into())),
            }
        }
        Command::Eval(a) => {
            let ds = Dataset::open(&a.manifest)?;
            let report = evaluate_dir(&ds, &a.method_dir, a.render_size)?;
            if !report.missing.is_empty() {
                eprintln!("warning: {} validation samples have no output", report.missing.len());
            }
            write_report(&a.out, &report)?;
            print!("{}", report_text(&report));
        }
        Command::AblateDepth(a) => {
            let ds = Dataset::open(&a.manifest)?;
            let text = ablation_text(&ablate_depth(&ds, &a.levels, a.depth, a.render_size)?);
            match &a.out {
                Some(p) => crate::formats::write_atomic(p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::Render(a) => {
            let v = load_volume(&a.volume)?;
            let cfg = RenderConfig {
                iso_value: a.iso,
                pose: pose(a.view, a.mirror)?,
                width: a.width,
                height: a.height,
                ao_samples: a.ao_samples,
                ao_radius: a.ao_radius,
                specular_exponent: a.specular_exponent,
                clip_box: a.cutaway,
                eye_separation_deg: a.eye_separation,
                ..RenderConfig::default()
            };
            if a.stereo {
                export_rgb_png(&a.out, &render_stereo(&v, &cfg)?)?;
            } else {
                let r = if cfg.clip_box.is_some() { render_cutaway(&v, &cfg)? } else { render_iso(&v, &cfg)? };
                if a.sixteen_bit {
                    export_png16(&a.out, &r.image)?;
                } else {
                    export_png8(&a.out, &r.image)?;
                }
            }
        }
        Command::Resynth(a) => {
            let v = load_volume(&a.volume)?;
            let [nx, ny, _] = v.dims();
            let (w, h) = a.size.map_or((nx, ny), |s| (s, s));
            let cfg = ProjectorConfig { chi: a.chi, n_steps: a.steps, width: w, height: h };
            let img = resynthesize(&v, &pose(a.pose, a.mirror)?, &cfg, a.gamma)?;
            save_image(&a.out, &img)?;
            if a.png {
                export_png16(&with_extension(&a.out, "png"), &img)?;
            }
        }
    }
    Ok(())
}
