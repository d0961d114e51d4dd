use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{join, BasicBlock, Conv2d, Deconv2d, Param, Parameters, Residual3};
use super::tensor::{concat_channels, split_channels, Tensor4};
use super::Scalar;
use crate::error::{invalid, mismatch, Result};
use crate::image::XRayImage;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub min_resolution: usize,
    pub base_channels: usize,
    pub out_depth: usize,
    /// Basic blocks in the full-resolution stem.
    pub blocks_per_stage: usize,
}

/// Channels of the full-resolution stem; they double per halving up to the
/// base channel cap.
pub const STEM_CHANNELS: usize = 16;

impl NetworkConfig {
    /// 256x256 x-ray to a 128^3 volume.
    pub fn canonical() -> Self {
        Self { input_size: 256, min_resolution: 8, base_channels: 256, out_depth: 128, blocks_per_stage: 3 }
    }

    /// 64x64 x-ray to a 32^3 volume.
    pub fn desk() -> Self {
        Self { input_size: 64, min_resolution: 8, base_channels: 32, out_depth: 32, blocks_per_stage: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |v: usize| v.is_power_of_two();
        if !pow2(self.input_size) || !pow2(self.min_resolution) || self.input_size <= self.min_resolution {
            return Err(invalid!(
                "input size {} and min resolution {} must be powers of two with input > min",
                self.input_size,
                self.min_resolution
            ));
        }
        if self.base_channels == 0 || self.out_depth == 0 || self.blocks_per_stage == 0 {
            return Err(invalid!("channel counts and blocks per stage must be positive"));
        }
        Ok(())
    }

    /// Number of stride-2 encoder stages.
    pub fn levels(&self) -> usize {
        (self.input_size / self.min_resolution).trailing_zeros() as usize
    }

    /// Feature channels at `input_size >> level`.
    pub fn channels_at(&self, level: usize) -> usize {
        (STEM_CHANNELS << level.min(24)).min(self.base_channels)
    }

    /// `(nx, ny, nz)` of the predicted volume.
    pub fn output_dims(&self) -> [usize; 3] {
        [self.input_size / 2, self.input_size / 2, self.out_depth]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, no caches.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
struct Down {
    conv: BasicBlock,
    res: Residual3,
}

#[derive(Debug, Clone, PartialEq)]
struct Up {
    deconv: Deconv2d,
    fuse: BasicBlock,
    res: Residual3,
}

/// Encoder-decoder mapping a one-channel image to `out_depth` channels at
/// half the input resolution; output channel `z` at pixel `(x, y)` is voxel
/// `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    cfg: NetworkConfig,
    stem: Vec<BasicBlock>,
    down: Vec<Down>,
    up: Vec<Up>,
    head: Residual3,
    out: Conv2d,
    /// Channel counts of the upsampled halves of each decoder concat.
    up_split: Vec<usize>,
}

impl Network {
    /// Fresh network with He-initialized kernels.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.stem.iter_mut().for_each(|b| b.init(&mut rng));
        for d in &mut net.down {
            d.conv.init(&mut rng);
            d.res.init(&mut rng);
        }
        for u in &mut net.up {
            u.deconv.init(&mut rng);
            u.fuse.init(&mut rng);
            u.res.init(&mut rng);
        }
        net.head.init(&mut rng);
        net.out.init(&mut rng);
        Ok(net)
    }

    /// Topology with all kernels and biases zero.
    pub fn zeroed(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let ch = |l| cfg.channels_at(l);
        let mut stem = Vec::with_capacity(cfg.blocks_per_stage);
        for i in 0..cfg.blocks_per_stage {
            stem.push(BasicBlock::new(if i == 0 { 1 } else { ch(0) }, ch(0), 3, 1)?);
        }
        let levels = cfg.levels();
        let mut down = Vec::with_capacity(levels);
        for l in 1..=levels {
            down.push(Down { conv: BasicBlock::new(ch(l - 1), ch(l), 3, 2)?, res: Residual3::new(ch(l))? });
        }
        let mut up = Vec::new();
        let mut up_split = Vec::new();
        for l in (2..=levels).rev() {
            let c = ch(l - 1);
            up.push(Up {
                deconv: Deconv2d::upsampling(ch(l), c)?,
                fuse: BasicBlock::new(2 * c, c, 1, 1)?,
                res: Residual3::new(c)?,
            });
            up_split.push(c);
        }
        Ok(Self {
            cfg,
            stem,
            down,
            up,
            head: Residual3::new(ch(1))?,
            out: Conv2d::new(ch(1), cfg.out_depth, 1, 1, 0)?,
            up_split,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let s = self.cfg.input_size;
        if x.channels() != 1 || x.height() != s || x.width() != s || x.batch() == 0 {
            return Err(invalid!("network expects a non-empty batch of 1x{s}x{s} images, got {:?}", x.dims()));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Infer => self.infer(x),
        }
    }

    /// Inference with running statistics; leaves the network untouched.
    pub fn infer(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &self.stem {
            h = b.apply(&h)?;
        }
        let mut skips = Vec::with_capacity(self.down.len());
        for d in &self.down {
            h = d.res.apply(&d.conv.apply(&h)?)?;
            skips.push(h.clone());
        }
        for (j, u) in self.up.iter().enumerate() {
            let skip = &skips[skips.len() - 2 - j];
            h = u.res.apply(&u.fuse.apply(&concat_channels(&u.deconv.apply(&h)?, skip)?)?)?;
        }
        self.out.apply(&self.head.apply(&h)?)
    }

    /// Training-mode forward pass that caches activations for [`backward`].
    ///
    /// [`backward`]: Network::backward
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in &mut self.stem {
            h = b.forward_train(&h)?;
        }
        let mut skips = Vec::with_capacity(self.down.len());
        for d in &mut self.down {
            h = d.conv.forward_train(&h)?;
            h = d.res.forward_train(&h)?;
            skips.push(h.clone());
        }
        let n = skips.len();
        for (j, u) in self.up.iter_mut().enumerate() {
            let up = u.deconv.forward_train(&h)?;
            h = u.fuse.forward_train(&concat_channels(&up, &skips[n - 2 - j])?)?;
            h = u.res.forward_train(&h)?;
        }
        h = self.head.forward_train(&h)?;
        self.out.forward_train(&h)
    }

    /// Accumulates parameter gradients from the output gradient; returns the
    /// input gradient.
    pub fn backward(&mut self, dy: &Tensor4) -> Result<Tensor4> {
        let mut g = self.out.backward(dy)?;
        g = self.head.backward(&g)?;
        let n = self.down.len();
        let mut dskip: Vec<Option<Tensor4>> = (0..n).map(|_| None).collect();
        for (j, u) in self.up.iter_mut().enumerate().rev() {
            g = u.res.backward(&g)?;
            g = u.fuse.backward(&g)?;
            let (dup, ds) = split_channels(&g, self.up_split[j])?;
            accumulate(&mut dskip[n - 2 - j], ds)?;
            g = u.deconv.backward(&dup)?;
        }
        accumulate(&mut dskip[n - 1], g)?;
        let mut carry: Option<Tensor4> = None;
        for i in (0..n).rev() {
            if let Some(c) = carry.take() {
                accumulate(&mut dskip[i], c)?;
            }
            let d = &mut self.down[i];
            let gi = dskip[i].take().ok_or_else(|| invalid!("missing encoder gradient"))?;
            let gi = d.res.backward(&gi)?;
            carry = Some(d.conv.backward(&gi)?);
        }
        let mut g = carry.ok_or_else(|| invalid!("network has no encoder stages"))?;
        for b in self.stem.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(g)
    }

    /// Predicted volume for one image, clamped to `[0,1]`.
    pub fn predict(&self, image: &XRayImage) -> Result<Volume> {
        let out = self.infer(&image_batch(core::slice::from_ref(image), self.cfg.input_size)?)?;
        Volume::from_clamped(self.cfg.output_dims(), out.data().iter().map(|&v| v as f64))
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) -> Result<()> {
    match slot {
        Some(t) => t.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl Parameters for Network {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, b) in self.stem.iter().enumerate() {
            b.visit(&join(prefix, &format!("stem.{i}")), f);
        }
        for (i, d) in self.down.iter().enumerate() {
            d.conv.visit(&join(prefix, &format!("enc{}.down", i + 1)), f);
            d.res.visit(&join(prefix, &format!("enc{}.res", i + 1)), f);
        }
        for (j, u) in self.up.iter().enumerate() {
            let level = self.down.len() - 1 - j;
            u.deconv.visit(&join(prefix, &format!("dec{level}.up")), f);
            u.fuse.visit(&join(prefix, &format!("dec{level}.fuse")), f);
            u.res.visit(&join(prefix, &format!("dec{level}.res")), f);
        }
        self.head.visit(&join(prefix, "head.res"), f);
        self.out.visit(&join(prefix, "head.out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, b) in self.stem.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("stem.{i}")), f);
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            d.conv.visit_mut(&join(prefix, &format!("enc{}.down", i + 1)), f);
            d.res.visit_mut(&join(prefix, &format!("enc{}.res", i + 1)), f);
        }
        let n = self.down.len();
        for (j, u) in self.up.iter_mut().enumerate() {
            let level = n - 1 - j;
            u.deconv.visit_mut(&join(prefix, &format!("dec{level}.up")), f);
            u.fuse.visit_mut(&join(prefix, &format!("dec{level}.fuse")), f);
            u.res.visit_mut(&join(prefix, &format!("dec{level}.res")), f);
        }
        self.head.visit_mut(&join(prefix, "head.res"), f);
        self.out.visit_mut(&join(prefix, "head.out"), f);
    }
}

/// Stacks images into a `(n, 1, s, s)` batch.
pub fn image_batch(images: &[XRayImage], size: usize) -> Result<Tensor4> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.dims() != (size, size) {
            return Err(mismatch!("network input must be {size}x{size}, got {:?}", img.dims()));
        }
        data.extend(img.data().iter().map(|&v| v as Scalar));
    }
    Tensor4::new([images.len(), 1, size, size], data)
}

/// Stacks volumes into a `(n, nz, ny, nx)` batch; the voxel layout already
/// matches channel-major order.
pub fn volume_batch(volumes: &[Volume], dims: [usize; 3]) -> Result<Tensor4> {
    let mut data = Vec::with_capacity(volumes.len() * dims.iter().product::<usize>());
    for v in volumes {
        if v.dims() != dims {
            return Err(mismatch!("target volume must be {dims:?}, got {:?}", v.dims()));
        }
        data.extend(v.data().iter().map(|&x| x as Scalar));
    }
    Tensor4::new([volumes.len(), dims[2], dims[1], dims[0]], data)
}
