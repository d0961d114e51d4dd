//! Central finite-difference checks of every hand-written backward pass,
//! shared by the gradient tests and the acceptance suite.
//!
//! Each check draws a random input, random parameters and a random linear
//! readout `L = sum(r * y)`, perturbs inputs and trainable parameters along a
//! random direction, and compares `L(+) - L(-)` with the analytic gradient
//! dotted into the perturbation that was actually applied.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xray2vol_core::net::*;

pub const INSTANCES: u64 = 5;

const F64: bool = std::mem::size_of::<Scalar>() == 8;

pub fn tolerance() -> f64 {
    if F64 {
        1e-6
    } else {
        1e-3
    }
}

/// Step sizes tried per instance; the best one counts. Large steps suffer
/// from ReLU kinks and curvature, small ones from rounding, and a wrong
/// gradient fails at every step.
fn steps() -> &'static [f64] {
    if F64 {
        &[1e-6, 1e-5]
    } else {
        &[1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5]
    }
}

/// In 32-bit the finite difference along a purely random direction drowns
/// in forward rounding noise, so the direction is half analytic gradient,
/// half random. The 64-bit build checks a purely random direction.
const MIX_GRADIENT: bool = !F64;

fn normalize(x: &mut [Scalar], p: &mut [Vec<Scalar>]) {
    let norm = x.iter().chain(p.iter().flatten()).map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().chain(p.iter_mut().flatten()).for_each(|v| *v = (*v as f64 / norm) as Scalar);
    }
}

trait Layer: Parameters {
    fn fwd(&mut self, x: &Tensor4) -> Tensor4;
    fn bwd(&mut self, dy: &Tensor4) -> Tensor4;
}

macro_rules! layer {
    ($t:ty) => {
        impl Layer for $t {
            fn fwd(&mut self, x: &Tensor4) -> Tensor4 {
                self.forward_train(x).unwrap()
            }
            fn bwd(&mut self, dy: &Tensor4) -> Tensor4 {
                self.backward(dy).unwrap()
            }
        }
    };
}

layer!(Conv2d);
layer!(Deconv2d);
layer!(BatchNorm);
layer!(BasicBlock);
layer!(Residual3);
layer!(Network);

#[derive(Default)]
struct Relu(Option<Tensor4>);

impl Parameters for Relu {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

impl Layer for Relu {
    fn fwd(&mut self, x: &Tensor4) -> Tensor4 {
        let y = layers::relu(x);
        self.0 = Some(y.clone());
        y
    }
    fn bwd(&mut self, dy: &Tensor4) -> Tensor4 {
        layers::relu_backward(self.0.as_ref().unwrap(), dy).unwrap()
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Scalar> {
    (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as Scalar).collect()
}

fn randomize(layer: &mut dyn Layer, rng: &mut ChaCha8Rng) {
    layer.visit_mut("", &mut |name, p| {
        if !p.trainable {
            return;
        }
        let scale = if name.ends_with("scale") { 0.5 } else { 0.4 };
        let offset = if name.ends_with("scale") { 1.0 } else { 0.0 };
        for v in &mut p.value {
            *v = (offset + rng.sample::<f64, _>(StandardNormal) * scale) as Scalar;
        }
    });
}

fn readout(y: &Tensor4, r: &[Scalar]) -> f64 {
    y.data().iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn perturbed(base: &[Scalar], dir: &[Scalar], delta: f64) -> Vec<Scalar> {
    base.iter().zip(dir).map(|(&b, &d)| (b as f64 + delta * d as f64) as Scalar).collect()
}

/// Returns the relative error between the finite difference and the
/// analytic directional derivative.
fn check(layer: &mut dyn Layer, x_dims: [usize; 4], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize(layer, &mut rng);
    let x = Tensor4::new(x_dims, normal(&mut rng, x_dims.iter().product(), 1.0)).unwrap();

    layer.visit_mut("", &mut |_, p| p.zero_grad());
    let y = layer.fwd(&x);
    let r = normal(&mut rng, y.data().len(), 1.0);
    let dx = layer.bwd(&Tensor4::new(y.dims(), r.clone()).unwrap());

    let mut params = Vec::new();
    let mut grads = Vec::new();
    layer.visit("", &mut |_, p| {
        if p.trainable {
            params.push(p.value.clone());
            grads.push(p.grad.clone());
        }
    });
    let mut dir_x = normal(&mut rng, x.data().len(), 1.0);
    let mut dir_p: Vec<Vec<Scalar>> = params.iter().map(|p| normal(&mut rng, p.len(), 1.0)).collect();
    normalize(&mut dir_x, &mut dir_p);
    if MIX_GRADIENT {
        let mut gx = dx.data().to_vec();
        let mut gp = grads.clone();
        normalize(&mut gx, &mut gp);
        dir_x.iter_mut().zip(&gx).for_each(|(d, g)| *d += g);
        dir_p.iter_mut().flatten().zip(gp.iter().flatten()).for_each(|(d, g)| *d += g);
        normalize(&mut dir_x, &mut dir_p);
    }

    let mut eval = |delta: f64| -> (f64, Tensor4, Vec<Vec<Scalar>>) {
        let xs = Tensor4::new(x_dims, perturbed(x.data(), &dir_x, delta)).unwrap();
        let ps: Vec<Vec<Scalar>> = params.iter().zip(&dir_p).map(|(p, d)| perturbed(p, d, delta)).collect();
        let mut i = 0;
        layer.visit_mut("", &mut |_, p| {
            if p.trainable {
                p.value.clone_from(&ps[i]);
                i += 1;
            }
        });
        let loss = readout(&layer.fwd(&xs), &r);
        (loss, xs, ps)
    };
    let mut best = f64::INFINITY;
    for &h in steps() {
        let (lp, xp, pp) = eval(h);
        let (lm, xm, pm) = eval(-h);
        let numeric = lp - lm;
        let mut analytic = dot_delta(dx.data(), xp.data(), xm.data());
        for ((g, a), b) in grads.iter().zip(&pp).zip(&pm) {
            analytic += dot_delta(g, a, b);
        }
        best = best.min((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-300));
    }
    best
}

/// `g . (a - b)` in double precision.
fn dot_delta(g: &[Scalar], a: &[Scalar], b: &[Scalar]) -> f64 {
    g.iter().zip(a.iter().zip(b)).map(|(&g, (&a, &b))| g as f64 * (a as f64 - b as f64)).sum()
}

/// Worst relative error over `INSTANCES` random instances.
fn worst(mut make: impl FnMut(u64) -> (Box<dyn Layer>, [usize; 4])) -> f64 {
    (0..INSTANCES)
        .map(|seed| {
            let (mut layer, dims) = make(seed);
            check(layer.as_mut(), dims, 1000 + seed)
        })
        .fold(0.0, f64::max)
}

pub fn conv2d() -> f64 {
    worst(|seed| {
        let (stride, k) = [(1, 3), (2, 3), (1, 1), (2, 5), (1, 3)][seed as usize];
        (Box::new(Conv2d::new(3, 4, k, stride, k / 2).unwrap()), [2, 3, 7, 6])
    })
}

pub fn deconv2d() -> f64 {
    worst(|seed| (Box::new(Deconv2d::upsampling(3, 2 + seed as usize % 2).unwrap()), [2, 3, 4, 5]))
}

pub fn batch_norm() -> f64 {
    worst(|seed| (Box::new(BatchNorm::new(3)), [2 + seed as usize % 2, 3, 4, 4]))
}

pub fn relu() -> f64 {
    worst(|_| (Box::new(Relu::default()), [2, 3, 5, 5]))
}

pub fn basic_block() -> f64 {
    worst(|seed| {
        let stride = 1 + seed as usize % 2;
        (Box::new(BasicBlock::new(3, 4, 3, stride).unwrap()), [2, 3, 6, 6])
    })
}

pub fn residual3() -> f64 {
    worst(|_| (Box::new(Residual3::new(3).unwrap()), [2, 3, 5, 5]))
}

/// The full network at 16x16 input. Fewer activations mean fewer ReLU
/// kinks within reach of the step, which the 32-bit check cannot resolve;
/// the 64-bit build checks a deeper, wider configuration.
pub fn network() -> f64 {
    let cfg = if F64 {
        NetworkConfig { input_size: 16, min_resolution: 4, base_channels: 8, out_depth: 4, blocks_per_stage: 2 }
    } else {
        NetworkConfig { input_size: 16, min_resolution: 4, base_channels: 4, out_depth: 4, blocks_per_stage: 1 }
    };
    worst(|seed| (Box::new(Network::zeroed(cfg).unwrap()), [2 + seed as usize % 2, 1, 16, 16]))
}

pub fn l2_loss() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [2, 3, 4, 5];
        let n: usize = dims.iter().product();
        let p = Tensor4::new(dims, normal(&mut rng, n, 1.0)).unwrap();
        let t = Tensor4::new(dims, normal(&mut rng, n, 1.0)).unwrap();
        let (_, g) = loss_l2_tensor(&p, &t).unwrap();
        let dir = normal(&mut rng, n, 1.0);
        let plus = Tensor4::new(dims, perturbed(p.data(), &dir, 1e-3)).unwrap();
        let minus = Tensor4::new(dims, perturbed(p.data(), &dir, -1e-3)).unwrap();
        let numeric = loss_l2_tensor(&plus, &t).unwrap().0 - loss_l2_tensor(&minus, &t).unwrap().0;
        let analytic = dot_delta(g.data(), plus.data(), minus.data());
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()));
    }
    worst
}

/// Every checked layer type with its worst relative error.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d()),
        ("deconv2d", deconv2d()),
        ("batch norm", batch_norm()),
        ("relu", relu()),
        ("basic block", basic_block()),
        ("residual3", residual3()),
        ("network", network()),
        ("l2 loss", l2_loss()),
    ]
}

