use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray2vol_core::net::*;
use xray2vol_core::{Error, Volume, XRayImage};

fn random(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::new(dims, (0..dims.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn fill(p: &mut Param, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.value.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
}

/// Direct zero-padded cross-correlation, one output at a time.
fn conv_oracle(x: &Tensor4, kernel: &Param, bias: &Param, stride: usize, pad: usize) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let [oc, _, k, _] = [kernel.dims[0], kernel.dims[1], kernel.dims[2], kernel.dims[3]];
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor4::zeros([n, oc, oh, ow]);
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.value[o] as f64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    let xv = x.item(b)[(ci * h + iy as usize) * w + ix as usize] as f64;
                                    acc += xv * kernel.value[((o * c + ci) * k + ky) * k + kx] as f64;
                                }
                            }
                        }
                    }
                    out.item_mut(b)[(o * oh + oy) * ow + ox] = acc as Scalar;
                }
            }
        }
    }
    out
}

fn max_diff(a: &Tensor4, b: &Tensor4) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum()
}

#[test]
fn pointwise_unit_kernel_is_identity() {
    let mut conv = Conv2d::new(1, 1, 1, 1, 0).unwrap();
    conv.kernel.value[0] = 1.0;
    let x = random([2, 1, 5, 4], 1);
    assert_eq!(conv.apply(&x).unwrap(), x);
}

#[test]
fn all_ones_kernel_on_two_by_two() {
    let mut conv = Conv2d::new(1, 1, 3, 1, 1).unwrap();
    conv.kernel.value.iter_mut().for_each(|v| *v = 1.0);
    let x = Tensor4::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = conv.apply(&x).unwrap();
    assert_eq!(y, conv_oracle(&x, &conv.kernel, &conv.bias, 1, 1));
    // Every 3x3 window around a pixel of a 2x2 image covers all of it.
    assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
}

#[test]
fn conv_matches_direct_oracle() {
    for (i, &(k, stride, pad, h, w)) in
        [(3, 1, 1, 7, 5), (3, 2, 1, 8, 8), (5, 2, 2, 9, 6), (1, 2, 0, 6, 7), (3, 1, 0, 5, 5), (4, 2, 1, 8, 6)].iter().enumerate()
    {
        let mut conv = Conv2d::new(3, 2, k, stride, pad).unwrap();
        fill(&mut conv.kernel, i as u64);
        fill(&mut conv.bias, 100 + i as u64);
        let x = random([2, 3, h, w], 200 + i as u64);
        let diff = max_diff(&conv.apply(&x).unwrap(), &conv_oracle(&x, &conv.kernel, &conv.bias, stride, pad));
        assert!(diff < 1e-5, "case {i}: {diff}");
    }
}

#[test]
fn conv_rejects_channel_mismatch_and_bad_stride() {
    let conv = Conv2d::new(3, 2, 3, 1, 1).unwrap();
    assert!(matches!(conv.apply(&random([1, 2, 4, 4], 0)), Err(Error::InvalidInput(_))));
    assert!(Conv2d::new(3, 2, 3, 3, 1).is_err());
    let deconv = Deconv2d::upsampling(3, 2).unwrap();
    assert!(matches!(deconv.apply(&random([1, 2, 4, 4], 0)), Err(Error::InvalidInput(_))));
}

#[test]
fn deconv_is_adjoint_of_conv() {
    for seed in 0..5 {
        // Conv maps 3 channels at 8x8 to 2 channels at 4x4; the deconv with
        // the same kernel tensor maps back.
        let mut conv = Conv2d::new(3, 2, 4, 2, 1).unwrap();
        fill(&mut conv.kernel, seed);
        let mut deconv = Deconv2d::upsampling(2, 3).unwrap();
        deconv.kernel.value.clone_from(&conv.kernel.value);
        let x = random([2, 3, 8, 8], 10 + seed);
        let y = random([2, 2, 4, 4], 20 + seed);
        let lhs = dot(&conv.apply(&x).unwrap(), &y);
        let rhs = dot(&x, &deconv.apply(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-4, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn deconv_stamps_kernel_at_stride_two() {
    let mut deconv = Deconv2d::upsampling(1, 1).unwrap();
    for (i, v) in deconv.kernel.value.iter_mut().enumerate() {
        *v = (i + 1) as Scalar;
    }
    let mut x = Tensor4::zeros([1, 1, 3, 3]);
    x.data_mut()[4] = 1.0; // centre pixel (1, 1)
    let y = deconv.apply(&x).unwrap();
    assert_eq!(y.dims(), [1, 1, 6, 6]);
    // Input (1,1) lands at output origin 2*1 - 1 = 1 with the 4x4 footprint.
    for oy in 0..6 {
        for ox in 0..6 {
            let expected = if (1..5).contains(&oy) && (1..5).contains(&ox) { ((oy - 1) * 4 + (ox - 1) + 1) as Scalar } else { 0.0 };
            assert_eq!(y.data()[oy * 6 + ox], expected, "({oy},{ox})");
        }
    }
}

#[test]
fn deconv_doubles_spatial_dims() {
    let deconv = Deconv2d::upsampling(2, 5).unwrap();
    for (h, w) in [(1, 1), (3, 7), (8, 8)] {
        assert_eq!(deconv.apply(&random([2, 2, h, w], 0)).unwrap().dims(), [2, 5, 2 * h, 2 * w]);
    }
}

#[test]
fn basic_block_maps_zero_to_zero() {
    let mut block = BasicBlock::new(2, 3, 3, 1).unwrap();
    fill(&mut block.conv.kernel, 1);
    fill(&mut block.conv.bias, 2);
    let y = block.forward_train(&Tensor4::zeros([2, 2, 4, 4])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(block.apply(&Tensor4::zeros([0, 2, 4, 4])).is_err());
}

#[test]
fn batch_norm_training_normalizes() {
    let mut bn = BatchNorm::new(3);
    let mut x = random([4, 3, 5, 5], 3);
    x.data_mut().iter_mut().for_each(|v| *v = *v * 3.0 + 2.0);
    let y = bn.forward_train(&x).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|b| y.item(b)[c * 25..(c + 1) * 25].to_vec()).map(|v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
        // Batch variance v normalizes to v / (v + eps).
        assert!((var - 1.0).abs() < 1e-4, "channel {c} variance {var}");
    }
    assert!(bn.forward_train(&Tensor4::zeros([0, 3, 2, 2])).is_err());
}

#[test]
fn running_statistics_follow_momentum() {
    let mut bn = BatchNorm::new(1);
    let x = Tensor4::new([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    bn.forward_train(&x).unwrap();
    assert!((bn.running_mean.value[0] - 0.25).abs() < 1e-6);
    // Unbiased variance 5/3, blended with the initial 1.
    assert!((bn.running_var.value[0] as f64 - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
}

#[test]
fn zeroed_residual_is_exact_identity() {
    let mut res = Residual3::new(3).unwrap();
    for b in &mut res.blocks {
        b.bn.scale.value.iter_mut().for_each(|v| *v = 0.0);
    }
    let x = random([2, 3, 6, 6], 4);
    assert_eq!(res.apply(&x).unwrap(), x);
    assert_eq!(res.forward_train(&x).unwrap(), x);
}

#[test]
fn residual_output_is_branch_plus_input() {
    let mut res = Residual3::new(2).unwrap();
    for (i, b) in res.blocks.iter_mut().enumerate() {
        fill(&mut b.conv.kernel, i as u64);
        fill(&mut b.bn.shift, 10 + i as u64);
    }
    let x = random([1, 2, 5, 5], 9);
    let out = res.apply(&x).unwrap();
    let branch = res.branch(&x).unwrap();
    let diff = out.data().iter().zip(branch.data()).zip(x.data()).map(|((o, b), x)| (o - x - b).abs()).fold(0.0, Scalar::max);
    assert!(diff < 1e-6);
    assert!(res.apply(&random([1, 3, 5, 5], 0)).is_err());
}

#[test]
fn output_shapes() {
    let desk = NetworkConfig::desk();
    assert_eq!(desk.output_dims(), [32, 32, 32]);
    let net = Network::new(desk, 1).unwrap();
    let out = net.infer(&random([2, 1, 64, 64], 1)).unwrap();
    assert_eq!(out.dims(), [2, 32, 32, 32]);
    let canonical = NetworkConfig::canonical();
    assert_eq!(canonical.output_dims(), [128, 128, 128]);
    let net = Network::new(canonical, 1).unwrap();
    let img = XRayImage::new(256, 256, vec![0.25; 256 * 256]).unwrap();
    assert_eq!(net.predict(&img).unwrap().dims(), [128, 128, 128]);
}

#[test]
fn config_validation() {
    let bad = |f: fn(&mut NetworkConfig)| {
        let mut c = NetworkConfig::desk();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.input_size = 48));
    assert!(bad(|c| c.min_resolution = 6));
    assert!(bad(|c| c.min_resolution = 64));
    assert!(bad(|c| c.out_depth = 0));
    assert!(NetworkConfig::desk().validate().is_ok());
}

#[test]
fn wrong_input_size_is_rejected() {
    let net = Network::new(NetworkConfig::desk(), 0).unwrap();
    assert!(net.predict(&XRayImage::new(32, 32, vec![0.0; 1024]).unwrap()).is_err());
}

#[test]
fn inference_is_bitwise_deterministic() {
    let net = Network::new(NetworkConfig::desk(), 7).unwrap();
    let img = XRayImage::new(64, 64, (0..4096).map(|i| (i % 17) as f32 / 20.0).collect()).unwrap();
    let a = net.predict(&img).unwrap();
    let b = net.predict(&img).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn l2_loss_closed_forms() {
    let a = Volume::from_fn([3, 4, 5], |x, y, z| 0.05 * (x + y + z) as f64).unwrap();
    assert_eq!(loss_l2(&a, &a).unwrap(), 0.0);
    let b = Volume::from_fn([3, 4, 5], |x, y, z| 0.05 * (x + y + z) as f64 + 0.1).unwrap();
    assert!((loss_l2(&a, &b).unwrap() - 0.01).abs() < 1e-7);
    assert!(loss_l2(&a, &Volume::zeros([3, 4, 4]).unwrap()).is_err());
}

#[test]
fn weights_round_trip_through_the_network() {
    let cfg = NetworkConfig { input_size: 16, min_resolution: 4, base_channels: 8, out_depth: 4, blocks_per_stage: 2 };
    let net = Network::new(cfg, 3).unwrap();
    let w = net.to_weights();
    let back = Network::from_weights(cfg, &w).unwrap();
    #[cfg(not(feature = "f64"))]
    assert_eq!(back, net);
    assert!(back.to_weights().bitwise_eq(&w));
    assert!(w.get("stem.0.conv.kernel").is_some());
    assert!(w.get("head.out.bias").is_some());
    assert!(w.get("enc2.res.2.bn.running_var").is_some());
}

#[test]
fn topology_mismatch_names_first_offending_tensor() {
    let desk = NetworkConfig::desk();
    let w = Network::new(desk, 0).unwrap().to_weights();
    let narrow = NetworkConfig { base_channels: 16, ..desk };
    match Network::from_weights(narrow, &w) {
        Err(Error::Topology { layer, .. }) => assert_eq!(layer, "enc1.down.conv.kernel"),
        other => panic!("expected a topology error, got {other:?}"),
    }
    let mut missing = w.clone();
    missing.tensors.retain(|t| t.name != "dec1.fuse.bn.scale");
    match Network::from_weights(desk, &missing) {
        Err(Error::Topology { layer, reason }) => {
            assert_eq!(layer, "dec1.fuse.bn.scale");
            assert!(reason.contains("missing"));
        }
        other => panic!("expected a topology error, got {other:?}"),
    }
    let mut extra = w.clone();
    extra.tensors.push(NamedTensor { name: "bonus".into(), dims: vec![1], data: vec![0.0] });
    assert!(matches!(Network::from_weights(desk, &extra), Err(Error::Topology { layer, .. }) if layer == "bonus"));
}

fn toy_samples(n: usize, cfg: &NetworkConfig, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = cfg.output_dims();
    (0..n)
        .map(|_| {
            let level: f64 = rng.random_range(0.1..0.6);
            Sample {
                image: XRayImage::new(cfg.input_size, cfg.input_size, (0..cfg.input_size * cfg.input_size).map(|i| (level * (1.0 + (i % 5) as f64 * 0.1)) as f32).collect()).unwrap(),
                volume: Volume::from_fn([nx, ny, nz], |x, _, z| level * ((x + z) % 3) as f64 / 2.0).unwrap(),
            }
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_returns_best_validation_weights() {
    let cfg = NetworkConfig { input_size: 16, min_resolution: 4, base_channels: 8, out_depth: 4, blocks_per_stage: 1 };
    let train_set = toy_samples(6, &cfg, 1);
    let val_set = toy_samples(2, &cfg, 2);
    let tc = TrainConfig { epochs: 4, batch_size: 4, seed: 5, ..TrainConfig::default() };
    let run = || {
        let mut net = Network::new(cfg, 11).unwrap();
        let mut seen = Vec::new();
        let out = train(&mut net, &train_set, &val_set, &tc, &mut |s| seen.push(*s)).unwrap();
        (out, seen)
    };
    let (a, seen) = run();
    let (b, _) = run();
    assert_eq!(a.history, b.history);
    assert_eq!(seen, a.history);
    assert!(a.weights.bitwise_eq(&b.weights));
    let best = a.history.iter().map(|s| s.val_loss.unwrap()).fold(a.initial_val_loss.unwrap(), f64::min);
    let restored = Network::from_weights(cfg, &a.weights).unwrap();
    let loss = evaluate_loss(&restored, &val_set, 4).unwrap();
    assert!((loss - best).abs() <= 1e-6 * best.max(1.0), "{loss} vs {best}");
}

#[test]
fn training_rejects_empty_sets_and_divergence() {
    let cfg = NetworkConfig { input_size: 16, min_resolution: 8, base_channels: 4, out_depth: 2, blocks_per_stage: 1 };
    let mut net = Network::new(cfg, 0).unwrap();
    assert!(train(&mut net, &[], &[], &TrainConfig::default(), &mut |_| {}).is_err());
    let samples = toy_samples(2, &cfg, 0);
    let tc = TrainConfig { epochs: 3, batch_size: 2, adam: AdamConfig { learning_rate: 1e30, ..AdamConfig::default() }, seed: 0 };
    match train(&mut net, &samples, &[], &tc, &mut |_| {}) {
        Err(Error::Diverged(_)) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}
