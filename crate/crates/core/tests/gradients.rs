#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::*;

fn assert_below_tolerance(name: &str, err: f64) {
    assert!(err < tolerance(), "{name}: worst relative error {err:e} over {INSTANCES} instances");
}

#[test]
fn conv2d_gradients() {
    assert_below_tolerance("conv2d", conv2d());
}

#[test]
fn deconv2d_gradients() {
    assert_below_tolerance("deconv2d", deconv2d());
}

#[test]
fn batch_norm_gradients() {
    assert_below_tolerance("batch norm", batch_norm());
}

#[test]
fn relu_gradients() {
    assert_below_tolerance("relu", relu());
}

#[test]
fn basic_block_gradients() {
    assert_below_tolerance("basic block", basic_block());
}

#[test]
fn residual3_gradients() {
    assert_below_tolerance("residual3", residual3());
}

#[test]
fn network_gradients() {
    assert_below_tolerance("network", network());
}

#[test]
fn l2_loss_gradient() {
    let err = l2_loss();
    assert!(err < 1e-4, "l2 loss: worst relative error {err:e}");
}
