//! Central finite differences against the reverse pass, op by op.

mod common;

use common::grad;

const TOL: f64 = 1e-4;

fn assert_close(name: &str, rel: f64) {
    assert!(rel < TOL, "{name}: relative gradient error {rel:e}");
}

#[test]
fn elementwise_unary_ops() {
    assert_close("unary", grad::elementwise_unary_ops());
}

#[test]
fn elementwise_binary_ops() {
    assert_close("binary", grad::elementwise_binary_ops());
}

#[test]
fn reductions_and_layout_ops() {
    assert_close("reductions", grad::reductions_and_layout_ops());
}

#[test]
fn linear_maps() {
    assert_close("linear maps", grad::linear_maps());
}

#[test]
fn convolutions() {
    assert_close("convolutions", grad::convolutions());
}

#[test]
fn gaussian_log_density() {
    assert_close("gaussian log density", grad::gaussian_log_density());
}

#[test]
fn composite_chain() {
    assert_close("composite", grad::composite_chain());
}
