//! Every op's reverse-mode gradient against central differences on
//! randomized inputs, plus the guided attention loss.

mod common;

use common::TOL;

#[test]
fn every_op_matches_finite_differences() {
    let mut bad = Vec::new();
    for (op, err) in common::op_gradient_errors() {
        println!("{op:<22} {err:.3e}");
        if !(err <= TOL) {
            bad.push((op, err));
        }
    }
    assert!(bad.is_empty(), "over tolerance: {bad:?}");
}

#[test]
fn guided_attention_loss_gradient() {
    let err = common::guided_loss_gradient_error();
    assert!(err <= TOL, "max relative error {err}");
}
