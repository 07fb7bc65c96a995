//! Whole-model reverse-mode gradients against central differences on a
//! two-note score, one check per system variant.

mod common;

use npat::network::SystemMode;

#[test]
fn full_model_gradient_check_prop() {
    assert!(common::model_gradient_error(SystemMode::Prop, common::EPS) <= common::TOL);
}

#[test]
fn full_model_gradient_check_variants() {
    for mode in [
        SystemMode::Base,
        SystemMode::NoAtt,
        SystemMode::NoTrans,
        SystemMode::PTrans,
        SystemMode::TTrans,
    ] {
        // The oracle-alignment variant has coordinates with gradients near
        // 1e-7, where a 1e-5 step leaves mostly round-off.
        assert!(common::model_gradient_error(mode, 1e-4) <= common::TOL, "{mode}");
    }
}
