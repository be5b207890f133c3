mod common;

use common::oracle::{adjoint_gap, conv_vs_oracle};
use demnet::ops::{ConvSpec, Padding};

#[test]
fn conv_matches_loop_oracle_on_200_instances() {
    let worst = conv_vs_oracle(200, 1);
    assert!(worst < 1e-12, "worst relative deviation {worst:e}");
}

#[test]
fn tconv_is_the_adjoint_of_conv() {
    let worst = adjoint_gap(200, 2);
    assert!(worst < 1e-10, "worst adjoint gap {worst:e}");
}

#[test]
fn stride_four_tconv_reaches_full_resolution() {
    let spec = ConvSpec::new(3, 32, 32, Padding::Valid).with_stride(4).with_output_padding(1);
    assert_eq!(spec.tconv_output_dims(35, 35).unwrap(), (140, 140));
    assert_eq!(ConvSpec::new(3, 32, 32, Padding::Valid).with_stride(4).tconv_output_dims(35, 35).unwrap(), (139, 139));
}
