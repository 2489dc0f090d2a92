//! Finite-difference verification of every tape operation: 50 seeded random
//! instances per op, each differentiable input slot checked against central
//! differences with relative tolerance 1e-4 and absolute floor 1e-7.

mod common;

use common::{assert_all_pass, INSTANCES};

#[test]
fn add_matches_finite_differences() {
    assert_all_pass(&common::check_add(INSTANCES));
}

#[test]
fn sub_matches_finite_differences() {
    assert_all_pass(&common::check_sub(INSTANCES));
}

#[test]
fn mul_matches_finite_differences() {
    assert_all_pass(&common::check_mul(INSTANCES));
}

#[test]
fn scalar_mul_matches_finite_differences() {
    assert_all_pass(&common::check_scalar_mul(INSTANCES));
}

#[test]
fn matmul_matches_finite_differences_in_both_layouts() {
    assert_all_pass(&common::check_matmul(INSTANCES));
}

#[test]
fn conv2d_matches_finite_differences_for_input_and_kernel() {
    assert_all_pass(&common::check_conv2d(INSTANCES));
}

#[test]
fn bias_add_matches_finite_differences_in_both_layouts() {
    assert_all_pass(&common::check_bias_add(INSTANCES));
}

#[test]
fn maxpool2_matches_finite_differences_away_from_ties() {
    assert_all_pass(&common::check_maxpool2(INSTANCES));
}

#[test]
fn relu_matches_finite_differences_away_from_the_kink() {
    assert_all_pass(&common::check_relu(INSTANCES));
}

#[test]
fn flatten_matches_finite_differences() {
    assert_all_pass(&common::check_flatten(INSTANCES));
}

#[test]
fn reshape_matches_finite_differences() {
    assert_all_pass(&common::check_reshape(INSTANCES));
}

#[test]
fn mean_matches_finite_differences() {
    assert_all_pass(&common::check_mean(INSTANCES));
}

#[test]
fn sum_matches_finite_differences() {
    assert_all_pass(&common::check_sum(INSTANCES));
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    assert_all_pass(&common::check_softmax_cross_entropy(INSTANCES));
}

#[test]
fn l1_matches_finite_differences_away_from_equality() {
    assert_all_pass(&common::check_l1(INSTANCES));
}
