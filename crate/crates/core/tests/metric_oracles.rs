mod common;

#[test]
fn harmonic_mean() {
    let o = common::harmonic_mean_oracle(1);
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn mahalanobis_diagonal() {
    let o = common::mahalanobis_diagonal_oracle(2);
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn mahalanobis_full_covariance() {
    let o = common::mahalanobis_full_oracle(3);
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn diameter_normalization() {
    let o = common::diameter_oracle(4);
    assert!(o.passed, "{}", o.detail);
}

#[test]
fn constraint_score_sign_table() {
    let o = common::constraint_score_oracle(5);
    assert!(o.passed, "{}", o.detail);
}
