mod common;

#[test]
fn adaptive_softmax_matches_full_softmax_oracle() {
    let (nll_err, norm_err) = common::adaptive_errors(1000, 17);
    assert!(nll_err < 1e-5, "nll error {nll_err:e}");
    assert!(norm_err < 1e-5, "normalization error {norm_err:e}");
}

#[test]
fn adaptive_layout_has_two_clusters() {
    let m = common::adaptive_model(0);
    assert_eq!(m.config.adaptive.size, 100);
    assert_eq!(m.config.adaptive.n_tails(), 1);
}
