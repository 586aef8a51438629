mod common;

use std::time::Instant;

#[test]
fn all_losses_match_central_differences() {
    let start = Instant::now();
    for (name, err, at) in common::gradient_suite(4) {
        assert!(err < 1e-4, "{name}: relative error {err:e} at {at}");
    }
    assert!(start.elapsed().as_secs() < 60);
}
