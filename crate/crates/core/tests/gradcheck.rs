use std::time::Instant;

use otoar_testkit::grad::{layer_suite, tiny_model};

#[test]
fn layer_gradients_match_central_differences() {
    for check in layer_suite(11) {
        let tol = if check.name == "msle_loss" { 1e-6 } else { 1e-4 };
        assert!(check.max_rel < tol, "{}: max rel err {:.3e} over {} entries", check.name, check.max_rel, check.checked);
    }
}

#[test]
fn tiny_model_gradients_match_central_differences() {
    let start = Instant::now();
    let check = tiny_model(5, 1e-5);
    assert!(check.checked > 1000);
    assert!(check.max_rel < 1e-4, "max rel err {:.3e}", check.max_rel);
    assert!(start.elapsed().as_secs() < 120);
}
