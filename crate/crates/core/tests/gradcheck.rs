mod common;

use common::{gradcheck, gradcheck_losses};

#[test]
fn analytic_gradients_match_finite_differences() {
    for (i, spec) in gradcheck_losses().iter().enumerate() {
        let out = gradcheck(spec, 60, 1000 + i as u64);
        assert_eq!(out.failures, 0, "{spec}: {out:?}");
    }
}
