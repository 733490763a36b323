mod common;

use common::gradcheck::{gradient_check, FD_REL_TOL};

#[test]
fn gradients_match_central_differences() {
    for seed in 100..104 {
        let (worst, coords) = gradient_check(seed);
        assert!(coords > 0);
        assert!(
            worst < FD_REL_TOL,
            "seed {seed}: worst rel err {worst:e} over {coords} coords"
        );
    }
}
