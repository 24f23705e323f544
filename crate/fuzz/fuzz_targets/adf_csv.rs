#![no_main]

use libfuzzer_sys::fuzz_target;
use nsatp::adf::{adf_test, read_series_csv, RegressionKind};

fuzz_target!(|data: &[u8]| {
    if let Ok(y) = read_series_csv(data) {
        assert!(y.iter().all(|v| v.is_finite()));
        for kind in [RegressionKind::Constant, RegressionKind::ConstantAndTrend] {
            if let Ok(r) = adf_test(&y, None, kind) {
                assert!(r.nobs <= y.len());
            }
        }
    }
});
