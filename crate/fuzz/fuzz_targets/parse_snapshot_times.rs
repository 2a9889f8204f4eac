#![no_main]
use libfuzzer_sys::fuzz_target;
use vesselflow::io::config::parse_snapshot_times;

fuzz_target!(|data: &str| {
    if let Ok(times) = parse_snapshot_times(data) {
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert!(times.iter().all(|t| t.is_finite() && *t >= 0.0));
    }
});
