#![no_main]
use libfuzzer_sys::fuzz_target;
use vesselflow::io::signal::{parse_signal, BoundarySignal};

fuzz_target!(|data: &str| {
    if let Ok(signal) = parse_signal(data) {
        if let BoundarySignal::Table { points } = &signal {
            let (lo, hi) = points
                .points()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (_, v)| (l.min(*v), h.max(*v)));
            for t in [-1.0, 0.0, 0.5, 1.0, 1e3] {
                let v = signal.eval(t);
                assert!(v >= lo - 1e-9 * lo.abs().max(1.0) && v <= hi + 1e-9 * hi.abs().max(1.0));
            }
        }
    }
});
