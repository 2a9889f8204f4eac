#![no_main]
use libfuzzer_sys::fuzz_target;
use vesselflow::io::config::parse_config;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = parse_config(data) {
        let again = parse_config(&cfg.to_json()).expect("normalized config reparses");
        assert_eq!(cfg.network, again.network);
    }
});
