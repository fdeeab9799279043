#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_cli::config::RunConfig;

fuzz_target!(|text: &str| {
    let Ok(cfg) = RunConfig::from_json(text) else { return };
    let _ = cfg.validate();
    let _ = cfg.mask_plan();
    let back = RunConfig::from_json(&cfg.to_json()).expect("rendered config parses");
    assert_eq!(back.digest(), cfg.digest());
});
