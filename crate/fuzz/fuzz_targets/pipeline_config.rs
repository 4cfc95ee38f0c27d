// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML pipeline configuration; anything accepted must survive a write/read cycle.

#![no_main]

use libfuzzer_sys::fuzz_target;
use unlearn_audit_cli::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = PipelineConfig::from_toml_str(text) {
        let written = cfg.materialize().unwrap().to_toml_string().unwrap();
        let back = PipelineConfig::from_toml_str(&written).expect("written config reloads");
        assert_eq!(back.materialize().unwrap(), cfg.materialize().unwrap());
    }
});
