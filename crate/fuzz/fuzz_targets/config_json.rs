#![no_main]

use libfuzzer_sys::fuzz_target;
use sepwalk_core::config::{parse_config, render_config, Format};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text, Format::Json) {
        let rendered = render_config(&cfg, Format::Json).expect("valid config renders");
        let back = parse_config(&rendered, Format::Json).expect("rendered config parses");
        assert_eq!(back.env, cfg.env);
    }
});
