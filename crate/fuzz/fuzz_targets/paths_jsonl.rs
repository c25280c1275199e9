#![no_main]

use libfuzzer_sys::fuzz_target;
use sepwalk_core::io::{parse_paths_jsonl, write_paths_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(paths) = parse_paths_jsonl(text) {
        let mut out = Vec::new();
        write_paths_jsonl(&paths, &mut out).expect("write");
        let back = parse_paths_jsonl(std::str::from_utf8(&out).unwrap()).expect("reparse");
        assert_eq!(back, paths);
    }
});
