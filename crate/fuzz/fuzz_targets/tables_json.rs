#![no_main]

use libfuzzer_sys::fuzz_target;
use sepwalk_core::io::parse_tables_json;
use sepwalk_core::oracle::CoefficientTables;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_tables_json(text) {
        let b = file.bounds();
        assert_eq!(b.a_lo.len(), b.a_hi.len());
        let _ = file.to_tables::<f64>(&[]).map(|t: CoefficientTables<f64>| t.bounds());
    }
});
