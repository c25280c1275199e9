//! The checked-in fuzz seeds must stay valid inputs.

use std::fs;
use std::path::PathBuf;

use sepwalk_core::config::{parse_config, Format};
use sepwalk_core::io::{parse_paths_jsonl, parse_tables_json};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_parse() {
    for (p, text) in seeds("config_toml") {
        parse_config(&text, Format::Toml).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, text) in seeds("config_json") {
        parse_config(&text, Format::Json).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn path_and_table_seeds_parse() {
    for (p, text) in seeds("paths_jsonl") {
        assert!(!parse_paths_jsonl(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display())).is_empty());
    }
    for (p, text) in seeds("tables_json") {
        parse_tables_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
