//! `--set key=value` arguments, singly and merged into a config.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_cli::{assemble, parse_override};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok((key, _)) = parse_override(&text) {
        assert!(!key.is_empty());
    }
    let args: Vec<String> = text.split('\n').map(str::to_string).collect();
    let _ = assemble(None, &args);
});
