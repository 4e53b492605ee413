//! Sweep lists and algorithm lists.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_cli::{parse_algorithms, parse_list};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(values) = parse_list(&text) {
        assert!(!values.is_empty());
        assert!(values.iter().all(|v| v.is_finite()));
    }
    let _ = parse_algorithms(&text);
});
