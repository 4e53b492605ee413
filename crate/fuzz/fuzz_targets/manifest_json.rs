//! Manifests fed back through `--config`.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_cli::config::{table_from_manifest, DEFAULT_MAX_ITERS};
use mfg_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(table) = table_from_manifest(&text) {
        if let Ok(cfg) = RunConfig::from_table(table) {
            let _ = cfg.resolve(DEFAULT_MAX_ITERS);
        }
    }
});
