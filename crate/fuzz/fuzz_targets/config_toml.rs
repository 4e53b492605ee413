//! Config files: parse, resolve, and re-serialize whatever resolves.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_cli::config::DEFAULT_MAX_ITERS;
use mfg_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_toml_str(text) else {
        return;
    };
    if let Ok(resolved) = cfg.resolve(DEFAULT_MAX_ITERS) {
        let echo = resolved
            .echo
            .to_toml_string()
            .expect("resolved config serializes");
        let back = RunConfig::from_toml_str(&echo).expect("echo parses");
        assert_eq!(back.scenario, resolved.echo.scenario);
        assert_eq!(back.nodes, resolved.echo.nodes);
    }
});
