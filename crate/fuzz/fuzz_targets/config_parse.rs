#![no_main]

use convsplit_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    // Accepted configs must survive a round trip through TOML.
    if let Ok(cfg) = RunConfig::from_toml(data) {
        let text = toml::to_string(&cfg).expect("valid config serializes");
        let again = RunConfig::from_toml(&text).expect("serialized config parses");
        assert_eq!(cfg.hash(), again.hash());
    }
});
