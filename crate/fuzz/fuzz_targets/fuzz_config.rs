#![no_main]

use libfuzzer_sys::{fuzz_target, Corpus};
use mavfl::config::ExperimentConfig;

// The experiment config parser is the one surface that consumes untrusted
// text. Parsing must never panic, and anything it accepts must survive
// validation and a serialize/reparse round trip.
fuzz_target!(|data: &[u8]| -> Corpus {
    let Ok(text) = std::str::from_utf8(data) else {
        return Corpus::Reject;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        cfg.validate().expect("accepted config must validate");
        let round_tripped = toml::to_string(&cfg).expect("accepted config must serialize");
        ExperimentConfig::from_toml_str(&round_tripped)
            .expect("serialized config must reparse");
    }
    Corpus::Keep
});
