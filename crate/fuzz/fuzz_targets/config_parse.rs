#![no_main]

use libfuzzer_sys::fuzz_target;
use mixres::cli::{parse_config, BoundsConfig, TightnessConfig, ToyCommandConfig, TrainCommandConfig};

// First byte selects the format: 'J' for JSON, anything else TOML.
fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let json = tag == b'J';
    if let Ok(c) = parse_config::<BoundsConfig>(text, json) {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<TightnessConfig>(text, json) {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<ToyCommandConfig>(text, json) {
        let _ = c.validate();
    }
    if let Ok(c) = parse_config::<TrainCommandConfig>(text, json) {
        if c.high_fractions.len() + c.low_sides.len() < 4096 && c.experiments.len() < 64 {
            let _ = c.validate();
        }
    }
});
