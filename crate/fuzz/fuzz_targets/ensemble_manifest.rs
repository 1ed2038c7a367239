#![no_main]

use libfuzzer_sys::fuzz_target;
use mixres::gibbs::EnsembleManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = EnsembleManifest::from_json(text);
    }
});
