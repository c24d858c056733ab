//! Dataset split JSON decoder: must never panic, and accepted splits must
//! re-serialize.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::dataset::DatasetSplit;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(split) = serde_json::from_str::<DatasetSplit>(text) {
        serde_json::to_string(&split).expect("accepted split must re-serialize");
    }
});
