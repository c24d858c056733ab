//! Checkpoint JSON decoder: must never panic, and accepted checkpoints must
//! survive a serialization round trip bit-exactly.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::trainer::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(checkpoint) = serde_json::from_str::<Checkpoint>(text) {
        let rendered = serde_json::to_string(&checkpoint).expect("re-serialize");
        let reparsed: Checkpoint = serde_json::from_str(&rendered).expect("round trip");
        assert_eq!(
            serde_json::to_string(&reparsed).expect("re-serialize"),
            rendered,
            "round trip changed the checkpoint"
        );
    }
});
