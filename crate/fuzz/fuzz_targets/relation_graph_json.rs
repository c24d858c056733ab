//! Relation graph JSON decoder: must never panic, and accepted graphs must
//! re-serialize.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::taxonomy::RelationGraph;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(graph) = serde_json::from_str::<RelationGraph>(text) {
        serde_json::to_string(&graph).expect("accepted graph must re-serialize");
    }
});
