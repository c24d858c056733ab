//! Synset membership TSV parser: must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::taxonomy::RelationSourceRecords;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut sources = RelationSourceRecords::new();
    let _ = sources.parse_synsets(text);
});
