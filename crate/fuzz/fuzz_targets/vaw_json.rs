//! VAW annotation JSON parser: must never panic against a small vocabulary.

#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use scone::dataset::parse_vaw;
use scone::taxonomy::AttributeVocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = AttributeVocabulary::parse("red\tcolor\nwet\tother\nlarge\tsize\n").unwrap();
    let _ = parse_vaw(text, Path::new("images"), &vocab);
});
