//! Vocabulary TSV parser: must never panic, and accepted inputs must survive
//! a format round trip unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::taxonomy::AttributeVocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(vocab) = AttributeVocabulary::parse(text) {
        let rendered = vocab.to_file_format();
        let reparsed = AttributeVocabulary::parse(&rendered).expect("round trip must parse");
        assert_eq!(vocab, reparsed, "round trip changed the vocabulary");
    }
});
