#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_core::tokenizer::{wordpiece, Vocab};

fuzz_target!(|text: &str| {
    let Ok(vocab) = Vocab::parse(text) else { return };
    let back = Vocab::parse(&vocab.to_text()).expect("rendered vocab parses");
    assert_eq!(back.pieces(), vocab.pieces());
    for piece in vocab.pieces() {
        for p in wordpiece(piece, &vocab) {
            assert!(vocab.id(&p).is_some() || p == "[UNK]");
        }
    }
});
