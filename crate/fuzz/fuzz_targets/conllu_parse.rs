#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_core::depmask::{build_word_mask, parse_conllu, to_conllu};

fuzz_target!(|text: &str| {
    let Ok(parses) = parse_conllu(text) else { return };
    for p in &parses {
        p.validate().expect("accepted parses are trees");
        let d = build_word_mask(p);
        assert!(d.is_symmetric() && d.has_unit_diagonal());
        let back = parse_conllu(&to_conllu(p)).expect("rendered parse reads back");
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].heads, p.heads);
        assert_eq!(back[0].words, p.words);
    }
});
