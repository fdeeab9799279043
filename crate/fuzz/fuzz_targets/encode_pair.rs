#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_core::tokenizer::{encode_pair, word_tokenize};

fuzz_target!(|data: &[u8]| {
    let Some((&max_len, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let (a, b) = text.split_once('\n').unwrap_or(("", text));
    let words = |t: &str| -> Vec<String> { word_tokenize(t).into_iter().map(|(w, _)| w).collect() };
    let vocab = wsc_core::synth::vocab().expect("built-in vocab");
    let max_len = max_len as usize;
    let Ok(enc) = encode_pair(&words(a), &words(b), &vocab, max_len) else { return };
    assert!(enc.len() <= max_len);
    assert_eq!(enc.len(), enc.segment_ids.len());
    assert_eq!(enc.len(), enc.alignment.len());
});
