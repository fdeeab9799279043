#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_core::trainer::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|bytes: &[u8]| {
    let Ok((model, meta)) = decode_checkpoint(bytes) else { return };
    let encoded = encode_checkpoint(&model, &meta).expect("decoded model encodes");
    let (again, again_meta) = decode_checkpoint(&encoded).expect("re-encoded checkpoint decodes");
    assert_eq!(again, model);
    assert_eq!(again_meta, meta);
});
