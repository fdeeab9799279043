#![no_main]

use libfuzzer_sys::fuzz_target;
use wsc_core::schema::{generate_candidates, parse_schemas, to_jsonl};

fuzz_target!(|text: &str| {
    let Ok(schemas) = parse_schemas(text) else { return };
    let back = parse_schemas(&to_jsonl(&schemas).expect("schemas serialize")).expect("rendered corpus parses");
    assert_eq!(back, schemas);
    for s in &schemas {
        let pair = generate_candidates(s);
        assert_eq!(pair.0[0].seg_a, pair.0[1].seg_a);
    }
});
