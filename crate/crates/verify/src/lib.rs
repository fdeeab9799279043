//! Holds the `acceptance` integration test, which checks each acceptance
//! criterion against `wsc-core` and prints one PASS/FAIL line per criterion.
//! It lives in its own package so that test binaries of the other crates
//! still run when a criterion fails.
