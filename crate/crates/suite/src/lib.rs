//! Acceptance suite for `antkit`. Run it with
//! `cargo test -p antkit-suite --test acceptance`; it prints one PASS/FAIL
//! line per criterion and exits non-zero when any criterion fails.
//!
//! It lives in its own package so that cargo, which stops at the first
//! failing test binary, runs it after every other crate's tests.
