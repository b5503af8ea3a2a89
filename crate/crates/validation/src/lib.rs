//! Acceptance suite for the rainfield workspace; see `tests/acceptance.rs`.
//!
//! Run it with `cargo test -p rainfield-validation --test acceptance`.
