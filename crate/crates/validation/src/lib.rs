//! Acceptance suite for the xlayer simulator. The checks live in `tests/acceptance.rs`.
