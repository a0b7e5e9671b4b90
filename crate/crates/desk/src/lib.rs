//! Holds the desk-scale acceptance suite in `tests/acceptance.rs`.
