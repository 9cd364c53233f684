//! Holds the `acceptance` test target; the criteria live in `tests/acceptance.rs`.
