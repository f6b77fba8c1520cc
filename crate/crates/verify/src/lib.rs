//! Holds the `acceptance` test target; run it with
//! `cargo test -p bohmclock-verify --test acceptance`.
