//! Holds the `acceptance` test target; run it with
//! `cargo test -p otoar-acceptance --test acceptance`.
