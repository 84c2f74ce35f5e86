//! Benchmarks for the core crate live in `benches/`; run them with `cargo bench -p jointvae-bench`.
