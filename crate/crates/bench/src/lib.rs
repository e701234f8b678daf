//! Benchmark-only crate; see `benches/serving.rs`. Run with `cargo bench -p dmf-bench`.
