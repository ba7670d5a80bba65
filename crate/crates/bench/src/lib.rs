//! Criterion benchmarks for the filter step, the adapter forward pass and
//! whole-sequence filtering and evaluation. Run with `cargo bench -p aidr-bench`.
