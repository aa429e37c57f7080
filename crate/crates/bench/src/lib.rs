//! Criterion benchmarks for the deari model; see `benches/`.
