//! Criterion benchmarks for the transport solver and the strategies; see `benches/`.
