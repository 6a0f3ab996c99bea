//! Criterion benchmarks for nls-core. The benchmarks live in `benches/`.
