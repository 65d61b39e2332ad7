//! Criterion benchmarks for the audit algorithms; see `benches/`.
