//! Criterion benchmarks for the fkpp pipeline live in `benches/`.
