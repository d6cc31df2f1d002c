//! Criterion benchmarks for `aaut-core`; see `benches/diagrams.rs`.
