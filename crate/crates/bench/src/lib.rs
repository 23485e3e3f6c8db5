//! Criterion benchmarks for the cpe kernels live under `benches/`.
