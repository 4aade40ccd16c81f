//! Benchmarks for the flame-speed kernels live in `benches/`.
