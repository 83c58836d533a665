//! Criterion benchmarks for the tensor kernels and the post-processing
//! pipeline live under `benches/`.
