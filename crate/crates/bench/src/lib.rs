//! Criterion benchmarks for the eolab solvers, limit-law sampler and
//! dominance test. Run with `cargo bench -p eolab-bench`.
