//! Criterion benchmarks for `fixsmooth`; run with `cargo bench -p fixsmooth-bench`.
