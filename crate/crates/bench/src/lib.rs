//! Criterion benchmarks for solver steps, oracles and resolvents; see `benches/`.
