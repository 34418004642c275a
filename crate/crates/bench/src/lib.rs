//! Benchmark-only crate; see `benches/kernels.rs`.

use binar::model::{ImmigrationSpec, ModelParams, OffspringFamily};

/// Reference parameter set shared by the benchmarks.
pub fn reference_params() -> ModelParams {
    ModelParams::new(
        OffspringFamily::bernoulli(0.5).expect("valid"),
        OffspringFamily::bernoulli(0.5).expect("valid"),
        ImmigrationSpec::new(0.3, 0.7, 0.7).expect("valid"),
        1,
    )
    .expect("stable")
}
