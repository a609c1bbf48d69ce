//! Shared fixtures for the solver benchmarks.

use zdq_core::instances::{random_single_model, SingleSpec};
use zdq_core::FiniteModel;

/// The standard small instance the benchmarks exercise: |X|=|Y|=|M|=|U|=2.
pub fn bench_model(horizon: usize) -> FiniteModel {
    random_single_model(
        0xBE7C_4A5E,
        SingleSpec {
            num_states: 2,
            num_obs: 2,
            num_messages: 2,
            num_decisions: 2,
            horizon,
        },
    )
}
