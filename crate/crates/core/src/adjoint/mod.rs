//! Discrete adjoints of the coarse and fine schemes.

mod macro_adjoint;
mod micro_adjoint;

pub use macro_adjoint::{
    backward_sweep, backward_sweep_terminal, gradient_wrt_belt, gradient_wrt_c, gradient_wrt_source,
    gradient_wrt_velocity, sweep_transpose, MacroAdjoint,
};
pub use micro_adjoint::{backward_sweep_micro, spread_objective_partials, MicroAdjoint};
