//! Closed-form input reconstruction from leaked gradients.
//!
//! Each conv layer's input `X` is the unknown of two families of linear
//! equations. *Gradient constraints* come from the weight gradients,
//! `dW[f,c,ki,kj] = sum over outputs dO[f,o] * X[c, r(o)]`, and need `dO`.
//! *Weight constraints* come from the forward pass,
//! `O[f,o] - b[f] = sum W[f,c,ki,kj] * X[c, patch]`, and need the layer's
//! pre-activations, so they exist only where the activation can be inverted.
//! [`solve_layer_input`] stacks both and solves in the least-squares sense.

mod constraints;
mod fc;
mod maps;
mod pipeline;
mod solve;

pub use constraints::{build_gradient_constraints, build_weight_constraints, ConstraintSet, SparseRow};
pub use fc::{fc_input_gradient, recover_fc_input, recover_fc_input_at, recover_fc_input_averaged, DIV_EPS};
pub use maps::{conv_input_gradient, ContributionMaps};
pub use pipeline::{
    empirical_rank, empirical_system, run_attack, AttackOptions, EmpiricalSystem, LayerDiagnostics, LayerSolveState, ReconstructionReport,
    UNKNOWN_ORDERING,
};
pub use solve::{solve_layer_input, stacked_rank, LayerSolution, DEFAULT_RANK_EPS};
