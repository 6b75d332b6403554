//! Model-based operators on tabular MDPs and the solvers that iterate them.

mod matrix;
mod operators;
mod solve;

pub use matrix::greedy_multistep_vi_matrix;
pub use operators::{
    bellman_expectation, bellman_optimality, contraction_probe, greedy_multistep_operator,
    greedy_multistep_successor_max, greedy_policy_from_q, multi_step_operator, OperatorSpec,
    QOperator,
};
pub(crate) use solve::check_tolerance;
pub use solve::{
    evaluate_policy, optimal_q_exact, solve_optimal_q, value_iteration, SolveResult, DEFAULT_EPS,
    DEFAULT_MAX_ITER,
};
