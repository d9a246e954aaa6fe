//! Horizon optimization over a learned quantile forecaster: problem
//! definition, penalized objective, projected L-BFGS inner solver,
//! augmented-Lagrangian outer loop and the receding-horizon controller.

mod controller;
mod lbfgs;
mod model;
mod objective;
mod problem;
mod solver;

pub use controller::{
    shift_plan, write_plan_dump, write_solve_log, Controller, ControllerKind, ForecastController, PlanDump, StepRecord,
};
pub use lbfgs::{lbfgs_minimize, projected_gradient, LbfgsOptions, LbfgsResult};
pub use model::{ForecasterModel, HorizonModel, LinearModel};
pub use objective::{
    apply_ancillary, constraint_faces, gain_image, mpc_loss, quantile_constraints, tighten_input_bounds, Side,
    TightenedInput,
};
pub use problem::{Interval, MpcProblem, PenaltyLoopConfig, SolveResult};
pub use solver::{augmented_lagrangian_solve, penalized_objective, penalized_shape};
