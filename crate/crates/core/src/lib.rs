//! Probabilistic recursively feasible MPC for a vehicle avoiding one
//! stochastically moving obstacle.
//!
//! The obstacle is predicted as a jointly Gaussian trajectory ([`gauss`],
//! [`predictor`]). Collision avoidance becomes one linear constraint per
//! timestep ([`safety`]), and a shrinking-horizon QP ([`planner`], [`qp`])
//! plans the ego motion. The PRF variant tightens each constraint by margins
//! computed once from the first prediction, so that the plan stays feasible
//! under re-prediction with probability at least `1 - gamma`. [`sim`] runs
//! closed-loop Monte Carlo trials and [`cli`] drives them from the command
//! line.
//!
//! ```
//! use prfmpc::cli::resolve_config;
//! use prfmpc::planner::Variant;
//! use prfmpc::sim::{run_batch, Scenario};
//!
//! let scenario = Scenario::new(&resolve_config(None).unwrap()).unwrap();
//! let batch = run_batch(&scenario, 20, Variant::Prf, 1).unwrap();
//! assert_eq!(batch.metrics.n_trials, 20);
//! assert_eq!(batch.metrics.initial_feasibility_rate, 1.0);
//! ```

pub mod cli;
pub mod error;
pub mod gauss;
pub mod planner;
pub mod predictor;
pub mod qp;
pub mod safety;
pub mod sim;

pub use error::{Error, Result};

// Compiles and runs the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/safety.md")]
    mod safety {}
    #[doc = include_str!("../../../book/src/planner.md")]
    mod planner {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
