//! Gradient-ascent pulse optimization for quantum gates where slow control
//! pixels reach the system through a linear transfer model and the
//! dynamics are integrated on a finer sub-pixel grid.

pub mod cli;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod robust;
pub mod scenarios;
pub mod transfer;

pub use engine::{evaluate_on_fine_grid, fidelity, gradient, propagate, GradientResult, Simulation};
pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
pub use model::{Control, ControlProblem, GeneratorSampler, Pulse, SampleConvention, TimeGrid};
pub use optimizer::{multistart, optimize, Objective, OptimizationResult, OptimizerConfig};
pub use robust::PhaseEnsemble;
pub use transfer::{TransferMatrix, TransferSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transfer.md")]
    mod transfer {}
    #[doc = include_str!("../../../book/src/gradient.md")]
    mod gradient {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/robust.md")]
    mod robust {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
