//! Feedback controls, the LQ Riccati oracle, the adjoint solver and the
//! sufficient-condition verifier.

pub mod adjoint;
pub mod feedback;
pub mod riccati;
pub mod verify;

pub use adjoint::{
    feedback_discrepancy, martingale_fit, recovered_controls, solve_adjoint, AdjointOptions, AdjointTriple,
    MartingaleFit, RegressionBasis,
};
pub use feedback::{FeedbackControl, FeedbackRepr};
pub use riccati::{solve_lq_oracle, MeanFlowStart, RiccatiSolution};
pub use verify::{verify_sufficient_conditions, VerificationReport, VerifyOptions};
