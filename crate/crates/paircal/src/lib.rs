//! Second-order calibration from paired responses.
//!
//! Train or construct a model of *pairs* of responses `(Y1, Y2)` drawn
//! i.i.d. from an unknown conditional `p(Y|X)`, and the model's own
//! outputs quantify how far its marginal prediction is from that
//! conditional:
//!
//! - the joint-minus-marginals covariance is an epistemic covariance
//!   ([`dist`]),
//! - scoring a response twice (marginally, then conditioned on itself)
//!   yields a variance estimate and a confidence with distribution-level
//!   guarantees ([`metrics`]),
//! - a paired calibration set turns those guarantees distribution-free
//!   ([`distfree`]),
//! - thresholding the confidence bounds the statistical hallucination
//!   rate of standard decoding loops ([`decode`]).
//!
//! Everything is verified against exact synthetic tasks ([`tasks`]) whose
//! conditionals are computable in closed form. See the book under
//! `book/` for a guided tour, and `paircal --help` for the experiment
//! driver.

pub mod cli;
pub mod decode;
pub mod dist;
pub mod distfree;
pub mod eval;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod report;
pub mod tasks;
pub mod util;

pub use dist::{BinaryPairParams, JointPairDistribution, ProbVector, SecondOrderPrediction};
pub use metrics::{cheat_score, CheatScore, Interval};

// Book chapters double as doc-tests so the examples in the guide can
// never drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pair_distributions.md")]
    mod pair_distributions {}
    #[doc = include_str!("../../../book/src/cheat_scores.md")]
    mod cheat_scores {}
    #[doc = include_str!("../../../book/src/distribution_free.md")]
    mod distribution_free {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
