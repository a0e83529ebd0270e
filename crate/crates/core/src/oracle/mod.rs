//! Independent oracles the engine is checked against: forward Monte Carlo
//! from the panels' generative models, exhaustive enumeration and closed-form
//! conjugate posteriors.

pub mod exact;
pub mod rng;
pub mod sampler;

pub use exact::{
    beta_binomial_posterior, dirichlet_posterior_mean, enumerate_expected_utility, normal_normal_posterior,
    tree_predictive_by_enumeration, truncated_factorization, DiscreteModel, PosteriorMoments,
};
pub use sampler::{mc_expected_utility, mc_expected_utility_with, GenerativeSpec, OracleEstimate, MIN_SAMPLES};
